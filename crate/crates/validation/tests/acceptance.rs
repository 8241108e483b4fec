use std::io::Write;
use std::time::Instant;

use multiadaptive_validation::run_all;

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let outcomes = run_all();
    // Written past the test harness capture so every line shows up.
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    for o in &outcomes {
        writeln!(out, "{}", o.line()).unwrap();
    }
    writeln!(out, "acceptance: {} of {} criteria passed in {:.1}s", outcomes.iter().filter(|o| o.pass).count(), outcomes.len(), start.elapsed().as_secs_f64()).unwrap();
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
