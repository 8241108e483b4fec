use std::sync::Arc;

use proptest::prelude::*;

use multiadaptive::bench::{parse_report, run_benchmark, sample_solution, study_iteration, write_run_outputs};
use multiadaptive::controller::{adaptive_solve, fixed_step_solve, ControllerConfig};
use multiadaptive::mesh::{read_trace, write_trace};
use multiadaptive::method::Scheme;
use multiadaptive::problems::{
    default_masses, make_hires, make_mass_spring, make_reaction_diffusion, make_test_system, mass_spring_energy,
};
use multiadaptive::solver::read_step_trace;
use multiadaptive::Method;

#[test]
fn repeated_runs_count_identically() {
    let problem = make_hires().with_t_final(5.0).unwrap();
    let config = ControllerConfig { tol: 1e-4, ..ControllerConfig::default() };
    let a = adaptive_solve(&problem, Method::mdg(1), &config).unwrap();
    let b = adaptive_solve(&problem, Method::mdg(1), &config).unwrap();
    assert_eq!(a.total_counter, b.total_counter);
    assert_eq!(a.primal.trajectory.end_values(), b.primal.trajectory.end_values());
}

#[test]
fn hires_sum_of_last_components_is_conserved() {
    let problem = make_hires().with_t_final(20.0).unwrap();
    let config = ControllerConfig { tol: 1e-5, ..ControllerConfig::default() };
    let run = adaptive_solve(&problem, Method::mcg(1), &config).unwrap();
    let bound = run.primal.fixpoint_tol * problem.t_final();
    for row in sample_solution(&run.primal.trajectory, 500).unwrap() {
        assert!((row[7] + row[8] - 0.0057).abs() <= bound, "t {}: {}", row[0], row[7] + row[8]);
    }
}

#[test]
fn reaction_diffusion_stays_in_the_invariant_region() {
    let problem = make_reaction_diffusion(0.001, 20, 0.2).unwrap().with_t_final(10.0).unwrap();
    let config = ControllerConfig { tol: 1e-4, use_dual: false, ..ControllerConfig::default() };
    let run = adaptive_solve(&problem, Method::mcg(2), &config).unwrap();
    let nodes = 21;
    for row in sample_solution(&run.primal.trajectory, 200).unwrap() {
        for j in 0..nodes {
            let (u1, u2) = (row[1 + j], row[1 + nodes + j]);
            assert!((u1 + u2 - 1.0).abs() < 1e-8);
            assert!((-1e-6..=1.0 + 1e-6).contains(&u1) && (-1e-6..=1.0 + 1e-6).contains(&u2), "{u1} {u2}");
        }
    }
}

#[test]
fn continuous_galerkin_conserves_spring_energy() {
    let masses = default_masses(3);
    let problem = make_mass_spring(&masses, 1.0).unwrap().with_t_final(5.0).unwrap();
    let e0 = mass_spring_energy(&masses, 1.0, problem.initial());
    for q in 1..=2 {
        let k = 0.01;
        let run = fixed_step_solve(&problem, Method::mcg(q), &vec![k; problem.dim()], k, study_iteration()).unwrap();
        let e = mass_spring_energy(&masses, 1.0, &run.trajectory.end_values());
        assert!((e - e0).abs() < 1e-9 * e0, "mcG({q}): {e} vs {e0}");
    }
}

#[test]
fn run_outputs_read_back() {
    let problem = make_test_system(&[1.0, 20.0]).unwrap().with_t_final(2.0).unwrap();
    let config = ControllerConfig { tol: 1e-4, ..ControllerConfig::default() };
    let bench = run_benchmark(&problem, Method::mcg(2), &config, None).unwrap();
    let dir = std::env::temp_dir().join(format!("multiadaptive-outputs-{}", std::process::id()));
    let files = write_run_outputs(&dir, "sys", &bench.report, bench.trace(), bench.trajectory(), 50, 0.5).unwrap();
    let report = parse_report(&std::fs::read_to_string(&files.report).unwrap()).unwrap();
    assert_eq!(report, bench.report);
    let trace = read_step_trace(std::fs::File::open(&files.steps).unwrap()).unwrap();
    assert_eq!(trace, bench.trace());
    std::fs::remove_dir_all(&dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn multi_rate_traces_round_trip(
        steps in prop::collection::vec(0.01f64..0.3, 1..4),
        mcg in any::<bool>(),
        q in 0usize..3,
    ) {
        let method = if mcg { Method::mcg(q + 1) } else { Method::mdg(q) };
        let rates: Vec<f64> = (0..steps.len()).map(|i| 1.0 + i as f64).collect();
        let problem = make_test_system(&rates).unwrap().with_t_final(1.0).unwrap();
        let k_slab = steps.iter().cloned().fold(0.0, f64::max);
        let run = fixed_step_solve(&problem, method, &steps, k_slab, study_iteration()).unwrap();
        let mut buf = Vec::new();
        write_trace(&run.trajectory, &mut buf).unwrap();
        let back = read_trace(buf.as_slice(), Arc::new(Scheme::new(method).unwrap())).unwrap();
        prop_assert_eq!(back.end_values(), run.trajectory.end_values());
        prop_assert_eq!(back.element_count(), run.trajectory.element_count());
        let mut again = Vec::new();
        write_trace(&back, &mut again).unwrap();
        prop_assert_eq!(again, buf);
    }
}
