#![no_main]

use libfuzzer_sys::fuzz_target;
use multiadaptive::bench::{parse_report, report_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = parse_report(text) {
        let again = report_json(&report);
        assert_eq!(report_json(&parse_report(&again).unwrap()), again);
    }
});
