#![no_main]

use libfuzzer_sys::fuzz_target;
use multiadaptive::solver::{read_step_trace, write_step_trace};

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_step_trace(data) {
        let mut out = Vec::new();
        write_step_trace(&trace, &mut out).unwrap();
        assert_eq!(read_step_trace(out.as_slice()).unwrap(), trace);
    }
});
