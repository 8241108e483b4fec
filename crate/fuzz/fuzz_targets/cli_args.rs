#![no_main]

use libfuzzer_sys::fuzz_target;

// Arguments are NUL-separated; only parsing and validation run, never a solve.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let args = std::iter::once("madapt").chain(text.split('\0'));
    if let Ok(cli) = multiadaptive_cli::parse(args) {
        if let Err(failure) = multiadaptive_cli::validate(&cli) {
            assert!(matches!(failure.exit_code(), 1 | 2));
        }
    }
});
