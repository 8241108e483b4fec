#![no_main]

use std::sync::Arc;

use libfuzzer_sys::fuzz_target;
use multiadaptive::mesh::{read_trace, write_trace};
use multiadaptive::method::Scheme;
use multiadaptive::Method;

fuzz_target!(|data: &[u8]| {
    let Some((&selector, csv)) = data.split_first() else { return };
    let q = (selector % 3) as usize;
    let method = if selector & 0x80 == 0 { Method::mcg(q + 1) } else { Method::mdg(q) };
    let scheme = Arc::new(Scheme::new(method).unwrap());
    if let Ok(traj) = read_trace(csv, scheme.clone()) {
        let mut out = Vec::new();
        write_trace(&traj, &mut out).unwrap();
        let again = read_trace(out.as_slice(), scheme).unwrap();
        assert_eq!(again.element_count(), traj.element_count());
        assert_eq!(again.end_values(), traj.end_values());
    }
});
