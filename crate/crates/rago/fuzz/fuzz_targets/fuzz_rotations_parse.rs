#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = rago::viewgraph::parse_rotations(data);
});
