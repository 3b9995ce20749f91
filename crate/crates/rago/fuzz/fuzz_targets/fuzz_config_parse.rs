#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = rago::config::parse_synth_config(data, None);
    let _ = rago::config::parse_arch_config(data);
});
