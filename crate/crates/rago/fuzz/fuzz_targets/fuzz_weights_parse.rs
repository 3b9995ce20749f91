#![no_main]

use libfuzzer_sys::fuzz_target;

// Binary weight container. Accepted inputs must round trip bit-exactly.
fuzz_target!(|data: &[u8]| {
    if let Ok(w) = rago::nn::ModelWeights::parse(data) {
        let bytes = w.to_bytes();
        let again = rago::nn::ModelWeights::parse(&bytes).expect("round trip");
        assert_eq!(again.to_bytes(), bytes);
    }
});
