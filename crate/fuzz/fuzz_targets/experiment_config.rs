#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_harness::ExperimentConfig;

fuzz_target!(|data: &str| {
    if let Ok(c) = ExperimentConfig::parse(data) {
        assert_eq!(ExperimentConfig::parse(&c.canonical()).unwrap().hash(), c.hash());
    }
});
