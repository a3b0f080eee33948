#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = embinv_harness::sweep_csv::parse(data);
});
