#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_core::MetricsReport;

fuzz_target!(|data: &str| {
    if let Ok(r) = MetricsReport::from_kv(data) {
        let again = MetricsReport::from_kv(&r.to_kv()).unwrap();
        assert_eq!(again.to_kv(), r.to_kv());
    }
});
