#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_core::victim::CacheManifest;

fuzz_target!(|data: &str| {
    if let Ok(m) = CacheManifest::parse(data) {
        assert_eq!(CacheManifest::parse(&m.to_text()).unwrap(), m);
    }
});
