#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_core::Vocabulary;

fuzz_target!(|data: &str| {
    if let Ok(v) = Vocabulary::parse(data) {
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
    }
});
