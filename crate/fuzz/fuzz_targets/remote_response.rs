#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_core::victim::parse_embedding_response;

fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let (expected, dim) = (data[0] as usize % 8, data[1] as usize % 8);
    if let Ok(rows) = parse_embedding_response(&data[2..], expected, dim) {
        assert_eq!(rows.len(), expected);
        assert!(rows.iter().all(|r| r.len() == dim && r.iter().all(|x| x.is_finite())));
    }
});
