#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_core::corpus::{parse_corpus, StopWords};

fuzz_target!(|data: &str| {
    let stop: StopWords = ["the", "a"].into_iter().collect();
    if let Ok(sentences) = parse_corpus(data, &stop, std::path::Path::new("fuzz")) {
        assert!(!sentences.is_empty());
        for s in &sentences {
            assert_eq!(s.words.len(), s.stopword_mask.len());
        }
    }
});
