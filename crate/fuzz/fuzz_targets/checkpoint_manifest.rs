#![no_main]

use libfuzzer_sys::fuzz_target;

use embinv_core::CheckpointManifest;

fuzz_target!(|data: &str| {
    let _ = CheckpointManifest::parse(data);
});
