#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = tce_core::dataforge::parse_manifest(text) {
        let _ = tce_core::dataforge::build_dataset(&manifest, None);
    }
});
