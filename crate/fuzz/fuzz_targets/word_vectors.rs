#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(parsed) = tce_core::embedspace::parse_word_vectors(data, None) {
        let required: Vec<String> = parsed.vectors.keys().take(4).cloned().collect();
        let _ = tce_core::embedspace::WordVecTable::from_parsed(parsed, &required, 3, 0);
    }
});
