#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = tce_core::config::TrainConfig::from_text(text) {
        let back = tce_core::config::TrainConfig::from_text(&config.render()).expect("rendered config parses");
        assert_eq!(back, config);
    }
});
