#![no_main]

use libfuzzer_sys::fuzz_target;

// The first two bytes choose the expected shape.
fuzz_target!(|data: &[u8]| {
    if let [rows, dim, rest @ ..] = data {
        let _ = tce_core::dataforge::decode_sidecar(rest, *rows as usize, *dim as usize);
    }
});
