#![no_main]

use libfuzzer_sys::fuzz_target;
use ridgelab::spectra::parse_spectrum_spec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_spectrum_spec(text, 64);
});
