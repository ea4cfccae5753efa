#![no_main]

use libfuzzer_sys::fuzz_target;
use ridgelab::spectra::{parse_spectrum_json, spectrum_to_json, SpectrumInput};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(input) = parse_spectrum_json(text) {
        let joint = input.joint().expect("accepted spectra project");
        let total: f64 = joint.atoms().iter().map(|a| a.weight).sum();
        assert!((total - 1.0).abs() < 1e-9);
        if let SpectrumInput::Joint(j) = input {
            assert_eq!(
                parse_spectrum_json(&spectrum_to_json(&j)).unwrap(),
                SpectrumInput::Joint(j)
            );
        }
    }
});
