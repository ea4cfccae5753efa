#![no_main]

use libfuzzer_sys::fuzz_target;
use ridgelab::bench::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = Scenario::from_json(text);
});
