//! Fuzz the JSON run-config parser: any text must parse or return a
//! config error, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = mocae::config::parse_run_config(text);
    }
});
