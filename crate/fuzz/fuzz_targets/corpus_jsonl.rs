//! Fuzz the JSONL corpus line parser: any byte sequence must either
//! parse into an example or return a structured error, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = mocae::data::parse_example_line(line, 1);
    }
});
