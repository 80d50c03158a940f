//! Fuzz the MCE1 model decoder: arbitrary bytes must decode or error
//! without panicking or overallocating.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = mocae::io::decode_model(data);
});
