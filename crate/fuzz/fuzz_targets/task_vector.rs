//! Fuzz the TVX1 task-vector decoder. A successful decode must
//! round-trip byte-for-byte through the encoder.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tv) = mocae::io::decode_task_vector(data) {
        let encoded = mocae::io::encode_task_vector(&tv);
        assert_eq!(encoded, data, "TVX1 decode/encode must round-trip");
    }
});
