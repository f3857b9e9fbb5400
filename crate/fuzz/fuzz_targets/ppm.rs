#![no_main]

use bnslim::augment::{decode_ppm, encode_ppm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        let bytes = encode_ppm(&img);
        let again = decode_ppm(&bytes).expect("encoded image decodes");
        assert_eq!(encode_ppm(&again), bytes);
    }
});
