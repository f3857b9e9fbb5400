#![no_main]

use bnslim::model::{decode_model, encode_model};
use libfuzzer_sys::fuzz_target;

fn check(data: &[u8]) {
    if let Ok(model) = decode_model(data) {
        // Re-encoding is canonical: unused table fields are written as zero.
        let bytes = encode_model(&model);
        let again = decode_model(&bytes).expect("re-encoded model decodes");
        assert_eq!(encode_model(&again), bytes);
        let _ = bnslim::model::count_flops(&model, model.input);
    }
}

fuzz_target!(|data: &[u8]| {
    check(data);
    // Same bytes with a valid checksum, so mutations reach the layer table.
    if data.len() >= 4 {
        let mut sealed = data[..data.len() - 4].to_vec();
        sealed.extend_from_slice(&crc32fast::hash(&sealed).to_le_bytes());
        check(&sealed);
    }
});
