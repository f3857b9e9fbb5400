#![no_main]

use bnslim::model::{build_model, count_flops, count_params, decode_model, encode_model, parse_description};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(desc) = parse_description(text) else {
        return;
    };
    if let Ok(model) = build_model(&desc) {
        let _ = count_params(&model);
        let _ = count_flops(&model, model.input);
        assert!(decode_model(&encode_model(&model)).is_ok());
    }
});
