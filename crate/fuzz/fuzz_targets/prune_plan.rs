#![no_main]

use bnslim::prune::{parse_plan, plan_to_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(plan) = parse_plan(text) {
        let back = parse_plan(&plan_to_text(&plan)).expect("written plan parses");
        assert_eq!(back, plan);
    }
});
