#![no_main]

use std::path::Path;

use bnslim_cli::config::{augment_config, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text, Path::new("runs")) {
        if let Ok(aug) = augment_config(&cfg, Some(24), 0) {
            let _ = aug.validate();
        }
    }
});
