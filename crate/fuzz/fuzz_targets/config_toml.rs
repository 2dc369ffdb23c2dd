#![no_main]
use libfuzzer_sys::fuzz_target;

use itval_core::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(s) {
            // Sections that parsed must resolve.
            if let Some(v) = &cfg.validation {
                v.plan().unwrap();
            }
            if let (Some(m), Some(d)) = (&cfg.model, &cfg.data) {
                let _ = m.design(&d.covariates);
            }
        }
    }
});
