#![no_main]
use libfuzzer_sys::fuzz_target;

use itval_core::io::{parse_trial_csv, write_trial_csv, TrialSchema};

fuzz_target!(|data: &[u8]| {
    let schema = TrialSchema::default();
    if let Ok(t) = parse_trial_csv(data, &schema) {
        // Anything accepted must survive a write/read cycle unchanged.
        let mut buf = Vec::new();
        write_trial_csv(&mut buf, &t.data, &schema, &t.covariate_names).unwrap();
        let back = parse_trial_csv(&buf, &schema).unwrap();
        assert_eq!(back.data, t.data);
        assert_eq!(back.covariate_names, t.covariate_names);
    }
});
