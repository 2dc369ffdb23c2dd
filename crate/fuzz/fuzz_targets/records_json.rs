#![no_main]
use libfuzzer_sys::fuzz_target;

use itval_core::simulation::{performance_summary, plot_data, SimulationResult};

// Saved simulation records, as read back by `itval report`.
fuzz_target!(|data: &[u8]| {
    if let Ok(r) = serde_json::from_slice::<SimulationResult>(data) {
        let _ = plot_data(&performance_summary(&r.records));
    }
});
