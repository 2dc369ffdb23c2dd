#![no_main]
use libfuzzer_sys::fuzz_target;

use itval_core::glm::predict_potential_risks;
use itval_core::io::parse_model_json;
use ndarray::Array2;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_model_json(data) {
        // A validated model must predict on a matrix of the declared width.
        let x = Array2::<f64>::zeros((3, m.covariates.len()));
        let _ = predict_potential_risks(&m.model, x.view());
    }
});
