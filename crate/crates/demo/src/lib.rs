//! Browser demo: three small operations exported through wasm-bindgen.
//!
//! Each export is a thin wrapper over a plain function in [`ops`], which is
//! what the native tests exercise.

use wasm_bindgen::prelude::*;

pub mod ops;

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

/// Power iteration on `[[a, b], [b, c]]`. Returns, per iteration,
/// `[lambda, v0, v1, residual]`, followed by the two exact eigenvalues.
#[wasm_bindgen]
pub fn power_iteration_trace(a: f64, b: f64, c: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    ops::power_trace(a, b, c, steps).map(|t| t.flatten()).map_err(js_err)
}

/// Trains a small net on three Gaussian clusters. Returns
/// `[loss, rho_batch, h]` per epoch.
#[wasm_bindgen]
pub fn train_clusters(mu: f64, k: f64, epochs: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    ops::train_clusters(mu, k, epochs, seed)
        .map(|curves| curves.into_iter().flatten().collect())
        .map_err(js_err)
}

/// A synthetic 16×16 digit and one augmented copy, 512 values in [-1, 1].
#[wasm_bindgen]
pub fn augment_digit(class: usize, max_crop_px: usize, max_rot_deg: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    ops::augment_digit(class, max_crop_px, max_rot_deg, seed)
        .map(|(a, b)| a.into_iter().chain(b).collect())
        .map_err(js_err)
}
