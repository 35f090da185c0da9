//! WebAssembly bindings behind the static page in `www/`.
//!
//! The exported functions exchange JSON strings and plain numeric arrays so
//! the page needs no extra glue. All work happens in [`demo`], which is plain
//! Rust and tested natively.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// The built-in PDC cavity as pretty JSON.
#[wasm_bindgen]
pub fn reference_config() -> String {
    demo::reference_config()
}

/// Spectral parameters of a cavity config, as JSON.
#[wasm_bindgen]
pub fn spectral_params(config_json: &str) -> Result<String, JsError> {
    demo::params_json(config_json).map_err(js)
}

/// Peak-normalized, bin-averaged correlation curve on `−range..=range`.
/// Returns the values only; the delays are `−range + k·step`.
#[wasm_bindgen]
pub fn model_curve(
    gamma: f64,
    tau0: f64,
    delta_alpha: f64,
    tau_range: f64,
    step: f64,
    jitter: f64,
) -> Result<Vec<f64>, JsError> {
    let req = demo::CurveRequest { gamma, tau0, delta_alpha, tau_range, step, jitter, ..Default::default() };
    demo::curve(&req).map(|c| c.values).map_err(js)
}

/// Simulate a run, histogram it at 8.2 ns and fit the envelope. JSON result.
#[wasm_bindgen]
pub fn simulate_and_fit(gamma: f64, pair_rate: f64, duration: f64, seed: u64) -> Result<String, JsError> {
    let req = demo::SimRequest { gamma, pair_rate, duration, seed, ..Default::default() };
    let out = demo::simulate_fit(&req).map_err(js)?;
    serde_json::to_string(&out).map_err(|e| JsError::new(&e.to_string()))
}
