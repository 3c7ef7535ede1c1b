//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Each export returns a JSON string; the page parses it and draws.

mod scenes;

pub use scenes::{detection_scene, registration_scene, roc_scene, DemoSettings};
use wasm_bindgen::prelude::*;

fn to_js<T: serde::Serialize>(r: pcad::Result<T>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Synthesizes one test sample (anomalous when `defect_fraction > 0`),
/// scores it against a small bank and returns points with per-point scores.
#[wasm_bindgen]
pub fn detect_sample(seed: u32, defect_fraction: f64, rotate: bool) -> Result<String, JsError> {
    to_js(detection_scene(&DemoSettings::default(), seed as u64, defect_fraction, rotate))
}

/// Registers a shape with a randomly moved copy of itself.
#[wasm_bindgen]
pub fn register_pair(seed: u32, max_angle_deg: f64) -> Result<String, JsError> {
    to_js(registration_scene(&DemoSettings::default(), seed as u64, max_angle_deg))
}

/// Scores a small labeled test set and returns object and point ROC curves.
#[wasm_bindgen]
pub fn roc(seed: u32, per_class: u32, rotate: bool) -> Result<String, JsError> {
    to_js(roc_scene(&DemoSettings::default(), seed as u64, per_class as usize, rotate))
}
