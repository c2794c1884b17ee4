//! wasm-bindgen surface for the static page in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve(schedule: &str, points: usize) -> Result<Vec<f64>, JsError> {
    demo::schedule_curve(schedule, points).map_err(js)
}

#[wasm_bindgen(js_name = branchFrequency)]
pub fn branch_frequency(schedule: &str, points: usize, draws: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    demo::branch_frequency(schedule, points, draws, seed.into()).map_err(js)
}

/// `[P, K, residual, |√γ(a − bK)|]`.
#[wasm_bindgen(js_name = scalarRiccati)]
pub fn scalar_riccati(a: f64, b: f64, q: f64, r: f64, gamma: f64) -> Result<Vec<f64>, JsError> {
    let s = demo::scalar_riccati(a, b, q, r, gamma).map_err(js)?;
    Ok(vec![s.p, s.k, s.residual, s.closed_loop])
}

#[wasm_bindgen(js_name = qStarSlice)]
#[allow(clippy::too_many_arguments)]
pub fn q_star_slice(
    a: f64,
    b: f64,
    q: f64,
    r: f64,
    gamma: f64,
    x: f64,
    u_lo: f64,
    u_hi: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    demo::q_star_slice(a, b, q, r, gamma, x, u_lo, u_hi, points).map_err(js)
}

/// `[learned gain, optimal gain, cost ratio per evaluation...]`.
#[wasm_bindgen(js_name = trainLqr)]
pub fn train_lqr(variant: &str, steps: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    let s = demo::train_lqr(variant, steps.into(), seed.into()).map_err(js)?;
    let mut out = vec![s.gain, s.optimal_gain];
    out.extend(s.cost_ratio);
    Ok(out)
}
