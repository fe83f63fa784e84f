//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs nothing beyond `JSON.parse`. The same functions are callable
//! natively, which is how they are tested.

use serde::Serialize;
use splitpde::experiments::converge;
use splitpde::noise::{compute_beta, hs_norm_partial, sample_path};
use splitpde::spectral::SineTransform;
use splitpde::{
    CovarianceSpec, DiffusionSpec, DriftSpec, InnerBudget, MonteCarlo, OperatorSpec, SchemeConfig,
    SpectralField, TimeGrid,
};
use wasm_bindgen::prelude::*;

const MAX_MODES: usize = 256;
const MAX_STEPS: usize = 4096;

/// Demo limits keep a single call under a second or so in the browser.
fn check_size(modes: usize, steps: usize) -> Result<(), String> {
    if modes == 0 || modes > MAX_MODES {
        return Err(format!("modes must lie in 1..={MAX_MODES}"));
    }
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("steps must lie in 1..={MAX_STEPS}"));
    }
    Ok(())
}

fn scheme(decay_rate: f64, sigma: f64, multiplicative: bool, drift_scale: f64, modes: usize, steps: usize) -> Result<SchemeConfig, String> {
    let err = |e: splitpde::Error| e.to_string();
    let diffusion = if multiplicative {
        DiffusionSpec::Multiplicative { sigma }
    } else {
        DiffusionSpec::Additive { sigma }
    };
    let drift = if drift_scale == 0.0 {
        DriftSpec::Zero
    } else {
        DriftSpec::Saturating { scale: drift_scale }
    };
    Ok(SchemeConfig {
        operator: OperatorSpec::dirichlet_laplacian(modes).map_err(err)?,
        covariance: CovarianceSpec::new(decay_rate, 1.0, modes).map_err(err)?,
        drift,
        diffusion,
        grid: TimeGrid::new(1.0, steps).map_err(err)?,
        initial: SpectralField::cubic_decay(modes),
        budget: InnerBudget::default(),
    })
}

#[derive(Debug, Serialize)]
pub struct Snapshot {
    pub grid: Vec<f64>,
    pub initial: Vec<f64>,
    pub split: Vec<f64>,
    pub reference: Vec<f64>,
    pub distance: f64,
}

/// One sample path on `[0, 1]`: the splitting solution with `steps` steps and
/// the exponential-Euler reference on a grid 16 times finer, both driven by
/// the same Brownian increments.
pub fn simulate_native(
    decay_rate: f64,
    sigma: f64,
    multiplicative: bool,
    drift_scale: f64,
    modes: usize,
    steps: usize,
    seed: u64,
) -> Result<Snapshot, String> {
    check_size(modes, steps)?;
    let err = |e: splitpde::Error| e.to_string();
    let cfg = scheme(decay_rate, sigma, multiplicative, drift_scale, modes, steps)?;
    let fine = steps * 16;
    let path = sample_path(&cfg.covariance, fine, 1.0 / fine as f64, seed).map_err(err)?;
    let integrator = splitpde::scheme::Integrator::new(&cfg).map_err(err)?;
    let split = integrator.trajectory(&path.coarsen(16).map_err(err)?).map_err(err)?;
    let reference = integrator.reference(&path).map_err(err)?;
    let transform = SineTransform::square(modes).map_err(err)?;
    Ok(Snapshot {
        grid: transform.grid(),
        initial: transform.to_physical(&cfg.initial).map_err(err)?,
        split: transform.to_physical(&split).map_err(err)?,
        reference: transform.to_physical(&reference).map_err(err)?,
        distance: split.distance_sq(&reference).sqrt(),
    })
}

/// A reduced convergence study (step counts 4 to 64, reference 8 times finer).
pub fn convergence_native(
    decay_rate: f64,
    sigma: f64,
    multiplicative: bool,
    drift_scale: f64,
    modes: usize,
    samples: usize,
    seed: u64,
) -> Result<splitpde::ErrorReport, String> {
    check_size(modes, 64)?;
    if samples > 2000 {
        return Err("samples must not exceed 2000".into());
    }
    let cfg = scheme(decay_rate, sigma, multiplicative, drift_scale, modes, 4)?;
    let mc = MonteCarlo { samples, seed };
    converge(&cfg, &[4, 8, 16, 32, 64], &mc, 8).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct BetaSummary {
    pub beta: f64,
    pub certified: bool,
    pub predicted_order: f64,
    pub modes: Vec<usize>,
    pub partial_sums: Vec<f64>,
}

/// Regularity index for `q_i = i^{-2r}` and the Hilbert-Schmidt partial sums
/// at that index for 1, 10, ..., 10^5 modes.
pub fn regularity_index_native(decay_rate: f64) -> Result<BetaSummary, String> {
    let err = |e: splitpde::Error| e.to_string();
    let cov = CovarianceSpec::new(decay_rate, 1.0, 1).map_err(err)?;
    let op = OperatorSpec::dirichlet_laplacian(1).map_err(err)?;
    let index = compute_beta(&cov, &op).map_err(err)?;
    let modes: Vec<usize> = (0..6).map(|k| 10usize.pow(k)).collect();
    let partial_sums = modes
        .iter()
        .map(|&m| hs_norm_partial(&cov, &op, index.beta, m))
        .collect::<splitpde::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(BetaSummary {
        beta: index.beta,
        certified: index.certified,
        predicted_order: index.beta / 2.0,
        modes,
        partial_sums,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(
    decay_rate: f64,
    sigma: f64,
    multiplicative: bool,
    drift_scale: f64,
    modes: usize,
    steps: usize,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(simulate_native(decay_rate, sigma, multiplicative, drift_scale, modes, steps, seed as u64))
}

#[wasm_bindgen]
pub fn convergence(
    decay_rate: f64,
    sigma: f64,
    multiplicative: bool,
    drift_scale: f64,
    modes: usize,
    samples: usize,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(convergence_native(decay_rate, sigma, multiplicative, drift_scale, modes, samples, seed as u64))
}

#[wasm_bindgen]
pub fn regularity_index(decay_rate: f64) -> Result<String, JsValue> {
    to_js(regularity_index_native(decay_rate))
}
