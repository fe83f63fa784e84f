//! Monte Carlo experiments measuring strong error, one-step consistency,
//! stability of paired trajectories, sub-flow increments, and solution
//! regularity.
//!
//! Every sample derives its own RNG stream from `(seed, experiment, index)`
//! and results are reduced in sample order, so reports do not depend on the
//! number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flows::{flow_increment_moment, MomentEstimate};
use crate::noise::{compute_beta, sample_path, stream_seed, CovarianceSpec};
use crate::scheme::{Integrator, SchemeConfig, TimeGrid};
use crate::spectral::{FractionalExponent, OperatorSpec, SpectralField};

const CONVERGE_STREAM: u64 = 1;
const CONSISTENCY_STREAM: u64 = 2;
const STABILITY_STREAM: u64 = 3;
const FLOW_STREAM: u64 = 4;
const REGULARITY_STREAM: u64 = 5;

/// Below this RMS (relative to the solution norm) errors count as rounding.
const DEGENERATE_RELATIVE_RMS: f64 = 1e-12;
/// Fits with a lower coefficient of determination are flagged.
pub const RELIABLE_R2: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFlag {
    /// All errors vanish to rounding; no order can be fitted.
    Degenerate,
    UnreliableFit,
    /// A sub-flow was integrated approximately rather than exactly.
    NonExactSubflow,
}

/// Which quantity the log-log slope was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitTarget {
    /// `sqrt(E‖·‖²)`; a mean-square order `p` shows up as slope `p/2`.
    Rms,
    /// `E‖·‖²` itself.
    MeanSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub step_sizes: Vec<f64>,
    /// Step count (or `1/s` for increment probes) per row.
    pub step_counts: Vec<usize>,
    pub mse: Vec<f64>,
    /// Standard error of each `mse` entry.
    pub standard_errors: Vec<f64>,
    pub fit_target: FitTarget,
    pub fitted_order: Option<f64>,
    pub fit_r2: Option<f64>,
    /// Empirical constant `C` in `value ≈ C h^order`.
    pub prefactor: Option<f64>,
    /// Slope between each row and the previous one; `None` for the first.
    pub local_slopes: Vec<Option<f64>>,
    pub predicted_order: f64,
    pub beta_expected: f64,
    pub samples: usize,
    pub seed: u64,
    pub oracle_resolution: usize,
    pub flags: Vec<ReportFlag>,
}

impl ErrorReport {
    pub fn rms(&self) -> Vec<f64> {
        self.mse.iter().map(|m| m.sqrt()).collect()
    }

    /// Fitted order in the mean-square convention.
    pub fn mean_square_order(&self) -> Option<f64> {
        self.fitted_order.map(|p| match self.fit_target {
            FitTarget::Rms => 2.0 * p,
            FitTarget::MeanSquare => p,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.flags.contains(&ReportFlag::Degenerate)
    }

    /// Whether the fitted slope lies within `tolerance` of the prediction.
    pub fn within_tolerance(&self, tolerance: f64) -> bool {
        self.fitted_order
            .map(|p| (p - self.predicted_order).abs() <= tolerance)
            .unwrap_or(false)
    }
}

/// Least squares of `log2(values)` on `log2(hs)`; returns `(slope, r²)`.
pub fn fit_order(hs: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let (slope, _, r2) = fit_line(hs, values)?;
    Ok((slope, r2))
}

fn fit_line(hs: &[f64], values: &[f64]) -> Result<(f64, f64, f64)> {
    if hs.len() != values.len() {
        return invalid("step sizes and values differ in length");
    }
    if hs.len() < 3 {
        return invalid("need at least three points to fit an order");
    }
    if hs.windows(2).any(|w| !(w[1] < w[0])) || hs.iter().any(|h| !(*h > 0.0)) {
        return invalid("step sizes must be positive and strictly decreasing");
    }
    if values.contains(&0.0) {
        return Err(Error::DegenerateFit("an error value is exactly zero".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return invalid("values must be finite and positive");
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.log2()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, intercept, r2))
}

fn local_slopes(hs: &[f64], values: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None];
    for k in 1..hs.len() {
        let s = (values[k].log2() - values[k - 1].log2()) / (hs[k].log2() - hs[k - 1].log2());
        out.push(s.is_finite().then_some(s));
    }
    out
}

struct Aggregate {
    mse: Vec<f64>,
    standard_errors: Vec<f64>,
}

/// Column-wise mean and standard error of per-sample rows, in sample order.
fn aggregate(rows: &[Vec<f64>]) -> Aggregate {
    let width = rows.first().map_or(0, |r| r.len());
    let mut mse = Vec::with_capacity(width);
    let mut standard_errors = Vec::with_capacity(width);
    for col in 0..width {
        let xs: Vec<f64> = rows.iter().map(|r| r[col]).collect();
        let est = MomentEstimate::from_samples(&xs);
        mse.push(est.mean);
        standard_errors.push(est.stderr);
    }
    Aggregate { mse, standard_errors }
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    step_sizes: Vec<f64>,
    step_counts: Vec<usize>,
    agg: Aggregate,
    fit_target: FitTarget,
    scale: f64,
    predicted_order: f64,
    beta_expected: f64,
    mc: &MonteCarlo,
    oracle_resolution: usize,
    exact: bool,
) -> ErrorReport {
    let values: Vec<f64> = match fit_target {
        FitTarget::Rms => agg.mse.iter().map(|m| m.sqrt()).collect(),
        FitTarget::MeanSquare => agg.mse.clone(),
    };
    let mut flags = Vec::new();
    if !exact {
        flags.push(ReportFlag::NonExactSubflow);
    }
    let threshold = match fit_target {
        FitTarget::Rms => DEGENERATE_RELATIVE_RMS * scale,
        FitTarget::MeanSquare => (DEGENERATE_RELATIVE_RMS * scale).powi(2),
    };
    let degenerate = values.iter().all(|v| *v <= threshold);
    let (mut fitted_order, mut fit_r2, mut prefactor) = (None, None, None);
    if degenerate {
        flags.push(ReportFlag::Degenerate);
    } else if let Ok((slope, intercept, r2)) = fit_line(&step_sizes, &values) {
        fitted_order = Some(slope);
        fit_r2 = Some(r2);
        prefactor = Some(intercept.exp2());
        if r2 < RELIABLE_R2 {
            flags.push(ReportFlag::UnreliableFit);
        }
    } else {
        flags.push(ReportFlag::Degenerate);
    }
    let local_slopes = local_slopes(&step_sizes, &values);
    ErrorReport {
        step_sizes,
        step_counts,
        mse: agg.mse,
        standard_errors: agg.standard_errors,
        fit_target,
        fitted_order,
        fit_r2,
        prefactor,
        local_slopes,
        predicted_order,
        beta_expected,
        samples: mc.samples,
        seed: mc.seed,
        oracle_resolution,
        flags,
    }
}

fn check_samples(mc: &MonteCarlo, minimum: usize) -> Result<()> {
    if mc.samples < minimum {
        return invalid(format!("need at least {minimum} samples, got {}", mc.samples));
    }
    Ok(())
}

fn beta_or_default(cfg: &SchemeConfig) -> f64 {
    compute_beta(&cfg.covariance, &cfg.operator).map_or(f64::NAN, |b| b.beta)
}

/// Strong error `E‖S^N u_0 - u_ref(T)‖²` for each `N`, all `N` driven by
/// block sums of one fine path per sample. The reference is exponential
/// Euler-Maruyama at `reference_factor · max(N)` steps.
pub fn converge(
    cfg: &SchemeConfig,
    step_counts: &[usize],
    mc: &MonteCarlo,
    reference_factor: usize,
) -> Result<ErrorReport> {
    cfg.validate()?;
    check_samples(mc, 50)?;
    let mut counts = step_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if counts.len() < 3 || counts[0] == 0 {
        return invalid("need at least three distinct positive step counts");
    }
    if reference_factor == 0 {
        return invalid("reference factor must be positive");
    }
    let n_fine = reference_factor * counts[counts.len() - 1];
    if let Some(bad) = counts.iter().find(|n| !n_fine.is_multiple_of(**n)) {
        return invalid(format!("step count {bad} does not divide the reference resolution {n_fine}"));
    }
    let horizon = cfg.grid.horizon();
    let dt_fine = horizon / n_fine as f64;
    let reference_cfg = cfg.with_steps(n_fine)?;
    let reference = Integrator::new(&reference_cfg)?;
    let configs: Vec<SchemeConfig> = counts.iter().map(|n| cfg.with_steps(*n)).collect::<Result<_>>()?;
    let integrators: Vec<Integrator> = configs.iter().map(Integrator::new).collect::<Result<_>>()?;

    let rows: Vec<(Vec<f64>, f64)> = (0..mc.samples)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, f64)> {
            let seed = stream_seed(mc.seed, CONVERGE_STREAM, k as u64);
            let path = sample_path(&cfg.covariance, n_fine, dt_fine, seed)?;
            let exact = reference.reference(&path)?;
            let total = path.coarsen(n_fine)?;
            let mut errors = Vec::with_capacity(counts.len());
            for (n, integ) in counts.iter().zip(&integrators) {
                let coarse = path.coarsen(n_fine / n)?;
                if coarse.coarsen(*n)? != total {
                    return Err(Error::Coupling(format!(
                        "sample {k}: block sums at N = {n} disagree with the fine path"
                    )));
                }
                let approx = integ.trajectory(&coarse)?;
                errors.push(approx.distance_sq(&exact));
            }
            Ok((errors, exact.norm_sq()))
        })
        .collect::<Result<_>>()?;

    let scale = (rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64).sqrt();
    let errors: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
    // ascending N is decreasing h
    let agg = aggregate(&errors);
    let hs: Vec<f64> = counts.iter().map(|n| horizon / *n as f64).collect();
    let beta = beta_or_default(cfg);
    Ok(build_report(
        hs,
        counts,
        agg,
        FitTarget::Rms,
        scale,
        beta / 2.0,
        beta,
        mc,
        n_fine,
        cfg.diffusion.has_exact_flow(&cfg.covariance),
    ))
}

/// One-step error `E‖S(u_0) - u_ref(h)‖²` against the reference solver at
/// `substeps` fine steps on `[0, h]`.
pub fn consistency(cfg: &SchemeConfig, step_sizes: &[f64], mc: &MonteCarlo, substeps: usize) -> Result<ErrorReport> {
    cfg.validate()?;
    check_samples(mc, 2)?;
    let mut hs = step_sizes.to_vec();
    if hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return invalid("step sizes must be positive");
    }
    hs.sort_by(|a, b| b.total_cmp(a));
    hs.dedup();
    if hs.len() < 3 {
        return invalid("need at least three distinct step sizes");
    }
    if substeps == 0 {
        return invalid("reference substeps must be positive");
    }
    let local_cfgs: Vec<SchemeConfig> = hs
        .iter()
        .map(|h| {
            let mut c = cfg.clone();
            c.grid = TimeGrid::new(*h, 1)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let integrators: Vec<Integrator> = local_cfgs.iter().map(Integrator::new).collect::<Result<_>>()?;

    let rows: Vec<Vec<f64>> = (0..mc.samples)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            hs.iter()
                .zip(&integrators)
                .enumerate()
                .map(|(j, (h, integ))| {
                    let seed = stream_seed(mc.seed, CONSISTENCY_STREAM, (k * hs.len() + j) as u64);
                    let path = sample_path(&cfg.covariance, substeps, h / substeps as f64, seed)?;
                    let exact = integ.reference(&path)?;
                    let whole = path.coarsen(substeps)?;
                    let approx = integ.step(&cfg.initial, whole.column(0), *h)?;
                    Ok(approx.distance_sq(&exact))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let agg = aggregate(&rows);
    let beta = beta_or_default(cfg);
    let counts = hs.iter().map(|h| (cfg.grid.horizon() / h).round() as usize).collect();
    Ok(build_report(
        hs,
        counts,
        agg,
        FitTarget::Rms,
        cfg.initial.norm(),
        (2.0 + beta) / 2.0,
        beta,
        mc,
        substeps,
        cfg.diffusion.has_exact_flow(&cfg.covariance),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub step_counts: Vec<usize>,
    pub step_sizes: Vec<f64>,
    /// `E‖S^N u - S^N v‖² / ‖u - v‖²` per step count.
    pub ratios: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub max_ratio: f64,
    /// `exp((2 L_f + L_g²) T)`.
    pub ceiling: f64,
    pub perturbation_scale: f64,
    pub samples: usize,
    pub seed: u64,
    pub pass: bool,
}

/// Paired trajectories from `u_0` and `u_0 + δ d` on identical noise, with a
/// random unit direction `d` per sample.
pub fn stability(
    cfg: &SchemeConfig,
    perturbation_scale: f64,
    step_counts: &[usize],
    mc: &MonteCarlo,
) -> Result<StabilityReport> {
    cfg.validate()?;
    check_samples(mc, 2)?;
    if !(perturbation_scale > 0.0) {
        return invalid("perturbation scale must be positive");
    }
    let mut counts = step_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if counts.is_empty() || counts[0] == 0 {
        return invalid("need positive step counts");
    }
    let n_fine = counts[counts.len() - 1];
    if let Some(bad) = counts.iter().find(|n| !n_fine.is_multiple_of(**n)) {
        return invalid(format!("step count {bad} does not divide {n_fine}"));
    }
    let horizon = cfg.grid.horizon();
    let configs: Vec<SchemeConfig> = counts.iter().map(|n| cfg.with_steps(*n)).collect::<Result<_>>()?;
    let integrators: Vec<Integrator> = configs.iter().map(Integrator::new).collect::<Result<_>>()?;
    let m = cfg.operator.modes();

    let rows: Vec<Vec<f64>> = (0..mc.samples)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let seed = stream_seed(mc.seed, STABILITY_STREAM, k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dir: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v0 = SpectralField::new(
                cfg.initial
                    .coefficients()
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + perturbation_scale * d / len)
                    .collect(),
            );
            let initial_gap = cfg.initial.distance_sq(&v0);
            let path = sample_path(&cfg.covariance, n_fine, horizon / n_fine as f64, rng.random())?;
            counts
                .iter()
                .zip(&integrators)
                .map(|(n, integ)| {
                    let coarse = path.coarsen(n_fine / n)?;
                    Ok(integ.paired_distance_sq(&cfg.initial, &v0, &coarse)? / initial_gap)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let agg = aggregate(&rows);
    let lf = cfg.drift.lipschitz_bound();
    let lg = cfg.diffusion.lipschitz_bound(&cfg.covariance);
    let ceiling = ((2.0 * lf + lg * lg) * horizon).exp();
    let pass = agg
        .mse
        .iter()
        .zip(&agg.standard_errors)
        .all(|(r, se)| *r <= ceiling * (1.0 + 5.0 * se));
    let max_ratio = agg.mse.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityReport {
        step_sizes: counts.iter().map(|n| horizon / *n as f64).collect(),
        step_counts: counts,
        ratios: agg.mse,
        standard_errors: agg.standard_errors,
        max_ratio,
        ceiling,
        perturbation_scale,
        samples: mc.samples,
        seed: mc.seed,
        pass,
    })
}

/// `E‖e^{ΔW(s)g}u_0 - u_0‖²` for each `s`, with paired normals across `s`;
/// the slope is fitted on the moment itself and should be one.
pub fn flow_increment(cfg: &SchemeConfig, s_values: &[f64], mc: &MonteCarlo) -> Result<ErrorReport> {
    cfg.validate()?;
    check_samples(mc, 2)?;
    let mut ss = s_values.to_vec();
    if ss.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return invalid("increment times must be positive");
    }
    ss.sort_by(|a, b| b.total_cmp(a));
    ss.dedup();
    let integ = Integrator::new(cfg)?;
    let seed = stream_seed(mc.seed, FLOW_STREAM, 0);
    let estimates: Vec<MomentEstimate> = ss
        .iter()
        .map(|s| flow_increment_moment(integ.collocation(), &cfg.diffusion, &cfg.initial, *s, mc.samples, seed))
        .collect::<Result<_>>()?;
    let agg = Aggregate {
        mse: estimates.iter().map(|e| e.mean).collect(),
        standard_errors: estimates.iter().map(|e| e.stderr).collect(),
    };
    let counts = ss.iter().map(|s| (1.0 / s).round() as usize).collect();
    Ok(build_report(
        ss,
        counts,
        agg,
        FitTarget::MeanSquare,
        cfg.initial.norm(),
        1.0,
        beta_or_default(cfg),
        mc,
        0,
        cfg.diffusion.has_exact_flow(&cfg.covariance),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityTrace {
    pub modes: usize,
    pub times: Vec<f64>,
    /// `E‖u(t)‖²_α` at each monitored time.
    pub mean_square: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// `sup_t (E‖u(t)‖²_α)^{1/2}`.
    pub sup_norm: f64,
    pub sup_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub alpha: f64,
    pub base: RegularityTrace,
    pub refined: RegularityTrace,
    /// `|sup(2M) - sup(M)| / sup(M)`.
    pub relative_change: f64,
    pub initial_norm: f64,
    pub samples: usize,
    pub seed: u64,
    pub oracle_resolution: usize,
}

/// Monitors `sup_t (E‖u(t)‖²_α)^{1/2}` along reference trajectories on the
/// configuration's time grid, at `M` and `2M` modes.
pub fn regularity(
    cfg: &SchemeConfig,
    alpha: FractionalExponent,
    mc: &MonteCarlo,
    reference_factor: usize,
) -> Result<RegularityReport> {
    cfg.validate()?;
    check_samples(mc, 2)?;
    if alpha.value() >= 1.0 {
        return invalid(format!("alpha must lie in [0, 1), got {}", alpha.value()));
    }
    if reference_factor == 0 {
        return invalid("reference factor must be positive");
    }
    let base = regularity_trace(cfg, alpha, mc, reference_factor)?;
    let refined_cfg = doubled(cfg)?;
    let refined = regularity_trace(&refined_cfg, alpha, mc, reference_factor)?;
    Ok(RegularityReport {
        alpha: alpha.value(),
        relative_change: (refined.sup_norm - base.sup_norm).abs() / base.sup_norm,
        initial_norm: cfg.operator.fractional_norm(&cfg.initial, alpha)?,
        base,
        refined,
        samples: mc.samples,
        seed: mc.seed,
        oracle_resolution: cfg.grid.steps() * reference_factor,
    })
}

/// Same problem at twice the modes; the initial condition is zero-padded.
fn doubled(cfg: &SchemeConfig) -> Result<SchemeConfig> {
    let m = 2 * cfg.operator.modes();
    let operator = match cfg.operator.family() {
        crate::spectral::EigenFamily::DirichletLaplacian => OperatorSpec::dirichlet_laplacian(m)?,
        crate::spectral::EigenFamily::Custom => {
            return Err(Error::UnsupportedFamily("cannot refine a custom eigenvalue family".into()))
        }
    };
    let mut initial = cfg.initial.coefficients().to_vec();
    initial.resize(m, 0.0);
    Ok(SchemeConfig {
        operator,
        covariance: CovarianceSpec::new(cfg.covariance.decay_rate(), cfg.covariance.amplitude(), m)?,
        initial: SpectralField::new(initial),
        ..cfg.clone()
    })
}

fn regularity_trace(
    cfg: &SchemeConfig,
    alpha: FractionalExponent,
    mc: &MonteCarlo,
    reference_factor: usize,
) -> Result<RegularityTrace> {
    let n = cfg.grid.steps();
    let n_fine = n * reference_factor;
    let horizon = cfg.grid.horizon();
    let integ = Integrator::new(cfg)?;
    let rows: Vec<Vec<f64>> = (0..mc.samples)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let seed = stream_seed(mc.seed, REGULARITY_STREAM, k as u64);
            let path = sample_path(&cfg.covariance, n_fine, horizon / n_fine as f64, seed)?;
            let mut norms = Vec::with_capacity(n + 1);
            integ.reference_observed(&path, |step, c| {
                if step % reference_factor == 0 {
                    norms.push(cfg.operator.fractional_norm_of(c, alpha).powi(2));
                }
            })?;
            Ok(norms)
        })
        .collect::<Result<_>>()?;
    let agg = aggregate(&rows);
    let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    let (arg, sup) = agg
        .mse
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(ai, av), (i, v)| if *v > av { (i, *v) } else { (ai, av) });
    Ok(RegularityTrace {
        modes: cfg.operator.modes(),
        times: times.clone(),
        mean_square: agg.mse,
        standard_errors: agg.standard_errors,
        sup_norm: sup.sqrt(),
        sup_time: times[arg],
    })
}
