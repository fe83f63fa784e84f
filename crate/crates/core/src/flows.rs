//! The two nonlinear sub-flows of the splitting: the drift flow `e^{hf}`
//! solving `dv = f(v) dt`, and the stochastic flow `e^{ΔW(h)g}` solving
//! `dz = g(z) dW`.
//!
//! Both nonlinearities are Nemytskii maps evaluated on the square collocation
//! grid. Since the square sine transform is a bijection between `M`
//! coefficients and `M` grid values, the pointwise solutions below are exact
//! flows of the collocated system, not approximations to it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{mix64, stream_seed, CovarianceSpec};
use crate::spectral::{SineTransform, SpectralField};

const FLOW_INCREMENT_STREAM: u64 = 0x464c_4f57;

/// Drift nonlinearity `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    /// `f(u) = rate·u`.
    Linear { rate: f64 },
    /// `f(u)(x) = scale·u(x)/(1 + u(x)²)`; `|f'| ≤ scale` and `f''` is bounded.
    Saturating { scale: f64 },
}

impl DriftSpec {
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Linear { rate } => rate.abs(),
            DriftSpec::Saturating { scale } => scale.abs(),
        }
    }

    /// Pointwise value `f(v)`.
    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Linear { rate } => rate * v,
            DriftSpec::Saturating { scale } => scale * v / (1.0 + v * v),
        }
    }

    /// Classical RK4 on the scalar ODE `v' = f(v)` over `[0, h]`.
    pub fn scalar_flow(&self, v: f64, h: f64, substeps: usize) -> f64 {
        let dt = h / substeps as f64;
        let mut y = v;
        for _ in 0..substeps {
            let k1 = self.eval(y);
            let k2 = self.eval(y + 0.5 * dt * k1);
            let k3 = self.eval(y + 0.5 * dt * k2);
            let k4 = self.eval(y + dt * k3);
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    pub(crate) fn is_pointwise(&self) -> bool {
        matches!(self, DriftSpec::Saturating { .. })
    }
}

/// Diffusion `g`, acting on a noise increment `v` as `g(u)v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionSpec {
    Zero,
    /// `g(u)v = σ v`.
    Additive { sigma: f64 },
    /// `(g(u)v)(x) = σ u(x) v(x)`.
    #[serde(alias = "linear-multiplicative")]
    Multiplicative { sigma: f64 },
}

impl DiffusionSpec {
    /// Lipschitz constant into `L_2^0`: `σ √(2 Σ q_i)` for the multiplicative
    /// kind, using `sup |e_i| = √2`.
    pub fn lipschitz_bound(&self, cov: &CovarianceSpec) -> f64 {
        match *self {
            DiffusionSpec::Zero | DiffusionSpec::Additive { .. } => 0.0,
            DiffusionSpec::Multiplicative { sigma } => sigma.abs() * (2.0 * cov.trace()).sqrt(),
        }
    }

    /// Whether [`stochastic_flow`] solves the sub-problem exactly.
    pub fn has_exact_flow(&self, cov: &CovarianceSpec) -> bool {
        match self {
            DiffusionSpec::Multiplicative { .. } => cov.is_trace_class(),
            _ => true,
        }
    }
}

/// Substep counts of the inner integrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerBudget {
    #[serde(default = "default_substeps")]
    pub drift_substeps: usize,
    #[serde(default = "default_substeps")]
    pub stochastic_substeps: usize,
}

fn default_substeps() -> usize {
    16
}

impl Default for InnerBudget {
    fn default() -> Self {
        Self {
            drift_substeps: default_substeps(),
            stochastic_substeps: default_substeps(),
        }
    }
}

/// Grid data shared by every flow evaluation at a fixed mode count.
#[derive(Debug, Clone)]
pub struct Collocation {
    transform: SineTransform,
    covariance: CovarianceSpec,
    q: Vec<f64>,
    // Σ_i q_i e_i(x_j)², the pointwise variance rate of W
    kappa: Vec<f64>,
    budget: InnerBudget,
}

/// Reusable grid buffers for the in-place flow kernels.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    pub values: Vec<f64>,
    pub noise: Vec<f64>,
    pub modes: Vec<f64>,
}

impl Scratch {
    pub fn new(m: usize) -> Self {
        Self {
            values: vec![0.0; m],
            noise: vec![0.0; m],
            modes: vec![0.0; m],
        }
    }
}

impl Collocation {
    pub fn new(covariance: &CovarianceSpec, budget: InnerBudget) -> Result<Self> {
        if budget.drift_substeps == 0 || budget.stochastic_substeps == 0 {
            return invalid("inner substep counts must be positive");
        }
        let m = covariance.modes();
        let transform = SineTransform::square(m)?;
        let q = covariance.eigenvalues();
        let kappa = (0..m)
            .map(|j| {
                q.iter()
                    .enumerate()
                    .map(|(i, qi)| qi * transform.basis_value(i, j).powi(2))
                    .sum()
            })
            .collect();
        Ok(Self {
            transform,
            covariance: *covariance,
            q,
            kappa,
            budget,
        })
    }

    pub fn modes(&self) -> usize {
        self.transform.modes()
    }

    pub fn transform(&self) -> &SineTransform {
        &self.transform
    }

    pub fn covariance(&self) -> &CovarianceSpec {
        &self.covariance
    }

    pub fn budget(&self) -> InnerBudget {
        self.budget
    }

    /// `κ(x_j) = Σ_i q_i e_i(x_j)²`.
    pub fn kernel_diagonal(&self) -> &[f64] {
        &self.kappa
    }

    pub fn drift_flow(&self, f: &DriftSpec, u: &SpectralField, h: f64) -> Result<SpectralField> {
        self.check_field(u)?;
        if !(h > 0.0) {
            return invalid(format!("step must be positive, got {h}"));
        }
        let mut c = u.coefficients().to_vec();
        self.drift_in_place(f, &mut c, h, &mut Scratch::new(self.modes()));
        Ok(SpectralField::new(c))
    }

    pub fn stochastic_flow(
        &self,
        g: &DiffusionSpec,
        u: &SpectralField,
        dw: &[f64],
        h: f64,
    ) -> Result<SpectralField> {
        self.check_field(u)?;
        if dw.len() != self.modes() {
            return invalid(format!("increment has {} modes, expected {}", dw.len(), self.modes()));
        }
        if !(h > 0.0) {
            return invalid(format!("step must be positive, got {h}"));
        }
        let mut c = u.coefficients().to_vec();
        self.stochastic_in_place(g, &mut c, dw, h, &mut Scratch::new(self.modes()));
        Ok(SpectralField::new(c))
    }

    pub(crate) fn drift_in_place(&self, f: &DriftSpec, c: &mut [f64], h: f64, s: &mut Scratch) {
        match *f {
            DriftSpec::Zero => {}
            DriftSpec::Linear { rate } => {
                let growth = (rate * h).exp();
                c.iter_mut().for_each(|x| *x *= growth);
            }
            DriftSpec::Saturating { .. } => {
                // dt_inner = h / drift_substeps, hence exactly drift_substeps RK4 steps
                let n = self.budget.drift_substeps;
                self.transform.synthesize_into(c, &mut s.values);
                for v in s.values.iter_mut() {
                    *v = f.scalar_flow(*v, h, n);
                }
                self.transform.analyze_into(&s.values, c);
            }
        }
    }

    pub(crate) fn stochastic_in_place(
        &self,
        g: &DiffusionSpec,
        c: &mut [f64],
        dw: &[f64],
        h: f64,
        s: &mut Scratch,
    ) {
        match *g {
            DiffusionSpec::Zero => {}
            DiffusionSpec::Additive { sigma } => {
                for (x, w) in c.iter_mut().zip(dw) {
                    *x += sigma * w;
                }
            }
            DiffusionSpec::Multiplicative { sigma } if self.covariance.is_trace_class() => {
                self.transform.synthesize_into(c, &mut s.values);
                self.transform.synthesize_into(dw, &mut s.noise);
                let ito = 0.5 * sigma * sigma * h;
                for ((v, w), k) in s.values.iter_mut().zip(&s.noise).zip(&self.kappa) {
                    *v *= (sigma * w - ito * k).exp();
                }
                self.transform.analyze_into(&s.values, c);
            }
            DiffusionSpec::Multiplicative { sigma } => {
                self.bridged_euler_maruyama(sigma, c, dw, h, s);
            }
        }
    }

    /// Euler-Maruyama on `dz = σ z dW` with the step increment refined by a
    /// Brownian bridge. The bridge stream is keyed on the increment bits, so
    /// the result is a deterministic function of `(u, dW, h)`.
    fn bridged_euler_maruyama(&self, sigma: f64, c: &mut [f64], dw: &[f64], h: f64, s: &mut Scratch) {
        let n = self.budget.stochastic_substeps;
        let key = dw.iter().fold(0x5EED_u64, |acc, w| mix64(acc ^ w.to_bits()));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let delta = h / n as f64;
        let mut remaining: Vec<f64> = dw.to_vec();
        let mut tau = h;
        self.transform.synthesize_into(c, &mut s.values);
        for k in 0..n {
            for ((inc, rem), q) in s.modes.iter_mut().zip(remaining.iter_mut()).zip(&self.q) {
                *inc = if k + 1 == n {
                    *rem
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *rem * delta / tau + (q * delta * (tau - delta) / tau).sqrt() * z
                };
                *rem -= *inc;
            }
            tau -= delta;
            self.transform.synthesize_into(&s.modes, &mut s.noise);
            for (v, w) in s.values.iter_mut().zip(&s.noise) {
                *v += sigma * *v * w;
            }
        }
        self.transform.analyze_into(&s.values, c);
    }

    fn check_field(&self, u: &SpectralField) -> Result<()> {
        if u.len() != self.modes() {
            return invalid(format!("field has {} modes, expected {}", u.len(), self.modes()));
        }
        Ok(())
    }
}

/// `e^{hf} u` with the default inner budget.
pub fn drift_flow(f: &DriftSpec, u: &SpectralField, h: f64) -> Result<SpectralField> {
    let cov = CovarianceSpec::new(0.0, 0.0, u.len().max(1))?;
    Collocation::new(&cov, InnerBudget::default())?.drift_flow(f, u, h)
}

/// `e^{ΔW(h)g} u` where `dw` holds the mode increments `√q_i Δβ_i`.
pub fn stochastic_flow(
    g: &DiffusionSpec,
    cov: &CovarianceSpec,
    u: &SpectralField,
    dw: &[f64],
    h: f64,
) -> Result<SpectralField> {
    Collocation::new(cov, InnerBudget::default())?.stochastic_flow(g, u, dw, h)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl MomentEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            samples: n,
        }
    }
}

/// Estimates `E‖e^{ΔW(s)g}u - u‖²`.
///
/// Sample `k` draws standard normals from stream `(seed, k)` and scales them
/// by `√(q_i s)`, so calls with the same seed at different `s` are paired.
pub fn flow_increment_moment(
    colloc: &Collocation,
    g: &DiffusionSpec,
    u: &SpectralField,
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if !(s > 0.0) {
        return invalid(format!("increment time must be positive, got {s}"));
    }
    if samples == 0 {
        return invalid("need at least one sample");
    }
    if u.len() != colloc.modes() {
        return invalid("field and collocation mode counts differ");
    }
    let scales: Vec<f64> = colloc.q.iter().map(|q| (q * s).sqrt()).collect();
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, FLOW_INCREMENT_STREAM, k as u64));
            let dw: Vec<f64> = scales
                .iter()
                .map(|sc| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sc * z
                })
                .collect();
            let mut c = u.coefficients().to_vec();
            colloc.stochastic_in_place(g, &mut c, &dw, s, &mut Scratch::new(colloc.modes()));
            crate::spectral::distance_sq(&c, u.coefficients())
        })
        .collect();
    Ok(MomentEstimate::from_samples(&values))
}
