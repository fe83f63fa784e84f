//! The Lie-Trotter step `S = e^{hA} e^{hf} e^{ΔW(h)g}` (rightmost factor
//! first) and the exponential Euler-Maruyama reference solver.

use crate::error::{invalid, Result};
use crate::flows::{Collocation, DiffusionSpec, DriftSpec, InnerBudget, Scratch};
use crate::noise::{CovarianceSpec, NoisePath};
use crate::spectral::{distance_sq, OperatorSpec, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if steps == 0 {
            return invalid("step count must be positive");
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.horizon, steps)
    }
}

/// One fully specified problem instance.
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub operator: OperatorSpec,
    pub covariance: CovarianceSpec,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub grid: TimeGrid,
    pub initial: SpectralField,
    pub budget: InnerBudget,
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.operator.modes();
        if self.covariance.modes() != m || self.initial.len() != m {
            return invalid(format!(
                "mode counts disagree: operator {m}, covariance {}, initial {}",
                self.covariance.modes(),
                self.initial.len()
            ));
        }
        Ok(())
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.grid = self.grid.with_steps(steps)?;
        Ok(cfg)
    }
}

/// Reusable solver state for one configuration.
pub struct Integrator<'a> {
    cfg: &'a SchemeConfig,
    colloc: Collocation,
}

impl<'a> Integrator<'a> {
    pub fn new(cfg: &'a SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            colloc: Collocation::new(&cfg.covariance, cfg.budget)?,
        })
    }

    pub fn collocation(&self) -> &Collocation {
        &self.colloc
    }

    pub fn step(&self, u: &SpectralField, dw: &[f64], h: f64) -> Result<SpectralField> {
        if u.len() != self.colloc.modes() || dw.len() != self.colloc.modes() {
            return invalid("state and increment must match the mode count");
        }
        if !(h > 0.0) {
            return invalid(format!("step must be positive, got {h}"));
        }
        let decay = self.cfg.operator.semigroup_factors(h)?;
        let mut c = u.coefficients().to_vec();
        let mut scratch = Scratch::new(c.len());
        self.step_in_place(&mut c, dw, h, &decay, &mut scratch);
        Ok(SpectralField::new(c))
    }

    fn step_in_place(&self, c: &mut [f64], dw: &[f64], h: f64, decay: &[f64], s: &mut Scratch) {
        self.colloc.stochastic_in_place(&self.cfg.diffusion, c, dw, h, s);
        self.colloc.drift_in_place(&self.cfg.drift, c, h, s);
        for (x, e) in c.iter_mut().zip(decay) {
            *x *= e;
        }
    }

    /// `S^N u_0` driven by the columns of `path`, which must already be at the
    /// grid resolution.
    pub fn trajectory(&self, path: &NoisePath) -> Result<SpectralField> {
        self.check_path(path, self.cfg.grid.steps())?;
        let h = self.cfg.grid.step_size();
        let decay = self.cfg.operator.semigroup_factors(h)?;
        let mut c = self.cfg.initial.coefficients().to_vec();
        let mut s = Scratch::new(c.len());
        for dw in path.columns() {
            self.step_in_place(&mut c, dw, h, &decay, &mut s);
        }
        Ok(SpectralField::new(c))
    }

    /// Exponential Euler-Maruyama at the path's own resolution:
    /// `u_{k+1} = e^{δA}(u_k + δ f(u_k) + g(u_k) ΔW_k)`.
    pub fn reference(&self, path: &NoisePath) -> Result<SpectralField> {
        self.reference_observed(path, |_, _| {})
    }

    /// As [`Integrator::reference`], calling `observe(k, c)` on the state at
    /// every fine time `t_k`, `k = 0..=n`.
    pub fn reference_observed(
        &self,
        path: &NoisePath,
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Result<SpectralField> {
        if path.modes() != self.colloc.modes() {
            return invalid("path mode count differs from configuration");
        }
        let dt = self.cfg.grid.horizon() / path.steps() as f64;
        if (dt - path.dt()).abs() > 1e-12 * dt {
            return invalid(format!(
                "path step {} does not tile horizon {} in {} steps",
                path.dt(),
                self.cfg.grid.horizon(),
                path.steps()
            ));
        }
        let decay = self.cfg.operator.semigroup_factors(dt)?;
        let transform = self.colloc.transform();
        let drift = self.cfg.drift;
        let mut c = self.cfg.initial.coefficients().to_vec();
        let mut s = Scratch::new(c.len());
        observe(0, &c);
        for (k, dw) in path.columns().enumerate() {
            let pointwise_noise = matches!(self.cfg.diffusion, DiffusionSpec::Multiplicative { .. });
            if drift.is_pointwise() || pointwise_noise {
                transform.synthesize_into(&c, &mut s.values);
                if pointwise_noise {
                    transform.synthesize_into(dw, &mut s.noise);
                }
                let sigma = match self.cfg.diffusion {
                    DiffusionSpec::Multiplicative { sigma } => sigma,
                    _ => 0.0,
                };
                for (j, v) in s.values.iter_mut().enumerate() {
                    let mut next = *v + dt * drift.eval(*v);
                    if pointwise_noise {
                        next += sigma * *v * s.noise[j];
                    }
                    *v = next;
                }
                transform.analyze_into(&s.values, &mut c);
            } else if let DriftSpec::Linear { rate } = drift {
                c.iter_mut().for_each(|x| *x += dt * rate * *x);
            }
            if let DiffusionSpec::Additive { sigma } = self.cfg.diffusion {
                for (x, w) in c.iter_mut().zip(dw) {
                    *x += sigma * w;
                }
            }
            for (x, e) in c.iter_mut().zip(&decay) {
                *x *= e;
            }
            observe(k + 1, &c);
        }
        Ok(SpectralField::new(c))
    }

    /// Paired run from `u` and `v` on the same noise; returns `‖S^N u - S^N v‖²`.
    pub fn paired_distance_sq(&self, u: &SpectralField, v: &SpectralField, path: &NoisePath) -> Result<f64> {
        self.check_path(path, self.cfg.grid.steps())?;
        let h = self.cfg.grid.step_size();
        let decay = self.cfg.operator.semigroup_factors(h)?;
        let mut a = u.coefficients().to_vec();
        let mut b = v.coefficients().to_vec();
        let mut s = Scratch::new(a.len());
        for dw in path.columns() {
            self.step_in_place(&mut a, dw, h, &decay, &mut s);
            self.step_in_place(&mut b, dw, h, &decay, &mut s);
        }
        Ok(distance_sq(&a, &b))
    }

    fn check_path(&self, path: &NoisePath, steps: usize) -> Result<()> {
        if path.steps() != steps {
            return invalid(format!(
                "path has {} steps but the grid has {steps}; coarsen first",
                path.steps()
            ));
        }
        if path.modes() != self.colloc.modes() {
            return invalid("path mode count differs from configuration");
        }
        Ok(())
    }
}

pub fn lie_trotter_step(cfg: &SchemeConfig, u: &SpectralField, dw: &[f64], h: f64) -> Result<SpectralField> {
    Integrator::new(cfg)?.step(u, dw, h)
}

pub fn run_trajectory(cfg: &SchemeConfig, path: &NoisePath) -> Result<SpectralField> {
    Integrator::new(cfg)?.trajectory(path)
}

pub fn reference_trajectory(cfg: &SchemeConfig, path: &NoisePath) -> Result<SpectralField> {
    Integrator::new(cfg)?.reference(path)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::noise::{sample_path, stream_seed};

    fn config(m: usize, drift: DriftSpec, diffusion: DiffusionSpec, steps: usize) -> SchemeConfig {
        SchemeConfig {
            operator: OperatorSpec::dirichlet_laplacian(m).unwrap(),
            covariance: CovarianceSpec::new(1.0, 1.0, m).unwrap(),
            drift,
            diffusion,
            grid: TimeGrid::new(1.0, steps).unwrap(),
            initial: SpectralField::cubic_decay(m),
            budget: InnerBudget::default(),
        }
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(1.0, 8).unwrap();
        assert_eq!(g.step_size() * 8.0, 1.0);
    }

    #[test]
    fn mismatched_modes_rejected() {
        let mut cfg = config(4, DriftSpec::Zero, DiffusionSpec::Zero, 4);
        cfg.initial = SpectralField::cubic_decay(5);
        assert!(Integrator::new(&cfg).is_err());
    }

    #[test]
    fn step_without_nonlinear_terms_is_semigroup() {
        let cfg = config(6, DriftSpec::Zero, DiffusionSpec::Zero, 4);
        let u = cfg.initial.clone();
        let got = lie_trotter_step(&cfg, &u, &[0.3; 6], 0.25).unwrap();
        assert_eq!(got, cfg.operator.apply_semigroup(&u, 0.25).unwrap());
    }

    #[test]
    fn step_with_zero_operator_is_linear_growth() {
        let mut cfg = config(3, DriftSpec::Linear { rate: 0.4 }, DiffusionSpec::Zero, 4);
        cfg.operator = OperatorSpec::from_eigenvalues(vec![0.0; 3]).unwrap();
        let u = cfg.initial.clone();
        let got = lie_trotter_step(&cfg, &u, &[0.0; 3], 0.5).unwrap();
        for (g, c) in got.coefficients().iter().zip(u.coefficients()) {
            assert_eq!(*g, c * (0.4f64 * 0.5).exp());
        }
    }

    #[test]
    fn additive_step_from_zero_is_damped_increment() {
        let sigma = 0.7;
        let cfg = config(4, DriftSpec::Zero, DiffusionSpec::Additive { sigma }, 8);
        let dw = [0.11, -0.23, 0.05, 0.4];
        let h = 0.125;
        let got = lie_trotter_step(&cfg, &SpectralField::zeros(4), &dw, h).unwrap();
        for i in 0..4 {
            let lambda = cfg.operator.eigenvalues()[i];
            let expected = (0.0 + sigma * dw[i]) * (-lambda * h).exp();
            assert_eq!(got.coefficients()[i], expected);
        }
    }

    #[test]
    fn composition_order_is_pinned() {
        let mut cfg = config(1, DriftSpec::Linear { rate: 0.3 }, DiffusionSpec::Additive { sigma: 0.9 }, 1);
        cfg.covariance = CovarianceSpec::new(1.0, 1.0, 1).unwrap();
        let lambda = cfg.operator.eigenvalues()[0];
        let (u, dw, h) = (0.8, 0.17, 0.05);
        let got = lie_trotter_step(&cfg, &SpectralField::new(vec![u]), &[dw], h).unwrap();
        let expected = (u + 0.9 * dw) * (0.3f64 * h).exp() * (-lambda * h).exp();
        assert_eq!(got.coefficients()[0], expected);
        // applying the drift before the noise would give a different value
        let reordered = (u * (0.3f64 * h).exp() + 0.9 * dw) * (-lambda * h).exp();
        assert_ne!(got.coefficients()[0], reordered);
    }

    #[test]
    fn trajectory_resolution_must_match() {
        let cfg = config(4, DriftSpec::Zero, DiffusionSpec::Zero, 8);
        let p = sample_path(&cfg.covariance, 16, 1.0 / 16.0, 1).unwrap();
        assert!(run_trajectory(&cfg, &p).is_err());
        assert!(run_trajectory(&cfg, &p.coarsen(2).unwrap()).is_ok());
    }

    #[test]
    fn single_step_trajectory_equals_step() {
        let cfg = config(4, DriftSpec::Saturating { scale: 1.0 }, DiffusionSpec::Multiplicative { sigma: 0.5 }, 1);
        let p = sample_path(&cfg.covariance, 1, 1.0, 3).unwrap();
        let a = run_trajectory(&cfg, &p).unwrap();
        let b = lie_trotter_step(&cfg, &cfg.initial, p.column(0), 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_heat_flow_is_step_independent() {
        let base = config(8, DriftSpec::Zero, DiffusionSpec::Zero, 1);
        let exact = base.operator.apply_semigroup(&base.initial, 1.0).unwrap();
        for n in [1usize, 4, 32, 256] {
            let cfg = base.with_steps(n).unwrap();
            let p = sample_path(&cfg.covariance, n, 1.0 / n as f64, 0).unwrap();
            let got = run_trajectory(&cfg, &p).unwrap();
            let rel = got.distance_sq(&exact).sqrt() / exact.norm();
            assert!(rel < 1e-12, "n={n} rel={rel}");
            let r = reference_trajectory(&cfg, &p).unwrap();
            assert!(r.distance_sq(&exact).sqrt() / exact.norm() < 1e-12);
        }
    }

    // Oracle: u_N = e^{TA}u_0 + Σ_k e^{(N-k)hA} σ ΔW_k, summed directly with
    // scalar exponentials per mode.
    fn discrete_convolution(cfg: &SchemeConfig, path: &NoisePath, sigma: f64) -> Vec<f64> {
        let n = path.steps();
        let h = cfg.grid.horizon() / n as f64;
        (0..cfg.operator.modes())
            .map(|i| {
                let lambda = cfg.operator.eigenvalues()[i];
                let mut total = (-lambda * cfg.grid.horizon()).exp() * cfg.initial.coefficients()[i];
                for k in 0..n {
                    total += (-lambda * (n - k) as f64 * h).exp() * sigma * path.increment(i, k);
                }
                total
            })
            .collect()
    }

    #[test]
    fn additive_trajectory_matches_discrete_convolution() {
        let sigma = 0.6;
        let cfg = config(4, DriftSpec::Zero, DiffusionSpec::Additive { sigma }, 8);
        let p = sample_path(&cfg.covariance, 8, 1.0 / 8.0, stream_seed(1, 2, 3)).unwrap();
        let expected = discrete_convolution(&cfg, &p, sigma);
        let scheme = run_trajectory(&cfg, &p).unwrap();
        let reference = reference_trajectory(&cfg, &p).unwrap();
        for i in 0..4 {
            let tol = 1e-14 * (1.0 + expected[i].abs());
            assert!((scheme.coefficients()[i] - expected[i]).abs() < tol);
            assert!((reference.coefficients()[i] - expected[i]).abs() < tol);
        }
    }

    #[test]
    fn reference_is_self_consistent_across_resolutions() {
        let sigma = 0.5;
        let cfg = config(16, DriftSpec::Linear { rate: -0.5 }, DiffusionSpec::Additive { sigma }, 1);
        let n = 1024;
        let (mut sum, mut scale) = (0.0, 0.0);
        for k in 0..50u64 {
            let p = sample_path(&cfg.covariance, n, 1.0 / n as f64, stream_seed(4, 4, k)).unwrap();
            let fine = reference_trajectory(&cfg, &p).unwrap();
            let coarse = reference_trajectory(&cfg, &p.coarsen(2).unwrap()).unwrap();
            sum += fine.distance_sq(&coarse);
            scale += fine.norm_sq();
        }
        let rms = (sum / 50.0).sqrt();
        let h_fine = 1.0 / n as f64;
        assert!(rms < h_fine.sqrt(), "rms {rms}");
        assert!(rms < 0.1 * (scale / 50.0).sqrt());
    }

    #[test]
    fn reference_observer_sees_every_time_point() {
        let cfg = config(4, DriftSpec::Zero, DiffusionSpec::Zero, 1);
        let p = sample_path(&cfg.covariance, 16, 1.0 / 16.0, 2).unwrap();
        let mut seen = Vec::new();
        Integrator::new(&cfg)
            .unwrap()
            .reference_observed(&p, |k, _| seen.push(k))
            .unwrap();
        assert_eq!(seen, (0..=16).collect::<Vec<_>>());
    }

    #[test]
    fn reference_rejects_path_off_horizon() {
        let cfg = config(4, DriftSpec::Zero, DiffusionSpec::Zero, 1);
        let p = sample_path(&cfg.covariance, 16, 0.5, 2).unwrap();
        assert!(reference_trajectory(&cfg, &p).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn single_mode_step_has_closed_form(
                u in -2.0f64..2.0,
                dw in -0.5f64..0.5,
                rate in -1.0f64..1.0,
                sigma in 0.0f64..1.0,
                h in 1e-3f64..0.2,
            ) {
                let mut cfg = config(1, DriftSpec::Linear { rate }, DiffusionSpec::Additive { sigma }, 1);
                cfg.covariance = CovarianceSpec::new(1.0, 1.0, 1).unwrap();
                let lambda = cfg.operator.eigenvalues()[0];
                let got = lie_trotter_step(&cfg, &SpectralField::new(vec![u]), &[dw], h).unwrap();
                let expected = (u + sigma * dw) * (rate * h).exp() * (-lambda * h).exp();
                prop_assert_eq!(got.coefficients()[0], expected);
            }
        }
    }
}
