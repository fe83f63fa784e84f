//! Q-Wiener increments `W(t) = Σ √q_i β_i(t) e_i` with a diagonal power-law
//! covariance `q_i = a·i^{-2r}`, and the regularity index of the noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::spectral::{dirichlet_eigenvalue, EigenFamily, OperatorSpec};

/// Distance kept below the supremum `1/2 + r` when it is below one.
pub const BETA_MARGIN: f64 = 0.01;

/// Largest mode count accepted by [`hs_norm_partial`].
pub const HS_PARTIAL_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    decay_rate: f64,
    amplitude: f64,
    modes: usize,
}

impl CovarianceSpec {
    pub fn new(decay_rate: f64, amplitude: f64, modes: usize) -> Result<Self> {
        if !(decay_rate >= 0.0 && decay_rate.is_finite()) {
            return invalid(format!("decay rate must be finite and >= 0, got {decay_rate}"));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return invalid(format!("amplitude must be finite and >= 0, got {amplitude}"));
        }
        if modes == 0 {
            return invalid("mode count must be positive");
        }
        Ok(Self {
            decay_rate,
            amplitude,
            modes,
        })
    }

    /// `Q = I` truncated to `modes`.
    pub fn white(modes: usize) -> Result<Self> {
        Self::new(0.0, 1.0, modes)
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// `q_i` for a 1-based mode index, valid beyond the truncation.
    pub fn eigenvalue(&self, index: usize) -> f64 {
        self.amplitude * (index as f64).powf(-2.0 * self.decay_rate)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.modes).map(|i| self.eigenvalue(i)).collect()
    }

    /// `Σ_{i≤M} q_i`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues().iter().sum()
    }

    /// Whether the untruncated `Tr(Q)` is finite.
    pub fn is_trace_class(&self) -> bool {
        self.decay_rate > 0.5 || self.amplitude == 0.0
    }
}

/// Mode-wise Brownian increments, one column of `M` values per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    modes: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    // column-major: step k occupies [k*modes, (k+1)*modes)
    increments: Vec<f64>,
}

impl NoisePath {
    /// Wraps hand-built increments laid out step by step.
    pub fn from_increments(modes: usize, dt: f64, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if modes == 0 || increments.is_empty() || !increments.len().is_multiple_of(modes) {
            return invalid("increments must hold a positive whole number of columns");
        }
        if !(dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        Ok(Self {
            modes,
            steps: increments.len() / modes,
            dt,
            seed,
            increments,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Increment of mode `mode` (0-based) over step `step`.
    pub fn increment(&self, mode: usize, step: usize) -> f64 {
        self.increments[step * self.modes + mode]
    }

    pub fn column(&self, step: usize) -> &[f64] {
        &self.increments[step * self.modes..(step + 1) * self.modes]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, f64> {
        self.increments.chunks_exact(self.modes)
    }

    /// Block sums over `factor` consecutive steps.
    ///
    /// Even factors are reduced by repeated pairwise halving, so coarsening by
    /// `a` then `b` is bit-identical to coarsening by `a·b` whenever `a` is a
    /// power of two.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return invalid(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.steps
            ));
        }
        let mut out = self.clone();
        let mut remaining = factor;
        while remaining.is_multiple_of(2) {
            out = out.block_sum(2);
            remaining /= 2;
        }
        if remaining > 1 {
            out = out.block_sum(remaining);
        }
        Ok(out)
    }

    fn block_sum(&self, factor: usize) -> NoisePath {
        let m = self.modes;
        let steps = self.steps / factor;
        let mut increments = vec![0.0; steps * m];
        for (k, out) in increments.chunks_exact_mut(m).enumerate() {
            let block = &self.increments[k * factor * m..(k + 1) * factor * m];
            out.copy_from_slice(&block[..m]);
            for col in block[m..].chunks_exact(m) {
                for (o, x) in out.iter_mut().zip(col) {
                    *o += x;
                }
            }
        }
        NoisePath {
            modes: m,
            steps,
            dt: self.dt * factor as f64,
            seed: self.seed,
            increments,
        }
    }

    /// Sum of all increments per mode, i.e. `W(T) - W(0)` in coordinates.
    pub fn endpoint(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.modes];
        for col in self.columns() {
            for (t, x) in total.iter_mut().zip(col) {
                *t += x;
            }
        }
        total
    }
}

/// Draws `n_fine` columns of independent `Normal(0, q_i·dt_fine)` increments.
pub fn sample_path(cov: &CovarianceSpec, n_fine: usize, dt_fine: f64, seed: u64) -> Result<NoisePath> {
    if n_fine == 0 {
        return invalid("path needs at least one step");
    }
    if !(dt_fine > 0.0 && dt_fine.is_finite()) {
        return invalid(format!("time step must be positive, got {dt_fine}"));
    }
    let scales: Vec<f64> = cov.eigenvalues().iter().map(|q| (q * dt_fine).sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut increments = Vec::with_capacity(n_fine * cov.modes());
    for _ in 0..n_fine {
        for s in &scales {
            let z: f64 = StandardNormal.sample(&mut rng);
            increments.push(s * z);
        }
    }
    Ok(NoisePath {
        modes: cov.modes(),
        steps: n_fine,
        dt: dt_fine,
        seed,
        increments,
    })
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent stream for one Monte Carlo sample of one experiment.
pub fn stream_seed(base: u64, experiment: u64, index: u64) -> u64 {
    mix64(mix64(mix64(base) ^ experiment) ^ index)
}

/// The exponent `β ∈ (0,1]` of the Hilbert-Schmidt condition on `(-A)^{(β-1)/2} Q^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityIndex {
    pub beta: f64,
    /// `true` when obtained from the closed-form convergence condition.
    pub certified: bool,
}

/// `Σ i^{-2r} i^{2(β-1)}` converges iff `β < 1/2 + r`; the index is that
/// supremum less [`BETA_MARGIN`], or exactly one once the supremum exceeds one.
pub fn compute_beta(cov: &CovarianceSpec, op: &OperatorSpec) -> Result<RegularityIndex> {
    if op.family() != EigenFamily::DirichletLaplacian {
        return Err(Error::UnsupportedFamily(
            "regularity index is only known in closed form for the Dirichlet Laplacian".into(),
        ));
    }
    if cov.amplitude() == 0.0 {
        return Ok(RegularityIndex {
            beta: 1.0,
            certified: true,
        });
    }
    let supremum = 0.5 + cov.decay_rate();
    let beta = if supremum > 1.0 {
        1.0
    } else {
        (supremum - BETA_MARGIN).min(1.0)
    };
    Ok(RegularityIndex {
        beta,
        certified: true,
    })
}

/// `(Σ_{i≤modes} λ_i^{β-1} q_i)^{1/2}`, the truncated Hilbert-Schmidt norm.
pub fn hs_norm_partial(cov: &CovarianceSpec, op: &OperatorSpec, beta: f64, modes: usize) -> Result<f64> {
    if modes == 0 || modes > HS_PARTIAL_CAP {
        return invalid(format!("mode count must lie in 1..={HS_PARTIAL_CAP}, got {modes}"));
    }
    let lambda = |i: usize| -> Result<f64> {
        match op.family() {
            EigenFamily::DirichletLaplacian => Ok(dirichlet_eigenvalue(i)),
            EigenFamily::Custom => op.eigenvalues().get(i - 1).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "custom family has {} eigenvalues, {modes} requested",
                    op.modes()
                ))
            }),
        }
    };
    let exponent = beta - 1.0;
    // smallest terms first
    let mut sum = 0.0;
    for i in (1..=modes).rev() {
        let q = cov.eigenvalue(i);
        if q == 0.0 {
            continue;
        }
        sum += lambda(i)?.powf(exponent) * q;
    }
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(m: usize) -> OperatorSpec {
        OperatorSpec::dirichlet_laplacian(m).unwrap()
    }

    #[test]
    fn covariance_invariants() {
        let c = CovarianceSpec::new(1.0, 2.0, 10).unwrap();
        let q = c.eigenvalues();
        assert!(q.iter().all(|v| *v > 0.0));
        assert!(q.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.is_trace_class());
        assert!(!CovarianceSpec::white(10).unwrap().is_trace_class());
        assert!(CovarianceSpec::new(-0.1, 1.0, 4).is_err());
        assert!(CovarianceSpec::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_amplitude_gives_zero_path() {
        let c = CovarianceSpec::new(1.0, 0.0, 4).unwrap();
        let p = sample_path(&c, 8, 0.1, 1).unwrap();
        assert!(p.columns().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn same_seed_same_bits() {
        let c = CovarianceSpec::new(0.5, 1.0, 6).unwrap();
        let a = sample_path(&c, 32, 0.01, 77).unwrap();
        let b = sample_path(&c, 32, 0.01, 77).unwrap();
        assert_eq!(a, b);
        let d = sample_path(&c, 32, 0.01, 78).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn sample_path_rejects_bad_arguments() {
        let c = CovarianceSpec::white(2).unwrap();
        assert!(sample_path(&c, 0, 0.1, 0).is_err());
        assert!(sample_path(&c, 2, 0.0, 0).is_err());
    }

    #[test]
    fn first_entry_moments() {
        let c = CovarianceSpec::new(1.0, 1.0, 1).unwrap();
        let dt = 0.01;
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|s| sample_path(&c, 1, dt, stream_seed(3, 0, s)).unwrap().increment(0, 0))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
        assert!((var / dt - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn ito_isometry_at_increment_level() {
        let m = 16;
        let c = CovarianceSpec::new(0.75, 1.0, m).unwrap();
        let dt = 0.02;
        let n = 10_000;
        let norms: Vec<f64> = (0..n)
            .map(|s| {
                let p = sample_path(&c, 1, dt, stream_seed(9, 1, s)).unwrap();
                p.column(0).iter().map(|x| x * x).sum::<f64>()
            })
            .collect();
        let mean = norms.iter().sum::<f64>() / n as f64;
        let var = norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = c.trace() * dt;
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn coarsen_examples() {
        let c = CovarianceSpec::new(1.0, 1.0, 3).unwrap();
        let p = sample_path(&c, 16, 0.125, 5).unwrap();
        assert_eq!(p.coarsen(1).unwrap(), p);
        let one = p.coarsen(16).unwrap();
        assert_eq!(one.steps(), 1);
        assert_eq!(one.dt(), 2.0);
        for i in 0..3 {
            let direct: f64 = (0..16).map(|k| p.increment(i, k)).sum();
            assert!((one.increment(i, 0) - direct).abs() < 1e-14);
        }
        assert_eq!(p.coarsen(2).unwrap().coarsen(2).unwrap(), p.coarsen(4).unwrap());
        assert_eq!(p.coarsen(4).unwrap().coarsen(4).unwrap(), p.coarsen(16).unwrap());
        assert!(p.coarsen(3).is_err());
        assert!(p.coarsen(0).is_err());
    }

    #[test]
    fn coarse_windows_sum_fine_increments() {
        let c = CovarianceSpec::new(1.0, 1.0, 2).unwrap();
        let p = sample_path(&c, 12, 0.1, 8).unwrap();
        let q = p.coarsen(3).unwrap();
        for k in 0..4 {
            for i in 0..2 {
                let s = p.increment(i, 3 * k) + p.increment(i, 3 * k + 1) + p.increment(i, 3 * k + 2);
                assert_eq!(q.increment(i, k), s);
            }
        }
    }

    #[test]
    fn beta_white_and_trace_class() {
        let white = compute_beta(&CovarianceSpec::white(8).unwrap(), &op(8)).unwrap();
        assert!(white.beta < 0.5 && white.beta > 0.45);
        assert!((white.beta - 0.49).abs() < 1e-15);
        let tc = compute_beta(&CovarianceSpec::new(1.0, 1.0, 8).unwrap(), &op(8)).unwrap();
        assert_eq!(tc.beta, 1.0);
        assert!(tc.certified);
        let quarter = compute_beta(&CovarianceSpec::new(0.25, 1.0, 8).unwrap(), &op(8)).unwrap();
        assert!((quarter.beta - 0.74).abs() < 1e-15);
        let half = compute_beta(&CovarianceSpec::new(0.5, 1.0, 8).unwrap(), &op(8)).unwrap();
        assert!((half.beta - 0.99).abs() < 1e-15);
    }

    #[test]
    fn beta_rejects_custom_family() {
        let custom = OperatorSpec::from_eigenvalues(vec![1.0, 2.0]).unwrap();
        let err = compute_beta(&CovarianceSpec::white(2).unwrap(), &custom).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFamily(_)));
    }

    #[test]
    fn quarter_decay_partial_sums_bracket_beta() {
        // r = 1/4: terms scale like i^{2β-5/2}, so the supremum is 3/4.
        let cov = CovarianceSpec::new(0.25, 1.0, 1).unwrap();
        let o = op(1);
        let b = compute_beta(&cov, &o).unwrap().beta;
        let supremum = b + BETA_MARGIN;
        let decade = |beta: f64, lo: usize| {
            hs_norm_partial(&cov, &o, beta, 10 * lo).unwrap().powi(2)
                - hs_norm_partial(&cov, &o, beta, lo).unwrap().powi(2)
        };
        // divergent side: decade increments grow like 10^{0.1}
        let above = supremum + 0.05;
        assert!(decade(above, 100_000) > 1.5 * decade(above, 1_000));
        // convergent side: they shrink like 10^{-0.1}
        let below = supremum - 0.05;
        assert!(decade(below, 100_000) < 0.7 * decade(below, 1_000));
    }

    #[test]
    fn basel_partial_sums() {
        let cov = CovarianceSpec::new(1.0, 1.0, 1).unwrap();
        let o = op(1);
        let limit = (std::f64::consts::PI.powi(2) / 6.0).sqrt();
        let v = hs_norm_partial(&cov, &o, 1.0, 1_000_000).unwrap();
        assert!((v - limit).abs() < 1e-6);
        let mut prev = 0.0;
        for m in [1usize, 2, 10, 100, 1000] {
            let s = hs_norm_partial(&cov, &o, 1.0, m).unwrap();
            assert!(s >= prev);
            prev = s;
        }
        assert!(hs_norm_partial(&cov, &o, 1.0, HS_PARTIAL_CAP + 1).is_err());
        let zero = CovarianceSpec::new(1.0, 0.0, 1).unwrap();
        assert_eq!(hs_norm_partial(&zero, &o, 1.0, 100).unwrap(), 0.0);
    }

    #[test]
    fn white_noise_partial_sums_grow_like_sqrt_modes() {
        let cov = CovarianceSpec::white(1).unwrap();
        let o = op(1);
        let mut prev = hs_norm_partial(&cov, &o, 1.0, 1000).unwrap();
        for m in [2000usize, 4000, 8000, 16000] {
            let s = hs_norm_partial(&cov, &o, 1.0, m).unwrap();
            assert!((s / prev - 2f64.sqrt()).abs() < 1e-12);
            prev = s;
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn beta_non_decreasing_in_decay(r1 in 0.0f64..3.0, dr in 0.0f64..3.0) {
                let o = op(4);
                let a = compute_beta(&CovarianceSpec::new(r1, 1.0, 4).unwrap(), &o).unwrap();
                let b = compute_beta(&CovarianceSpec::new(r1 + dr, 1.0, 4).unwrap(), &o).unwrap();
                prop_assert!(a.beta <= b.beta);
                prop_assert!(a.beta > 0.0 && a.beta <= 1.0);
            }

            #[test]
            fn nested_coarsening_is_bit_exact(log_a in 0u32..4, log_b in 0u32..4, seed in any::<u64>()) {
                let c = CovarianceSpec::new(1.0, 1.0, 3).unwrap();
                let p = sample_path(&c, 64, 1.0 / 64.0, seed).unwrap();
                let (a, b) = (1usize << log_a, 1usize << log_b);
                prop_assert_eq!(p.coarsen(a).unwrap().coarsen(b).unwrap(), p.coarsen(a * b).unwrap());
            }
        }
    }

    mod partial_sum_props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hs_partial_sums_grow_with_modes(r in 0.0f64..2.0, beta in 0.0f64..1.0, m in 1usize..2000, extra in 1usize..2000) {
                let cov = CovarianceSpec::new(r, 1.0, 1).unwrap();
                let op = OperatorSpec::dirichlet_laplacian(1).unwrap();
                let a = hs_norm_partial(&cov, &op, beta, m).unwrap();
                let b = hs_norm_partial(&cov, &op, beta, m + extra).unwrap();
                prop_assert!(b >= a);
            }
        }
    }
}
