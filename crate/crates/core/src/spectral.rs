//! The state space `L²(0,1)` with the Dirichlet Laplacian.
//!
//! Fields are stored as coefficients in the orthonormal sine basis
//! `e_i(x) = √2 sin(iπx)`, so the `L²` norm is the Euclidean norm of the
//! coefficient vector and every operator built from `A` acts diagonally.
//!
//! The collocation grid used for pointwise (Nemytskii) nonlinearities is
//! `x_j = j/(P+1)`, `j = 1..P`. At `P = M` the synthesis matrix is symmetric and
//! squares to `(M+1)/2`, so analysis is the same matrix scaled by `1/(M+1)`.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Which closed-form eigenvalue family an [`OperatorSpec`] was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenFamily {
    /// `λ_i = (iπ)²`, the negative Dirichlet Laplacian on `(0,1)`.
    DirichletLaplacian,
    /// User-supplied eigenvalues; no regularity theory is attached.
    Custom,
}

/// Eigenvalues `λ_i` of `-A`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    eigenvalues: Vec<f64>,
    family: EigenFamily,
}

impl OperatorSpec {
    pub fn dirichlet_laplacian(modes: usize) -> Result<Self> {
        if modes == 0 {
            return invalid("mode count must be positive");
        }
        let eigenvalues = (1..=modes).map(dirichlet_eigenvalue).collect();
        Ok(Self {
            eigenvalues,
            family: EigenFamily::DirichletLaplacian,
        })
    }

    /// Arbitrary non-negative diagonal family. Zero eigenvalues are allowed so
    /// that the linear part can be switched off.
    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return invalid("mode count must be positive");
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return invalid(format!("eigenvalue {bad} is not a finite non-negative number"));
        }
        Ok(Self {
            eigenvalues,
            family: EigenFamily::Custom,
        })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn family(&self) -> EigenFamily {
        self.family
    }

    /// Diagonal of `e^{tA}`.
    pub fn semigroup_factors(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return invalid(format!("semigroup time must be non-negative, got {t}"));
        }
        Ok(self.eigenvalues.iter().map(|l| (-l * t).exp()).collect())
    }

    pub fn apply_semigroup(&self, field: &SpectralField, t: f64) -> Result<SpectralField> {
        self.check(field)?;
        let factors = self.semigroup_factors(t)?;
        Ok(SpectralField::new(
            field.coefficients.iter().zip(&factors).map(|(c, e)| c * e).collect(),
        ))
    }

    /// `(-A)^γ`, applied on the truncated spectrum.
    pub fn apply_fractional_power(&self, field: &SpectralField, gamma: f64) -> Result<SpectralField> {
        self.check(field)?;
        Ok(SpectralField::new(
            field
                .coefficients
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, l)| c * l.powf(gamma))
                .collect(),
        ))
    }

    /// `‖u‖_α = ‖(-A)^{α/2} u‖`.
    pub fn fractional_norm(&self, field: &SpectralField, alpha: FractionalExponent) -> Result<f64> {
        self.check(field)?;
        Ok(self.fractional_norm_of(&field.coefficients, alpha))
    }

    pub(crate) fn fractional_norm_of(&self, coefficients: &[f64], alpha: FractionalExponent) -> f64 {
        let a = alpha.value();
        coefficients
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, l)| if a == 0.0 { c * c } else { l.powf(a) * c * c })
            .sum::<f64>()
            .sqrt()
    }

    fn check(&self, field: &SpectralField) -> Result<()> {
        if field.len() != self.modes() {
            return invalid(format!(
                "field has {} modes, operator has {}",
                field.len(),
                self.modes()
            ));
        }
        Ok(())
    }
}

pub fn dirichlet_eigenvalue(index: usize) -> f64 {
    let k = index as f64 * PI;
    k * k
}

/// Exponent `α ≥ 0` of the graph norm `‖(-A)^{α/2}·‖`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FractionalExponent(f64);

impl FractionalExponent {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return invalid(format!("fractional exponent must be finite and >= 0, got {alpha}"));
        }
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A state `u = Σ c_i e_i` in the sine eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coefficients: Vec<f64>,
}

impl SpectralField {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    pub fn zeros(modes: usize) -> Self {
        Self::new(vec![0.0; modes])
    }

    /// `c_i = i^{-3}`: lies in `Dom(A)` since `Σ λ_i² c_i² = π⁴ Σ i^{-2}`.
    pub fn cubic_decay(modes: usize) -> Self {
        Self::new((1..=modes).map(|i| (i as f64).powi(-3)).collect())
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    pub fn distance_sq(&self, other: &SpectralField) -> f64 {
        distance_sq(&self.coefficients, &other.coefficients)
    }
}

pub(crate) fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Precomputed sine synthesis between `M` coefficients and `P` grid values.
#[derive(Debug, Clone)]
pub struct SineTransform {
    modes: usize,
    points: usize,
    // row j holds e_i(x_j) for i = 1..M
    synthesis: Vec<f64>,
}

impl SineTransform {
    pub fn new(modes: usize, points: usize) -> Result<Self> {
        if modes == 0 {
            return invalid("mode count must be positive");
        }
        if points < modes {
            return invalid(format!("grid has {points} points, need at least {modes}"));
        }
        // sin(iπ j/(P+1)) with the argument reduced exactly in integers
        let period = 2 * (points + 1);
        let mut synthesis = Vec::with_capacity(modes * points);
        for j in 1..=points {
            for i in 1..=modes {
                let k = (i * j) % period;
                let s = (PI * k as f64 / (points + 1) as f64).sin();
                synthesis.push(std::f64::consts::SQRT_2 * s);
            }
        }
        Ok(Self {
            modes,
            points,
            synthesis,
        })
    }

    /// The square transform used for collocation.
    pub fn square(modes: usize) -> Result<Self> {
        Self::new(modes, modes)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn grid(&self) -> Vec<f64> {
        let denom = (self.points + 1) as f64;
        (1..=self.points).map(|j| j as f64 / denom).collect()
    }

    /// `e_i(x_j)`.
    pub fn basis_value(&self, mode: usize, point: usize) -> f64 {
        self.synthesis[point * self.modes + mode]
    }

    pub(crate) fn synthesize_into(&self, coefficients: &[f64], values: &mut [f64]) {
        debug_assert_eq!(coefficients.len(), self.modes);
        debug_assert_eq!(values.len(), self.points);
        for (row, out) in self.synthesis.chunks_exact(self.modes).zip(values.iter_mut()) {
            *out = dot(row, coefficients);
        }
    }

    pub(crate) fn analyze_into(&self, values: &[f64], coefficients: &mut [f64]) {
        debug_assert_eq!(self.modes, self.points);
        debug_assert_eq!(values.len(), self.points);
        let scale = 1.0 / (self.points + 1) as f64;
        // symmetric at P = M: column i equals row i
        for (row, out) in self.synthesis.chunks_exact(self.modes).zip(coefficients.iter_mut()) {
            *out = scale * dot(row, values);
        }
    }

    pub fn to_physical(&self, field: &SpectralField) -> Result<Vec<f64>> {
        if field.len() != self.modes {
            return invalid(format!("field has {} modes, transform has {}", field.len(), self.modes));
        }
        let mut values = vec![0.0; self.points];
        self.synthesize_into(&field.coefficients, &mut values);
        Ok(values)
    }

    pub fn to_spectral(&self, values: &[f64]) -> Result<SpectralField> {
        if self.points != self.modes {
            return invalid("analysis is only defined on the square grid P = M");
        }
        if values.len() != self.points {
            return invalid(format!("expected {} grid values, got {}", self.points, values.len()));
        }
        let mut coefficients = vec![0.0; self.modes];
        self.analyze_into(values, &mut coefficients);
        Ok(SpectralField::new(coefficients))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let o = 4 * k;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Values `u(x_j)` at `x_j = j/(P+1)`.
pub fn to_physical(field: &SpectralField, grid_points: usize) -> Result<Vec<f64>> {
    SineTransform::new(field.len(), grid_points)?.to_physical(field)
}

/// Inverse of [`to_physical`] on the square grid.
pub fn to_spectral(values: &[f64]) -> Result<SpectralField> {
    SineTransform::square(values.len().max(1))?.to_spectral(values)
}
