//! Strict TOML run configuration.
//!
//! Unknown keys are rejected and every default is materialized in the
//! resolved form, which is echoed verbatim into run summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{DiffusionSpec, DriftSpec, InnerBudget};
use crate::noise::{compute_beta, CovarianceSpec};
use crate::scheme::{SchemeConfig, TimeGrid};
use crate::spectral::{OperatorSpec, SpectralField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum OperatorConfig {
    #[default]
    DirichletLaplacian,
    Custom { eigenvalues: Vec<f64> },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    pub decay_rate: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPreset {
    /// `c_i = i^{-3}`.
    CubicDecay,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    #[serde(default = "default_consistency_steps")]
    pub step_sizes: Vec<f64>,
    #[serde(default = "default_consistency_substeps")]
    pub substeps: usize,
    #[serde(default = "default_consistency_tolerance")]
    pub tolerance: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            step_sizes: default_consistency_steps(),
            substeps: default_consistency_substeps(),
            tolerance: default_consistency_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "default_perturbation")]
    pub perturbation_scale: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            perturbation_scale: default_perturbation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowIncrementConfig {
    #[serde(default = "default_s_values")]
    pub s_values: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for FlowIncrementConfig {
    fn default() -> Self {
        Self {
            s_values: default_s_values(),
            tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Largest accepted relative change of the sup when `M` doubles.
    #[serde(default = "default_regularity_tolerance")]
    pub tolerance: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            tolerance: default_regularity_tolerance(),
        }
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub modes: usize,
    pub horizon: f64,
    pub covariance: CovarianceConfig,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default = "default_initial")]
    pub initial: InitialPreset,
    #[serde(default = "default_step_counts")]
    pub step_counts: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reference_factor")]
    pub reference_factor: usize,
    /// Allowed distance between fitted and predicted strong order.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub inner: InnerBudget,
    #[serde(default)]
    pub consistency: ConsistencyConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub flow_increment: FlowIncrementConfig,
    #[serde(default)]
    pub regularity: RegularityConfig,
}

fn one() -> f64 {
    1.0
}
fn default_initial() -> InitialPreset {
    InitialPreset::CubicDecay
}
fn default_step_counts() -> Vec<usize> {
    vec![16, 32, 64, 128, 256, 512]
}
fn default_samples() -> usize {
    200
}
fn default_reference_factor() -> usize {
    32
}
fn default_tolerance() -> f64 {
    0.1
}
fn default_consistency_steps() -> Vec<f64> {
    (4..=9).map(|k| 2f64.powi(-k)).collect()
}
fn default_consistency_substeps() -> usize {
    64
}
fn default_consistency_tolerance() -> f64 {
    0.15
}
fn default_perturbation() -> f64 {
    1e-2
}
fn default_s_values() -> Vec<f64> {
    (6..=12).map(|k| 2f64.powi(-k)).collect()
}
fn default_alpha() -> f64 {
    0.5
}
fn default_regularity_tolerance() -> f64 {
    0.05
}

fn config_error<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        key: key.into(),
        message: message.into(),
    })
}

/// Pulls the offending key out of a serde message such as
/// "unknown field `gamma`, expected ...".
fn key_from_message(message: &str) -> String {
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(start) = message.find(marker) {
            let rest = &message[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "<document>".to_string()
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        Error::Config {
            key: key_from_message(&message),
            message,
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return config_error("modes", "must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return config_error("horizon", "must be positive");
        }
        if self.samples == 0 {
            return config_error("samples", "must be positive");
        }
        if self.step_counts.is_empty() || self.step_counts.contains(&0) {
            return config_error("step_counts", "must be a non-empty list of positive integers");
        }
        if self.reference_factor == 0 {
            return config_error("reference_factor", "must be positive");
        }
        if !(self.covariance.decay_rate >= 0.0 && self.covariance.decay_rate.is_finite()) {
            return config_error("covariance.decay_rate", "must be finite and >= 0");
        }
        if !(self.covariance.amplitude >= 0.0 && self.covariance.amplitude.is_finite()) {
            return config_error("covariance.amplitude", "must be finite and >= 0");
        }
        if self.inner.drift_substeps == 0 {
            return config_error("inner.drift_substeps", "must be positive");
        }
        if self.inner.stochastic_substeps == 0 {
            return config_error("inner.stochastic_substeps", "must be positive");
        }
        if let OperatorConfig::Custom { eigenvalues } = &self.operator {
            if eigenvalues.len() != self.modes {
                return config_error("operator.eigenvalues", format!("expected {} values", self.modes));
            }
            if eigenvalues.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return config_error("operator.eigenvalues", "must be finite and >= 0");
            }
        }
        if self.consistency.substeps == 0 {
            return config_error("consistency.substeps", "must be positive");
        }
        if self.consistency.step_sizes.iter().any(|h| !(*h > 0.0)) {
            return config_error("consistency.step_sizes", "must be positive");
        }
        if !(self.stability.perturbation_scale > 0.0) {
            return config_error("stability.perturbation_scale", "must be positive");
        }
        if self.flow_increment.s_values.iter().any(|s| !(*s > 0.0)) {
            return config_error("flow_increment.s_values", "must be positive");
        }
        if !(0.0..1.0).contains(&self.regularity.alpha) {
            return config_error("regularity.alpha", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn operator_spec(&self) -> Result<OperatorSpec> {
        match &self.operator {
            OperatorConfig::DirichletLaplacian => OperatorSpec::dirichlet_laplacian(self.modes),
            OperatorConfig::Custom { eigenvalues } => OperatorSpec::from_eigenvalues(eigenvalues.clone()),
        }
    }

    pub fn covariance_spec(&self) -> Result<CovarianceSpec> {
        CovarianceSpec::new(self.covariance.decay_rate, self.covariance.amplitude, self.modes)
    }

    pub fn initial_field(&self) -> SpectralField {
        match self.initial {
            InitialPreset::CubicDecay => SpectralField::cubic_decay(self.modes),
            InitialPreset::Zero => SpectralField::zeros(self.modes),
        }
    }

    /// The problem instance on the coarsest grid of `step_counts`.
    pub fn scheme_config(&self) -> Result<SchemeConfig> {
        let steps = *self.step_counts.iter().min().unwrap_or(&1);
        Ok(SchemeConfig {
            operator: self.operator_spec()?,
            covariance: self.covariance_spec()?,
            drift: self.drift,
            diffusion: self.diffusion,
            grid: TimeGrid::new(self.horizon, steps)?,
            initial: self.initial_field(),
            budget: self.inner,
        })
    }

    /// `β` when it is known in closed form.
    pub fn beta_expected(&self) -> Option<f64> {
        let op = self.operator_spec().ok()?;
        let cov = self.covariance_spec().ok()?;
        compute_beta(&cov, &op).ok().map(|b| b.beta)
    }

    pub fn resolved(&self) -> ResolvedConfig {
        ResolvedConfig {
            config: self.clone(),
            beta_expected: self.beta_expected(),
        }
    }
}

/// The configuration with all defaults filled in, plus derived values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    #[serde(flatten)]
    pub config: RunConfig,
    pub beta_expected: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
modes = 16
horizon = 1.0

[covariance]
decay_rate = 1.0

[drift]
kind = "saturating"
scale = 1.0

[diffusion]
kind = "multiplicative"
sigma = 0.5
"#;

    #[test]
    fn minimal_document_materializes_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.samples, 200);
        assert_eq!(cfg.step_counts, vec![16, 32, 64, 128, 256, 512]);
        assert_eq!(cfg.reference_factor, 32);
        assert_eq!(cfg.covariance.amplitude, 1.0);
        assert_eq!(cfg.initial, InitialPreset::CubicDecay);
        assert_eq!(cfg.inner, InnerBudget::default());
        assert_eq!(cfg.operator, OperatorConfig::DirichletLaplacian);
        let echo = serde_json::to_value(cfg.resolved()).unwrap();
        for key in [
            "samples",
            "seed",
            "step_counts",
            "reference_factor",
            "tolerance",
            "inner",
            "consistency",
            "stability",
            "flow_increment",
            "regularity",
            "initial",
            "operator",
        ] {
            assert!(echo.get(key).is_some(), "missing {key}");
        }
        assert_eq!(echo["beta_expected"], 1.0);
        assert_eq!(echo["diffusion"]["kind"], "multiplicative");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(&format!("gamma = 3\n{MINIMAL}")).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "gamma"),
            other => panic!("unexpected {other:?}"),
        }
        let nested = MINIMAL.replace("scale = 1.0", "scale = 1.0\nrate = 2.0");
        assert!(matches!(parse_config(&nested), Err(Error::Config { key, .. }) if key == "rate"));
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("modes = 16\n", "");
        assert!(matches!(parse_config(&text), Err(Error::Config { key, .. }) if key == "modes"));
    }

    #[test]
    fn non_positive_values_are_named() {
        for (from, to, key) in [
            ("modes = 16", "modes = 0", "modes"),
            ("horizon = 1.0", "horizon = 0.0", "horizon"),
            ("horizon = 1.0", "horizon = 1.0\nsamples = 0", "samples"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(
                matches!(parse_config(&text), Err(Error::Config { key: ref k, .. }) if k == key),
                "{key}"
            );
        }
    }

    #[test]
    fn white_noise_echo_and_aliases() {
        let text = MINIMAL
            .replace("decay_rate = 1.0", "decay_rate = 0.0")
            .replace("\"multiplicative\"", "\"linear-multiplicative\"");
        let cfg = parse_config(&text).unwrap();
        assert!((cfg.beta_expected().unwrap() - 0.49).abs() < 1e-15);
        assert_eq!(cfg.diffusion, DiffusionSpec::Multiplicative { sigma: 0.5 });
    }

    #[test]
    fn custom_operator_has_no_closed_form_beta() {
        let text = format!(
            "{MINIMAL}\n[operator]\nkind = \"custom\"\neigenvalues = [{}]\n",
            vec!["0.0"; 16].join(", ")
        );
        let cfg = parse_config(&text).unwrap();
        assert!(cfg.beta_expected().is_none());
        let short = format!("{MINIMAL}\n[operator]\nkind = \"custom\"\neigenvalues = [1.0]\n");
        assert!(matches!(parse_config(&short), Err(Error::Config { key, .. }) if key == "operator.eigenvalues"));
    }

    #[test]
    fn scheme_config_uses_coarsest_grid() {
        let cfg = parse_config(MINIMAL).unwrap().scheme_config().unwrap();
        assert_eq!(cfg.grid.steps(), 16);
        assert_eq!(cfg.operator.modes(), 16);
        cfg.validate().unwrap();
    }
}
