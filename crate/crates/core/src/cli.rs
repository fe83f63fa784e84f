//! Experiment dispatch and report writing for the `splitpde` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{parse_config, ResolvedConfig, RunConfig};
use crate::error::Error as CoreError;
use crate::experiments::{
    consistency, converge, flow_increment, regularity, stability, ErrorReport, MonteCarlo,
};
use crate::noise::{compute_beta, hs_norm_partial, BETA_MARGIN};
use crate::spectral::FractionalExponent;

pub const CSV_HEADER: &str = "h,N,mse,rms,stderr,local_slope";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Converge,
    Consistency,
    Stability,
    FlowIncrement,
    Regularity,
    Beta,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Converge => "converge",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::Stability => "stability",
            ExperimentKind::FlowIncrement => "flow-increment",
            ExperimentKind::Regularity => "regularity",
            ExperimentKind::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub strict: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(CoreError),
    #[error("{0}")]
    Experiment(CoreError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("degenerate fit: no convergence order can be estimated (outputs written to {0})")]
    DegenerateFit(PathBuf),
    #[error("non-finite value in column `{column}` of row {row}")]
    NonFinite { column: &'static str, row: usize },
    #[error("result outside configured tolerance (strict mode)")]
    Tolerance,
    #[error("worker pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Tolerance => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::DegenerateFit(_) => 4,
            CliError::NonFinite { .. } => 5,
            CliError::Experiment(_) | CliError::Pool(_) => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub experiment_kind: ExperimentKind,
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv: Option<PathBuf>,
    pub json: PathBuf,
    pub pass: Option<bool>,
    pub summary: Value,
}

/// SHA-256 of the compact JSON of the resolved configuration, with object keys
/// in sorted order so the digest can be recomputed from the emitted block.
pub fn config_digest(resolved: &ResolvedConfig) -> String {
    let value = serde_json::to_value(resolved).expect("configuration serializes");
    digest_value(&value)
}

pub fn digest_value(value: &Value) -> String {
    let text = serde_json::to_string(value).expect("json value serializes");
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

struct CsvRow {
    h: f64,
    n: usize,
    mse: f64,
    stderr: f64,
    local_slope: Option<f64>,
}

fn render_csv(rows: &[CsvRow]) -> Result<String, CliError> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let rms = r.mse.sqrt();
        for (column, v) in [("h", r.h), ("mse", r.mse), ("rms", rms), ("stderr", r.stderr)] {
            if !v.is_finite() {
                return Err(CliError::NonFinite { column, row: i + 1 });
            }
        }
        let slope = match r.local_slope {
            Some(s) if s.is_finite() => s.to_string(),
            Some(_) => return Err(CliError::NonFinite { column: "local_slope", row: i + 1 }),
            None => String::new(),
        };
        let _ = writeln!(out, "{},{},{},{},{},{}", r.h, r.n, r.mse, rms, r.stderr, slope);
    }
    Ok(out)
}

fn error_rows(report: &ErrorReport) -> Vec<CsvRow> {
    (0..report.mse.len())
        .map(|k| CsvRow {
            h: report.step_sizes[k],
            n: report.step_counts[k],
            mse: report.mse[k],
            stderr: report.standard_errors[k],
            local_slope: report.local_slopes[k],
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn error_summary(report: &ErrorReport, tolerance: f64) -> Value {
    json!({
        "fitted_order": report.fitted_order,
        "fitted_mean_square_order": report.mean_square_order(),
        "r2": report.fit_r2,
        "prefactor": report.prefactor,
        "fit_target": report.fit_target,
        "beta_expected": report.beta_expected,
        "predicted_order": report.predicted_order,
        "tolerance": tolerance,
        "pass": report.within_tolerance(tolerance),
        "flags": report.flags,
        "samples": report.samples,
        "oracle_resolution": report.oracle_resolution,
    })
}

/// Reads the configuration, runs one experiment, and writes
/// `<out>/<kind>.csv` (except for `beta`) and `<out>/<kind>.json`.
pub fn run(kind: ExperimentKind, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let started = now();
    let text = fs::read_to_string(&opts.config).map_err(|source| CliError::Io {
        path: opts.config.clone(),
        source,
    })?;
    let mut cfg = parse_config(&text).map_err(CliError::Config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&opts.out).map_err(|source| CliError::Io {
        path: opts.out.clone(),
        source,
    })?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Pool(e.to_string()))?;
    let (rows, mut summary, pass, degenerate) = pool.install(|| execute(kind, &cfg))?;

    let resolved = cfg.resolved();
    let manifest = RunManifest {
        config_digest: config_digest(&resolved),
        seed: cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: now(),
        experiment_kind: kind,
    };
    summary["experiment"] = json!(kind.name());
    summary["manifest"] = serde_json::to_value(&manifest).expect("manifest serializes");
    summary["resolved_config"] = serde_json::to_value(&resolved).expect("config serializes");

    let csv = match rows {
        Some(rows) => {
            let body = render_csv(&rows)?;
            let path = opts.out.join(format!("{}.csv", kind.name()));
            write_file(&path, &body)?;
            Some(path)
        }
        None => None,
    };
    let json_path = opts.out.join(format!("{}.json", kind.name()));
    let pretty = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&json_path, &(pretty + "\n"))?;

    if degenerate {
        return Err(CliError::DegenerateFit(json_path));
    }
    if opts.strict && pass == Some(false) {
        return Err(CliError::Tolerance);
    }
    Ok(RunOutcome {
        csv,
        json: json_path,
        pass,
        summary,
    })
}

type Executed = (Option<Vec<CsvRow>>, Value, Option<bool>, bool);

fn execute(kind: ExperimentKind, cfg: &RunConfig) -> Result<Executed, CliError> {
    let scheme = cfg.scheme_config().map_err(CliError::Config)?;
    let mc = MonteCarlo {
        samples: cfg.samples,
        seed: cfg.seed,
    };
    let exp = CliError::Experiment;
    match kind {
        ExperimentKind::Converge => {
            let report = converge(&scheme, &cfg.step_counts, &mc, cfg.reference_factor).map_err(exp)?;
            let summary = error_summary(&report, cfg.tolerance);
            let pass = report.within_tolerance(cfg.tolerance);
            Ok((Some(error_rows(&report)), summary, Some(pass), report.is_degenerate()))
        }
        ExperimentKind::Consistency => {
            let c = &cfg.consistency;
            let report = consistency(&scheme, &c.step_sizes, &mc, c.substeps).map_err(exp)?;
            let summary = error_summary(&report, c.tolerance);
            let pass = report.within_tolerance(c.tolerance);
            Ok((Some(error_rows(&report)), summary, Some(pass), report.is_degenerate()))
        }
        ExperimentKind::FlowIncrement => {
            let c = &cfg.flow_increment;
            let report = flow_increment(&scheme, &c.s_values, &mc).map_err(exp)?;
            let summary = error_summary(&report, c.tolerance);
            let pass = report.within_tolerance(c.tolerance);
            Ok((Some(error_rows(&report)), summary, Some(pass), report.is_degenerate()))
        }
        ExperimentKind::Stability => {
            let report =
                stability(&scheme, cfg.stability.perturbation_scale, &cfg.step_counts, &mc).map_err(exp)?;
            let rows = (0..report.ratios.len())
                .map(|k| CsvRow {
                    h: report.step_sizes[k],
                    n: report.step_counts[k],
                    mse: report.ratios[k],
                    stderr: report.standard_errors[k],
                    local_slope: None,
                })
                .collect();
            let summary = json!({
                "max_ratio": report.max_ratio,
                "ceiling": report.ceiling,
                "ratios": report.ratios,
                "standard_errors": report.standard_errors,
                "perturbation_scale": report.perturbation_scale,
                "samples": report.samples,
                "pass": report.pass,
            });
            Ok((Some(rows), summary, Some(report.pass), false))
        }
        ExperimentKind::Regularity => {
            let alpha = FractionalExponent::new(cfg.regularity.alpha).map_err(CliError::Config)?;
            let report = regularity(&scheme, alpha, &mc, cfg.reference_factor).map_err(exp)?;
            let rows = [&report.base, &report.refined]
                .iter()
                .flat_map(|trace| {
                    (0..trace.times.len()).map(move |k| CsvRow {
                        h: trace.times[k],
                        n: trace.modes,
                        mse: trace.mean_square[k],
                        stderr: trace.standard_errors[k],
                        local_slope: None,
                    })
                })
                .collect();
            let finite = report.base.sup_norm.is_finite() && report.refined.sup_norm.is_finite();
            let pass = finite && report.relative_change <= cfg.regularity.tolerance;
            let summary = json!({
                "alpha": report.alpha,
                "sup_norm": report.base.sup_norm,
                "sup_time": report.base.sup_time,
                "sup_norm_doubled_modes": report.refined.sup_norm,
                "relative_change": report.relative_change,
                "initial_norm": report.initial_norm,
                "tolerance": cfg.regularity.tolerance,
                "samples": report.samples,
                "oracle_resolution": report.oracle_resolution,
                "pass": pass,
            });
            Ok((Some(rows), summary, Some(pass), false))
        }
        ExperimentKind::Beta => {
            let summary = beta_summary(cfg).map_err(exp)?;
            Ok((None, summary, None, false))
        }
    }
}

/// Regularity index and partial sums of the Hilbert-Schmidt series at the
/// index itself and just above the supremum.
pub fn beta_summary(cfg: &RunConfig) -> Result<Value, CoreError> {
    let op = cfg.operator_spec()?;
    let cov = cfg.covariance_spec()?;
    let index = compute_beta(&cov, &op)?;
    let supremum = 0.5 + cov.decay_rate();
    let probes: Vec<usize> = (0..=6).map(|k| 10usize.pow(k)).collect();
    let partial = |beta: f64| -> Result<Vec<Value>, CoreError> {
        probes
            .iter()
            .map(|m| Ok(json!({ "modes": m, "norm": hs_norm_partial(&cov, &op, beta, *m)? })))
            .collect()
    };
    let above = supremum + 0.05;
    Ok(json!({
        "beta_expected": index.beta,
        "certified": index.certified,
        "supremum": supremum,
        "margin": BETA_MARGIN,
        "predicted_order": index.beta / 2.0,
        "partial_sums_at_beta": partial(index.beta)?,
        "probe_beta_above_supremum": above.min(1.0),
        "partial_sums_above_supremum": if above <= 1.0 { Value::Array(partial(above)?) } else { Value::Null },
    }))
}
