//! JSON model, training and experiment files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lqr_ac::experiment::ExperimentSpec;
use lqr_ac::numerics::from_rows;
use lqr_ac::sampler::DEFAULT_STATE_GUARD;
use lqr_ac::{LqrModel, SampleConfig, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "D_xi")]
    d_xi: Vec<Vec<f64>>,
    sigma: f64,
}

impl ModelFile {
    fn build(&self) -> Result<LqrModel> {
        let m = |name: &str, rows: &[Vec<f64>]| {
            from_rows(rows).with_context(|| format!("matrix {name}"))
        };
        Ok(LqrModel::new(
            m("A", &self.a)?,
            m("B", &self.b)?,
            m("Q", &self.q)?,
            m("R", &self.r)?,
            m("D_xi", &self.d_xi)?,
            self.sigma,
        )?)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn parse_model(text: &str) -> Result<LqrModel> {
    let file: ModelFile = serde_json::from_str(text).context("model file")?;
    file.build()
}

pub fn load_model(path: &Path) -> Result<LqrModel> {
    parse_model(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn sample_config(n: usize, n0: usize, n1: usize, state_guard: Option<f64>) -> Result<SampleConfig> {
    let mut s = SampleConfig::new(n, n0, n1)?;
    s.state_guard = state_guard.unwrap_or(DEFAULT_STATE_GUARD);
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(rename = "T")]
    t: usize,
    alpha: Option<f64>,
    beta: Option<f64>,
    stepsize_product: Option<f64>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "N0")]
    n0: usize,
    #[serde(rename = "N1")]
    n1: usize,
    seed: u64,
    #[serde(default)]
    run_id: u64,
    warmup_factor: Option<f64>,
    warmup_fraction: Option<f64>,
    guard_rho: Option<f64>,
    state_guard: Option<f64>,
}

/// Step sizes come from `alpha`/`beta` when both are given, otherwise from
/// `stepsize_product / T` (default product 4).
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let f: TrainFile = serde_json::from_str(text).context("training config")?;
    let sample = sample_config(f.n, f.n0, f.n1, f.state_guard)?;
    let mut cfg = match (f.alpha, f.beta, f.stepsize_product) {
        (Some(a), Some(b), None) => TrainConfig::new(f.t, a, b, sample, f.seed),
        (None, None, p) => TrainConfig::with_stepsize_product(
            f.t,
            p.unwrap_or(ExperimentSpec::DEFAULT_STEPSIZE_PRODUCT),
            sample,
            f.seed,
        ),
        _ => bail!("give either both alpha and beta, or stepsize_product"),
    };
    cfg.run_id = f.run_id;
    if let Some(v) = f.warmup_factor {
        cfg.warmup_factor = v;
    }
    if let Some(v) = f.warmup_fraction {
        cfg.warmup_fraction = v;
    }
    if let Some(v) = f.guard_rho {
        cfg.guard_rho = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    parse_train_config(&read(path)?).with_context(|| format!("in {}", path.display()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ModelRef {
    Path(PathBuf),
    Inline(ModelFile),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    model: ModelRef,
    t_list: Vec<usize>,
    runs_per_t: usize,
    #[serde(default = "default_product")]
    stepsize_product: f64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "N0")]
    n0: usize,
    #[serde(rename = "N1")]
    n1: usize,
    seed: u64,
    state_guard: Option<f64>,
}

fn default_product() -> f64 {
    ExperimentSpec::DEFAULT_STEPSIZE_PRODUCT
}

/// Relative model paths resolve against `base_dir`.
pub fn parse_experiment(text: &str, base_dir: &Path) -> Result<ExperimentSpec> {
    let f: ExperimentFile = serde_json::from_str(text).context("experiment file")?;
    let model = match &f.model {
        ModelRef::Inline(m) => m.build()?,
        ModelRef::Path(p) => load_model(&base_dir.join(p))?,
    };
    let spec = ExperimentSpec {
        model,
        t_list: f.t_list,
        runs_per_t: f.runs_per_t,
        stepsize_product: f.stepsize_product,
        sample: sample_config(f.n, f.n0, f.n1, f.state_guard)?,
        seed: f.seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let base = path.parent().unwrap_or(Path::new("."));
    parse_experiment(&read(path)?, base).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "D_xi": [[1.0]], "sigma": 1.0}"#;

    #[test]
    fn scalar_model_parses() {
        let m = parse_model(SCALAR).unwrap();
        assert_eq!((m.state_dim(), m.action_dim()), (1, 1));
    }

    #[test]
    fn indefinite_cost_is_named() {
        let text = SCALAR.replace(r#""Q": [[1.0]]"#, r#""Q": [[-1.0]]"#);
        let err = format!("{:#}", parse_model(&text).unwrap_err());
        assert!(err.contains("Q is not positive definite"), "{err}");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = SCALAR.replace(r#""A": [[0.5]]"#, r#""A": [[0.5], [0.1, 0.2]]"#);
        assert!(parse_model(&text).is_err());
    }

    #[test]
    fn train_config_step_rules() {
        let base = r#""T": 10, "N": 2, "N0": 3, "N1": 2, "seed": 1"#;
        let cfg = parse_train_config(&format!("{{{base}}}")).unwrap();
        assert_eq!(cfg.alpha, 0.4);
        let cfg = parse_train_config(&format!(r#"{{{base}, "alpha": 0.01, "beta": 0.02}}"#)).unwrap();
        assert_eq!((cfg.alpha, cfg.beta), (0.01, 0.02));
        assert!(parse_train_config(&format!(r#"{{{base}, "alpha": 0.01}}"#)).is_err());
        assert!(parse_train_config(&format!(r#"{{{base}, "gamma": 1}}"#)).is_err());
    }

    #[test]
    fn experiment_accepts_inline_model() {
        let text = format!(
            r#"{{"model": {SCALAR}, "t_list": [10, 20], "runs_per_t": 2, "N": 2, "N0": 2, "N1": 2, "seed": 0}}"#
        );
        let spec = parse_experiment(&text, Path::new(".")).unwrap();
        assert_eq!(spec.stepsize_product, 4.0);
        let bad = text.replace("[10, 20]", "[20, 10]");
        assert!(parse_experiment(&bad, Path::new(".")).is_err());
    }
}
