//! Multi-T sweeps and the log-log convergence-rate fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::LqrModel;
use crate::sampler::{LinearEnv, SampleConfig};
use crate::trainer::{train_with, IterateLog, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: LqrModel,
    pub t_list: Vec<usize>,
    pub runs_per_t: usize,
    /// `α = β = product / T`.
    pub stepsize_product: f64,
    pub sample: SampleConfig,
    pub seed: u64,
}

impl ExperimentSpec {
    pub const DEFAULT_STEPSIZE_PRODUCT: f64 = 4.0;

    pub fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() {
            return Err(Error::InvalidConfig("t_list is empty".into()));
        }
        if self.t_list[0] == 0 || self.t_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "t_list must be positive and strictly increasing".into(),
            ));
        }
        if self.runs_per_t == 0 {
            return Err(Error::InvalidConfig("runs_per_t must be at least 1".into()));
        }
        if !(self.stepsize_product.is_finite() && self.stepsize_product > 0.0) {
            return Err(Error::InvalidConfig("stepsize_product must be positive".into()));
        }
        self.sample.validate()
    }

    pub fn train_config(&self, t_index: usize, run: usize) -> TrainConfig {
        let mut cfg = TrainConfig::with_stepsize_product(
            self.t_list[t_index],
            self.stepsize_product,
            self.sample,
            self.seed,
        );
        cfg.run_id = (t_index * self.runs_per_t + run) as u64;
        cfg
    }
}

/// Running maxima of the closed-loop and parameter norms over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorMaxima {
    pub rho_closed_loop: f64,
    pub norm_amb_k: f64,
    pub norm_e: f64,
    pub norm_k: f64,
    pub norm_theta_f: f64,
}

impl MonitorMaxima {
    pub fn observe(&mut self, rec: &IterateLog) {
        self.rho_closed_loop = self.rho_closed_loop.max(rec.rho_closed_loop);
        self.norm_amb_k = self.norm_amb_k.max(rec.norm_amb_k);
        self.norm_e = self.norm_e.max(rec.norm_e);
        self.norm_k = self.norm_k.max(rec.norm_k);
        self.norm_theta_f = self.norm_theta_f.max(rec.norm_theta_f);
    }

    pub fn merge(&mut self, other: &MonitorMaxima) {
        self.rho_closed_loop = self.rho_closed_loop.max(other.rho_closed_loop);
        self.norm_amb_k = self.norm_amb_k.max(other.norm_amb_k);
        self.norm_e = self.norm_e.max(other.norm_e);
        self.norm_k = self.norm_k.max(other.norm_k);
        self.norm_theta_f = self.norm_theta_f.max(other.norm_theta_f);
    }

    pub fn from_log(log: &[IterateLog]) -> Self {
        let mut m = Self::default();
        log.iter().for_each(|r| m.observe(r));
        m
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.rho_closed_loop,
            self.norm_amb_k,
            self.norm_e,
            self.norm_k,
            self.norm_theta_f,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFinal {
    pub t: usize,
    pub run: usize,
    pub completed: bool,
    pub critic_err_sq: Option<f64>,
    pub actor_gap: Option<f64>,
    pub error: Option<String>,
    pub maxima: MonitorMaxima,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSummary {
    pub t: usize,
    pub completed: usize,
    pub failed: usize,
    pub mean_critic_err_sq: Option<f64>,
    pub std_critic_err_sq: Option<f64>,
    pub mean_actor_gap: Option<f64>,
    pub std_actor_gap: Option<f64>,
    pub maxima: MonitorMaxima,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<RunFinal>,
    pub per_t: Vec<TSummary>,
    /// `None` when fewer than two T values have completed runs.
    pub slope_critic: Option<f64>,
    pub slope_actor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub t: usize,
    pub run: usize,
    pub log: Vec<IterateLog>,
    pub abort: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub runs: Vec<SweepRun>,
    pub result: SweepResult,
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Slope of `log₂(error)` against `log₂(T)`, skipping missing or non-positive errors.
pub fn log2_slope(ts: &[usize], errors: &[Option<f64>]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .zip(errors)
        .filter_map(|(&t, e)| match e {
            Some(v) if *v > 0.0 && v.is_finite() => Some(((t as f64).log2(), v.log2())),
            _ => None,
        })
        .unzip();
    ols_slope(&x, &y)
}

pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn summarize(t_list: &[usize], runs: &[SweepRun]) -> SweepResult {
    let finals: Vec<RunFinal> = runs
        .iter()
        .map(|r| {
            let last = if r.abort.is_none() { r.log.last() } else { None };
            RunFinal {
                t: r.t,
                run: r.run,
                completed: last.is_some(),
                critic_err_sq: last.map(|l| l.critic_err_sq),
                actor_gap: last.map(|l| l.actor_gap),
                error: r.abort.as_ref().map(|e| e.to_string()),
                maxima: MonitorMaxima::from_log(&r.log),
            }
        })
        .collect();

    let per_t: Vec<TSummary> = t_list
        .iter()
        .map(|&t| {
            let of_t: Vec<&RunFinal> = finals.iter().filter(|f| f.t == t).collect();
            let critic: Vec<f64> = of_t.iter().filter_map(|f| f.critic_err_sq).collect();
            let actor: Vec<f64> = of_t.iter().filter_map(|f| f.actor_gap).collect();
            let mut maxima = MonitorMaxima::default();
            of_t.iter().for_each(|f| maxima.merge(&f.maxima));
            let c = mean_std(&critic);
            let a = mean_std(&actor);
            TSummary {
                t,
                completed: critic.len(),
                failed: of_t.len() - critic.len(),
                mean_critic_err_sq: c.map(|v| v.0),
                std_critic_err_sq: c.map(|v| v.1),
                mean_actor_gap: a.map(|v| v.0),
                std_actor_gap: a.map(|v| v.1),
                maxima,
            }
        })
        .collect();

    let ts: Vec<usize> = per_t.iter().map(|s| s.t).collect();
    let critic_means: Vec<Option<f64>> = per_t.iter().map(|s| s.mean_critic_err_sq).collect();
    let actor_means: Vec<Option<f64>> = per_t.iter().map(|s| s.mean_actor_gap).collect();
    SweepResult {
        runs: finals,
        slope_critic: log2_slope(&ts, &critic_means),
        slope_actor: log2_slope(&ts, &actor_means),
        per_t,
    }
}

/// Runs `runs_per_t` independent trainings for every `T`. Runs are distributed
/// with `exec`; each run samples with the same mode.
pub fn run_sweep_with(exec: Execution, spec: &ExperimentSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let env = LinearEnv::from_model(&spec.model)?;
    // fail fast on setup problems shared by every run
    spec.model.solve_riccati()?;
    let jobs: Vec<(usize, usize)> = (0..spec.t_list.len())
        .flat_map(|ti| (0..spec.runs_per_t).map(move |r| (ti, r)))
        .collect();
    let runs = exec.map(jobs.len(), |j| -> Result<SweepRun> {
        let (ti, run) = jobs[j];
        let cfg = spec.train_config(ti, run);
        let out = train_with(exec, &env, &spec.model, &cfg)?;
        Ok(SweepRun {
            t: spec.t_list[ti],
            run,
            log: out.log,
            abort: out.abort,
        })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let result = summarize(&spec.t_list, &runs);
    Ok(SweepOutput { runs, result })
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepOutput> {
    run_sweep_with(Execution::Parallel, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;

    #[test]
    fn slope_of_exact_inverse_law() {
        let ts = [125usize, 250, 500, 1000, 2000, 4000];
        let errs: Vec<Option<f64>> = ts.iter().map(|&t| Some(3.7 / t as f64)).collect();
        let s = log2_slope(&ts, &errs).unwrap();
        assert!((s + 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn single_point_has_no_slope() {
        assert_eq!(log2_slope(&[100], &[Some(0.1)]), None);
        assert_eq!(log2_slope(&[100, 200], &[Some(0.1), None]), None);
    }

    #[test]
    fn validation() {
        let mut spec = ExperimentSpec {
            model: systems::two_state(),
            t_list: vec![10, 20],
            runs_per_t: 1,
            stepsize_product: 4.0,
            sample: SampleConfig::new(2, 2, 2).unwrap(),
            seed: 0,
        };
        assert!(spec.validate().is_ok());
        spec.t_list = vec![20, 10];
        assert!(spec.validate().is_err());
        spec.t_list = vec![10, 20];
        spec.runs_per_t = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn tiny_sweep_aggregates_and_is_reproducible() {
        let spec = ExperimentSpec {
            model: systems::two_state(),
            t_list: vec![8],
            runs_per_t: 3,
            stepsize_product: 0.1,
            sample: SampleConfig::new(3, 5, 3).unwrap(),
            seed: 4,
        };
        let a = run_sweep(&spec).unwrap();
        let b = run_sweep_with(Execution::Sequential, &spec).unwrap();
        assert_eq!(a, b);
        let s = &a.result.per_t[0];
        assert_eq!((s.completed, s.failed), (3, 0));
        assert_eq!(a.result.slope_critic, None);
        let finals: Vec<f64> = a.runs.iter().map(|r| r.log.last().unwrap().critic_err_sq).collect();
        assert_eq!(s.mean_critic_err_sq, Some(finals.iter().sum::<f64>() / 3.0));
        // distinct runs draw distinct noise
        assert_ne!(finals[0], finals[1]);
    }
}
