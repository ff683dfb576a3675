//! Single-timescale actor-critic loop.
//!
//! Each iteration samples a critic gradient at `(K_t, θ_t)`, takes an SGD step
//! on the critic and a natural-gradient step on the actor using the blocks of
//! the *previous* critic parameter. The model is consulted only to log errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{CriticParam, GainMatrix, LqrModel};
use crate::numerics::{operator_norm, symmetrize, Mat};
use crate::sampler::{sample_critic_gradient_with, Environment, RngStream, SampleConfig, StreamPath};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub t: usize,
    pub alpha: f64,
    pub beta: f64,
    pub warmup_factor: f64,
    pub warmup_fraction: f64,
    pub sample: SampleConfig,
    pub seed: u64,
    /// Run index in the RNG path; sweeps give every run a distinct value.
    pub run_id: u64,
    pub guard_rho: f64,
}

impl TrainConfig {
    pub const DEFAULT_WARMUP_FACTOR: f64 = 3.0;
    pub const DEFAULT_WARMUP_FRACTION: f64 = 0.5;
    pub const DEFAULT_GUARD_RHO: f64 = 0.999;

    pub fn new(t: usize, alpha: f64, beta: f64, sample: SampleConfig, seed: u64) -> Self {
        Self {
            t,
            alpha,
            beta,
            warmup_factor: Self::DEFAULT_WARMUP_FACTOR,
            warmup_fraction: Self::DEFAULT_WARMUP_FRACTION,
            sample,
            seed,
            run_id: 0,
            guard_rho: Self::DEFAULT_GUARD_RHO,
        }
    }

    /// `α = β = product / T` with the default warmup.
    pub fn with_stepsize_product(t: usize, product: f64, sample: SampleConfig, seed: u64) -> Self {
        let step = product / t.max(1) as f64;
        Self::new(t, step, step, sample, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.alpha) || !positive(self.beta) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if !positive(self.warmup_factor) {
            return Err(Error::InvalidConfig("warmup factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("warmup fraction must lie in [0, 1]".into()));
        }
        if !(self.guard_rho > 0.0 && self.guard_rho < 1.0) {
            return Err(Error::InvalidConfig("guard_rho must lie in (0, 1)".into()));
        }
        self.sample.validate()
    }

    /// Iterations `t < ⌊warmup_fraction · T⌋` use the boosted step sizes.
    pub fn warmup_end(&self) -> usize {
        (self.warmup_fraction * self.t as f64).floor() as usize
    }

    /// Effective `(α_t, β_t)` at iteration `t`.
    pub fn step_sizes(&self, t: usize) -> (f64, f64) {
        if t < self.warmup_end() {
            (self.alpha * self.warmup_factor, self.beta * self.warmup_factor)
        } else {
            (self.alpha, self.beta)
        }
    }
}

/// Diagnostics for the state `(θ_t, K_t)` reached after `t` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub t: usize,
    pub critic_err_sq: f64,
    pub critic_err: f64,
    pub actor_gap: f64,
    pub lyapunov: f64,
    pub rho_closed_loop: f64,
    pub norm_amb_k: f64,
    pub norm_e: f64,
    pub norm_k: f64,
    pub norm_theta_f: f64,
    /// Step sizes used to produce this iterate.
    pub alpha_eff: f64,
    pub beta_eff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub log: Vec<IterateLog>,
    pub k: GainMatrix,
    pub theta: CriticParam,
    /// Set when the run stopped early; `log` then holds the iterations completed.
    pub abort: Option<Error>,
}

impl TrainRun {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }

    pub fn last(&self) -> Option<&IterateLog> {
        self.log.last()
    }
}

/// `θ_{t+1} = sym(θ_t − α ∇̂L)`.
pub fn critic_step(theta: &CriticParam, grad_sample: &Mat, alpha: f64) -> CriticParam {
    let next = symmetrize(&(theta.as_mat() - grad_sample * alpha));
    CriticParam::from_symmetric_unchecked(next, theta.state_dim())
}

/// `K_{t+1} = K_t − β (θ²² K_t − θ²¹)`.
pub fn actor_step(k: &GainMatrix, theta: &CriticParam, beta: f64) -> GainMatrix {
    let direction = theta.theta22() * k.as_mat() - theta.theta21();
    GainMatrix::new(k.as_mat() - direction * beta)
}

/// Constants entering the theoretical constant step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub c_l: f64,
    pub c3: f64,
    pub kappa: f64,
    pub sigma_min_deps: f64,
}

/// `α = λmin(D_ε) ε / (16 c_L² c₃ κ)`, `β = α / κ`.
pub fn theoretical_stepsizes(c: &TheoryConstants, eps: f64) -> Result<(f64, f64)> {
    for (name, v) in [
        ("c_L", c.c_l),
        ("c3", c.c3),
        ("kappa", c.kappa),
        ("sigma_min(D_eps)", c.sigma_min_deps),
        ("eps", eps),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositiveConstant(name));
        }
    }
    let alpha = c.sigma_min_deps * eps / (16.0 * c.c_l * c.c_l * c.c3 * c.kappa);
    Ok((alpha, alpha / c.kappa))
}

struct Monitor<'a> {
    oracle: &'a LqrModel,
    optimal_cost: f64,
}

impl Monitor<'_> {
    fn record(
        &self,
        t: usize,
        k: &GainMatrix,
        theta: &CriticParam,
        steps: (f64, f64),
    ) -> Result<IterateLog> {
        let ops = self.oracle.stationary_operators(k)?;
        let critic_err_sq = (theta.as_mat() - &ops.theta_k).norm_squared();
        let actor_gap = ops.cost - self.optimal_cost;
        Ok(IterateLog {
            t,
            critic_err_sq,
            critic_err: critic_err_sq.sqrt(),
            actor_gap,
            lyapunov: critic_err_sq + actor_gap,
            rho_closed_loop: ops.radius,
            norm_amb_k: operator_norm(&ops.closed_loop),
            norm_e: operator_norm(&ops.e),
            norm_k: operator_norm(k.as_mat()),
            norm_theta_f: theta.as_mat().norm(),
            alpha_eff: steps.0,
            beta_eff: steps.1,
        })
    }
}

/// Runs the actor-critic loop from `θ₀ = 0`, `K₀ = 0`, passing each
/// [`IterateLog`] to `sink`. The policy's exploration level is the oracle's σ.
///
/// Setup failures (invalid config, Riccati failure) are returned as `Err`;
/// failures during the run are reported in [`TrainRun::abort`].
pub fn train_with_sink<E, S>(
    env: &E,
    oracle: &LqrModel,
    cfg: &TrainConfig,
    exec: Execution,
    mut sink: S,
) -> Result<(GainMatrix, CriticParam, Option<Error>)>
where
    E: Environment,
    S: FnMut(&IterateLog),
{
    cfg.validate()?;
    let (d, na) = (env.state_dim(), env.action_dim());
    if (d, na) != (oracle.state_dim(), oracle.action_dim()) {
        return Err(Error::DimensionMismatch(
            "environment and oracle dimensions differ".into(),
        ));
    }
    let optimum = oracle.solve_riccati()?;
    let monitor = Monitor {
        oracle,
        optimal_cost: oracle.cost(&optimum.k)?,
    };
    let sigma = oracle.sigma();
    let mut k = GainMatrix::zeros(na, d);
    let mut theta = CriticParam::zeros(d, na);

    let radius = oracle.closed_loop_radius(&k)?;
    if radius >= cfg.guard_rho {
        return Ok((
            k,
            theta,
            Some(Error::AssumptionViolated {
                iteration: 0,
                radius,
                guard: cfg.guard_rho,
            }),
        ));
    }

    for t in 0..cfg.t {
        let steps = cfg.step_sizes(t);
        let stream = RngStream::new(
            cfg.seed,
            StreamPath {
                run: cfg.run_id,
                iteration: t as u64,
                ..Default::default()
            },
        );
        let grad = match sample_critic_gradient_with(exec, env, &k, sigma, &theta, &cfg.sample, stream)
        {
            Ok(g) => g,
            Err(e) => return Ok((k, theta, Some(e))),
        };
        let next_theta = critic_step(&theta, &grad, steps.0);
        let next_k = actor_step(&k, &theta, steps.1);
        theta = next_theta;
        k = next_k;

        let radius = oracle.closed_loop_radius(&k)?;
        if radius >= cfg.guard_rho {
            return Ok((
                k,
                theta,
                Some(Error::AssumptionViolated {
                    iteration: t + 1,
                    radius,
                    guard: cfg.guard_rho,
                }),
            ));
        }
        sink(&monitor.record(t + 1, &k, &theta, steps)?);
    }
    Ok((k, theta, None))
}

pub fn train<E: Environment>(env: &E, oracle: &LqrModel, cfg: &TrainConfig) -> Result<TrainRun> {
    train_with(Execution::Parallel, env, oracle, cfg)
}

pub fn train_with<E: Environment>(
    exec: Execution,
    env: &E,
    oracle: &LqrModel,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    let mut log = Vec::with_capacity(cfg.t);
    let (k, theta, abort) = train_with_sink(env, oracle, cfg, exec, |rec| log.push(*rec))?;
    Ok(TrainRun {
        log,
        k,
        theta,
        abort,
    })
}
