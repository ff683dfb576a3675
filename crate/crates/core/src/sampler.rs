//! Model-free data path: policy execution, burn-in rollouts and the
//! covariance-corrected critic-gradient estimator.
//!
//! Everything here touches the system only through [`Environment`]; the
//! concrete [`LinearEnv`] keeps its matrices private.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{CriticParam, GainMatrix, LqrModel};
use crate::numerics::{cholesky, Mat};

pub const DEFAULT_STATE_GUARD: f64 = 1e6;
const MAX_STATE_DIM: usize = 16;

/// Black-box transition and stage cost.
pub trait Environment: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Writes `x' = A x + B u + ξ` into `next`.
    fn step<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R, next: &mut [f64]);
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;
}

/// Linear-Gaussian environment built from a model. Noise is `L g` with
/// `L = chol(D_ξ)` and `g` standard normal.
#[derive(Debug, Clone)]
pub struct LinearEnv {
    d: usize,
    k: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    noise_factor: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
}

fn row_major(m: &Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl LinearEnv {
    pub fn from_model(model: &LqrModel) -> Result<Self> {
        if model.state_dim() > MAX_STATE_DIM {
            return Err(Error::InvalidModel(format!(
                "LinearEnv supports at most {MAX_STATE_DIM} states, got {}",
                model.state_dim()
            )));
        }
        let jitter = 1e-12 * model.d_xi().norm().max(1.0);
        let l = cholesky(model.d_xi(), jitter)?;
        Ok(Self {
            d: model.state_dim(),
            k: model.action_dim(),
            a: row_major(model.a()),
            b: row_major(model.b()),
            noise_factor: row_major(&l),
            q: row_major(model.q()),
            r: row_major(model.r()),
        })
    }
}

fn quad(m: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += row[j] * v[j];
        }
        acc += v[i] * s;
    }
    acc
}

impl Environment for LinearEnv {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn action_dim(&self) -> usize {
        self.k
    }

    fn step<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R, next: &mut [f64]) {
        let (d, k) = (self.d, self.k);
        let mut buf = [0.0f64; MAX_STATE_DIM];
        let g = &mut buf[..d];
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut s = 0.0;
            let arow = &self.a[i * d..(i + 1) * d];
            for j in 0..d {
                s += arow[j] * x[j];
            }
            let brow = &self.b[i * k..(i + 1) * k];
            for j in 0..k {
                s += brow[j] * u[j];
            }
            let lrow = &self.noise_factor[i * d..(i + 1) * d];
            for j in 0..=i {
                s += lrow[j] * g[j];
            }
            next[i] = s;
        }
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        quad(&self.q, x) + quad(&self.r, u)
    }
}

/// Hierarchical address of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamPath {
    pub run: u64,
    pub iteration: u64,
    pub trajectory: u64,
    pub subsample: u64,
}

/// Counter-addressed RNG: `(seed, run, iteration, trajectory)` form the
/// ChaCha key and `subsample` selects the stream, so any path can be
/// regenerated independently of evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub path: StreamPath,
}

impl RngStream {
    pub fn new(seed: u64, path: StreamPath) -> Self {
        Self { seed, path }
    }

    pub fn with_trajectory(mut self, trajectory: u64) -> Self {
        self.path.trajectory = trajectory;
        self
    }

    pub fn with_subsample(mut self, subsample: u64) -> Self {
        self.path.subsample = subsample;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.path.run.to_le_bytes());
        key[16..24].copy_from_slice(&self.path.iteration.to_le_bytes());
        key[24..32].copy_from_slice(&self.path.trajectory.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.path.subsample);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    /// Number of independent trajectories.
    pub n: usize,
    /// Burn-in length.
    pub n0: usize,
    /// Next-step subsamples per burn-in pair; at least 2.
    pub n1: usize,
    /// State-norm threshold that signals a destabilized policy.
    pub state_guard: f64,
}

impl SampleConfig {
    pub fn new(n: usize, n0: usize, n1: usize) -> Result<Self> {
        let cfg = Self {
            n,
            n0,
            n1,
            state_guard: DEFAULT_STATE_GUARD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("N must be positive".into()));
        }
        if self.n1 < 2 {
            return Err(Error::InvalidConfig(format!(
                "N1 must be at least 2, got {}",
                self.n1
            )));
        }
        if self.state_guard.is_nan() || self.state_guard <= 0.0 {
            return Err(Error::InvalidConfig("state guard must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian-linear policy `u ~ N(−K x, σ² I)` in a flat layout for the hot loop.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    gain: Vec<f64>,
    d: usize,
    k: usize,
    sigma: f64,
}

impl LinearPolicy {
    pub fn new(k: &GainMatrix, sigma: f64) -> Self {
        Self {
            gain: row_major(k.as_mat()),
            d: k.state_dim(),
            k: k.action_dim(),
            sigma,
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, u: &mut [f64]) {
        let d = self.d;
        for (i, ui) in u.iter_mut().enumerate().take(self.k) {
            let row = &self.gain[i * d..(i + 1) * d];
            let mut s = 0.0;
            for j in 0..d {
                s -= row[j] * x[j];
            }
            let w: f64 = rng.sample(StandardNormal);
            *ui = s + self.sigma * w;
        }
    }
}

pub fn sample_action<R: Rng + ?Sized>(
    k: &GainMatrix,
    sigma: f64,
    x: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mut u = DVector::zeros(k.action_dim());
    LinearPolicy::new(k, sigma).act(x.as_slice(), rng, u.as_mut_slice());
    u
}

fn guard_check(x: &[f64], guard: f64) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_finite() && norm <= guard {
        Ok(())
    } else {
        Err(Error::StateBlowup { norm, guard })
    }
}

/// Runs `n0` steps from `x₀ = 0` and returns `(x_{n0}, u_{n0})`.
pub fn rollout_burnin<E: Environment, R: Rng + ?Sized>(
    env: &E,
    policy: &LinearPolicy,
    n0: usize,
    state_guard: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = vec![0.0; env.state_dim()];
    let mut next = vec![0.0; env.state_dim()];
    let mut u = vec![0.0; env.action_dim()];
    for _ in 0..n0 {
        policy.act(&x, rng, &mut u);
        env.step(&x, &u, rng, &mut next);
        std::mem::swap(&mut x, &mut next);
        guard_check(&x, state_guard)?;
    }
    policy.act(&x, rng, &mut u);
    Ok((x, u))
}

/// `φ(x, u) = z zᵀ` with `z = [x; u]`.
pub fn feature_phi(x: &DVector<f64>, u: &DVector<f64>) -> Mat {
    let z = crate::model::concat(x, u);
    &z * z.transpose()
}

/// Unbiased sample of `f(x, u) = (c(x,u) + ⟨ψ(x,u), θ⟩) ψ(x,u)` from `n1`
/// independent next-step pairs, with the `(n1 − 1)`-normalized covariance
/// correction. Returns a row-major symmetric (d+k)×(d+k) buffer.
///
/// The subsamples are drawn in order from `stream.with_subsample(1)`.
pub fn conditional_f_hat<E: Environment>(
    env: &E,
    policy: &LinearPolicy,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
    n1: usize,
    stream: RngStream,
) -> Vec<f64> {
    let d = env.state_dim();
    let k = env.action_dim();
    let n = d + k;
    let mut z = vec![0.0; n];
    z[..d].copy_from_slice(x);
    z[d..].copy_from_slice(u);
    let c = env.cost(x, u);
    let zq = quad(theta, &z);

    let mut zn = vec![0.0; n];
    // Σ_j ψ̂_j and Σ_j ⟨ψ̂_j, θ⟩ ψ̂_j, upper triangle stored in full n×n layout.
    let mut sum_psi = vec![0.0; n * n];
    let mut sum_weighted = vec![0.0; n * n];
    let mut sum_s = 0.0;
    let mut rng = stream.with_subsample(1).rng();
    for _ in 0..n1 {
        let (xn, un) = zn.split_at_mut(d);
        env.step(x, u, &mut rng, xn);
        policy.act(xn, &mut rng, un);
        let s = quad(theta, &zn) - zq;
        sum_s += s;
        for a in 0..n {
            for b in a..n {
                let psi = zn[a] * zn[b] - z[a] * z[b];
                sum_psi[a * n + b] += psi;
                sum_weighted[a * n + b] += s * psi;
            }
        }
    }
    let inv_n1 = 1.0 / n1 as f64;
    let mean_s = sum_s * inv_n1;
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let idx = a * n + b;
            let mean_psi = sum_psi[idx] * inv_n1;
            let second = sum_weighted[idx] * inv_n1;
            let cov = (sum_weighted[idx] - n1 as f64 * mean_psi * mean_s) / (n1 as f64 - 1.0);
            let v = c * mean_psi + (second - cov);
            out[idx] = v;
            out[b * n + a] = v;
        }
    }
    out
}

/// Critic-gradient sample: the mean over `cfg.n` burn-in pairs of
/// [`conditional_f_hat`]. Trajectory `i` uses `stream.with_trajectory(i)`,
/// burn-in on subsample 0.
pub fn sample_critic_gradient<E: Environment>(
    env: &E,
    k: &GainMatrix,
    sigma: f64,
    theta: &CriticParam,
    cfg: &SampleConfig,
    stream: RngStream,
) -> Result<Mat> {
    sample_critic_gradient_with(Execution::Parallel, env, k, sigma, theta, cfg, stream)
}

pub fn sample_critic_gradient_sequential<E: Environment>(
    env: &E,
    k: &GainMatrix,
    sigma: f64,
    theta: &CriticParam,
    cfg: &SampleConfig,
    stream: RngStream,
) -> Result<Mat> {
    sample_critic_gradient_with(Execution::Sequential, env, k, sigma, theta, cfg, stream)
}

pub fn sample_critic_gradient_with<E: Environment>(
    exec: Execution,
    env: &E,
    k: &GainMatrix,
    sigma: f64,
    theta: &CriticParam,
    cfg: &SampleConfig,
    stream: RngStream,
) -> Result<Mat> {
    cfg.validate()?;
    let n = env.state_dim() + env.action_dim();
    if theta.as_mat().nrows() != n || k.as_mat().shape() != (env.action_dim(), env.state_dim()) {
        return Err(Error::DimensionMismatch(
            "gain or critic parameter does not match the environment".into(),
        ));
    }
    let policy = LinearPolicy::new(k, sigma);
    let theta_flat = row_major(theta.as_mat());
    let samples = exec.map(cfg.n, |i| -> Result<Vec<f64>> {
        let traj = stream.with_trajectory(i as u64);
        let mut rng = traj.with_subsample(0).rng();
        let (x, u) = rollout_burnin(env, &policy, cfg.n0, cfg.state_guard, &mut rng)?;
        Ok(conditional_f_hat(env, &policy, &x, &u, &theta_flat, cfg.n1, traj))
    });
    let mut acc = vec![0.0; n * n];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s?) {
            *a += v;
        }
    }
    let inv = 1.0 / cfg.n as f64;
    // row-major and symmetric, so reading it column-major is the same matrix
    Ok(Mat::from_iterator(n, n, acc.into_iter().map(|v| v * inv)))
}
