//! Problem instances and the model-based analytic layer.
//!
//! Nothing in here is reachable from the training path's updates; the trainer
//! only uses [`LqrModel`] to measure errors for logging.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::{
    self, asymmetry, block2x2, block_diag, frobenius_norm, min_eigenvalue_sym, operator_norm,
    solve_kron_linear, spectral_radius, symmetrize, Mat,
};

const SYM_TOL: f64 = 1e-10;

/// Stochastic discrete-time LQR instance `x' = A x + B u + ξ`, `ξ ~ N(0, D_ξ)`,
/// with stage cost `xᵀQx + uᵀRu` and exploration stddev `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrModel {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    d_xi: Mat,
    sigma: f64,
    d_eps: Mat,
}

/// Actor parameter: the policy is `u ~ N(−K x, σ² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix(Mat);

impl GainMatrix {
    pub fn new(k: Mat) -> Self {
        Self(k)
    }

    pub fn zeros(action_dim: usize, state_dim: usize) -> Self {
        Self(Mat::zeros(action_dim, state_dim))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn action_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Symmetric (d+k)×(d+k) critic parameter. The Q-function estimate is
/// `Tr(φ(x,u) θ) − θ'`; the scalar offset is not tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParam {
    theta: Mat,
    state_dim: usize,
}

impl CriticParam {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        let n = state_dim + action_dim;
        Self {
            theta: Mat::zeros(n, n),
            state_dim,
        }
    }

    /// Wraps a square matrix, symmetrizing it. Fails if the asymmetry exceeds
    /// `1e-10` relative to its Frobenius norm.
    pub fn new(theta: Mat, state_dim: usize) -> Result<Self> {
        if !theta.is_square() || theta.nrows() <= state_dim {
            return Err(Error::DimensionMismatch(format!(
                "critic parameter must be square with more than {state_dim} rows, got {}x{}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        let asym = asymmetry(&theta);
        if asym > SYM_TOL * frobenius_norm(&theta).max(1.0) {
            return Err(Error::AsymmetricTheta { asymmetry: asym });
        }
        Ok(Self {
            theta: symmetrize(&theta),
            state_dim,
        })
    }

    pub(crate) fn from_symmetric_unchecked(theta: Mat, state_dim: usize) -> Self {
        Self { theta, state_dim }
    }

    pub fn as_mat(&self) -> &Mat {
        &self.theta
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.theta.nrows() - self.state_dim
    }

    /// Lower-right k×k block.
    pub fn theta22(&self) -> Mat {
        let d = self.state_dim;
        let k = self.action_dim();
        self.theta.view((d, d), (k, k)).into_owned()
    }

    /// Lower-left k×d block.
    pub fn theta21(&self) -> Mat {
        let d = self.state_dim;
        let k = self.action_dim();
        self.theta.view((d, 0), (k, d)).into_owned()
    }
}

/// Per-gain stationary quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryOperators {
    /// Closed-loop state matrix `A − BK`.
    pub closed_loop: Mat,
    /// Concatenated state-action transition `E`.
    pub e: Mat,
    /// Concatenated state-action noise covariance.
    pub sigma_eps: Mat,
    /// Stationary state covariance.
    pub d_k: Mat,
    /// Value matrix.
    pub p_k: Mat,
    /// Stationary state-action covariance.
    pub sigma_k: Mat,
    /// Exact critic target.
    pub theta_k: Mat,
    /// Average cost `J(K)`.
    pub cost: f64,
    /// `ρ(A − BK)`.
    pub radius: f64,
}

impl StationaryOperators {
    /// `G_K = (R + BᵀP_K B)K − BᵀP_K A`, read off the critic target blocks.
    pub fn natural_grad(&self, k: &GainMatrix) -> Mat {
        let d = k.state_dim();
        let na = k.action_dim();
        let t22 = self.theta_k.view((d, d), (na, na));
        let t21 = self.theta_k.view((d, 0), (na, d));
        t22 * k.as_mat() - t21
    }

    pub fn theta_param(&self, state_dim: usize) -> CriticParam {
        CriticParam::from_symmetric_unchecked(self.theta_k.clone(), state_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Mat,
    pub k: GainMatrix,
    pub iterations: usize,
    /// Relative Frobenius residual of the Riccati fixed point at `p`.
    pub residual: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDominance {
    pub lower: f64,
    pub gap: f64,
    pub upper: f64,
}

impl GradientDominance {
    pub fn holds(&self, slack: f64) -> bool {
        self.lower <= self.gap + slack && self.gap <= self.upper + slack
    }
}

impl LqrModel {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, d_xi: Mat, sigma: f64) -> Result<Self> {
        let d = a.nrows();
        let k = b.ncols();
        let shape_err = |name: &str, m: &Mat, rows: usize, cols: usize| {
            Error::InvalidModel(format!(
                "{name} must be {rows}x{cols}, got {}x{}",
                m.nrows(),
                m.ncols()
            ))
        };
        if d == 0 || k == 0 {
            return Err(Error::InvalidModel("empty state or action dimension".into()));
        }
        if a.shape() != (d, d) {
            return Err(shape_err("A", &a, d, d));
        }
        if b.nrows() != d {
            return Err(shape_err("B", &b, d, k));
        }
        if q.shape() != (d, d) {
            return Err(shape_err("Q", &q, d, d));
        }
        if r.shape() != (k, k) {
            return Err(shape_err("R", &r, k, k));
        }
        if d_xi.shape() != (d, d) {
            return Err(shape_err("D_xi", &d_xi, d, d));
        }
        for (name, m) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r), ("D_xi", &d_xi)] {
            numerics::check_finite(m)
                .map_err(|e| Error::InvalidModel(format!("{name}: {e}")))?;
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidModel(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        for (name, m) in [("Q", &q), ("R", &r), ("D_xi", &d_xi)] {
            if !numerics::is_symmetric(m, SYM_TOL) {
                return Err(Error::InvalidModel(format!("{name} is not symmetric")));
            }
        }
        let q = symmetrize(&q);
        let r = symmetrize(&r);
        let d_xi = symmetrize(&d_xi);
        for (name, m) in [("Q", &q), ("R", &r)] {
            let lo = min_eigenvalue_sym(m)?;
            if lo <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "{name} is not positive definite (min eigenvalue {lo:e})"
                )));
            }
        }
        let lo = min_eigenvalue_sym(&d_xi)?;
        if lo < -1e-12 * d_xi.norm().max(1.0) {
            return Err(Error::InvalidModel(format!(
                "D_xi is not positive semi-definite (min eigenvalue {lo:e})"
            )));
        }
        let d_eps = symmetrize(&(&d_xi + &b * b.transpose() * (sigma * sigma)));
        let lo = min_eigenvalue_sym(&d_eps)?;
        if lo <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "D_eps = D_xi + sigma^2 B B^T is not positive definite (min eigenvalue {lo:e})"
            )));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            d_xi,
            sigma,
            d_eps,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn d_xi(&self) -> &Mat {
        &self.d_xi
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `D_ε = D_ξ + σ² B Bᵀ`.
    pub fn d_eps(&self) -> &Mat {
        &self.d_eps
    }

    /// `blkdiag(Q, R)`: the stage cost as a quadratic form in `z = [x; u]`.
    pub fn stage_cost_matrix(&self) -> Mat {
        block_diag(&self.q, &self.r)
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    fn check_gain(&self, k: &GainMatrix) -> Result<()> {
        if k.as_mat().shape() != (self.action_dim(), self.state_dim()) {
            return Err(Error::DimensionMismatch(format!(
                "gain must be {}x{}, got {}x{}",
                self.action_dim(),
                self.state_dim(),
                k.action_dim(),
                k.state_dim()
            )));
        }
        Ok(())
    }

    pub fn closed_loop(&self, k: &GainMatrix) -> Mat {
        &self.a - &self.b * k.as_mat()
    }

    pub fn closed_loop_radius(&self, k: &GainMatrix) -> Result<f64> {
        self.check_gain(k)?;
        spectral_radius(&self.closed_loop(k))
    }

    /// `E = [[A, B], [−KA, −KB]]`.
    pub fn concat_transition(&self, k: &GainMatrix) -> Mat {
        let km = k.as_mat();
        block2x2(&self.a, &self.b, &(-(km * &self.a)), &(-(km * &self.b)))
    }

    /// Covariance of the concatenated noise `[ξ; −Kξ + σω]`.
    pub fn concat_noise_cov(&self, k: &GainMatrix) -> Mat {
        let km = k.as_mat();
        let na = self.action_dim();
        let off = -(&self.d_xi * km.transpose());
        let lower = km * &self.d_xi * km.transpose()
            + Mat::identity(na, na) * (self.sigma * self.sigma);
        symmetrize(&block2x2(&self.d_xi, &off, &off.transpose(), &lower))
    }

    /// Covariance of `[x; u]` with `x ~ N(0, state_cov)` and `u ~ π_K(·|x)`.
    pub fn state_action_cov(&self, k: &GainMatrix, state_cov: &Mat) -> Mat {
        let km = k.as_mat();
        let na = self.action_dim();
        let off = -(state_cov * km.transpose());
        let lower = km * state_cov * km.transpose()
            + Mat::identity(na, na) * (self.sigma * self.sigma);
        symmetrize(&block2x2(state_cov, &off, &off.transpose(), &lower))
    }

    /// Critic target `[[Q + AᵀPA, AᵀPB], [BᵀPA, R + BᵀPB]]` for a value matrix `P`.
    pub fn critic_target(&self, p: &Mat) -> Mat {
        let at = self.a.transpose();
        let bt = self.b.transpose();
        let t11 = &self.q + &at * p * &self.a;
        let t12 = &at * p * &self.b;
        let t22 = &self.r + &bt * p * &self.b;
        symmetrize(&block2x2(&t11, &t12, &t12.transpose(), &t22))
    }

    pub fn stationary_operators(&self, k: &GainMatrix) -> Result<StationaryOperators> {
        self.check_gain(k)?;
        let closed_loop = self.closed_loop(k);
        let radius = spectral_radius(&closed_loop)?;
        if radius >= 1.0 {
            return Err(Error::UnstableGain { radius });
        }
        let clt = closed_loop.transpose();
        let d_k = symmetrize(&solve_kron_linear(&closed_loop, &clt, &self.d_eps)?);
        let km = k.as_mat();
        let stage = &self.q + km.transpose() * &self.r * km;
        let p_k = symmetrize(&solve_kron_linear(&clt, &closed_loop, &stage)?);
        let sigma_k = self.state_action_cov(k, &d_k);
        let theta_k = self.critic_target(&p_k);
        let cost = (&self.d_eps * &p_k).trace() + self.sigma * self.sigma * self.r.trace();
        Ok(StationaryOperators {
            closed_loop,
            e: self.concat_transition(k),
            sigma_eps: self.concat_noise_cov(k),
            d_k,
            p_k,
            sigma_k,
            theta_k,
            cost,
            radius,
        })
    }

    /// `J(K) = Tr(D_ε P_K) + σ² Tr(R)`.
    pub fn cost(&self, k: &GainMatrix) -> Result<f64> {
        Ok(self.stationary_operators(k)?.cost)
    }

    /// `J(K) = Tr(D_K (Q + KᵀRK)) + σ² Tr(R)`, computed from the state covariance instead.
    pub fn cost_alt(&self, k: &GainMatrix) -> Result<f64> {
        let ops = self.stationary_operators(k)?;
        let km = k.as_mat();
        let stage = &self.q + km.transpose() * &self.r * km;
        Ok((&ops.d_k * stage).trace() + self.sigma * self.sigma * self.r.trace())
    }

    /// `∇_K J(K) = 2 G_K D_K`.
    pub fn grad_j(&self, k: &GainMatrix) -> Result<Mat> {
        let ops = self.stationary_operators(k)?;
        Ok(self.g_from_p(k, &ops.p_k) * &ops.d_k * 2.0)
    }

    /// `G_K = (R + BᵀP_K B)K − BᵀP_K A`.
    pub fn natural_grad_g(&self, k: &GainMatrix) -> Result<Mat> {
        let ops = self.stationary_operators(k)?;
        Ok(self.g_from_p(k, &ops.p_k))
    }

    fn g_from_p(&self, k: &GainMatrix, p: &Mat) -> Mat {
        let bt = self.b.transpose();
        (&self.r + &bt * p * &self.b) * k.as_mat() - &bt * p * &self.a
    }

    fn riccati_map(&self, p: &Mat) -> Result<Mat> {
        let at = self.a.transpose();
        let bt = self.b.transpose();
        let gram = symmetrize(&(&self.r + &bt * p * &self.b));
        let chol = gram.cholesky().ok_or(Error::NotPsd { jitter: 0.0 })?;
        let bpa = &bt * p * &self.a;
        let next = &self.q + &at * p * &self.a - bpa.transpose() * chol.solve(&bpa);
        Ok(symmetrize(&next))
    }

    /// Stabilizing Riccati solution by fixed-point iteration from `P₀ = Q`.
    pub fn solve_riccati(&self) -> Result<RiccatiSolution> {
        const TOL: f64 = 1e-12;
        const MAX_ITER: usize = 100_000;
        let mut p = self.q.clone();
        let mut last_step = f64::INFINITY;
        let mut iterations = 0;
        while iterations < MAX_ITER {
            let next = self.riccati_map(&p)?;
            last_step = (&next - &p).norm() / p.norm().max(f64::MIN_POSITIVE);
            p = next;
            iterations += 1;
            if !last_step.is_finite() {
                break;
            }
            if last_step <= TOL {
                break;
            }
        }
        if last_step.is_nan() || last_step > TOL {
            return Err(Error::RiccatiNonConvergence {
                iterations,
                last_step,
            });
        }
        // a few extra sweeps push the residual down to the rounding floor
        for _ in 0..4 {
            p = self.riccati_map(&p)?;
        }
        let residual = (&self.riccati_map(&p)? - &p).norm() / p.norm();
        let bt = self.b.transpose();
        let gram = symmetrize(&(&self.r + &bt * &p * &self.b));
        let kmat = gram
            .cholesky()
            .ok_or(Error::NotPsd { jitter: 0.0 })?
            .solve(&(&bt * &p * &self.a));
        let k = GainMatrix::new(kmat);
        let radius = spectral_radius(&self.closed_loop(&k))?;
        if radius >= 1.0 {
            return Err(Error::UnstableClosedLoop { radius });
        }
        Ok(RiccatiSolution {
            p,
            k,
            iterations,
            residual,
            radius,
        })
    }

    /// Relative residual of the Riccati fixed point at `p`.
    pub fn riccati_residual(&self, p: &Mat) -> Result<f64> {
        Ok((&self.riccati_map(p)? - p).norm() / p.norm().max(f64::MIN_POSITIVE))
    }

    /// Exact `(V_K(x), Q_K(x, u))` including the constant offsets.
    pub fn value_functions(
        &self,
        k: &GainMatrix,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(f64, f64)> {
        let ops = self.stationary_operators(k)?;
        let dp = (&ops.d_k * &ops.p_k).trace();
        let v = x.dot(&(&ops.p_k * x)) - dp;
        let offset = self.q_offset(&ops);
        let z = concat(x, u);
        Ok((v, z.dot(&(&ops.theta_k * &z)) - offset))
    }

    /// The scalar `σ² (Tr R + Tr(P_K BBᵀ)) + Tr(D_K P_K)` subtracted in the Q-function.
    pub fn q_offset(&self, ops: &StationaryOperators) -> f64 {
        let bbt = &self.b * self.b.transpose();
        self.sigma * self.sigma * (self.r.trace() + (&ops.p_k * bbt).trace())
            + (&ops.d_k * &ops.p_k).trace()
    }

    /// `E[(c(z) + ⟨ψ(z), θ⟩) ψ(z)]` for `z ~ N(0, z_cov)`, with
    /// `ψ(z) = E zzᵀ Eᵀ + Σ_ε − zzᵀ`. Uses the Gaussian fourth-moment identity
    /// `E[(zᵀHz) zzᵀ] = Tr(HS) S + 2 S H S`.
    pub fn critic_grad_under(&self, k: &GainMatrix, theta: &Mat, z_cov: &Mat) -> Result<Mat> {
        self.check_gain(k)?;
        let e = self.concat_transition(k);
        let sigma_eps = self.concat_noise_cov(k);
        Ok(critic_grad_closed_form(
            &e,
            &sigma_eps,
            &self.stage_cost_matrix(),
            theta,
            z_cov,
        ))
    }

    /// Exact critic gradient `∇L_K(θ)` under the stationary distribution.
    pub fn critic_grad_exact(&self, k: &GainMatrix, theta: &CriticParam) -> Result<Mat> {
        let ops = self.stationary_operators(k)?;
        Ok(critic_grad_closed_form(
            &ops.e,
            &ops.sigma_eps,
            &self.stage_cost_matrix(),
            theta.as_mat(),
            &ops.sigma_k,
        ))
    }

    /// Checked variant taking a raw matrix: rejects asymmetric `θ`.
    pub fn critic_grad_exact_mat(&self, k: &GainMatrix, theta: &Mat) -> Result<Mat> {
        let asym = asymmetry(theta);
        if asym > SYM_TOL * frobenius_norm(theta).max(1.0) {
            return Err(Error::AsymmetricTheta { asymmetry: asym });
        }
        let param = CriticParam::new(theta.clone(), self.state_dim())?;
        self.critic_grad_exact(k, &param)
    }

    /// Closed form of the critic loss `½ E[(c − J + ⟨ψ, θ⟩)²]`. Accepts any
    /// square `θ`, symmetric or not.
    pub fn critic_loss_exact(&self, k: &GainMatrix, theta: &Mat) -> Result<f64> {
        let ops = self.stationary_operators(k)?;
        let s = &ops.sigma_k;
        let h = symmetrize(&(self.stage_cost_matrix() + ops.e.transpose() * theta * &ops.e - theta));
        let offset = numerics::inner(&ops.sigma_eps, theta);
        let hs = &h * s;
        let var = 2.0 * (&hs * &hs).trace();
        let mean = hs.trace() + offset - ops.cost;
        Ok(0.5 * (var + mean * mean))
    }

    /// `E[(Tr[M ψ])²] = 2 Tr[Σ_K N Σ_K N]` with `N = EᵀME − M`.
    pub fn critic_hessian_quadratic(&self, k: &GainMatrix, m: &Mat) -> Result<f64> {
        let ops = self.stationary_operators(k)?;
        let n = ops.e.transpose() * m * &ops.e - m;
        let sn = &ops.sigma_k * n;
        Ok(2.0 * (&sn * &sn).trace())
    }

    /// Fisher information of the Gaussian policy averaged over the stationary
    /// state distribution, acting on row-major flattened k×d matrices:
    /// `F[(a,b),(c,e)] = δ_ac (D_K)_be / σ²`.
    pub fn fisher_tensor(&self, k: &GainMatrix) -> Result<Mat> {
        let ops = self.stationary_operators(k)?;
        let na = self.action_dim();
        let scale = 1.0 / (self.sigma * self.sigma);
        Ok(Mat::identity(na, na).kronecker(&ops.d_k) * scale)
    }

    /// `J(K) − J(K')` expressed through `D_{K'}`, `G_K` and `P_K`.
    pub fn cost_difference(&self, k: &GainMatrix, k_other: &GainMatrix) -> Result<f64> {
        let ops = self.stationary_operators(k)?;
        let other = self.stationary_operators(k_other)?;
        let g = ops.natural_grad(k);
        let delta = k.as_mat() - k_other.as_mat();
        let curv = &self.r + self.b.transpose() * &ops.p_k * &self.b;
        let inner =
            delta.transpose() * &g + g.transpose() * &delta - delta.transpose() * curv * &delta;
        Ok((&other.d_k * inner).trace())
    }

    /// `(c₂ Tr(G Gᵀ), J(K) − J(K*), c₃ Tr(G Gᵀ))` with `c₂ = λmin(D_ε)/(‖R‖ + ‖P_K‖‖B‖²)`
    /// and `c₃ = ‖D_{K*}‖/λmin(R)`.
    pub fn gradient_dominance_check(
        &self,
        k: &GainMatrix,
        optimum: &RiccatiSolution,
    ) -> Result<GradientDominance> {
        let ops = self.stationary_operators(k)?;
        let opt = self.stationary_operators(&optimum.k)?;
        let g = ops.natural_grad(k);
        let tr_gg = g.norm_squared();
        let b_norm = operator_norm(&self.b);
        let c2 = min_eigenvalue_sym(&self.d_eps)?
            / (operator_norm(&self.r) + operator_norm(&ops.p_k) * b_norm * b_norm);
        let c3 = operator_norm(&opt.d_k) / min_eigenvalue_sym(&self.r)?;
        Ok(GradientDominance {
            lower: c2 * tr_gg,
            gap: ops.cost - opt.cost,
            upper: c3 * tr_gg,
        })
    }

    /// Covariance of `x_n` when started at `x₀ = 0`: `Σ_{s<n} (A−BK)^s D_ε ((A−BK)ᵀ)^s`.
    pub fn truncated_state_cov(&self, k: &GainMatrix, n: usize) -> Result<Mat> {
        self.check_gain(k)?;
        let f = self.closed_loop(k);
        let ft = f.transpose();
        let mut d = Mat::zeros(self.state_dim(), self.state_dim());
        for _ in 0..n {
            d = symmetrize(&(&self.d_eps + &f * d * &ft));
        }
        Ok(d)
    }
}

pub(crate) fn concat(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

fn critic_grad_closed_form(e: &Mat, sigma_eps: &Mat, cost: &Mat, theta: &Mat, s: &Mat) -> Mat {
    let h = symmetrize(&(cost + e.transpose() * theta * e - theta));
    let offset = numerics::inner(sigma_eps, theta);
    let tr_hs = (&h * s).trace();
    let w = s * tr_hs + s * &h * s * 2.0;
    let mean_psi = e * s * e.transpose() - s + sigma_eps;
    let grad = e * &w * e.transpose() - &w + sigma_eps * tr_hs + mean_psi * offset;
    symmetrize(&grad)
}
