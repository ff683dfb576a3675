mod common;

use common::{gaussian_mat, gaussian_vec, random_stable_gain, random_symmetric, rel_err};
use lqr_ac::numerics::{cholesky, solve_kron_linear, spectral_radius, symmetrize};
use lqr_ac::trainer::{actor_step, critic_step, theoretical_stepsizes, TheoryConstants};
use lqr_ac::{systems, train, CriticParam, GainMatrix, LinearEnv, LqrModel, Mat, SampleConfig, TrainConfig};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn model(which: bool) -> LqrModel {
    if which {
        systems::four_state()
    } else {
        systems::two_state()
    }
}

/// Scales a Gaussian matrix to the given spectral radius.
fn contraction(n: usize, radius: f64, r: &mut ChaCha8Rng) -> Mat {
    let m = gaussian_mat(n, n, 1.0, r);
    let rho = spectral_radius(&m).unwrap().max(1e-3);
    m * (radius / rho)
}

fn is_psd(m: &Mat, tol: f64) -> bool {
    symmetrize(m).symmetric_eigenvalues().iter().all(|&l| l >= -tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kron_solve_matches_truncated_series(seed in any::<u64>(), n in 1usize..5, m in 1usize..5) {
        let mut r = rng(seed);
        let f = contraction(n, 0.6, &mut r);
        let g = contraction(m, 0.6, &mut r);
        let w = gaussian_mat(n, m, 1.0, &mut r);
        let x = solve_kron_linear(&f, &g, &w).unwrap();
        prop_assert!(rel_err(&(&w + &f * &x * &g), &x) < 1e-11);
        // X = Σ F^s W G^s
        let mut series = Mat::zeros(n, m);
        let mut term = w.clone();
        for _ in 0..400 {
            series += &term;
            term = &f * term * &g;
        }
        prop_assert!(rel_err(&x, &series) < 1e-9);
    }

    #[test]
    fn spectral_radius_is_cyclic(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let f = gaussian_mat(n, n, 1.0, &mut r);
        let g = gaussian_mat(n, n, 1.0, &mut r);
        let a = spectral_radius(&(&f * &g)).unwrap();
        let b = spectral_radius(&(&g * &f)).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn cholesky_round_trip(seed in any::<u64>(), n in 1usize..7) {
        let mut r = rng(seed);
        let g = gaussian_mat(n, n, 1.0, &mut r);
        let spd = &g * g.transpose() + Mat::identity(n, n) * 0.1;
        let l = cholesky(&spd, 0.0).unwrap();
        prop_assert!(rel_err(&(&l * l.transpose()), &spd) < 1e-12);
        for i in 0..n {
            for j in (i + 1)..n {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn stationary_quantities_are_consistent(seed in any::<u64>(), which in any::<bool>()) {
        let m = model(which);
        let mut r = rng(seed);
        let k = random_stable_gain(&m, 0.95, &mut r);
        let ops = m.stationary_operators(&k).unwrap();
        prop_assert_eq!(&ops.d_k, &ops.d_k.transpose());
        prop_assert!(is_psd(&(&ops.d_k - m.d_eps()), 1e-10));
        prop_assert!(is_psd(&(&ops.p_k - m.q()), 1e-10));
        prop_assert!((ops.cost - m.cost_alt(&k).unwrap()).abs() < 1e-10 * ops.cost);
        let opt = m.solve_riccati().unwrap();
        prop_assert!(ops.cost >= m.cost(&opt.k).unwrap() - 1e-12);
        // the value function is the action-average of the Q-function
        let t22 = ops.theta_k.view((m.state_dim(), m.state_dim()), (m.action_dim(), m.action_dim()));
        let s2 = m.sigma() * m.sigma();
        let x = gaussian_vec(m.state_dim(), 1.0, &mut r);
        let u = -(k.as_mat() * &x);
        let (v, q) = m.value_functions(&k, &x, &u).unwrap();
        prop_assert!((v - (q + s2 * t22.trace())).abs() < 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn stationary_increment_has_zero_mean(seed in any::<u64>(), which in any::<bool>()) {
        let m = model(which);
        let mut r = rng(seed);
        let k = random_stable_gain(&m, 0.95, &mut r);
        let ops = m.stationary_operators(&k).unwrap();
        let mean_psi = &ops.e * &ops.sigma_k * ops.e.transpose() + &ops.sigma_eps - &ops.sigma_k;
        prop_assert!(mean_psi.norm() < 1e-10 * ops.sigma_k.norm());
    }

    #[test]
    fn cost_difference_matches_costs(seed in any::<u64>(), which in any::<bool>()) {
        let m = model(which);
        let mut r = rng(seed);
        let k = random_stable_gain(&m, 0.95, &mut r);
        let k2 = random_stable_gain(&m, 0.95, &mut r);
        let direct = m.cost(&k).unwrap() - m.cost(&k2).unwrap();
        let via = m.cost_difference(&k, &k2).unwrap();
        prop_assert!((direct - via).abs() < 1e-9 * direct.abs().max(1.0), "{} vs {}", direct, via);
    }

    #[test]
    fn critic_gradient_is_directional_derivative(seed in any::<u64>(), which in any::<bool>()) {
        let m = model(which);
        let mut r = rng(seed);
        let k = random_stable_gain(&m, 0.9, &mut r);
        let n = m.state_dim() + m.action_dim();
        let theta = random_symmetric(n, &mut r);
        let dir = random_symmetric(n, &mut r);
        let g = m.critic_grad_exact_mat(&k, &theta).unwrap();
        // the loss is quadratic, so the central difference is exact up to rounding
        let h = 1e-3;
        let lp = m.critic_loss_exact(&k, &(&theta + &dir * h)).unwrap();
        let lm = m.critic_loss_exact(&k, &(&theta - &dir * h)).unwrap();
        let l0 = m.critic_loss_exact(&k, &theta).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        let directional = g.dot(&dir);
        prop_assert!((fd - directional).abs() < 1e-6 * directional.abs().max(l0.abs()).max(1.0),
            "{} vs {}", fd, directional);
        let second = (lp + lm - 2.0 * l0) / (h * h);
        let hess = m.critic_hessian_quadratic(&k, &dir).unwrap();
        prop_assert!((second - hess).abs() < 1e-4 * hess.max(1.0), "{} vs {}", second, hess);
    }

    #[test]
    fn asymmetric_theta_is_rejected(seed in any::<u64>()) {
        let m = systems::two_state();
        let mut r = rng(seed);
        let k = random_stable_gain(&m, 0.9, &mut r);
        let mut theta = random_symmetric(5, &mut r);
        theta[(0, 1)] += 0.5;
        prop_assert!(m.critic_grad_exact_mat(&k, &theta).is_err());
        prop_assert!(CriticParam::new(theta, 2).is_err());
    }

    #[test]
    fn theoretical_steps_keep_ratio(
        c_l in 0.1f64..10.0, c3 in 0.1f64..10.0, kappa in 0.1f64..10.0,
        smin in 0.1f64..10.0, eps in 1e-4f64..1.0,
    ) {
        let c = TheoryConstants { c_l, c3, kappa, sigma_min_deps: smin };
        let (a, b) = theoretical_stepsizes(&c, eps).unwrap();
        prop_assert!((a / b - kappa).abs() <= 1e-14 * kappa);
        let (a2, b2) = theoretical_stepsizes(&c, 2.0 * eps).unwrap();
        prop_assert!((a2 - 2.0 * a).abs() <= 1e-15 * a2 && (b2 - 2.0 * b).abs() <= 1e-15 * b2);
    }
}

#[test]
fn nonpositive_constants_are_rejected() {
    let c = TheoryConstants {
        c_l: 1.0,
        c3: 0.0,
        kappa: 1.0,
        sigma_min_deps: 1.0,
    };
    assert!(theoretical_stepsizes(&c, 0.1).is_err());
}

fn sample_mean_cov(samples: &[DVector<f64>]) -> (DVector<f64>, Mat) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mean = samples.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / n;
    let mut cov = Mat::zeros(dim, dim);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / (n - 1.0))
}

#[test]
fn critic_gradient_matches_monte_carlo() {
    const DRAWS: usize = 200_000;
    let m = systems::two_state();
    let mut r = rng(11);
    let k = random_stable_gain(&m, 0.8, &mut r);
    let ops = m.stationary_operators(&k).unwrap();
    let theta = &ops.theta_k * 0.6 + random_symmetric(5, &mut r) * 0.2;
    let dir = random_symmetric(5, &mut r);
    let exact = m.critic_grad_exact_mat(&k, &theta).unwrap();
    let hess = m.critic_hessian_quadratic(&k, &dir).unwrap();
    let l = cholesky(&ops.sigma_k, 0.0).unwrap();
    let cost = m.stage_cost_matrix();
    let mut sum = Mat::zeros(5, 5);
    let mut sum_sq = Mat::zeros(5, 5);
    let (mut hsum, mut hsum_sq) = (0.0, 0.0);
    for _ in 0..DRAWS {
        let z = &l * gaussian_vec(5, 1.0, &mut r);
        let zz = &z * z.transpose();
        let psi = &ops.e * &zz * ops.e.transpose() + &ops.sigma_eps - &zz;
        let f = &psi * (z.dot(&(&cost * &z)) + psi.dot(&theta));
        sum_sq += f.component_mul(&f);
        sum += f;
        let q = psi.dot(&dir).powi(2);
        hsum += q;
        hsum_sq += q * q;
    }
    let n = DRAWS as f64;
    for i in 0..5 {
        for j in 0..5 {
            let mean = sum[(i, j)] / n;
            let se = ((sum_sq[(i, j)] / n - mean * mean) / n).sqrt();
            assert!((mean - exact[(i, j)]).abs() < 5.0 * se, "({i},{j}) {mean} vs {}", exact[(i, j)]);
        }
    }
    let mean = hsum / n;
    let se = ((hsum_sq / n - mean * mean) / n).sqrt();
    assert!((mean - hess).abs() < 5.0 * se, "{mean} vs {hess}");
}

#[test]
fn policy_draws_have_the_stated_moments() {
    use lqr_ac::sampler::sample_action;
    let k = GainMatrix::new(Mat::from_row_slice(3, 2, &[0.3, -0.1, 0.0, 0.5, 0.2, 0.2]));
    let x = DVector::from_vec(vec![1.0, -2.0]);
    let sigma = 0.7;
    let mut r = rng(12);
    let draws: Vec<_> = (0..100_000).map(|_| sample_action(&k, sigma, &x, &mut r)).collect();
    let (mean, cov) = sample_mean_cov(&draws);
    let target = -(k.as_mat() * &x);
    let se = sigma / (draws.len() as f64).sqrt();
    assert!((mean - target).amax() < 5.0 * se);
    assert!(rel_err(&cov, &(Mat::identity(3, 3) * sigma * sigma)) < 0.02);
}

#[test]
fn burn_in_state_covariance_matches_truncated_sum() {
    use lqr_ac::sampler::{rollout_burnin, LinearPolicy, DEFAULT_STATE_GUARD};
    let m = systems::four_state();
    let env = LinearEnv::from_model(&m).unwrap();
    let mut r = rng(13);
    let k = random_stable_gain(&m, 0.9, &mut r);
    let policy = LinearPolicy::new(&k, m.sigma());
    for n0 in [1usize, 3, 30] {
        let target = m.truncated_state_cov(&k, n0).unwrap();
        let xs: Vec<DVector<f64>> = (0..40_000)
            .map(|_| {
                let (x, _) = rollout_burnin(&env, &policy, n0, DEFAULT_STATE_GUARD, &mut r).unwrap();
                DVector::from_vec(x)
            })
            .collect();
        let (_, cov) = sample_mean_cov(&xs);
        assert!(rel_err(&cov, &target) < 0.03, "n0 = {n0}");
    }
    assert!(rel_err(&m.truncated_state_cov(&k, 2000).unwrap(), &m.stationary_operators(&k).unwrap().d_k) < 1e-12);
}

#[test]
fn exact_critic_actor_descent_is_monotone() {
    let m = systems::two_state();
    let beta = 4.0 / 4000.0;
    let mut k = GainMatrix::zeros(3, 2);
    let mut prev = m.cost(&k).unwrap();
    for _ in 0..4000 {
        let theta = m.stationary_operators(&k).unwrap().theta_param(2);
        k = actor_step(&k, &theta, beta);
        let cost = m.cost(&k).unwrap();
        assert!(cost <= prev + 1e-13, "{cost} > {prev}");
        prev = cost;
    }
    let opt = m.cost(&m.solve_riccati().unwrap().k).unwrap();
    assert!(prev - opt < 1e-2 * (m.cost(&GainMatrix::zeros(3, 2)).unwrap() - opt));
}

#[test]
fn exact_gradient_critic_steps_converge_to_target() {
    let m = systems::four_state();
    let mut r = rng(14);
    let k = random_stable_gain(&m, 0.8, &mut r);
    let target = m.stationary_operators(&k).unwrap().theta_k;
    let mut theta = CriticParam::zeros(4, 3);
    let mut prev = (theta.as_mat() - &target).norm();
    let start = prev;
    for _ in 0..3000 {
        let g = m.critic_grad_exact(&k, &theta).unwrap();
        theta = critic_step(&theta, &g, 0.02);
        let err = (theta.as_mat() - &target).norm();
        assert!(err < prev);
        prev = err;
    }
    assert!(prev < 1e-4 * start, "{prev}");
}

#[test]
fn stochastic_run_contracts_and_keeps_step_ratio() {
    let m = systems::two_state();
    let env = LinearEnv::from_model(&m).unwrap();
    let t = 1000;
    let cfg = TrainConfig::with_stepsize_product(t, 4.0, SampleConfig::new(20, 20, 20).unwrap(), 3);
    let run = train(&env, &m, &cfg).unwrap();
    assert!(run.completed());
    assert_eq!(run.log.len(), t);
    assert!(run.log.iter().all(|l| l.lyapunov >= 0.0));
    let ratio = run.log[0].alpha_eff / run.log[0].beta_eff;
    assert!(run.log.iter().all(|l| l.alpha_eff / l.beta_eff == ratio));
    let avg = |s: &[lqr_ac::IterateLog]| s.iter().map(|l| l.lyapunov).sum::<f64>() / s.len() as f64;
    let tenth = t / 10;
    assert!(avg(&run.log[t - tenth..]) < avg(&run.log[..tenth]));
}
