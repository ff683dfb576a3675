#![allow(dead_code)]

use lqr_ac::{GainMatrix, LqrModel, Mat};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_mat<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_symmetric<R: Rng>(n: usize, rng: &mut R) -> Mat {
    let g = gaussian_mat(n, n, 1.0, rng);
    (&g + g.transpose()) * 0.5
}

/// Gaussian gain with closed-loop radius below `max_radius`, by rejection.
pub fn random_stable_gain<R: Rng>(model: &LqrModel, max_radius: f64, rng: &mut R) -> GainMatrix {
    let scale = 0.4;
    loop {
        let k = GainMatrix::new(gaussian_mat(
            model.action_dim(),
            model.state_dim(),
            scale,
            rng,
        ));
        if model.closed_loop_radius(&k).unwrap() < max_radius {
            return k;
        }
    }
}

pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Row-major flattening.
pub fn vec_rows(m: &Mat) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}
