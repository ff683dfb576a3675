//! The two benchmark systems used by the experiments.

use crate::model::LqrModel;
use crate::numerics::from_rows;

fn build(a: &[&[f64]], b: &[&[f64]], q: &[&[f64]], r: &[&[f64]], d_xi: &[&[f64]]) -> LqrModel {
    let m = |rows: &[&[f64]]| {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("static matrix")
    };
    LqrModel::new(m(a), m(b), m(q), m(r), m(d_xi), 1.0).expect("benchmark system is valid")
}

/// d = 2, k = 3, σ = 1.
pub fn two_state() -> LqrModel {
    build(
        &[&[0.5, 0.0], &[0.0, 0.5]],
        &[&[0.2, 0.0, 0.1], &[0.0, 0.2, 0.1]],
        &[&[1.0, 0.0], &[0.0, 0.8]],
        &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.5]],
        &[&[1.0, 0.0], &[0.0, 1.0]],
    )
}

/// d = 4, k = 3, σ = 1.
pub fn four_state() -> LqrModel {
    build(
        &[
            &[0.5, 0.1, 0.0, 0.0],
            &[0.1, 0.5, 0.1, 0.0],
            &[0.0, 0.1, 0.5, 0.0],
            &[0.0, 0.0, 0.0, 0.5],
        ],
        &[
            &[0.3, 0.1, 0.0],
            &[0.1, 0.3, 0.1],
            &[0.0, 0.1, 0.3],
            &[0.1, 0.1, 0.1],
        ],
        &[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.1, 0.0],
            &[0.0, 0.1, 1.0, 0.1],
            &[0.0, 0.0, 0.1, 1.0],
        ],
        &[&[1.0, 0.1, 0.0], &[0.1, 1.0, 0.1], &[0.0, 0.1, 1.0]],
        &[
            &[1.0, 0.0, 0.1, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.1, 0.0, 1.0, 0.1],
            &[0.0, 0.0, 0.1, 1.0],
        ],
    )
}
