#![allow(dead_code)]

use chainbsde::{RateModel, RatePiece};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Generator with off-diagonal rates uniform on `[eps_r, 1/eps_r]`, each
/// zeroed with probability `p_zero`.
pub fn random_generator(rng: &mut ChaCha8Rng, n: usize, eps_r: f64, p_zero: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && !rng.random_bool(p_zero) {
                a[(j, i)] = rng.random_range(eps_r..=1.0 / eps_r);
            }
        }
        let exit: f64 = (0..n).filter(|&j| j != i).map(|j| a[(j, i)]).sum();
        a[(i, i)] = -exit;
    }
    a
}

/// Model with `pieces` equal-length constant pieces on `(0, horizon]`.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, pieces: usize, eps_r: f64, p_zero: f64, horizon: f64) -> RateModel {
    let pieces = (0..pieces)
        .map(|k| RatePiece {
            end: if k + 1 == pieces { horizon } else { horizon * (k + 1) as f64 / pieces as f64 },
            generator: random_generator(rng, n, eps_r, p_zero),
        })
        .collect();
    RateModel::new(n, pieces, eps_r, horizon).expect("generated model is valid")
}

pub fn two_state_unit() -> RateModel {
    RateModel::homogeneous(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]), 1.0, 1.0).unwrap()
}

pub fn three_state_unit() -> RateModel {
    let a = DMatrix::from_fn(3, 3, |i, j| if i == j { -2.0 } else { 1.0 });
    RateModel::homogeneous(a, 1.0, 1.0).unwrap()
}
