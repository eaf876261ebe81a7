use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Mat, Tensor3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut r = rng(seed);
    Mat::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
}

pub fn random_tensor(dims: [usize; 3], seed: u64) -> Tensor3 {
    let mut r = rng(seed);
    Tensor3::from_fn(dims, |_, _, _| r.gen_range(-1.0..1.0))
}

/// Central difference of `f` at `x[idx]`.
pub fn central_diff(x: &mut [f64], idx: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[idx];
    x[idx] = orig + h;
    let plus = f(x);
    x[idx] = orig - h;
    let minus = f(x);
    x[idx] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
