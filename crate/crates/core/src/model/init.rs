use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// LeCun uniform, Uniform(±sqrt(3/fan_in)): keeps activation variance at 1.0
/// through a [fan_in, fan_out] matmul so signals survive deep compositions.
pub fn fan_in_uniform<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<T> {
    let bound = (3.0 / fan_in as f64).sqrt();
    uniform(rng, fan_in * fan_out, bound)
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
}

pub fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::default(); n]
}

pub fn ones<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::from_f64(1.0); n]
}
