//! Inputs shared by the benchmarks.

use mdfsc::rng::stream;
use mdfsc::tensor::Tensor4;
use rand::Rng;

/// Tensor of uniform values in `[-1, 1)`.
pub fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = stream(seed, "bench/tensor");
    let len = dims.iter().product();
    Tensor4::from_vec(dims, (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .expect("length matches dims")
}

/// Random `d × n` values for a dictionary and one signal of length `d`.
pub fn random_problem(d: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f32>) {
    let mut rng = stream(seed, "bench/lasso");
    let atoms = (0..d * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = (0..d).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    (atoms, f)
}
