//! Fixtures shared by the criterion benches.

use l1prune_core::{matmul, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Dense weight, calibration input and their product for an `m × n` operator.
pub struct Operator {
    pub weight: Matrix,
    pub input: Matrix,
    pub target: Matrix,
}

pub fn operator(m: usize, n: usize, samples: usize, seed: u64) -> Operator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = gaussian(m, n, &mut rng);
    let input = gaussian(n, samples, &mut rng);
    let target = matmul(&weight, &input).unwrap();
    Operator {
        weight,
        input,
        target,
    }
}
