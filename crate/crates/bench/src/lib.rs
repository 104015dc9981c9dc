//! Fixtures shared by the benchmarks in `benches/`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wwtp_empc::dioko::{DIOKOModel, Dims, ModelConfig, Scaling, Standardizer};
use wwtp_empc::qp::QPProblem;

/// Random convex box QP of size `n` with a rank-deficient Hessian.
pub fn random_qp(n: usize, seed: u64) -> QPProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Array2::from_shape_simple_fn((n * 3 / 4, n), || rng.random_range(-1.0..1.0));
    let h = m.t().dot(&m);
    let g = Array1::from_shape_simple_fn(n, || rng.random_range(-5.0..5.0));
    QPProblem::new(h, g, Array1::from_elem(n, -1.0), Array1::from_elem(n, 1.0))
        .expect("valid random QP")
}

/// Untrained model of plant dimensions with plausible input and cost scaling.
pub fn plant_sized_model(seed: u64) -> DIOKOModel {
    let dims = Dims::plant();
    let mut scaling = Scaling::identity(&dims);
    scaling.u = Standardizer {
        mean: vec![46_000.0, 117.0],
        std: vec![27_600.0, 69.0],
    };
    scaling.c = Standardizer {
        mean: vec![11_800.0],
        std: vec![3_000.0],
    };
    DIOKOModel::new(dims, ModelConfig::default(), scaling, seed).expect("valid model")
}
