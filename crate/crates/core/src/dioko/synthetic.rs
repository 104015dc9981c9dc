//! A two-state linear system with a quadratic stage cost. It has an exact
//! representation in the model class, which makes it a training oracle.

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Dims, Trajectory};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    /// Diagonal of the cost Hessian.
    pub q: Array1<f64>,
    pub p: Array1<f64>,
    pub bias: f64,
}

impl Default for LinearSystem {
    fn default() -> Self {
        Self {
            a: array![[0.9, 0.1], [-0.05, 0.85]],
            b: array![[0.5], [0.2]],
            q: array![1.0, 0.5],
            p: array![0.3, -0.2],
            bias: 1.0,
        }
    }
}

impl LinearSystem {
    pub fn dims(latent: usize) -> Dims {
        Dims {
            ny: 2,
            nd: 0,
            nu: 1,
            latent,
        }
    }

    pub fn cost(&self, x: &Array1<f64>) -> f64 {
        (x.mapv(|v| v * v) * &self.q).sum() + self.p.dot(x) + self.bias
    }

    /// Episodes driven by uniform random inputs in [-1, 1] from random initial
    /// states, split 80/10/10.
    pub fn dataset(
        &self,
        episodes: usize,
        len: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let mut x = array![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut y = Array2::zeros((len, 2));
            let mut u = Array2::zeros((len, 1));
            let mut c = Array1::zeros(len);
            for k in 0..len {
                let uk: f64 = rng.random_range(-1.0..1.0);
                y.row_mut(k).assign(&x);
                u[[k, 0]] = uk;
                c[k] = self.cost(&x);
                x = self.a.dot(&x) + &self.b.column(0) * uk;
            }
            out.push(Trajectory {
                label: format!("linear{e}"),
                y,
                u,
                d: Array2::zeros((len, 0)),
                c,
            });
        }
        Dataset::new(out, horizon, 0.8, 0.1)
    }
}
