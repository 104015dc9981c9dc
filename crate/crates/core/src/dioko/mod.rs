//! Input-output Koopman model of the stage cost.
//!
//! An encoder maps standardized `(y, d)` to a latent vector `psi`, which
//! evolves linearly as `psi+ = A psi + B u`; a convex quadratic head predicts
//! the standardized stage cost `c = psi' diag(exp(q_v)) psi + P psi + b`.

mod data;
mod loss;
pub mod synthetic;
mod train;

pub use data::{
    collect_dataset, read_dataset, write_dataset, write_dataset_csv, CollectConfig, Dataset, Split,
    Trajectory, WindowRef,
};
pub use loss::{training_loss, WindowBatch};
pub use train::{
    evaluate_prediction, read_loss_curve, train, validation_loss, write_loss_curve, LossCurve,
    TrainConfig, TrainReport,
};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, write_checkpoint, Checkpoint, MLPSpec, Mlp, ParamId, ParamSet};

/// Channel widths of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub ny: usize,
    pub nd: usize,
    pub nu: usize,
    pub latent: usize,
}

impl Dims {
    /// 41 measurements, 14 disturbances, 2 inputs, 60 latent.
    pub fn plant() -> Self {
        Self {
            ny: crate::plant::N_MEASUREMENTS,
            nd: crate::influent::N_DISTURBANCES,
            nu: 2,
            latent: 60,
        }
    }
}

/// Which parameters carry the l2 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2Targets {
    pub encoder_weights: bool,
    pub encoder_biases: bool,
    pub a: bool,
    pub b: bool,
    pub q_v: bool,
    pub p: bool,
}

impl Default for L2Targets {
    fn default() -> Self {
        Self {
            encoder_weights: true,
            encoder_biases: false,
            a: true,
            b: true,
            q_v: false,
            p: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub latent: usize,
    /// Prediction horizon T_f of the training windows.
    pub horizon: usize,
    pub l2: f64,
    pub l2_targets: L2Targets,
    /// Diagonal of A at initialization.
    pub a_init: f64,
    /// Standard deviation of the initial B entries.
    pub b_init_std: f64,
    /// Initial value of every q_v entry.
    pub q_v_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            latent: 60,
            horizon: 30,
            l2: 0.1,
            l2_targets: L2Targets::default(),
            a_init: 0.99,
            b_init_std: 0.01,
            q_v_init: -3.0,
        }
    }
}

/// Per-channel affine scaling `z = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Mean and population standard deviation of each column; channels that
    /// never vary get unit scale.
    pub fn fit(rows: &Array2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean: Vec<f64> = rows.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = rows
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if s > 1e-9 * (1.0 + m.abs()) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Standardize each row in place.
    pub fn apply_rows(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Standardization constants for every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub y: Standardizer,
    pub d: Standardizer,
    pub u: Standardizer,
    pub c: Standardizer,
}

impl Scaling {
    pub fn identity(dims: &Dims) -> Self {
        Self {
            y: Standardizer::identity(dims.ny),
            d: Standardizer::identity(dims.nd),
            u: Standardizer::identity(dims.nu),
            c: Standardizer::identity(1),
        }
    }

    /// Encoder input `[y; d]` in standardized units.
    pub fn encoder_input(&self, y: &[f64], d: &[f64]) -> Vec<f64> {
        let mut z = self.y.apply(y);
        z.extend(self.d.apply(d));
        z
    }

    pub fn cost_to_raw(&self, c_std: f64) -> f64 {
        c_std * self.c.std[0] + self.c.mean[0]
    }

    pub fn cost_to_std(&self, c: f64) -> f64 {
        (c - self.c.mean[0]) / self.c.std[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeadIds {
    a: ParamId,
    b: ParamId,
    q_v: ParamId,
    p: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    dims: Dims,
    config: ModelConfig,
    scaling: Scaling,
}

/// Encoder, latent dynamics and cost head with the standardization constants
/// they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct DIOKOModel {
    pub dims: Dims,
    pub config: ModelConfig,
    pub scaling: Scaling,
    pub params: ParamSet,
    encoder: Mlp,
    ids: HeadIds,
}

impl DIOKOModel {
    pub fn new(dims: Dims, config: ModelConfig, scaling: Scaling, seed: u64) -> Result<Self> {
        if dims.latent != config.latent {
            return Err(Error::Config(format!(
                "latent width {} differs from configured {}",
                dims.latent, config.latent
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let spec = MLPSpec::new(dims.ny + dims.nd, dims.latent).with_hidden(&config.hidden);
        let encoder = Mlp::register(spec, &mut params, "encoder", &mut rng)?;
        let p = dims.latent;
        let normal = Normal::new(0.0, config.b_init_std.max(0.0))
            .map_err(|e| Error::Config(e.to_string()))?;
        let ids = HeadIds {
            a: params.add("A", Array2::eye(p) * config.a_init)?,
            b: params.add(
                "B",
                Array2::from_shape_simple_fn((p, dims.nu), || normal.sample(&mut rng)),
            )?,
            q_v: params.add("q_v", Array2::from_elem((1, p), config.q_v_init))?,
            p: params.add("P", Array2::zeros((1, p)))?,
            bias: params.add("b", Array2::zeros((1, 1)))?,
        };
        Ok(Self {
            dims,
            config,
            scaling,
            params,
            encoder,
            ids,
        })
    }

    fn bind(dims: Dims, config: ModelConfig, scaling: Scaling, params: ParamSet) -> Result<Self> {
        let p = dims.latent;
        let spec = MLPSpec::new(dims.ny + dims.nd, p).with_hidden(&config.hidden);
        let encoder = Mlp::bind(spec, &params, "encoder")?;
        let ids = HeadIds {
            a: params.expect("A", (p, p))?,
            b: params.expect("B", (p, dims.nu))?,
            q_v: params.expect("q_v", (1, p))?,
            p: params.expect("P", (1, p))?,
            bias: params.expect("b", (1, 1))?,
        };
        params.check_finite()?;
        Ok(Self {
            dims,
            config,
            scaling,
            params,
            encoder,
            ids,
        })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn a(&self) -> &Array2<f64> {
        self.params.get(self.ids.a)
    }

    pub fn b(&self) -> &Array2<f64> {
        self.params.get(self.ids.b)
    }

    /// Diagonal of Q = diag(exp(q_v)).
    pub fn q_diag(&self) -> Array1<f64> {
        self.params.get(self.ids.q_v).row(0).mapv(f64::exp)
    }

    pub fn p_row(&self) -> ArrayView1<'_, f64> {
        self.params.get(self.ids.p).row(0)
    }

    pub fn bias(&self) -> f64 {
        self.params.get(self.ids.bias)[[0, 0]]
    }

    pub(crate) fn head_ids(&self) -> (ParamId, ParamId, ParamId, ParamId, ParamId) {
        let h = self.ids;
        (h.a, h.b, h.q_v, h.p, h.bias)
    }

    /// Parameters carrying the l2 penalty.
    pub fn l2_params(&self) -> Vec<ParamId> {
        let t = self.config.l2_targets;
        let mut ids = Vec::new();
        let enc: Vec<ParamId> = self.encoder.param_ids().collect();
        for pair in enc.chunks(2) {
            if t.encoder_weights {
                ids.push(pair[0]);
            }
            if t.encoder_biases {
                ids.push(pair[1]);
            }
        }
        for (on, id) in [
            (t.a, self.ids.a),
            (t.b, self.ids.b),
            (t.q_v, self.ids.q_v),
            (t.p, self.ids.p),
        ] {
            if on {
                ids.push(id);
            }
        }
        ids
    }

    /// Latent vector from already standardized encoder inputs (one per row).
    pub fn encode_standardized(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.eval(&self.params, z)
    }

    /// Latent vector from raw measurements and disturbances.
    pub fn encode(&self, y: &[f64], d: &[f64]) -> Result<Array1<f64>> {
        if y.len() != self.dims.ny || d.len() != self.dims.nd {
            return Err(Error::Shape {
                context: "encode input".into(),
                expected: format!("y {}, d {}", self.dims.ny, self.dims.nd),
                got: format!("y {}, d {}", y.len(), d.len()),
            });
        }
        let z = self.scaling.encoder_input(y, d);
        let z = Array2::from_shape_vec((1, z.len()), z).expect("row vector");
        Ok(self.encode_standardized(&z)?.row(0).to_owned())
    }

    /// `psi_{j+1} = A psi_j + B u_j` for standardized inputs `u` (H x m).
    /// Returns the H + 1 latent vectors as rows.
    pub fn rollout(&self, psi0: ArrayView1<f64>, u: &Array2<f64>) -> Array2<f64> {
        let h = u.nrows();
        let mut out = Array2::zeros((h + 1, self.dims.latent));
        out.row_mut(0).assign(&psi0);
        let (a, b) = (self.a(), self.b());
        for j in 0..h {
            let next = a.dot(&out.row(j)) + b.dot(&u.row(j));
            out.row_mut(j + 1).assign(&next);
        }
        out
    }

    /// Predicted standardized stage cost at `psi`.
    pub fn cost_head(&self, psi: ArrayView1<f64>) -> f64 {
        let q = self.params.get(self.ids.q_v).row(0);
        let quad: f64 = psi.iter().zip(q).map(|(x, qv)| qv.exp() * x * x).sum();
        quad + self.p_row().dot(&psi) + self.bias()
    }

    /// Predicted stage cost in raw units.
    pub fn predict_cost(&self, psi: ArrayView1<f64>) -> f64 {
        self.scaling.cost_to_raw(self.cost_head(psi))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = Metadata {
            dims: self.dims,
            config: self.config.clone(),
            scaling: self.scaling.clone(),
        };
        Ok(Checkpoint {
            metadata: serde_json::to_string(&meta)?,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let meta: Metadata = serde_json::from_str(&ckpt.metadata)?;
        Self::bind(meta.dims, meta.config, meta.scaling, ckpt.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(seed: u64) -> DIOKOModel {
        let dims = Dims {
            ny: 3,
            nd: 2,
            nu: 2,
            latent: 4,
        };
        let cfg = ModelConfig {
            hidden: vec![6, 5],
            latent: 4,
            horizon: 5,
            ..Default::default()
        };
        let mut m = DIOKOModel::new(dims, cfg, Scaling::identity(&dims), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let flat: Vec<f64> = (0..m.params.num_scalars())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        m.params.set_flat(&flat).unwrap();
        m
    }

    #[test]
    fn zero_encoder_gives_zero_latent() {
        let mut m = small(0);
        for id in m.encoder.param_ids().collect::<Vec<_>>() {
            m.params.view_mut(id).fill(0.0);
        }
        let psi = m.encode(&[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap();
        assert!(psi.iter().all(|v| *v == 0.0));
        assert!(m.encode(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn encode_goes_through_standardized_path() {
        let mut m = small(1);
        m.scaling.y = Standardizer {
            mean: vec![1.0, -2.0, 30.0],
            std: vec![0.5, 4.0, 12.0],
        };
        let (y, d) = ([1.7, 0.3, 41.0], [2.0, -1.0]);
        let direct = m.encode(&y, &d).unwrap();
        let z = m.scaling.encoder_input(&y, &d);
        let via = m
            .encode_standardized(&Array2::from_shape_vec((1, 5), z.clone()).unwrap())
            .unwrap();
        assert!(direct
            .iter()
            .zip(via.row(0))
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let back = m.scaling.y.invert(&m.scaling.y.apply(&y));
        for (a, b) in back.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rollout_special_cases() {
        let mut m = small(2);
        let u = array![[1.0, -1.0], [0.5, 2.0], [0.0, 3.0]];
        let psi0 = array![0.3, -0.2, 0.1, 0.9];
        m.params.view_mut(m.ids.a).assign(&Array2::eye(4));
        m.params.view_mut(m.ids.b).fill(0.0);
        let r = m.rollout(psi0.view(), &u);
        for j in 0..4 {
            assert_eq!(r.row(j), psi0);
        }
        let mut m = small(2);
        m.params.view_mut(m.ids.a).fill(0.0);
        let r = m.rollout(psi0.view(), &u);
        for j in 0..3 {
            assert_eq!(r.row(j + 1), m.b().dot(&u.row(j)));
        }
    }

    #[test]
    fn rollout_composes() {
        let m = small(3);
        let u = Array2::from_shape_fn((5, 2), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64);
        let psi0 = array![0.3, -0.2, 0.1, 0.9];
        let full = m.rollout(psi0.view(), &u);
        let mut psi = psi0.clone();
        for j in 0..5 {
            let one = m.rollout(psi.view(), &u.slice(ndarray::s![j..j + 1, ..]).to_owned());
            psi = one.row(1).to_owned();
            assert!(psi
                .iter()
                .zip(full.row(j + 1))
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn cost_head_arithmetic() {
        let dims = Dims {
            ny: 1,
            nd: 1,
            nu: 1,
            latent: 2,
        };
        let cfg = ModelConfig {
            hidden: vec![2],
            latent: 2,
            ..Default::default()
        };
        let mut m = DIOKOModel::new(dims, cfg, Scaling::identity(&dims), 0).unwrap();
        m.params.view_mut(m.ids.q_v).fill(0.0);
        m.params.view_mut(m.ids.p).fill(1.0);
        m.params.view_mut(m.ids.bias).fill(0.5);
        assert_eq!(m.cost_head(array![1.0, 2.0].view()), 8.5);
        assert_eq!(m.cost_head(array![0.0, 0.0].view()), 0.5);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        m.save(&path).unwrap();
        assert_eq!(DIOKOModel::load(&path).unwrap(), m);
    }

    #[test]
    fn standardizer_fit_handles_constant_channels() {
        let rows = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(&rows);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn rollout_superposition(seed in 0u64..50, k in -2.0f64..2.0) {
            let m = small(seed);
            let u1 = Array2::from_shape_fn((4, 2), |(i, j)| k * (i + j) as f64);
            let u2 = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 - j as f64) * 0.7);
            let p1 = array![k, 1.0, -0.5, 0.2];
            let p2 = array![0.1, -k, 0.4, 1.5];
            let sum = m.rollout((&p1 + &p2).view(), &(&u1 + &u2));
            let parts = m.rollout(p1.view(), &u1) + m.rollout(p2.view(), &u2);
            for (a, b) in sum.iter().zip(parts.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn cost_head_is_convex(seed in 0u64..50, lam in 0.0f64..1.0) {
            let m = small(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p1 = Array1::from_shape_fn(4, |_| rng.random_range(-3.0..3.0));
            let p2 = Array1::from_shape_fn(4, |_| rng.random_range(-3.0..3.0));
            let mid = &p1 * lam + &p2 * (1.0 - lam);
            let lhs = m.cost_head(mid.view());
            let rhs = lam * m.cost_head(p1.view()) + (1.0 - lam) * m.cost_head(p2.view());
            prop_assert!(lhs <= rhs + 1e-9);
            let quad = m.cost_head(p1.view()) - m.p_row().dot(&p1) - m.bias();
            prop_assert!(quad >= 0.0);
            prop_assert!(m.q_diag().iter().all(|q| *q > 0.0));
        }
    }
}
