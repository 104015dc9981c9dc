use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// ELU with alpha = 1.
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MLPSpec {
    pub input: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_output")]
    pub output: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_output() -> usize {
    60
}

fn default_activation() -> Activation {
    Activation::Elu
}

impl MLPSpec {
    /// Hidden widths (128, 128), ELU.
    pub fn new(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: default_hidden(),
            output,
            activation: Activation::Elu,
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.hidden = hidden.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// An MLP whose weights live in a [`ParamSet`] under `{prefix}.w{i}` and
/// `{prefix}.b{i}`. The last layer is affine; every other layer applies the
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MLPSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Add He-initialized weights and zero biases to `params`.
    pub fn register(
        spec: MLPSpec,
        params: &mut ParamSet,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (i, (fan_in, fan_out)) in spec.layer_shapes().into_iter().enumerate() {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
            let wi = params.add(&format!("{prefix}.w{i}"), w)?;
            let bi = params.add(&format!("{prefix}.b{i}"), Array2::zeros((1, fan_out)))?;
            layers.push((wi, bi));
        }
        Ok(Self { spec, layers })
    }

    /// Bind to weights already present in `params`.
    pub fn bind(spec: MLPSpec, params: &ParamSet, prefix: &str) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                Ok((
                    params.expect(&format!("{prefix}.w{i}"), (fan_in, fan_out))?,
                    params.expect(&format!("{prefix}.b{i}"), (1, fan_out))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, layers })
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().map(|(w, _)| *w)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input {
            return Err(Error::Shape {
                context: "MLP layer 0 input".into(),
                expected: self.spec.input.to_string(),
                got: cols.to_string(),
            });
        }
        Ok(())
    }

    /// Record the forward pass of a batch (rows) on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(params, *w);
            let bv = tape.param(params, *b);
            h = tape.matmul(h, wv).map_err(|e| layer_err(e, i))?;
            h = tape.add_row(h, bv).map_err(|e| layer_err(e, i))?;
            if i < last {
                h = match self.spec.activation {
                    Activation::Elu => tape.elu(h),
                };
            }
        }
        Ok(h)
    }

    /// Forward pass without recording.
    pub fn eval(&self, params: &ParamSet, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.dot(params.get(*w)) + params.get(*b);
            if i < last {
                let act = self.spec.activation;
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }
}

fn layer_err(e: Error, layer: usize) -> Error {
    match e {
        Error::Shape {
            context,
            expected,
            got,
        } => Error::Shape {
            context: format!("MLP layer {layer} ({context})"),
            expected,
            got,
        },
        other => other,
    }
}

/// A fresh MLP with its own parameter set, deterministic by `seed`.
pub fn init_params(spec: &MLPSpec, seed: u64) -> Result<(ParamSet, Mlp)> {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp = Mlp::register(spec.clone(), &mut params, "mlp", &mut rng)?;
    Ok((params, mlp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{max_relative_error, numerical_gradient};
    use rand::Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = MLPSpec::new(5, 3).with_hidden(&[4, 4]);
        let (mut p, mlp) = init_params(&spec, 0).unwrap();
        let zeros = vec![0.0; p.num_scalars()];
        p.set_flat(&zeros).unwrap();
        let x = Array2::from_elem((2, 5), 3.7);
        assert!(mlp.eval(&p, &x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn same_seed_same_parameters_and_zero_biases() {
        let spec = MLPSpec::new(55, 60);
        let (a, mlp) = init_params(&spec, 9).unwrap();
        let (b, _) = init_params(&spec, 9).unwrap();
        assert_eq!(a, b);
        let (c, _) = init_params(&spec, 10).unwrap();
        assert_ne!(a, c);
        for id in mlp.param_ids().skip(1).step_by(2) {
            assert!(a.get(id).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn he_initialization_scale() {
        let spec = MLPSpec::new(200, 300).with_hidden(&[400]);
        let (p, mlp) = init_params(&spec, 1).unwrap();
        for (id, (fan_in, _)) in mlp.weight_ids().zip(spec.layer_shapes()) {
            let w = p.get(id);
            let n = w.len() as f64;
            let std = (w.mapv(|v| v * v).sum() / n).sqrt();
            let expected = (2.0 / fan_in as f64).sqrt();
            assert!((std / expected - 1.0).abs() < 0.1, "{std} vs {expected}");
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let spec = MLPSpec::new(4, 2).with_hidden(&[3]);
        let (p, mlp) = init_params(&spec, 0).unwrap();
        let err = mlp.eval(&p, &Array2::zeros((1, 5))).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn tape_and_eval_agree_and_gradients_check() {
        let spec = MLPSpec::new(3, 2).with_hidden(&[5, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..10 {
            let (p, mlp) = init_params(&spec, seed).unwrap();
            let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
            let loss = |p: &ParamSet, tape: &mut Tape| {
                let xv = tape.constant(x.clone());
                let out = mlp.forward(tape, p, xv).unwrap();
                tape.sum_squares(out)
            };
            let mut tape = Tape::new();
            let l = loss(&p, &mut tape);
            let direct = mlp.eval(&p, &x).unwrap().mapv(|v| v * v).sum();
            assert!((tape.scalar(l) - direct).abs() < 1e-12);
            let g = tape.backward(l, &p).unwrap();
            let numeric = numerical_gradient(&p, 1e-5, |q| {
                let mut t = Tape::new();
                let l = loss(q, &mut t);
                t.scalar(l)
            });
            let err = max_relative_error(&g.flatten(), &numeric, 1e-3);
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn bind_finds_registered_weights() {
        let spec = MLPSpec::new(3, 2).with_hidden(&[4]);
        let (p, mlp) = init_params(&spec, 2).unwrap();
        assert_eq!(Mlp::bind(spec.clone(), &p, "mlp").unwrap(), mlp);
        assert!(Mlp::bind(spec.with_hidden(&[5]), &p, "mlp").is_err());
    }
}
