//! A small matrix-level reverse-mode autodiff kernel, an ELU multilayer
//! perceptron, and the Adam optimizer.
//!
//! Every value on the tape is a dense `Array2<f64>`; vectors are 1 x n rows.
//! Batches are stacked as rows.

mod adam;
mod checkpoint;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use mlp::{init_params, Activation, MLPSpec, Mlp};
pub use tape::{Tape, Var};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable matrices. Shapes are fixed once a
/// parameter is added.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        if self.id(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Look up a parameter by name and check its shape.
    pub fn expect(&self, name: &str, shape: (usize, usize)) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        let got = self.values[id.0].dim();
        if got != shape {
            return Err(Error::Shape {
                context: format!("parameter `{name}`"),
                expected: format!("{shape:?}"),
                got: format!("{got:?}"),
            });
        }
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    /// Mutable view; the shape cannot change through it.
    pub fn view_mut(&mut self, id: ParamId) -> ndarray::ArrayViewMut2<'_, f64> {
        self.values[id.0].view_mut()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.values.iter().map(|v| Array2::zeros(v.dim())).collect())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.iter() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` is not finite"
                )));
            }
        }
        Ok(())
    }

    /// All scalars concatenated in parameter order (row-major).
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape {
                context: "flat parameter vector".into(),
                expected: self.num_scalars().to_string(),
                got: flat.len().to_string(),
            });
        }
        let mut it = flat.iter();
        for v in &mut self.values {
            for x in v.iter_mut() {
                *x = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

/// Gradients aligned with the parameters of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Array2<f64>>);

impl Grads {
    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Central finite-difference gradient of `f` at `params`.
pub fn numerical_gradient(
    params: &ParamSet,
    h: f64,
    mut f: impl FnMut(&ParamSet) -> f64,
) -> Vec<f64> {
    let base = params.flatten();
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(base.len());
    let mut x = base.clone();
    for i in 0..base.len() {
        x[i] = base[i] + h;
        probe.set_flat(&x).expect("same length");
        let up = f(&probe);
        x[i] = base[i] - h;
        probe.set_flat(&x).expect("same length");
        let down = f(&probe);
        x[i] = base[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Largest relative discrepancy between two gradients, with `floor` guarding
/// entries near zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
