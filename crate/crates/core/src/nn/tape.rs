use ndarray::{s, Array2, Axis};

use super::{Grads, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    /// a . b
    MatMul(Var, Var),
    /// a . b^T
    MatMulT(Var, Var),
    /// a + row, broadcast over rows
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// a * row elementwise, broadcast over rows
    MulRow(Var, Var),
    Elu(Var),
    Exp(Var),
    Square(Var),
    Scale(Var, f64),
    /// per-row sums, n x 1
    SumCols(Var),
    SumAll(Var),
    Rows(Var, usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records a forward computation for one reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(context: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape {
        context: context.to_string(),
        expected: format!("{a:?}"),
        got: format!("{b:?}"),
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The single entry of a 1 x 1 value.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err(
                "matmul",
                (va.ncols(), 0),
                (vb.nrows(), vb.ncols()),
            ));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(shape_err("matmul_t", va.dim(), vb.dim()));
        }
        let out = va.dot(&vb.t());
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(shape_err("add_row", (1, va.ncols()), vr.dim()));
        }
        let out = va + vr;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(shape_err("mul_row", (1, va.ncols()), vr.dim()));
        }
        let out = va * vr;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("add", va.dim(), vb.dim()));
        }
        let out = va + vb;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err("sub", va.dim(), vb.dim()));
        }
        let out = va - vb;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(elu);
        self.push(out, Op::Elu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Sum of squared entries, 1 x 1.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum_all(sq)
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.nrows() {
            return Err(shape_err("rows", (start + len, va.ncols()), va.dim()));
        }
        let out = va.slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(out, Op::Rows(a, start, len)))
    }

    /// Reverse pass from a scalar output with seed gradient 1.
    pub fn backward(&mut self, output: Var, params: &ParamSet) -> Result<Grads> {
        let seed = Array2::ones(self.value(output).dim());
        self.backward_with_seed(output, seed, params)
    }

    /// Reverse pass from `output` with an explicit seed gradient. The tape can
    /// be consumed only once.
    pub fn backward_with_seed(
        &mut self,
        output: Var,
        seed: Array2<f64>,
        params: &ParamSet,
    ) -> Result<Grads> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if seed.dim() != self.value(output).dim() {
            return Err(shape_err(
                "backward seed",
                self.value(output).dim(),
                seed.dim(),
            ));
        }
        self.consumed = true;
        let mut grads = params.zero_grads();
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed);

        fn acc(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut adj[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Constant => {}
                Op::Param(id) => grads.0[id.0] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value);
                    let gb = g.t().dot(&self.nodes[a.0].value);
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, row, gr);
                    acc(&mut adj, a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * &self.nodes[a.0].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    let ga = &g * &self.nodes[row.0].value;
                    acc(&mut adj, row, gr);
                    acc(&mut adj, a, ga);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, a, g.clone());
                    acc(&mut adj, b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, b, -&g);
                    acc(&mut adj, a, g);
                }
                Op::Elu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gi, &y| {
                        if y <= 0.0 {
                            *gi *= y + 1.0;
                        }
                    });
                    acc(&mut adj, a, ga);
                }
                Op::Exp(a) => acc(&mut adj, a, g * &node.value),
                Op::Square(a) => {
                    let ga = g * &self.nodes[a.0].value * 2.0;
                    acc(&mut adj, a, ga);
                }
                Op::Scale(a, k) => acc(&mut adj, a, g * k),
                Op::SumCols(a) => {
                    let ncols = self.nodes[a.0].value.ncols();
                    let ga = g
                        .broadcast((g.nrows(), ncols))
                        .expect("column broadcast")
                        .to_owned();
                    acc(&mut adj, a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.nodes[a.0].value.dim(), g[[0, 0]]);
                    acc(&mut adj, a, ga);
                }
                Op::Rows(a, start, len) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    ga.slice_mut(s![start..start + len, ..]).assign(&g);
                    acc(&mut adj, a, ga);
                }
            }
        }
        Ok(grads)
    }
}
