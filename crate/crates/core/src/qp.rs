//! Box-constrained convex QP: `min 1/2 z'Hz + g'z` s.t. `lb <= z <= ub`.
//!
//! Projected gradient with Barzilai-Borwein steps and a backtracking
//! safeguard, interleaved with Newton steps on the free variables. The
//! Newton step lands on the exact minimizer once the active set is right.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{write_checkpoint, Checkpoint, ParamSet};

/// Relative tolerance for symmetry and for negative eigenvalues.
pub const STRUCTURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QPProblem {
    pub h: Array2<f64>,
    pub g: Array1<f64>,
    pub lb: Array1<f64>,
    pub ub: Array1<f64>,
}

fn scale_of(h: &Array2<f64>) -> f64 {
    h.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0)
}

/// Cholesky factor of `a` (lower), or `None` if a pivot is not positive.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    y
}

impl QPProblem {
    /// Validates dimensions, symmetry and positive semidefiniteness (both
    /// relative to the largest entry of `h`). Box consistency is checked by
    /// [`solve`].
    pub fn new(h: Array2<f64>, g: Array1<f64>, lb: Array1<f64>, ub: Array1<f64>) -> Result<Self> {
        let n = g.len();
        if h.dim() != (n, n) || lb.len() != n || ub.len() != n {
            return Err(Error::Shape {
                context: "QP problem".into(),
                expected: format!("H {n}x{n}, lb/ub {n}"),
                got: format!("H {:?}, lb {}, ub {}", h.dim(), lb.len(), ub.len()),
            });
        }
        if h.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite H or g".into()));
        }
        let scale = scale_of(&h);
        for i in 0..n {
            for j in 0..i {
                if (h[[i, j]] - h[[j, i]]).abs() > STRUCTURE_TOL * scale {
                    return Err(Error::InvalidProblem(format!(
                        "H not symmetric at ({i}, {j}): {} vs {}",
                        h[[i, j]],
                        h[[j, i]]
                    )));
                }
            }
        }
        let shifted = &h + &(Array2::<f64>::eye(n) * (STRUCTURE_TOL * scale));
        if n > 0 && cholesky(&shifted).is_none() {
            return Err(Error::InvalidProblem(
                "H is not positive semidefinite".into(),
            ));
        }
        Ok(Self { h, g, lb, ub })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &Array1<f64>) -> f64 {
        0.5 * z.dot(&self.h.dot(z)) + self.g.dot(z)
    }

    pub fn gradient(&self, z: &Array1<f64>) -> Array1<f64> {
        self.h.dot(z) + &self.g
    }

    pub fn project(&self, z: &Array1<f64>) -> Array1<f64> {
        let mut p = z.clone();
        for i in 0..p.len() {
            p[i] = p[i].max(self.lb[i]).min(self.ub[i]);
        }
        p
    }

    /// Largest component of `z - proj(z - (Hz + g))`.
    pub fn kkt_residual(&self, z: &Array1<f64>) -> f64 {
        kkt_with_grad(self, z, &self.gradient(z))
    }

    /// Write `H, g, lb, ub` and a solution in the named-array container.
    pub fn dump(&self, path: &Path, z: &Array1<f64>) -> Result<()> {
        let mut params = ParamSet::new();
        let n = self.dim();
        let row = |v: &Array1<f64>| v.clone().into_shape_with_order((1, n)).expect("row");
        params.add("H", self.h.clone())?;
        params.add("g", row(&self.g))?;
        params.add("lb", row(&self.lb))?;
        params.add("ub", row(&self.ub))?;
        params.add("z", row(z))?;
        write_checkpoint(
            path,
            &Checkpoint {
                metadata: "{\"kind\":\"box-qp\"}".into(),
                params,
            },
        )
    }
}

fn kkt_with_grad(p: &QPProblem, z: &Array1<f64>, grad: &Array1<f64>) -> f64 {
    let mut r = 0.0f64;
    for i in 0..z.len() {
        let step = (z[i] - grad[i]).max(p.lb[i]).min(p.ub[i]);
        r = r.max((z[i] - step).abs());
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPStatus {
    Optimal,
    MaxIter,
    InfeasibleBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QPSolution {
    pub z: Array1<f64>,
    pub objective: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub status: QPStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QPOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Projected-gradient steps between Newton attempts.
    pub newton_every: usize,
}

impl Default for QPOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            newton_every: 5,
        }
    }
}

/// Newton step on the variables not held at a bound by their gradient,
/// followed by a projected backtracking search. Returns the improved point.
fn newton_polish(
    p: &QPProblem,
    z: &Array1<f64>,
    grad: &Array1<f64>,
    f: f64,
) -> Option<(Array1<f64>, f64)> {
    let n = z.len();
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let at_lb = z[i] <= p.lb[i] && grad[i] > 0.0;
            let at_ub = z[i] >= p.ub[i] && grad[i] < 0.0;
            !(at_lb || at_ub || p.lb[i] == p.ub[i])
        })
        .collect();
    if free.is_empty() {
        return None;
    }
    let m = free.len();
    let mut hff = Array2::zeros((m, m));
    let mut gf = Array1::zeros(m);
    let reg = 1e-14 * scale_of(&p.h);
    for (a, &i) in free.iter().enumerate() {
        gf[a] = -grad[i];
        for (b, &j) in free.iter().enumerate() {
            hff[[a, b]] = p.h[[i, j]];
        }
        hff[[a, a]] += reg;
    }
    let l = cholesky(&hff)?;
    let d = cholesky_solve(&l, &gf);
    let mut t = 1.0;
    for _ in 0..30 {
        let mut cand = z.clone();
        for (a, &i) in free.iter().enumerate() {
            cand[i] += t * d[a];
        }
        let cand = p.project(&cand);
        let fc = p.objective(&cand);
        if fc <= f {
            return Some((cand, fc));
        }
        t *= 0.5;
    }
    None
}

/// Solve from the projection of `z0` (or of the box midpoint-clamped origin).
pub fn solve(p: &QPProblem, z0: Option<&Array1<f64>>, opts: &QPOptions) -> QPSolution {
    let n = p.dim();
    if (0..n).any(|i| p.lb[i] > p.ub[i]) {
        return QPSolution {
            z: Array1::zeros(n),
            objective: f64::NAN,
            kkt: f64::INFINITY,
            iterations: 0,
            status: QPStatus::InfeasibleBox,
        };
    }
    let mut z = match z0 {
        Some(z0) if z0.len() == n => p.project(z0),
        _ => p.project(&Array1::zeros(n)),
    };
    let mut f = p.objective(&z);
    let mut grad = p.gradient(&z);
    // 1 / (Gershgorin bound on the largest eigenvalue)
    let lmax =
        p.h.rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let alpha_max = 1e12;
    let mut alpha = if lmax > 0.0 { 1.0 / lmax } else { 1.0 };

    let mut iterations = 0;
    let mut kkt = kkt_with_grad(p, &z, &grad);
    while kkt > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        if opts.newton_every > 0 && iterations % opts.newton_every == 0 {
            if let Some((zn, fnew)) = newton_polish(p, &z, &grad, f) {
                z = zn;
                f = fnew;
                grad = p.gradient(&z);
                kkt = kkt_with_grad(p, &z, &grad);
                continue;
            }
        }
        // projected gradient with backtracking on the BB step
        let mut a = alpha;
        let (znew, fnew) = loop {
            let cand = p.project(&(&z - &(&grad * a)));
            let fc = p.objective(&cand);
            let dz = &cand - &z;
            if fc <= f + 1e-4 * grad.dot(&dz) || a < 1e-20 {
                break (cand, fc);
            }
            a *= 0.5;
        };
        let s = &znew - &z;
        let gnew = p.gradient(&znew);
        let y = &gnew - &grad;
        let sy = s.dot(&y);
        alpha = if sy > 0.0 {
            (s.dot(&s) / sy).min(alpha_max)
        } else {
            alpha_max.min(if lmax > 0.0 { 1.0 / lmax } else { 1.0 } * 1e3)
        };
        if fnew <= f {
            z = znew;
            f = fnew;
            grad = gnew;
        }
        kkt = kkt_with_grad(p, &z, &grad);
    }
    QPSolution {
        objective: f,
        kkt,
        iterations,
        status: if kkt <= opts.tol {
            QPStatus::Optimal
        } else {
            QPStatus::MaxIter
        },
        z,
    }
}
