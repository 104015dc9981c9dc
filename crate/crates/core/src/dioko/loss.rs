use ndarray::{s, Array2};

use super::{DIOKOModel, Dataset, WindowRef};
use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

/// Standardized windows stacked for one batched loss evaluation. Encoder
/// inputs are step-major: rows `j * size .. (j + 1) * size` hold step `j` of
/// every window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub size: usize,
    pub horizon: usize,
    pub z: Array2<f64>,
    /// One `size x nu` block per step `0..horizon`.
    pub u: Vec<Array2<f64>>,
    /// One `size x 1` block per step `0..=horizon`.
    pub c: Vec<Array2<f64>>,
}

impl WindowBatch {
    /// Gather windows from an already standardized dataset.
    pub fn gather(ds: &Dataset, windows: &[WindowRef], horizon: usize) -> Result<Self> {
        if horizon > ds.horizon {
            return Err(Error::Config(format!(
                "horizon {horizon} exceeds the dataset window length {}",
                ds.horizon
            )));
        }
        let b = windows.len();
        let nz = ds.ny + ds.nd;
        let mut z = Array2::zeros(((horizon + 1) * b, nz));
        let mut u = vec![Array2::zeros((b, ds.nu)); horizon];
        let mut c = vec![Array2::zeros((b, 1)); horizon + 1];
        for (i, w) in windows.iter().enumerate() {
            let t = &ds.episodes[w.episode];
            for j in 0..=horizon {
                let k = w.start + j;
                let mut row = z.row_mut(j * b + i);
                row.slice_mut(s![..ds.ny]).assign(&t.y.row(k));
                row.slice_mut(s![ds.ny..]).assign(&t.d.row(k));
                c[j][[i, 0]] = t.c[k];
                if j < horizon {
                    u[j].row_mut(i).assign(&t.u.row(k));
                }
            }
        }
        Ok(Self {
            size: b,
            horizon,
            z,
            u,
            c,
        })
    }
}

/// Tape handles of the pieces of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// Data terms plus weighted penalty; differentiate this.
    pub total: Var,
    /// Latent-consistency plus cost-reconstruction error summed over the batch.
    pub data: Var,
    /// Cost-reconstruction part of `data`.
    pub cost: Var,
    /// Unweighted `lambda * sum ||W||^2`.
    pub l2: Var,
}

/// Record the training objective of a batch: for every window the squared
/// distance between the encoder output at each step and the latent state
/// rolled out from the first step, plus the squared cost-prediction error at
/// every step, summed over windows; plus `l2_weight` times the l2 penalty.
pub fn training_loss(
    model: &DIOKOModel,
    batch: &WindowBatch,
    tape: &mut Tape,
    l2_weight: f64,
) -> Result<LossVars> {
    let params = &model.params;
    let (a_id, b_id, q_id, p_id, bias_id) = model.head_ids();
    let b = batch.size;
    let z = tape.constant(batch.z.clone());
    let encoded = model.encoder().forward(tape, params, z)?;
    let a = tape.param(params, a_id);
    let bm = tape.param(params, b_id);
    let qv = tape.param(params, q_id);
    let q = tape.exp(qv);
    let p = tape.param(params, p_id);
    let bias = tape.param(params, bias_id);

    let mut psi = tape.rows(encoded, 0, b)?;
    let mut consistency: Option<Var> = None;
    let mut cost: Option<Var> = None;
    for j in 0..=batch.horizon {
        if j > 0 {
            let u = tape.constant(batch.u[j - 1].clone());
            let ap = tape.matmul_t(psi, a)?;
            let bu = tape.matmul_t(u, bm)?;
            psi = tape.add(ap, bu)?;
            let enc_j = tape.rows(encoded, j * b, b)?;
            let diff = tape.sub(enc_j, psi)?;
            let e = tape.sum_squares(diff);
            consistency = Some(match consistency {
                Some(acc) => tape.add(acc, e)?,
                None => e,
            });
        }
        let sq = tape.square(psi);
        let weighted = tape.mul_row(sq, q)?;
        let quad = tape.sum_cols(weighted);
        let lin = tape.matmul_t(psi, p)?;
        let c_hat = tape.add(quad, lin)?;
        let c_hat = tape.add_row(c_hat, bias)?;
        let target = tape.constant(batch.c[j].clone());
        let diff = tape.sub(target, c_hat)?;
        let e = tape.sum_squares(diff);
        cost = Some(match cost {
            Some(acc) => tape.add(acc, e)?,
            None => e,
        });
    }
    let cost = cost.expect("at least one step");
    let data = match consistency {
        Some(cons) => tape.add(cons, cost)?,
        None => cost,
    };

    let mut l2: Option<Var> = None;
    for id in model.l2_params() {
        let v = tape.param(params, id);
        let ss = tape.sum_squares(v);
        l2 = Some(match l2 {
            Some(acc) => tape.add(acc, ss)?,
            None => ss,
        });
    }
    let l2 = match l2 {
        Some(v) => tape.scale(v, model.config.l2),
        None => tape.constant(Array2::zeros((1, 1))),
    };
    let weighted = tape.scale(l2, l2_weight);
    let total = tape.add(data, weighted)?;
    Ok(LossVars {
        total,
        data,
        cost,
        l2,
    })
}
