//! Receding-horizon economic control on a trained [`DIOKOModel`].
//!
//! At every sample the current measurements are encoded, the latent rollout
//! is eliminated from the horizon cost, the resulting box QP is solved and
//! the first input is applied.

use std::path::Path;
use std::time::Instant;

use log::warn;
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dioko::DIOKOModel;
use crate::error::{Error, Result};
use crate::indices::{
    stage_cost, windowed_report, IndexSample, IndexSnapshot, IndexWeights, WindowReport,
};
use crate::influent::{InfluentRecord, WeatherSeries};
use crate::plant::{
    measure, state_name, step, ControlInput, MeasurementVector, NoiseConfig, PlantParams,
    PlantState, MEASUREMENT_INDICES, SAMPLE_DAYS,
};
use crate::qp::{solve, QPOptions, QPProblem, QPStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EMPCConfig {
    pub horizon: usize,
    /// Diagonal move-penalty weights in raw input units.
    pub r: [f64; 2],
    pub lower: ControlInput,
    pub upper: ControlInput,
    /// Also penalize the move from the previously applied input.
    pub penalize_first_move: bool,
    pub qp: QPOptions,
}

impl Default for EMPCConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            r: [1.2e-8, 1.77733e-5],
            lower: ControlInput::LOWER,
            upper: ControlInput::UPPER,
            penalize_first_move: false,
            qp: QPOptions::default(),
        }
    }
}

impl EMPCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("prediction horizon must be >= 1".into()));
        }
        if self.r.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config(format!(
                "move penalty must be >= 0, got {:?}",
                self.r
            )));
        }
        Ok(())
    }
}

/// The horizon objective as a QP over the stacked standardized inputs
/// `z = (u_0, ..., u_{T-1})`. Objective values are in standardized cost
/// units: `sum_j c_std(psi_j) + sum dU' R_std dU` over `j = 0..=T`; see
/// [`CondensedQP::raw_objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQP {
    pub problem: QPProblem,
    pub constant: f64,
    pub horizon: usize,
    pub nu: usize,
}

impl CondensedQP {
    pub fn objective(&self, z: &Array1<f64>) -> f64 {
        self.problem.objective(z) + self.constant
    }

    /// Convert a standardized objective value to raw cost units.
    pub fn raw_objective(&self, model: &DIOKOModel, value: f64) -> f64 {
        let c = &model.scaling.c;
        value * c.std[0] + (self.horizon + 1) as f64 * c.mean[0]
    }
}

/// Move-penalty weights in standardized input and cost units.
pub fn standardized_move_weights(model: &DIOKOModel, cfg: &EMPCConfig) -> Vec<f64> {
    let su = &model.scaling.u.std;
    let sc = model.scaling.c.std[0];
    (0..model.dims.nu)
        .map(|i| cfg.r[i] * su[i] * su[i] / sc)
        .collect()
}

/// Raw input box mapped to standardized units.
pub fn standardized_box(model: &DIOKOModel, cfg: &EMPCConfig) -> (Vec<f64>, Vec<f64>) {
    let su = &model.scaling.u;
    (
        su.apply(&cfg.lower.to_array()),
        su.apply(&cfg.upper.to_array()),
    )
}

/// Eliminate the latent states from the horizon cost starting at `psi0`.
/// `prev_u` (standardized) is only used when the first move is penalized.
pub fn condense(
    model: &DIOKOModel,
    psi0: ArrayView1<f64>,
    cfg: &EMPCConfig,
    prev_u: Option<&[f64]>,
) -> Result<CondensedQP> {
    cfg.validate()?;
    let p = model.dims.latent;
    let m = model.dims.nu;
    if psi0.len() != p || m != 2 {
        return Err(Error::Shape {
            context: "condense".into(),
            expected: format!("latent {p}, 2 inputs"),
            got: format!("latent {}, {m} inputs", psi0.len()),
        });
    }
    let t = cfg.horizon;
    let n = m * t;
    let (a, b) = (model.a(), model.b());
    let q = model.q_diag();
    let prow = model.p_row();

    let mut h = Array2::<f64>::zeros((n, n));
    let mut g = Array1::<f64>::zeros(n);
    let mut constant = 0.0;
    // psi_j = f + G z with G nonzero only in its first j input blocks
    let mut f = psi0.to_owned();
    let mut gm = Array2::<f64>::zeros((p, n));
    for j in 0..=t {
        let cols = j * m;
        let qf = &q * &f;
        constant += f.dot(&qf) + prow.dot(&f) + model.bias();
        if cols > 0 {
            let gj = gm.slice(s![.., ..cols]);
            let qg = &gj * &q.view().insert_axis(ndarray::Axis(1));
            let mut hb = h.slice_mut(s![..cols, ..cols]);
            hb += &(gj.t().dot(&qg) * 2.0);
            let mut gb = g.slice_mut(s![..cols]);
            gb += &(gj.t().dot(&qf) * 2.0 + gj.t().dot(&prow));
        }
        if j < t {
            let next = if cols > 0 {
                a.dot(&gm.slice(s![.., ..cols]))
            } else {
                Array2::zeros((p, 0))
            };
            gm.slice_mut(s![.., ..cols]).assign(&next);
            gm.slice_mut(s![.., cols..cols + m]).assign(b);
            f = a.dot(&f);
        }
    }

    let r = standardized_move_weights(model, cfg);
    for i in 0..t.saturating_sub(1) {
        for c in 0..m {
            let (x, y) = (i * m + c, (i + 1) * m + c);
            h[[x, x]] += 2.0 * r[c];
            h[[y, y]] += 2.0 * r[c];
            h[[x, y]] -= 2.0 * r[c];
            h[[y, x]] -= 2.0 * r[c];
        }
    }
    if cfg.penalize_first_move {
        if let Some(prev) = prev_u {
            for c in 0..m {
                h[[c, c]] += 2.0 * r[c];
                g[c] -= 2.0 * r[c] * prev[c];
                constant += r[c] * prev[c] * prev[c];
            }
        }
    }
    let h = (&h + &h.t()) * 0.5;
    let (lo, hi) = standardized_box(model, cfg);
    let lb = Array1::from_shape_fn(n, |i| lo[i % m]);
    let ub = Array1::from_shape_fn(n, |i| hi[i % m]);
    Ok(CondensedQP {
        problem: QPProblem::new(h, g, lb, ub)?,
        constant,
        horizon: t,
        nu: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// Predicted horizon cost in raw units.
    pub objective: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub status: QPStatus,
    /// Encode, condense and solve.
    pub control_ms: f64,
    pub solve_ms: f64,
    pub fallback: bool,
}

/// Stateful receding-horizon controller; keeps the last solution for warm
/// starts and the last applied input for fallback.
#[derive(Debug, Clone)]
pub struct EMPCController<'a> {
    model: &'a DIOKOModel,
    cfg: EMPCConfig,
    warm: Option<Array1<f64>>,
    last: ControlInput,
}

impl<'a> EMPCController<'a> {
    pub fn new(model: &'a DIOKOModel, cfg: EMPCConfig, initial: ControlInput) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            cfg,
            warm: None,
            last: initial,
        })
    }

    pub fn config(&self) -> &EMPCConfig {
        &self.cfg
    }

    /// Previous solution shifted by one input block, last block repeated.
    fn shifted_warm_start(&self) -> Option<Array1<f64>> {
        let w = self.warm.as_ref()?;
        let m = self.model.dims.nu;
        let n = w.len();
        let mut z = Array1::zeros(n);
        z.slice_mut(s![..n - m]).assign(&w.slice(s![m..]));
        z.slice_mut(s![n - m..]).assign(&w.slice(s![n - m..]));
        Some(z)
    }

    pub fn control_step(
        &mut self,
        y: &[f64],
        d: &[f64],
    ) -> Result<(ControlInput, StepDiagnostics)> {
        let start = Instant::now();
        let psi0 = self.model.encode(y, d)?;
        let prev = self.model.scaling.u.apply(&self.last.to_array());
        let qp = condense(self.model, psi0.view(), &self.cfg, Some(&prev))?;
        let solve_start = Instant::now();
        let warm = self.shifted_warm_start();
        let sol = solve(&qp.problem, warm.as_ref(), &self.cfg.qp);
        let solve_ms = solve_start.elapsed().as_secs_f64() * 1e3;
        let fallback = sol.status != QPStatus::Optimal;
        let u = if fallback {
            warn!(
                "QP not solved ({:?}, KKT {:.3e}); holding previous input",
                sol.status, sol.kkt
            );
            self.warm = None;
            self.last
        } else {
            let raw = self
                .model
                .scaling
                .u
                .invert(&sol.z.as_slice().expect("contiguous")[..2]);
            let lo = self.cfg.lower.to_array();
            let hi = self.cfg.upper.to_array();
            self.warm = Some(sol.z.clone());
            ControlInput::new(raw[0].clamp(lo[0], hi[0]), raw[1].clamp(lo[1], hi[1]))
        };
        self.last = u;
        let diag = StepDiagnostics {
            objective: qp.raw_objective(self.model, sol.objective + qp.constant),
            kkt: sol.kkt,
            iterations: sol.iterations,
            status: sol.status,
            control_ms: start.elapsed().as_secs_f64() * 1e3,
            solve_ms,
            fallback,
        };
        Ok((u, diag))
    }
}

/// Anything that picks the plant inputs at each sample.
pub trait Policy {
    fn name(&self) -> &str;
    fn act(
        &mut self,
        step: usize,
        y: &MeasurementVector,
        d: &InfluentRecord,
    ) -> Result<(ControlInput, Option<StepDiagnostics>)>;
}

/// Hold one input throughout.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub ControlInput);

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn act(
        &mut self,
        _: usize,
        _: &MeasurementVector,
        _: &InfluentRecord,
    ) -> Result<(ControlInput, Option<StepDiagnostics>)> {
        Ok((self.0, None))
    }
}

/// Replay a precomputed input sequence, holding its last entry afterwards.
#[derive(Debug, Clone)]
pub struct SequencePolicy {
    pub label: String,
    pub inputs: Vec<ControlInput>,
}

impl Policy for SequencePolicy {
    fn name(&self) -> &str {
        &self.label
    }

    fn act(
        &mut self,
        step: usize,
        _: &MeasurementVector,
        _: &InfluentRecord,
    ) -> Result<(ControlInput, Option<StepDiagnostics>)> {
        let u = self
            .inputs
            .get(step)
            .or(self.inputs.last())
            .copied()
            .ok_or_else(|| Error::Config("empty input sequence".into()))?;
        Ok((u, None))
    }
}

impl Policy for EMPCController<'_> {
    fn name(&self) -> &str {
        "dioko-empc"
    }

    fn act(
        &mut self,
        _: usize,
        y: &MeasurementVector,
        d: &InfluentRecord,
    ) -> Result<(ControlInput, Option<StepDiagnostics>)> {
        let (u, diag) = self.control_step(y.as_slice(), &d.to_vector())?;
        Ok((u, Some(diag)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub days: f64,
    pub noise: Option<NoiseConfig>,
    pub weights: IndexWeights,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            days: 2.0,
            noise: None,
            weights: IndexWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub time: f64,
    pub u: ControlInput,
    /// Measurements seen by the policy.
    pub y: MeasurementVector,
    pub rates: IndexSnapshot,
    pub solve_ms: f64,
    pub kkt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub method: String,
    pub rows: Vec<TrajectoryRow>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub report: WindowReport,
    pub final_state: PlantState,
    /// Step index and reason if the plant failed before the end.
    pub aborted: Option<(usize, String)>,
}

impl ClosedLoopRun {
    pub fn median_control_ms(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.diagnostics.iter().map(|d| d.control_ms).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let k = v.len();
        Some(if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        })
    }

    pub fn max_kkt(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.kkt).fold(0.0, f64::max)
    }

    pub fn fallbacks(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.fallback).count()
    }

    pub fn write_trajectory_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "step".to_string(),
            "time".into(),
            "q_a".into(),
            "kla5".into(),
        ];
        header.extend(MEASUREMENT_INDICES.iter().map(|&i| state_name(i)));
        header.extend(["c", "eq_rate", "oci_rate", "solve_ms", "kkt_residual"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), format!("{:.9}", r.time)];
            rec.push(format!("{:e}", r.u.q_a));
            rec.push(format!("{:e}", r.u.kla5));
            rec.extend(r.y.as_slice().iter().map(|v| format!("{v:e}")));
            for v in [
                r.rates.stage_cost,
                r.rates.eq_rate,
                r.rates.oci_rate,
                r.solve_ms,
                r.kkt,
            ] {
                rec.push(format!("{v:e}"));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate `cfg.days` of sampled operation from `initial` (time reset to 0)
/// under `policy`, with the weather series supplying the influent. A plant
/// failure ends the run early; the report then covers the completed steps.
pub fn run_closed_loop(
    initial: &PlantState,
    params: &PlantParams,
    weather: &WeatherSeries,
    policy: &mut dyn Policy,
    cfg: &ClosedLoopConfig,
) -> Result<ClosedLoopRun> {
    let steps = (cfg.days / SAMPLE_DAYS).round() as usize;
    if steps == 0 {
        return Err(Error::Config(format!(
            "closed-loop run of {} days has no steps",
            cfg.days
        )));
    }
    let mut x = initial.clone();
    x.time = 0.0;
    let y0 = measure(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.map_or(0, |n| n.seed));

    let mut rows = Vec::with_capacity(steps);
    let mut diagnostics = Vec::new();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut aborted = None;
    let mut last_u = ControlInput::SETTLE;
    let mut completed = 0;
    for k in 0..steps {
        let t = k as f64 * SAMPLE_DAYS;
        let d = weather.disturbance_at(t)?;
        let y_true = measure(&x);
        let y_seen = match &cfg.noise {
            Some(n) => n.perturb_measurement(&y_true, &y0, &mut rng),
            None => y_true,
        };
        let (u, diag) = match policy.act(k, &y_seen, &d) {
            Ok(r) => r,
            Err(e) => {
                aborted = Some((k, e.to_string()));
                break;
            }
        };
        let rates = stage_cost(&y_true, &u, &d, params, &cfg.weights);
        samples.push(IndexSample {
            time: t,
            rates,
            stored_solids: x.stored_solids(params),
        });
        rows.push(TrajectoryRow {
            step: k,
            time: t,
            u,
            y: y_seen,
            rates,
            solve_ms: diag.map_or(0.0, |d| d.control_ms),
            kkt: diag.map_or(0.0, |d| d.kkt),
        });
        if let Some(d) = diag {
            diagnostics.push(d);
        }
        last_u = u;
        match step(&x, &u, &d, SAMPLE_DAYS, params) {
            Ok((next, _)) => x = next,
            Err(e) => {
                samples.pop();
                rows.pop();
                aborted = Some((k, e.to_string()));
                break;
            }
        }
        if let Some(n) = &cfg.noise {
            n.perturb_state(&mut x, initial, &mut rng);
        }
        completed = k + 1;
    }
    if let Some((k, reason)) = &aborted {
        warn!("{} run stopped at step {k}: {reason}", policy.name());
    }
    let t_end = completed as f64 * SAMPLE_DAYS;
    let report = if completed > 0 {
        let d = weather.disturbance_at(t_end)?;
        samples.truncate(completed);
        samples.push(IndexSample {
            time: t_end,
            rates: stage_cost(&measure(&x), &last_u, &d, params, &cfg.weights),
            stored_solids: x.stored_solids(params),
        });
        let mut report = windowed_report(&samples, 0.0, t_end)?;
        if !diagnostics.is_empty() {
            report.mean_solve_ms =
                diagnostics.iter().map(|d| d.control_ms).sum::<f64>() / diagnostics.len() as f64;
        }
        report
    } else {
        WindowReport::default()
    };
    Ok(ClosedLoopRun {
        method: policy.name().to_string(),
        rows,
        diagnostics,
        report,
        final_state: x,
        aborted,
    })
}
