//! Experiment pipelines shared by the command-line tool and the acceptance
//! suite: settling, data collection, multi-seed training, closed-loop
//! comparison against baselines, hyperparameter sweeps.

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dioko::{
    collect_dataset, train, CollectConfig, DIOKOModel, Dataset, Dims, LossCurve, ModelConfig,
    TrainConfig, TrainReport,
};
use crate::empc::{
    run_closed_loop, ClosedLoopConfig, ClosedLoopRun, ConstantPolicy, EMPCConfig, EMPCController,
    Policy, SequencePolicy,
};
use crate::error::{Error, Result};
use crate::excitation::{excitation_sequence, ExcitationConfig};
use crate::influent::{synthetic_weather, InfluentRecord, Weather};
use crate::plant::{
    settle_to_steady_state, state_names, ControlInput, NoiseConfig, PlantParams, PlantState,
    SAMPLE_DAYS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub learning_rates: Vec<f64>,
    pub latent_dims: Vec<usize>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-5, 1e-4, 1e-3, 1e-2],
            latent_dims: vec![30, 45, 60],
        }
    }
}

/// Every tunable of the pipeline. Defaults are the desk-scale settings;
/// [`ExperimentConfig::effective`] applies the full-scale overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independently initialized models to train.
    pub seeds: usize,
    pub full_scale: bool,
    pub plant: PlantParams,
    pub collect: CollectConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub empc: EMPCConfig,
    pub closed_loop: ClosedLoopConfig,
    pub weathers: Vec<Weather>,
    /// Seed of the evaluation influent series.
    pub weather_seed: u64,
    /// Seed of the random-input baseline.
    pub random_seed: u64,
    pub noise: NoiseConfig,
    pub sensitivity: SensitivityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            full_scale: false,
            plant: PlantParams::default(),
            collect: CollectConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 60,
                ..Default::default()
            },
            empc: EMPCConfig::default(),
            closed_loop: ClosedLoopConfig::default(),
            weathers: Weather::ALL.to_vec(),
            weather_seed: 42,
            random_seed: 7,
            noise: NoiseConfig::default(),
            sensitivity: SensitivityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full scale: 10^5 samples, 400 epochs, 14-day evaluation.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.full_scale {
            c.collect.n_samples = 100_000;
            c.train.epochs = 400;
            c.closed_loop.days = 14.0;
        }
        c.collect.horizon = c.model.horizon;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.empc.validate()?;
        if self.seeds == 0 {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.weathers.is_empty() {
            return Err(Error::Config("no evaluation weather selected".into()));
        }
        if self.model.latent == 0 || self.model.hidden.is_empty() {
            return Err(Error::Config(
                "model needs a latent size and hidden layers".into(),
            ));
        }
        Ok(())
    }
}

/// Open-loop settle under the average dry influent.
pub fn settle(params: &PlantParams) -> Result<PlantState> {
    settle_to_steady_state(
        params,
        &ControlInput::SETTLE,
        &InfluentRecord::bsm1_constant(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub state: String,
    pub reference: f64,
    pub simulated: f64,
    pub relative_deviation: f64,
}

/// Per-state deviation from the tabulated operating point.
pub fn reference_comparison(state: &PlantState) -> Vec<ReferenceRow> {
    let reference = PlantState::reference();
    state_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let (r, s) = (reference.x[i], state.x[i]);
            ReferenceRow {
                state: name,
                reference: r,
                simulated: s,
                relative_deviation: if r != 0.0 {
                    (s - r).abs() / r.abs()
                } else {
                    s.abs()
                },
            }
        })
        .collect()
}

pub fn write_reference_csv(path: &Path, rows: &[ReferenceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Collect a training dataset from the settled plant.
pub fn collect(
    x0: &PlantState,
    cfg: &ExperimentConfig,
    weathers: &[Weather],
    noise: Option<NoiseConfig>,
) -> Result<Dataset> {
    let c = CollectConfig {
        weathers: weathers.to_vec(),
        noise,
        seed: cfg.seed,
        ..cfg.collect.clone()
    };
    collect_dataset(x0, &cfg.plant, &cfg.closed_loop.weights, &c)
}

/// Fresh model for `dataset` with scaling fitted on its training split,
/// trained with initialization and shuffling seed `seed`.
pub fn train_model(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(DIOKOModel, TrainReport)> {
    let dims = Dims {
        ny: dataset.ny,
        nd: dataset.nd,
        nu: dataset.nu,
        latent: cfg.model.latent,
    };
    let mut model = DIOKOModel::new(dims, cfg.model.clone(), dataset.fit_scaling()?, seed)?;
    let report = train(
        &mut model,
        dataset,
        &TrainConfig {
            seed,
            ..cfg.train.clone()
        },
    )?;
    info!(
        "seed {seed}: val {:.4e} -> {:.4e} (best {:.4e} at epoch {}) in {:.1} s",
        report.initial_val, report.final_val, report.best_val, report.best_epoch, report.seconds
    );
    Ok((model, report))
}

/// Epoch-wise mean, minimum and maximum of several loss curves.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossBand {
    pub epoch: Vec<usize>,
    pub val_mean: Vec<f64>,
    pub val_min: Vec<f64>,
    pub val_max: Vec<f64>,
    pub train_mean: Vec<f64>,
}

pub fn loss_band(curves: &[LossCurve]) -> LossBand {
    let n = curves.iter().map(|c| c.epoch.len()).min().unwrap_or(0);
    let mut band = LossBand::default();
    for e in 0..n {
        let vals: Vec<f64> = curves.iter().map(|c| c.val[e]).collect();
        band.epoch.push(curves[0].epoch[e]);
        band.val_mean
            .push(vals.iter().sum::<f64>() / vals.len() as f64);
        band.val_min
            .push(vals.iter().copied().fold(f64::INFINITY, f64::min));
        band.val_max
            .push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        band.train_mean
            .push(curves.iter().map(|c| c.train[e]).sum::<f64>() / curves.len() as f64);
    }
    band
}

pub fn write_loss_band(path: &Path, band: &LossBand) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "val_mean", "val_min", "val_max", "train_mean"])?;
    for i in 0..band.epoch.len() {
        w.write_record([
            band.epoch[i].to_string(),
            format!("{:e}", band.val_mean[i]),
            format!("{:e}", band.val_min[i]),
            format!("{:e}", band.val_max[i]),
            format!("{:e}", band.train_mean[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One closed-loop run summarized for comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRow {
    pub method: String,
    pub weather: Weather,
    pub noisy: bool,
    pub stage_cost: f64,
    pub cumulative_eq: f64,
    pub cumulative_oci: f64,
    pub eq: f64,
    pub oci: f64,
    pub mean_solve_ms: f64,
    pub median_solve_ms: f64,
    pub max_kkt: f64,
    pub fallbacks: usize,
    pub steps: usize,
    pub aborted_at: Option<usize>,
}

impl EvaluationRow {
    pub fn from_run(run: &ClosedLoopRun, weather: Weather, noisy: bool) -> Self {
        let r = &run.report;
        Self {
            method: run.method.clone(),
            weather,
            noisy,
            stage_cost: r.cumulative_stage_cost,
            cumulative_eq: r.cumulative_eq,
            cumulative_oci: r.cumulative_oci,
            eq: r.eq,
            oci: r.oci,
            mean_solve_ms: r.mean_solve_ms,
            median_solve_ms: run.median_control_ms().unwrap_or(0.0),
            max_kkt: run.max_kkt(),
            fallbacks: run.fallbacks(),
            steps: r.steps,
            aborted_at: run.aborted.as_ref().map(|a| a.0),
        }
    }
}

/// A trained model under a method label.
pub struct NamedModel<'a> {
    pub label: &'a str,
    pub model: &'a DIOKOModel,
}

struct Labeled<P> {
    label: String,
    inner: P,
}

impl<P: Policy> Policy for Labeled<P> {
    fn name(&self) -> &str {
        &self.label
    }

    fn act(
        &mut self,
        step: usize,
        y: &crate::plant::MeasurementVector,
        d: &InfluentRecord,
    ) -> Result<(ControlInput, Option<crate::empc::StepDiagnostics>)> {
        self.inner.act(step, y, d)
    }
}

/// Random-input baseline sequence for a run of `days`.
pub fn random_inputs(days: f64, seed: u64) -> Result<Vec<ControlInput>> {
    let steps = (days / SAMPLE_DAYS).round() as usize;
    excitation_sequence(
        &ExcitationConfig {
            seed,
            ..Default::default()
        },
        steps,
    )
}

/// Run the constant-input baseline, the random-input baseline and every
/// model under EMPC on each weather. Runs execute one after another so that
/// the recorded solve times are not distorted by contention.
pub fn evaluate(
    x0: &PlantState,
    cfg: &ExperimentConfig,
    models: &[NamedModel<'_>],
    weathers: &[Weather],
    noise: Option<NoiseConfig>,
    include_baselines: bool,
) -> Result<Vec<(EvaluationRow, ClosedLoopRun)>> {
    let loop_cfg = ClosedLoopConfig {
        noise,
        ..cfg.closed_loop.clone()
    };
    let per_weather = |w: Weather| -> Result<Vec<(EvaluationRow, ClosedLoopRun)>> {
        let series = synthetic_weather(w, loop_cfg.days.max(1.0), cfg.weather_seed);
        let mut out = Vec::new();
        let mut record = |run: ClosedLoopRun| {
            if let Some((k, reason)) = &run.aborted {
                warn!("{} on {w} stopped at step {k}: {reason}", run.method);
            }
            out.push((EvaluationRow::from_run(&run, w, noise.is_some()), run));
        };
        if include_baselines {
            let mut constant = ConstantPolicy(ControlInput::SETTLE);
            record(run_closed_loop(
                x0,
                &cfg.plant,
                &series,
                &mut constant,
                &loop_cfg,
            )?);
            let mut random = SequencePolicy {
                label: "random".into(),
                inputs: random_inputs(loop_cfg.days, cfg.random_seed)?,
            };
            record(run_closed_loop(
                x0,
                &cfg.plant,
                &series,
                &mut random,
                &loop_cfg,
            )?);
        }
        for m in models {
            let ctl = EMPCController::new(m.model, cfg.empc.clone(), ControlInput::SETTLE)?;
            let mut policy = Labeled {
                label: m.label.to_string(),
                inner: ctl,
            };
            record(run_closed_loop(
                x0,
                &cfg.plant,
                &series,
                &mut policy,
                &loop_cfg,
            )?);
        }
        Ok(out)
    };
    let mut rows = Vec::new();
    for &w in weathers {
        rows.extend(per_weather(w)?);
    }
    Ok(rows)
}

pub fn write_evaluation_csv(path: &Path, rows: &[EvaluationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "weather",
        "noisy",
        "stage_cost",
        "cumulative_eq",
        "cumulative_oci",
        "eq",
        "oci",
        "mean_solve_ms",
        "median_solve_ms",
        "max_kkt",
        "fallbacks",
        "steps",
        "aborted_at",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.weather.to_string(),
            r.noisy.to_string(),
            format!("{:.6e}", r.stage_cost),
            format!("{:.6e}", r.cumulative_eq),
            format!("{:.6e}", r.cumulative_oci),
            format!("{:.6e}", r.eq),
            format!("{:.6e}", r.oci),
            format!("{:.4}", r.mean_solve_ms),
            format!("{:.4}", r.median_solve_ms),
            format!("{:.3e}", r.max_kkt),
            r.fallbacks.to_string(),
            r.steps.to_string(),
            r.aborted_at.map_or(String::new(), |k| k.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Find the row of `method` on `weather`.
pub fn row<'a>(
    rows: &'a [EvaluationRow],
    method: &str,
    weather: Weather,
) -> Option<&'a EvaluationRow> {
    rows.iter()
        .find(|r| r.method == method && r.weather == weather)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOutcome {
    Converged,
    /// Non-finite loss, or final validation loss above the initial one.
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub factor: String,
    pub value: f64,
    pub initial_val: f64,
    pub best_val: f64,
    pub final_val: f64,
    pub outcome: SweepOutcome,
}

/// One-factor-at-a-time sweep of learning rate and latent size around the
/// configured model. Sorted by final validation loss, divergent runs last.
pub fn sensitivity(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<SensitivityRow>> {
    let mut runs: Vec<(String, f64, ExperimentConfig)> = Vec::new();
    for &lr in &cfg.sensitivity.learning_rates {
        let mut c = cfg.clone();
        c.train.adam.lr = lr;
        runs.push(("learning_rate".into(), lr, c));
    }
    for &p in &cfg.sensitivity.latent_dims {
        let mut c = cfg.clone();
        c.model.latent = p;
        runs.push(("latent_dim".into(), p as f64, c));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (factor, value, c) in runs {
        let row = match train_model(dataset, &c, c.seed) {
            Ok((_, r)) => {
                let diverged = !r.final_val.is_finite() || r.final_val > r.initial_val;
                SensitivityRow {
                    factor,
                    value,
                    initial_val: r.initial_val,
                    best_val: r.best_val,
                    final_val: r.final_val,
                    outcome: if diverged {
                        SweepOutcome::Divergent
                    } else {
                        SweepOutcome::Converged
                    },
                }
            }
            Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_))) => {
                warn!("{factor} = {value} diverged: {e}");
                SensitivityRow {
                    factor,
                    value,
                    initial_val: f64::NAN,
                    best_val: f64::NAN,
                    final_val: f64::NAN,
                    outcome: SweepOutcome::Divergent,
                }
            }
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| {
        (a.outcome == SweepOutcome::Divergent)
            .cmp(&(b.outcome == SweepOutcome::Divergent))
            .then(a.final_val.total_cmp(&b.final_val))
    });
    Ok(rows)
}

pub fn write_sensitivity_csv(path: &Path, rows: &[SensitivityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
