use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use log::{info, warn};
use wwtp_empc::dioko::{
    read_dataset, write_dataset, write_dataset_csv, write_loss_curve, DIOKOModel, Dataset,
};
use wwtp_empc::empc::ClosedLoopRun;
use wwtp_empc::experiments::{
    self, evaluate as run_evaluation, loss_band, reference_comparison, row, write_evaluation_csv,
    write_loss_band, write_reference_csv, write_sensitivity_csv, EvaluationRow, ExperimentConfig,
    NamedModel, SweepOutcome,
};
use wwtp_empc::influent::Weather;
use wwtp_empc::plant::{write_state_binary, write_state_csv, PlantState};

use crate::manifest::{file_hash, input_hash, Manifest};
use crate::ModelSource;

pub struct Context {
    pub command: &'static str,
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    failures: Vec<String>,
    seeds: Vec<u64>,
}

impl Context {
    pub fn new(
        command: &'static str,
        cfg: ExperimentConfig,
        out: PathBuf,
        config_path: Option<PathBuf>,
    ) -> Result<Self> {
        let mut ctx = Self {
            command,
            cfg,
            out,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            failures: Vec::new(),
            seeds: Vec::new(),
        };
        if let Some(p) = config_path {
            ctx.input(&p)?;
        }
        Ok(ctx)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        if let Some(dir) = p.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        self.outputs.push(p.clone());
        p
    }

    fn fail(&mut self, what: String) {
        warn!("{what}");
        self.failures.push(what);
    }

    /// Write the configuration snapshot and manifest; returns failed sub-runs.
    pub fn finish(mut self) -> Result<Vec<String>> {
        let config_toml = toml::to_string(&self.cfg)?;
        let snapshot = self.path("config.toml");
        std::fs::write(&snapshot, &config_toml)?;
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let name = p.strip_prefix(&self.out).unwrap_or(p).display().to_string();
            outputs.insert(name, file_hash(p)?);
        }
        let manifest = Manifest {
            tool: "wwtp-empc",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            seeds: self.seeds.clone(),
            input_hash: input_hash(&config_toml, &self.inputs),
            inputs: self.inputs.clone(),
            outputs,
            failures: self.failures.clone(),
            config: self.cfg.clone(),
        };
        let path = self.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        info!("wrote {}", path.display());
        Ok(self.failures)
    }
}

fn steady_state(ctx: &Context) -> Result<PlantState> {
    info!("settling the plant");
    Ok(experiments::settle(&ctx.cfg.plant)?)
}

pub fn settle(ctx: &mut Context) -> Result<()> {
    let x0 = steady_state(ctx)?;
    let bin = ctx.path("steady_state.bin");
    write_state_binary(&bin, &x0)?;
    let csv = ctx.path("steady_state.csv");
    write_state_csv(&csv, &x0)?;
    let rows = reference_comparison(&x0);
    let worst = rows
        .iter()
        .max_by(|a, b| a.relative_deviation.total_cmp(&b.relative_deviation))
        .expect("non-empty state");
    info!(
        "largest deviation from the reference: {} ({:.2}%)",
        worst.state,
        100.0 * worst.relative_deviation
    );
    let cmp = ctx.path("reference_comparison.csv");
    write_reference_csv(&cmp, &rows)?;
    Ok(())
}

fn collect_dataset(ctx: &mut Context, weathers: &[Weather], noisy: bool) -> Result<Dataset> {
    let x0 = steady_state(ctx)?;
    let noise = noisy.then_some(ctx.cfg.noise);
    info!(
        "collecting {} samples from {:?}{}",
        ctx.cfg.collect.n_samples,
        weathers,
        if noisy { " with noise" } else { "" }
    );
    Ok(experiments::collect(&x0, &ctx.cfg, weathers, noise)?)
}

pub fn collect(
    ctx: &mut Context,
    weathers: Option<Vec<Weather>>,
    noisy: bool,
    csv: bool,
) -> Result<()> {
    let weathers = weathers.unwrap_or_else(|| ctx.cfg.collect.weathers.clone());
    ctx.seeds.push(ctx.cfg.seed);
    let ds = collect_dataset(ctx, &weathers, noisy)?;
    info!(
        "split sizes (samples): train {}, val {}, test {}",
        ds.split_bounds[0],
        ds.split_bounds[1] - ds.split_bounds[0],
        ds.n_samples() - ds.split_bounds[1]
    );
    let p = ctx.path("dataset.bin");
    write_dataset(&p, &ds)?;
    if csv {
        let p = ctx.path("dataset.csv");
        write_dataset_csv(&p, &ds)?;
    }
    Ok(())
}

fn dataset_from(
    ctx: &mut Context,
    path: Option<&Path>,
    weathers: &[Weather],
    noisy: bool,
) -> Result<Dataset> {
    match path {
        Some(p) => {
            ctx.input(p)?;
            read_dataset(p).with_context(|| format!("reading dataset {}", p.display()))
        }
        None => collect_dataset(ctx, weathers, noisy),
    }
}

/// Train `ctx.cfg.seeds` models; each seed's checkpoint and loss curve are
/// written under `prefix`.
fn train_seeds(ctx: &mut Context, ds: &Dataset, prefix: &str) -> Result<Vec<DIOKOModel>> {
    let mut models = Vec::new();
    let mut curves = Vec::new();
    let mut summary = csv::Writer::from_path(ctx.path(&format!("{prefix}train_summary.csv")))?;
    summary.write_record([
        "seed",
        "initial_val",
        "best_val",
        "best_epoch",
        "final_val",
        "seconds",
    ])?;
    for k in 0..ctx.cfg.seeds {
        let seed = ctx.cfg.seed + k as u64;
        ctx.seeds.push(seed);
        match experiments::train_model(ds, &ctx.cfg, seed) {
            Ok((model, report)) => {
                model.save(&ctx.path(&format!("{prefix}model_seed{seed}.bin")))?;
                write_loss_curve(
                    &ctx.path(&format!("{prefix}loss_seed{seed}.csv")),
                    &report.curve,
                )?;
                summary.write_record([
                    seed.to_string(),
                    format!("{:e}", report.initial_val),
                    format!("{:e}", report.best_val),
                    report.best_epoch.to_string(),
                    format!("{:e}", report.final_val),
                    format!("{:.2}", report.seconds),
                ])?;
                curves.push(report.curve);
                models.push(model);
            }
            Err(e) => ctx.fail(format!("training seed {seed}: {e}")),
        }
    }
    summary.flush()?;
    if !curves.is_empty() {
        write_loss_band(
            &ctx.path(&format!("{prefix}loss_band.csv")),
            &loss_band(&curves),
        )?;
    }
    Ok(models)
}

pub fn train(ctx: &mut Context, dataset: Option<PathBuf>) -> Result<()> {
    let weathers = ctx.cfg.collect.weathers.clone();
    let ds = dataset_from(ctx, dataset.as_deref(), &weathers, false)?;
    train_seeds(ctx, &ds, "")?;
    Ok(())
}

fn model_from(
    ctx: &mut Context,
    model: Option<&Path>,
    dataset: Option<&Path>,
    weathers: &[Weather],
    noisy: bool,
    prefix: &str,
) -> Result<Option<DIOKOModel>> {
    if let Some(p) = model {
        ctx.input(p)?;
        return Ok(Some(
            DIOKOModel::load(p).with_context(|| format!("loading model {}", p.display()))?,
        ));
    }
    let ds = dataset_from(ctx, dataset, weathers, noisy)?;
    let saved = ctx.cfg.seeds;
    ctx.cfg.seeds = 1;
    let mut models = train_seeds(ctx, &ds, prefix)?;
    ctx.cfg.seeds = saved;
    Ok(models.pop())
}

fn record_runs(
    ctx: &mut Context,
    runs: &[(EvaluationRow, ClosedLoopRun)],
    tag: &str,
) -> Result<()> {
    for (r, run) in runs {
        let stem = format!("{}_{}{}", r.method, r.weather, tag);
        run.write_trajectory_csv(&ctx.path(&format!("trajectories/{stem}.csv")))?;
        run.report
            .write_csv(&ctx.path(&format!("reports/{stem}.csv")))?;
        info!(
            "{} {}{}: {}",
            r.method,
            r.weather,
            tag,
            run.report.summary_line()
        );
        if let Some(k) = r.aborted_at {
            ctx.fail(format!(
                "{} on {}{} stopped at step {k}",
                r.method, r.weather, tag
            ));
        }
    }
    Ok(())
}

pub fn evaluate(ctx: &mut Context, source: &ModelSource) -> Result<()> {
    let weathers = ctx.cfg.collect.weathers.clone();
    let Some(model) = model_from(
        ctx,
        source.model.as_deref(),
        source.dataset.as_deref(),
        &weathers,
        false,
        "",
    )?
    else {
        return Ok(());
    };
    let x0 = steady_state(ctx)?;
    let models = [NamedModel {
        label: "dioko-empc",
        model: &model,
    }];
    let runs = run_evaluation(&x0, &ctx.cfg, &models, &ctx.cfg.weathers, None, true)?;
    record_runs(ctx, &runs, "")?;
    let rows: Vec<_> = runs.into_iter().map(|r| r.0).collect();
    write_evaluation_csv(&ctx.path("evaluation.csv"), &rows)?;
    Ok(())
}

pub fn robustness(
    ctx: &mut Context,
    source: &ModelSource,
    noisy_model: Option<PathBuf>,
) -> Result<()> {
    let weathers = ctx.cfg.collect.weathers.clone();
    let clean = model_from(
        ctx,
        source.model.as_deref(),
        source.dataset.as_deref(),
        &weathers,
        false,
        "clean_",
    )?;
    let noisy = model_from(ctx, noisy_model.as_deref(), None, &weathers, true, "noisy_")?;
    let (Some(clean), Some(noisy)) = (clean, noisy) else {
        return Ok(());
    };
    let x0 = steady_state(ctx)?;
    ctx.seeds.push(ctx.cfg.noise.seed);
    let clean_models = [NamedModel {
        label: "dioko-empc",
        model: &clean,
    }];
    let both = [
        NamedModel {
            label: "dioko-empc",
            model: &clean,
        },
        NamedModel {
            label: "dioko-empc-noisy-trained",
            model: &noisy,
        },
    ];
    let clean_runs = run_evaluation(&x0, &ctx.cfg, &clean_models, &ctx.cfg.weathers, None, true)?;
    let noisy_runs = run_evaluation(
        &x0,
        &ctx.cfg,
        &both,
        &ctx.cfg.weathers,
        Some(ctx.cfg.noise),
        true,
    )?;
    record_runs(ctx, &clean_runs, "")?;
    record_runs(ctx, &noisy_runs, "_noisy")?;
    let rows: Vec<_> = clean_runs
        .into_iter()
        .chain(noisy_runs)
        .map(|r| r.0)
        .collect();
    for &w in &ctx.cfg.weathers {
        let clean = rows
            .iter()
            .find(|r| r.method == "dioko-empc" && r.weather == w && !r.noisy);
        let noisy = rows
            .iter()
            .find(|r| r.method == "dioko-empc" && r.weather == w && r.noisy);
        if let (Some(c), Some(n)) = (clean, noisy) {
            info!(
                "{w}: noisy operation changes the stage cost by {:+.2}%",
                100.0 * (n.stage_cost / c.stage_cost - 1.0)
            );
        }
    }
    write_evaluation_csv(&ctx.path("robustness.csv"), &rows)?;
    Ok(())
}

pub fn sensitivity(ctx: &mut Context, dataset: Option<PathBuf>) -> Result<()> {
    let weathers = ctx.cfg.collect.weathers.clone();
    let ds = dataset_from(ctx, dataset.as_deref(), &weathers, false)?;
    ctx.seeds.push(ctx.cfg.seed);
    let rows = experiments::sensitivity(&ds, &ctx.cfg)?;
    for r in &rows {
        let flag = if r.outcome == SweepOutcome::Divergent {
            " (divergent)"
        } else {
            ""
        };
        info!(
            "{} = {}: final val {:.4e}{flag}",
            r.factor, r.value, r.final_val
        );
    }
    write_sensitivity_csv(&ctx.path("sensitivity.csv"), &rows)?;
    Ok(())
}

pub fn generalize(ctx: &mut Context) -> Result<()> {
    let dry = model_from(ctx, None, None, &[Weather::Dry], false, "dry_")?;
    let all = model_from(ctx, None, None, &Weather::ALL, false, "all_")?;
    let (Some(dry), Some(all)) = (dry, all) else {
        return Ok(());
    };
    let x0 = steady_state(ctx)?;
    let models = [
        NamedModel {
            label: "dioko-empc-dry",
            model: &dry,
        },
        NamedModel {
            label: "dioko-empc",
            model: &all,
        },
    ];
    let runs = run_evaluation(&x0, &ctx.cfg, &models, &Weather::ALL, None, true)?;
    record_runs(ctx, &runs, "")?;
    let rows: Vec<_> = runs.into_iter().map(|r| r.0).collect();
    for w in Weather::ALL {
        if let (Some(d), Some(a)) = (row(&rows, "dioko-empc-dry", w), row(&rows, "dioko-empc", w)) {
            info!(
                "{w}: dry-only {:.4e}, all-weather {:.4e}",
                d.stage_cost, a.stage_cost
            );
        }
    }
    write_evaluation_csv(&ctx.path("generalization.csv"), &rows)?;
    Ok(())
}
