use wwtp_empc::dioko::{
    read_dataset, write_dataset, CollectConfig, DIOKOModel, ModelConfig, TrainConfig,
};
use wwtp_empc::empc::{condense, run_closed_loop, ClosedLoopConfig, EMPCConfig, EMPCController};
use wwtp_empc::experiments::{self, row, ExperimentConfig, NamedModel};
use wwtp_empc::indices::oci_rate;
use wwtp_empc::influent::{synthetic_weather, Weather};
use wwtp_empc::plant::{measure, ControlInput, PlantState, SAMPLE_DAYS};
use wwtp_empc::qp::{solve, QPStatus};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        collect: CollectConfig {
            n_samples: 600,
            episode_days: 2.0,
            ..Default::default()
        },
        model: ModelConfig {
            hidden: vec![16, 16],
            latent: 8,
            horizon: 8,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..Default::default()
        },
        empc: EMPCConfig {
            horizon: 8,
            ..Default::default()
        },
        closed_loop: ClosedLoopConfig {
            days: 0.5,
            ..Default::default()
        },
        ..Default::default()
    }
    .effective()
}

fn settled() -> PlantState {
    experiments::settle(&Default::default()).unwrap()
}

#[test]
fn collect_train_control_round_trip() {
    let cfg = small_config();
    let x0 = settled();
    let ds = experiments::collect(&x0, &cfg, &Weather::ALL, None).unwrap();
    assert_eq!(ds.n_samples(), 600);
    assert_eq!(ds.split_bounds, [480, 540]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    write_dataset(&path, &ds).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);

    let (model, report) = experiments::train_model(&ds, &cfg, 1).unwrap();
    assert_eq!(report.curve.epoch.len(), cfg.train.epochs + 1);
    assert!(report.best_val <= report.initial_val);

    let model_path = dir.path().join("m.bin");
    model.save(&model_path).unwrap();
    let loaded = DIOKOModel::load(&model_path).unwrap();

    let named = [
        NamedModel {
            label: "dioko-empc",
            model: &model,
        },
        NamedModel {
            label: "reloaded",
            model: &loaded,
        },
    ];
    let runs = experiments::evaluate(&x0, &cfg, &named, &[Weather::Dry], None, true).unwrap();
    assert_eq!(runs.len(), 4);
    let steps = (cfg.closed_loop.days / SAMPLE_DAYS).round() as usize;
    for (r, run) in &runs {
        assert_eq!(r.steps, steps, "{}", r.method);
        assert!(run.aborted.is_none());
        let rep = &run.report;
        assert!((rep.oci - oci_rate(rep.sp, rep.ae, rep.pe, rep.me)).abs() <= 1e-9 * rep.oci);
        for tr in &run.rows {
            assert!(tr.u.in_bounds());
        }
    }
    let a = row(
        &runs.iter().map(|r| r.0.clone()).collect::<Vec<_>>(),
        "dioko-empc",
        Weather::Dry,
    )
    .unwrap()
    .stage_cost;
    let b = runs
        .iter()
        .find(|r| r.0.method == "reloaded")
        .unwrap()
        .0
        .stage_cost;
    assert_eq!(a, b);
    let empc = runs.iter().find(|r| r.0.method == "dioko-empc").unwrap();
    assert!(empc.1.max_kkt() <= 1e-8);
    assert_eq!(empc.1.fallbacks(), 0);

    let csv = dir.path().join("traj.csv");
    empc.1.write_trajectory_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 4 + 41 + 5);
    assert_eq!(header[..4], ["step", "time", "q_a", "kla5"]);
    assert_eq!(text.lines().count(), steps + 1);
}

#[test]
fn closed_loop_is_deterministic_and_noise_is_seeded() {
    let cfg = small_config();
    let x0 = settled();
    let ds = experiments::collect(&x0, &cfg, &[Weather::Dry], None).unwrap();
    let (model, _) = experiments::train_model(&ds, &cfg, 0).unwrap();
    let series = synthetic_weather(Weather::Rain, 1.0, 3);
    let run = |noise| {
        let mut ctl = EMPCController::new(&model, cfg.empc.clone(), ControlInput::SETTLE).unwrap();
        let c = ClosedLoopConfig {
            noise,
            ..cfg.closed_loop.clone()
        };
        run_closed_loop(&x0, &cfg.plant, &series, &mut ctl, &c).unwrap()
    };
    let (a, b) = (run(None), run(None));
    assert_eq!(
        a.report.cumulative_stage_cost,
        b.report.cumulative_stage_cost
    );
    assert_eq!(a.final_state, b.final_state);
    let (n1, n2) = (run(Some(cfg.noise)), run(Some(cfg.noise)));
    assert_eq!(n1.final_state, n2.final_state);
    assert_ne!(n1.final_state, a.final_state);
}

#[test]
fn warm_starts_need_fewer_iterations() {
    let cfg = small_config();
    let x0 = settled();
    let ds = experiments::collect(&x0, &cfg, &[Weather::Dry], None).unwrap();
    let (model, _) = experiments::train_model(&ds, &cfg, 2).unwrap();
    let empc = EMPCConfig::default();
    let y = measure(&x0);
    let d = wwtp_empc::influent::InfluentRecord::bsm1_constant().to_vector();
    let psi0 = model.encode(y.as_slice(), &d).unwrap();
    let qp = condense(&model, psi0.view(), &empc, None).unwrap();
    let cold = solve(&qp.problem, None, &empc.qp);
    assert_eq!(cold.status, QPStatus::Optimal);
    // same latent state again: the shifted previous solution is a warm start
    let n = cold.z.len();
    let mut shifted = cold.z.clone();
    for i in 0..n - 2 {
        shifted[i] = cold.z[i + 2];
    }
    let warm = solve(&qp.problem, Some(&shifted), &empc.qp);
    assert_eq!(warm.status, QPStatus::Optimal);
    assert!(
        warm.iterations <= cold.iterations,
        "{} > {}",
        warm.iterations,
        cold.iterations
    );
    let exact = solve(&qp.problem, Some(&cold.z), &empc.qp);
    assert_eq!(exact.iterations, 0);
}

#[test]
fn desk_scale_split_sizes() {
    let x0 = settled();
    let cfg = ExperimentConfig::default().effective();
    let ds = experiments::collect(&x0, &cfg, &Weather::ALL, None).unwrap();
    assert_eq!(ds.n_samples(), 10_000);
    assert_eq!(ds.split_bounds, [8_000, 9_000]);
}
