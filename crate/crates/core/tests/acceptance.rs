//! End-to-end acceptance run. Every criterion is evaluated in order and
//! reported on one line; the test fails if any criterion fails.
//!
//! Trains four desk-scale plant models (three seeds on all-weather data, one
//! on dry-weather data), so expect a runtime of roughly 20 minutes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wwtp_empc::dioko::synthetic::LinearSystem;
use wwtp_empc::dioko::{
    train, training_loss, DIOKOModel, Dataset, Dims, ModelConfig, Scaling, Split, TrainConfig,
    Trajectory, WindowBatch,
};
use wwtp_empc::empc::{condense, standardized_move_weights, EMPCConfig};
use wwtp_empc::experiments::{self, row, EvaluationRow, ExperimentConfig, NamedModel};
use wwtp_empc::indices::{ae_rate, me_rate, oci_rate, pe_rate, IndexWeights, WindowReport};
use wwtp_empc::influent::Weather;
use wwtp_empc::nn::{max_relative_error, numerical_gradient, AdamConfig, Tape};
use wwtp_empc::plant::{
    measure, reactor_index, settler_index, LayerVar, PlantState, N_COMPARTMENTS, N_LAYERS,
    N_REACTOR_STATES,
};
use wwtp_empc::qp::{solve, QPOptions, QPProblem, QPStatus};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const VOLUMES: [f64; N_COMPARTMENTS] = [1000.0, 1000.0, 1333.0, 1333.0, 1333.0];

fn steady_state_reproduction(x0: &PlantState, seconds: f64) -> Outcome {
    let reference = PlantState::reference();
    let mut worst = (0.0f64, 0usize);
    for i in 0..N_REACTOR_STATES {
        let rel = (x0.x[i] - reference.x[i]).abs() / reference.x[i].abs();
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    let bottom = x0.x[settler_index(N_LAYERS, LayerVar::X)];
    let top = x0.x[settler_index(1, LayerVar::X)];
    let rel_bottom = (bottom - 6399.44).abs() / 6399.44;
    let rel_top = (top - 12.50).abs() / 12.50;
    let so5 = x0.x[reactor_index(4, wwtp_empc::plant::Species::SO)];
    check(
        worst.0 <= 0.10 && rel_bottom <= 0.10 && rel_top <= 0.10 && seconds < 120.0,
        format!(
            "worst reactor state {} off by {:.2}%, S_O5 {so5:.3}, settler X bottom {bottom:.2} ({:.2}%), top {top:.3} ({:.2}%), {seconds:.2} s",
            wwtp_empc::plant::state_name(worst.1),
            100.0 * worst.0,
            100.0 * rel_bottom,
            100.0 * rel_top
        ),
    )
}

fn index_arithmetic(reports: &[WindowReport]) -> Outcome {
    let w = IndexWeights::default();
    let kla = [0.0, 0.0, 240.0, 240.0, 84.0];
    let ae = ae_rate(&kla, &VOLUMES, 8.0);
    let pe = pe_rate(55_338.0, 18_846.0, 385.0, &w);
    let me = me_rate(&kla, &VOLUMES, &w);
    let identity = reports
        .iter()
        .map(|r| (r.oci - oci_rate(r.sp, r.ae, r.pe, r.me)).abs() / r.oci.abs().max(1.0))
        .fold(0.0, f64::max);
    check(
        (ae - 3341.39).abs() <= 0.01
            && (pe - 391.37).abs() <= 0.01
            && me == 240.0
            && identity <= 1e-9
            && !reports.is_empty(),
        format!(
            "AE {ae:.4}, PE {pe:.4}, ME {me}, OCI identity max deviation {identity:.1e} over {} reports",
            reports.len()
        ),
    )
}

fn autodiff_correctness() -> Outcome {
    let horizon = 3;
    let dims = Dims {
        ny: 3,
        nd: 1,
        nu: 2,
        latent: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 16;
    let mut r = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    };
    let traj = Trajectory {
        label: "toy".into(),
        y: r(n, 3),
        u: r(n, 2),
        d: r(n, 1),
        c: r(n, 1).column(0).to_owned(),
    };
    let ds = Dataset::new(vec![traj], horizon, 1.0, 0.0).map_err(|e| e.to_string())?;
    let windows = ds.windows(Split::Train);
    let batch = WindowBatch::gather(&ds, &windows[..6], horizon).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        hidden: vec![5, 5],
        latent: 4,
        horizon,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let draws = 100;
    for draw in 0..draws {
        let mut m = DIOKOModel::new(dims, cfg.clone(), Scaling::identity(&dims), draw)
            .map_err(|e| e.to_string())?;
        let mut prng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let flat: Vec<f64> = (0..m.params.num_scalars())
            .map(|_| prng.random_range(-0.6..0.6))
            .collect();
        m.params.set_flat(&flat).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let loss = training_loss(&m, &batch, &mut tape, 0.5).map_err(|e| e.to_string())?;
        let analytic = tape
            .backward(loss.total, &m.params)
            .map_err(|e| e.to_string())?;
        let numeric = numerical_gradient(&m.params, 1e-5, |p| {
            let mut probe = m.clone();
            probe.params = p.clone();
            let mut t = Tape::new();
            let l = training_loss(&probe, &batch, &mut t, 0.5).expect("loss");
            t.scalar(l.total)
        });
        worst = worst.max(max_relative_error(&analytic.flatten(), &numeric, 1e-2));
    }
    check(
        worst < 1e-5,
        format!("{draws} parameter draws, max relative gradient error {worst:.2e}"),
    )
}

/// Minimum of the objective over the lattice `lb + k * step` inside the box.
fn grid_minimum(p: &QPProblem, step: f64) -> f64 {
    let n = p.dim();
    let counts: Vec<usize> = (0..n)
        .map(|i| ((p.ub[i] - p.lb[i]) / step).round() as usize + 1)
        .collect();
    let h: Vec<f64> = p.h.iter().copied().collect();
    let g: Vec<f64> = p.g.to_vec();
    let mut idx = vec![0usize; n];
    let mut z = vec![0.0; n];
    let mut best = f64::INFINITY;
    loop {
        for i in 0..n {
            z[i] = (p.lb[i] + idx[i] as f64 * step).min(p.ub[i]);
        }
        let mut f = 0.0;
        for i in 0..n {
            let hz: f64 = (0..n).map(|j| h[i * n + j] * z[j]).sum();
            f += z[i] * (0.5 * hz + g[i]);
        }
        best = best.min(f);
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn qp_oracle(empc_kkt: f64, empc_qps: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let step = 1e-3;
    let mut worst = 0.0f64;
    for k in 0..200 {
        let n = 1 + k % 4;
        // lattice sizes stay in the millions
        let width_steps: usize = match n {
            1 | 2 => rng.random_range(200..=2000),
            3 => rng.random_range(60..=150),
            _ => rng.random_range(20..=40),
        };
        let m = Array2::from_shape_simple_fn((n, n), || 0.8 * rng.random_range(-1.0..1.0));
        let h = m.t().dot(&m);
        let h = (&h + &h.t()) * 0.5;
        let g = Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0));
        let lb = Array1::from_shape_simple_fn(n, || {
            (rng.random_range(-1.0..0.5) * 1000.0f64).round() / 1000.0
        });
        let ub = lb.mapv(|v| v + width_steps as f64 * step);
        let p = QPProblem::new(h, g, lb, ub).map_err(|e| e.to_string())?;
        let sol = solve(&p, None, &QPOptions::default());
        if sol.status != QPStatus::Optimal {
            return Err(format!("problem {k}: status {:?}", sol.status));
        }
        let grid = grid_minimum(&p, step);
        worst = worst.max((grid - sol.objective).abs());
    }
    check(
        worst <= 1e-5 && empc_kkt <= 1e-8 && empc_qps > 0,
        format!(
            "200 random QPs: max |grid - solver| {worst:.2e}; {empc_qps} closed-loop EMPC QPs (n = 60): max KKT residual {empc_kkt:.2e}"
        ),
    )
}

fn condensation_identity(model: &DIOKOModel, x0: &PlantState) -> Outcome {
    let cfg = EMPCConfig::default();
    let d = wwtp_empc::influent::InfluentRecord::bsm1_constant().to_vector();
    let psi0 = model
        .encode(measure(x0).as_slice(), &d)
        .map_err(|e| e.to_string())?;
    let qp = condense(model, psi0.view(), &cfg, None).map_err(|e| e.to_string())?;
    let r = standardized_move_weights(model, &cfg);
    let t = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let z = Array1::from_shape_fn(2 * t, |i| {
            rng.random_range(qp.problem.lb[i]..=qp.problem.ub[i])
        });
        let u = z
            .clone()
            .into_shape_with_order((t, 2))
            .expect("horizon x inputs");
        let psi = model.rollout(psi0.view(), &u);
        let mut direct: f64 = psi.rows().into_iter().map(|p| model.cost_head(p)).sum();
        for j in 0..t - 1 {
            for c in 0..2 {
                direct += r[c] * (u[[j + 1, c]] - u[[j, c]]).powi(2);
            }
        }
        let condensed = qp.objective(&z);
        worst = worst.max((condensed - direct).abs() / direct.abs().max(1e-300));
    }
    check(
        worst <= 1e-8,
        format!("100 input sequences, max relative deviation {worst:.2e}"),
    )
}

fn synthetic_convergence() -> Result<f64, String> {
    let sys = LinearSystem::default();
    let ds = sys.dataset(80, 200, 30, 1).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        hidden: vec![16, 16],
        latent: 4,
        horizon: 30,
        ..Default::default()
    };
    let mut m = DIOKOModel::new(
        LinearSystem::dims(4),
        cfg,
        ds.fit_scaling().map_err(|e| e.to_string())?,
        0,
    )
    .map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 100,
        batch_size: 32,
        adam: AdamConfig {
            lr: 1e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = train(&mut m, &ds, &tc).map_err(|e| e.to_string())?;
    Ok(report.best_val)
}

fn evaluation_line(rows: &[EvaluationRow], w: Weather) -> String {
    let get = |m: &str| row(rows, m, w).map_or(f64::NAN, |r| r.stage_cost);
    format!(
        "{w}: empc {:.4e}, constant {:.4e}, random {:.4e}",
        get("dioko-empc"),
        get("constant"),
        get("random")
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("{name} panicked: {msg}"))
        }
    }
}

#[test]
fn acceptance_criteria() {
    let cfg = ExperimentConfig::default().effective();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    let t = Instant::now();
    let x0 = experiments::settle(&cfg.plant).expect("settle");
    let settle_seconds = t.elapsed().as_secs_f64();
    results.push((
        1,
        "steady state",
        run("settle", || steady_state_reproduction(&x0, settle_seconds)),
    ));
    results.push((3, "autodiff", run("autodiff", autodiff_correctness)));

    // desk-scale models
    let all =
        experiments::collect(&x0, &cfg, &Weather::ALL, None).expect("collect all-weather data");
    let mut reports_c6 = Vec::new();
    let mut models = Vec::new();
    for seed in 0..3 {
        let (m, r) = experiments::train_model(&all, &cfg, seed).expect("train");
        eprintln!(
            "seed {seed}: val {:.4e} -> {:.4e} in {:.0} s",
            r.initial_val, r.final_val, r.seconds
        );
        reports_c6.push(r);
        models.push(m);
    }
    let synthetic = run("synthetic", || {
        synthetic_convergence().map(|v| v.to_string())
    });
    let c6 = match synthetic {
        Ok(v) => {
            let best: f64 = v.parse().expect("number");
            let ratios: Vec<f64> = reports_c6
                .iter()
                .map(|r| r.final_val / r.initial_val)
                .collect();
            check(
                best < 1e-3 && ratios.iter().all(|q| *q <= 0.1),
                format!(
                    "synthetic best validation loss {best:.2e}; plant final/initial validation loss per seed {:?}",
                    ratios.iter().map(|q| format!("{q:.4}")).collect::<Vec<_>>()
                ),
            )
        }
        Err(e) => Err(e),
    };
    results.push((6, "training convergence", c6));

    let model = &models[0];
    results.push((
        5,
        "condensation",
        run("condensation", || condensation_identity(model, &x0)),
    ));

    let named = [NamedModel {
        label: "dioko-empc",
        model,
    }];
    let clean =
        experiments::evaluate(&x0, &cfg, &named, &Weather::ALL, None, true).expect("evaluate");
    let clean_rows: Vec<EvaluationRow> = clean.iter().map(|r| r.0.clone()).collect();
    let empc_runs: Vec<_> = clean
        .iter()
        .filter(|r| r.0.method == "dioko-empc")
        .collect();
    let max_kkt = empc_runs.iter().map(|r| r.1.max_kkt()).fold(0.0, f64::max);
    let n_qps: usize = empc_runs.iter().map(|r| r.1.diagnostics.len()).sum();
    results.push((4, "QP oracle", run("qp", || qp_oracle(max_kkt, n_qps))));

    let c7 = {
        let get = |m: &str, w| row(&clean_rows, m, w).map(|r| r.stage_cost);
        let mut ok = true;
        for w in Weather::ALL {
            let (Some(e), Some(c), Some(r)) =
                (get("dioko-empc", w), get("constant", w), get("random", w))
            else {
                ok = false;
                continue;
            };
            let aborted = row(&clean_rows, "dioko-empc", w).is_some_and(|r| r.aborted_at.is_some());
            ok &= !aborted && e < c && e < r;
            if w == Weather::Dry {
                ok &= e <= 0.9 * c && e <= 0.8 * r;
            }
        }
        let detail = Weather::ALL
            .iter()
            .map(|&w| evaluation_line(&clean_rows, w))
            .collect::<Vec<_>>()
            .join("; ");
        check(ok, detail)
    };
    results.push((7, "closed-loop economics", c7));

    let dry_run = empc_runs
        .iter()
        .find(|r| r.0.weather == Weather::Dry)
        .map(|r| &r.1);
    let median = dry_run
        .and_then(|r| r.median_control_ms())
        .unwrap_or(f64::INFINITY);
    results.push((
        8,
        "timing",
        check(median < 50.0, format!("median control step {median:.3} ms")),
    ));

    let noisy = experiments::evaluate(&x0, &cfg, &named, &Weather::ALL, Some(cfg.noise), false)
        .expect("noisy evaluation");
    let c9 = {
        let mut ok = true;
        let mut parts = Vec::new();
        for w in Weather::ALL {
            let c = row(&clean_rows, "dioko-empc", w).map(|r| r.stage_cost);
            let n = noisy
                .iter()
                .find(|r| r.0.weather == w)
                .map(|r| r.0.stage_cost);
            match (c, n) {
                (Some(c), Some(n)) => {
                    let change = n / c - 1.0;
                    ok &= change < 0.15;
                    parts.push(format!("{w} {:+.2}%", 100.0 * change));
                }
                _ => ok = false,
            }
        }
        check(
            ok,
            format!("noisy vs clean stage cost: {}", parts.join(", ")),
        )
    };
    results.push((9, "robustness", c9));

    let dry_data =
        experiments::collect(&x0, &cfg, &[Weather::Dry], None).expect("collect dry data");
    let (dry_model, _) = experiments::train_model(&dry_data, &cfg, 0).expect("train dry-only");
    let dry_named = [NamedModel {
        label: "dioko-empc-dry",
        model: &dry_model,
    }];
    let dry_eval = experiments::evaluate(&x0, &cfg, &dry_named, &Weather::ALL, None, false)
        .expect("dry-only evaluation");
    let c10 = {
        let mut ok = true;
        let mut parts = Vec::new();
        for w in Weather::ALL {
            let d = dry_eval
                .iter()
                .find(|r| r.0.weather == w)
                .map(|r| r.0.stage_cost);
            let a = row(&clean_rows, "dioko-empc", w).map(|r| r.stage_cost);
            let c = row(&clean_rows, "constant", w).map(|r| r.stage_cost);
            let r = row(&clean_rows, "random", w).map(|r| r.stage_cost);
            let (Some(d), Some(a), Some(c), Some(r)) = (d, a, c, r) else {
                ok = false;
                continue;
            };
            ok &= a <= d;
            if w != Weather::Dry {
                ok &= d < c && d < r;
            }
            parts.push(format!("{w}: dry-only {d:.4e}, all-weather {a:.4e}"));
        }
        check(ok, parts.join("; "))
    };
    results.push((10, "generalization", c10));

    let mut reports: Vec<WindowReport> = clean.iter().map(|r| r.1.report).collect();
    reports.extend(noisy.iter().map(|r| r.1.report));
    reports.extend(dry_eval.iter().map(|r| r.1.report));
    results.push((
        2,
        "index arithmetic",
        run("indices", || index_arithmetic(&reports)),
    ));

    results.sort_by_key(|r| r.0);
    let mut failed = Vec::new();
    println!();
    for (k, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {k:>2} ({name}): PASS  {detail}"),
            Err(detail) => {
                println!("criterion {k:>2} ({name}): FAIL  {detail}");
                failed.push(*k);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
