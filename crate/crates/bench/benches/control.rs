use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use wwtp_empc::empc::{EMPCConfig, EMPCController};
use wwtp_empc::influent::InfluentRecord;
use wwtp_empc::plant::{measure, step, ControlInput, PlantParams, PlantState, SAMPLE_DAYS};
use wwtp_empc::qp::{solve, QPOptions};
use wwtp_empc_bench::{plant_sized_model, random_qp};

fn qp_solve(c: &mut Criterion) {
    let p = random_qp(60, 1);
    let opts = QPOptions::default();
    c.bench_function("qp_solve_n60", |b| {
        b.iter(|| solve(black_box(&p), None, &opts))
    });
}

fn plant_step(c: &mut Criterion) {
    let params = PlantParams::default();
    let x = PlantState::reference();
    let d = InfluentRecord::bsm1_constant();
    c.bench_function("plant_step_15min", |b| {
        b.iter(|| {
            step(
                black_box(&x),
                &ControlInput::SETTLE,
                &d,
                SAMPLE_DAYS,
                &params,
            )
            .unwrap()
        })
    });
}

fn control_step(c: &mut Criterion) {
    let model = plant_sized_model(0);
    let y = measure(&PlantState::reference());
    let d = InfluentRecord::bsm1_constant().to_vector();
    c.bench_function("empc_control_step", |b| {
        b.iter(|| {
            let mut ctl =
                EMPCController::new(&model, EMPCConfig::default(), ControlInput::SETTLE).unwrap();
            ctl.control_step(black_box(y.as_slice()), &d).unwrap()
        })
    });
}

criterion_group!(benches, qp_solve, plant_step, control_step);
criterion_main!(benches);
