//! Effluent quality and operating cost indices, and the economic stage cost.
//!
//! Instantaneous rates are in per-day units. The window reporter turns a
//! sampled trajectory into time averages: state-driven rates (EQ, SP) by the
//! trapezoid rule, input-driven rates (AE, PE, ME) exactly, since inputs are
//! held constant over each sampling interval.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influent::InfluentRecord;
use crate::plant::{
    stream_solids, ControlInput, MeasurementVector, PlantParams, Species, N_COMPARTMENTS, N_SPECIES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexWeights {
    /// EQ weights for TSS, COD, S_NKj, S_NO, BOD.
    pub a: [f64; 5],
    /// Pumping weights for Q_a, Q_r, Q_w.
    pub b: [f64; 3],
    /// Mixing energy per m3 below the aeration threshold.
    pub m1: f64,
    /// Aeration threshold below which compartments need mixing (1/day).
    pub mixing_kla_threshold: f64,
    pub so_sat: f64,
    pub w_eq: f64,
    pub w_oci: f64,
    /// Composite constants.
    pub f_p: f64,
    pub i_xb: f64,
    pub i_xp: f64,
}

impl Default for IndexWeights {
    fn default() -> Self {
        Self {
            a: [2.0, 1.0, 30.0, 10.0, 2.0],
            b: [0.004, 0.008, 0.05],
            m1: 0.005,
            mixing_kla_threshold: 20.0,
            so_sat: 8.0,
            w_eq: 1.0,
            w_oci: 0.3,
            f_p: 0.08,
            i_xb: 0.08,
            i_xp: 0.06,
        }
    }
}

/// Composite effluent concentrations and flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CompositeEffluent {
    pub tss: f64,
    pub cod: f64,
    pub s_nkj: f64,
    pub s_no: f64,
    pub bod: f64,
    /// m3/day
    pub q_e: f64,
}

/// Instantaneous index rates at one sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IndexSnapshot {
    pub eq_rate: f64,
    pub sp_rate: f64,
    pub ae_rate: f64,
    pub pe_rate: f64,
    pub me_rate: f64,
    pub oci_rate: f64,
    pub stage_cost: f64,
}

fn composite_of_stream(z: &[f64; N_SPECIES], q_e: f64, w: &IndexWeights) -> CompositeEffluent {
    let g = |s: Species| z[s as usize];
    let biomass = g(Species::XBH) + g(Species::XBA);
    CompositeEffluent {
        tss: stream_solids(z),
        cod: g(Species::SS)
            + g(Species::SI)
            + g(Species::XS)
            + g(Species::XI)
            + biomass
            + g(Species::XP),
        bod: 0.25 * (g(Species::SS) + g(Species::XS) + (1.0 - w.f_p) * biomass),
        s_nkj: g(Species::SNH)
            + g(Species::SND)
            + g(Species::XND)
            + w.i_xb * biomass
            + w.i_xp * (g(Species::XP) + g(Species::XI)),
        s_no: g(Species::SNO),
        q_e,
    }
}

/// Effluent composites from the measured top layer.
pub fn composites(y: &MeasurementVector, q_e: f64, w: &IndexWeights) -> CompositeEffluent {
    composite_of_stream(&y.effluent(), q_e, w)
}

/// Effluent quality rate (kg pollution units/day).
pub fn eq_rate(c: &CompositeEffluent, w: &IndexWeights) -> f64 {
    let a = w.a;
    (a[0] * c.tss + a[1] * c.cod + a[2] * c.s_nkj + a[3] * c.s_no + a[4] * c.bod) * c.q_e / 1000.0
}

/// Sludge production rate of the wastage stream (kg/day).
pub fn sp_rate(wastage: &[f64; N_SPECIES], q_w: f64) -> f64 {
    stream_solids(wastage) * q_w / 1000.0
}

/// Aeration energy rate (kWh/day).
pub fn ae_rate(kla: &[f64; N_COMPARTMENTS], volumes: &[f64; N_COMPARTMENTS], so_sat: f64) -> f64 {
    so_sat / 1800.0 * volumes.iter().zip(kla).map(|(v, k)| v * k).sum::<f64>()
}

/// Pumping energy rate (kWh/day).
pub fn pe_rate(q_a: f64, q_r: f64, q_w: f64, w: &IndexWeights) -> f64 {
    w.b[0] * q_a + w.b[1] * q_r + w.b[2] * q_w
}

/// Mixing energy rate (kWh/day).
pub fn me_rate(
    kla: &[f64; N_COMPARTMENTS],
    volumes: &[f64; N_COMPARTMENTS],
    w: &IndexWeights,
) -> f64 {
    24.0 * volumes
        .iter()
        .zip(kla)
        .filter(|(_, k)| **k < w.mixing_kla_threshold)
        .map(|(v, _)| w.m1 * v)
        .sum::<f64>()
}

pub fn oci_rate(sp: f64, ae: f64, pe: f64, me: f64) -> f64 {
    5.0 * sp + ae + pe + me
}

/// All instantaneous rates and the stage cost at one instant.
pub fn stage_cost(
    y: &MeasurementVector,
    u: &ControlInput,
    d: &InfluentRecord,
    params: &PlantParams,
    w: &IndexWeights,
) -> IndexSnapshot {
    let q_e = (d.q0 - params.q_w).max(0.0);
    let eq = eq_rate(&composites(y, q_e, w), w);
    let sp = sp_rate(&y.wastage(), params.q_w);
    let kla = params.kla(u.kla5);
    let ae = ae_rate(&kla, &params.volumes, w.so_sat);
    let pe = pe_rate(u.q_a, params.q_r, params.q_w, w);
    let me = me_rate(&kla, &params.volumes, w);
    let oci = oci_rate(sp, ae, pe, me);
    IndexSnapshot {
        eq_rate: eq,
        sp_rate: sp,
        ae_rate: ae,
        pe_rate: pe,
        me_rate: me,
        oci_rate: oci,
        stage_cost: w.w_eq * eq + w.w_oci * oci,
    }
}

/// One sample of a trajectory as seen by the window reporter. Input-driven
/// rates describe the interval that starts at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexSample {
    pub time: f64,
    pub rates: IndexSnapshot,
    /// Suspended solids stored in the plant (g).
    pub stored_solids: f64,
}

/// Time-averaged indices over a window plus Table-8-style cumulative sums.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowReport {
    pub t0: f64,
    pub duration: f64,
    pub eq: f64,
    pub sp: f64,
    pub ae: f64,
    pub pe: f64,
    pub me: f64,
    pub oci: f64,
    /// Sum of per-step stage costs over the control steps in the window.
    pub cumulative_stage_cost: f64,
    pub cumulative_eq: f64,
    pub cumulative_oci: f64,
    pub steps: usize,
    pub mean_solve_ms: f64,
}

const TIME_EPS: f64 = 1e-9;

/// Average the sampled trajectory over `[t0, t0 + duration]`. Both window ends
/// must coincide with sample times.
pub fn windowed_report(samples: &[IndexSample], t0: f64, duration: f64) -> Result<WindowReport> {
    let find = |t: f64| samples.iter().position(|s| (s.time - t).abs() < TIME_EPS);
    let (first, last) = match (find(t0), find(t0 + duration)) {
        (Some(a), Some(b)) if b > a && duration > 0.0 => (a, b),
        _ => {
            return Err(Error::OutOfSpan {
                t: t0 + duration,
                start: samples.first().map_or(f64::NAN, |s| s.time),
                end: samples.last().map_or(f64::NAN, |s| s.time),
            })
        }
    };
    let window = &samples[first..=last];
    let mut eq = 0.0;
    let mut sp = 0.0;
    let mut ae = 0.0;
    let mut pe = 0.0;
    let mut me = 0.0;
    let mut cum_c = 0.0;
    let mut cum_eq = 0.0;
    let mut cum_oci = 0.0;
    for pair in window.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dt = b.time - a.time;
        eq += 0.5 * (a.rates.eq_rate + b.rates.eq_rate) * dt;
        sp += 0.5 * (a.rates.sp_rate + b.rates.sp_rate) * dt;
        ae += a.rates.ae_rate * dt;
        pe += a.rates.pe_rate * dt;
        me += a.rates.me_rate * dt;
        cum_c += a.rates.stage_cost;
        cum_eq += a.rates.eq_rate;
        cum_oci += a.rates.oci_rate;
    }
    let accumulation = (window[window.len() - 1].stored_solids - window[0].stored_solids) / 1000.0;
    let (eq, ae, pe, me) = (eq / duration, ae / duration, pe / duration, me / duration);
    let sp = (sp + accumulation) / duration;
    Ok(WindowReport {
        t0,
        duration,
        eq,
        sp,
        ae,
        pe,
        me,
        oci: oci_rate(sp, ae, pe, me),
        cumulative_stage_cost: cum_c,
        cumulative_eq: cum_eq,
        cumulative_oci: cum_oci,
        steps: window.len() - 1,
        mean_solve_ms: 0.0,
    })
}

impl WindowReport {
    /// Stage cost built from the window averages.
    pub fn average_stage_cost(&self, w: &IndexWeights) -> f64 {
        w.w_eq * self.eq + w.w_oci * self.oci
    }

    /// One row per index.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record(["index", "value", "unit"])?;
        let rows: [(&str, f64, &str); 10] = [
            ("EQ", self.eq, "kg/day"),
            ("SP", self.sp, "kg/day"),
            ("AE", self.ae, "kWh/day"),
            ("PE", self.pe, "kWh/day"),
            ("ME", self.me, "kWh/day"),
            ("OCI", self.oci, "-"),
            ("cumulative_stage_cost", self.cumulative_stage_cost, "-"),
            ("cumulative_EQ", self.cumulative_eq, "-"),
            ("cumulative_OCI", self.cumulative_oci, "-"),
            ("mean_solve_time", self.mean_solve_ms, "ms"),
        ];
        for (name, v, unit) in rows {
            wr.write_record([name.to_string(), format!("{v:.9e}"), unit.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Flat summary: stage cost, EQ, OCI, mean per-step solve time.
    pub fn summary_line(&self) -> String {
        format!(
            "stage_cost={:.4e} EQ={:.4e} OCI={:.4e} solve_time={:.4} s",
            self.cumulative_stage_cost,
            self.cumulative_eq,
            self.cumulative_oci,
            self.mean_solve_ms / 1000.0
        )
    }
}
