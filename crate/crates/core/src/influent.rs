//! Influent disturbance series: loading, validation, zero-order-hold lookup
//! and an offline generator for dry, rain and storm weather.
//!
//! File format: one record per line, fields separated by commas and/or
//! whitespace, column order `time Q0 S_I S_S X_I X_S X_BH X_BA X_P S_O S_NO
//! S_NH S_ND X_ND S_ALK`. Lines starting with `#` and blank lines are ignored;
//! a first line that does not parse as numbers is treated as a header.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{Species, N_SPECIES, SAMPLE_DAYS, SPECIES_NAMES, STEPS_PER_DAY};

/// Known disturbance: inflow rate and its 13 concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluentRecord {
    /// Days.
    pub time: f64,
    /// Inflow Q0 (m3/day).
    pub q0: f64,
    /// Inlet concentrations in reactor species order.
    pub conc: [f64; N_SPECIES],
}

pub const N_DISTURBANCES: usize = 1 + N_SPECIES;

impl InfluentRecord {
    /// Flow-weighted average dry-weather influent of the benchmark.
    pub fn bsm1_constant() -> Self {
        Self {
            time: 0.0,
            q0: 18_446.0,
            conc: [
                30.0, 69.5, 51.2, 202.32, 28.17, 0.0, 0.0, 0.0, 0.0, 31.56, 6.95, 10.59, 7.0,
            ],
        }
    }

    /// `[Q0, Z0...]`, the 14-entry disturbance vector.
    pub fn to_vector(&self) -> [f64; N_DISTURBANCES] {
        let mut d = [0.0; N_DISTURBANCES];
        d[0] = self.q0;
        d[1..].copy_from_slice(&self.conc);
        d
    }

    pub fn from_vector(time: f64, d: &[f64]) -> Self {
        let mut conc = [0.0; N_SPECIES];
        conc.copy_from_slice(&d[1..N_DISTURBANCES]);
        Self {
            time,
            q0: d[0],
            conc,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.time.is_finite()
            || !self.q0.is_finite()
            || self.conc.iter().any(|c| !c.is_finite())
        {
            return Err("non-finite field".into());
        }
        if self.q0 < 0.0 {
            return Err(format!("negative Q0 {}", self.q0));
        }
        if let Some(k) = self.conc.iter().position(|c| *c < 0.0) {
            return Err(format!("negative {} {}", SPECIES_NAMES[k], self.conc[k]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Dry,
    Rain,
    Storm,
}

impl Weather {
    pub const ALL: [Weather; 3] = [Weather::Dry, Weather::Rain, Weather::Storm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Weather::Dry => "dry",
            Weather::Rain => "rain",
            Weather::Storm => "storm",
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dry" => Ok(Weather::Dry),
            "rain" | "rainy" => Ok(Weather::Rain),
            "storm" | "stormy" => Ok(Weather::Storm),
            other => Err(Error::Config(format!("unknown weather `{other}`"))),
        }
    }
}

/// Time-ordered influent records for one weather condition.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub weather: Weather,
    records: Vec<InfluentRecord>,
}

impl WeatherSeries {
    pub fn new(weather: Weather, records: Vec<InfluentRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("weather series has no records".into()));
        }
        for (i, w) in records.windows(2).enumerate() {
            if !(w[1].time > w[0].time) {
                return Err(Error::Config(format!(
                    "non-increasing time at record {}: {} after {}",
                    i + 1,
                    w[1].time,
                    w[0].time
                )));
            }
        }
        Ok(Self { weather, records })
    }

    pub fn records(&self) -> &[InfluentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.records[0].time
    }

    pub fn end(&self) -> f64 {
        self.records[self.records.len() - 1].time
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    /// Zero-order hold: the most recent record at or before `t`.
    pub fn disturbance_at(&self, t: f64) -> Result<InfluentRecord> {
        // Tolerate float drift of accumulated sample times.
        const EPS: f64 = 1e-9;
        if !(t >= self.start() - EPS && t <= self.end() + EPS) {
            return Err(Error::OutOfSpan {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let k = self.records.partition_point(|r| r.time <= t + EPS);
        Ok(self.records[k.saturating_sub(1)])
    }

    /// Flow-weighted average influent over the series (time-weighted flow,
    /// load-weighted concentrations), using hold semantics between records.
    pub fn flow_weighted_mean(&self) -> InfluentRecord {
        let mut vol = 0.0;
        let mut dur = 0.0;
        let mut load = [0.0; N_SPECIES];
        for w in self.records.windows(2) {
            let dt = w[1].time - w[0].time;
            dur += dt;
            vol += w[0].q0 * dt;
            for (l, c) in load.iter_mut().zip(w[0].conc.iter()) {
                *l += w[0].q0 * c * dt;
            }
        }
        if dur == 0.0 || vol == 0.0 {
            return self.records[0];
        }
        InfluentRecord {
            time: 0.0,
            q0: vol / dur,
            conc: load.map(|l| l / vol),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        write!(w, "# weather={}\n# time[day] Q0[m3/day]", self.weather)?;
        for name in SPECIES_NAMES {
            write!(w, " {name}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(w, "{:.6} {:.4}", r.time, r.q0)?;
            for c in r.conc {
                write!(w, " {c:.6}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Report produced by [`load_weather`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub rows: usize,
    pub start: f64,
    pub end: f64,
}

impl LoadReport {
    pub fn span(&self) -> f64 {
        self.end - self.start
    }
}

/// Read and validate an influent file.
pub fn load_weather(path: &Path, weather: Weather) -> Result<(WeatherSeries, LoadReport)> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    let mut first_data = true;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if first_data => {
                first_data = false;
                continue;
            }
            Err(e) => return Err(parse_err(line_no, format!("bad number: {e}"))),
        };
        first_data = false;
        if values.len() != 1 + N_DISTURBANCES {
            return Err(parse_err(
                line_no,
                format!(
                    "expected {} fields, found {}",
                    1 + N_DISTURBANCES,
                    values.len()
                ),
            ));
        }
        let rec = InfluentRecord::from_vector(values[0], &values[1..]);
        rec.validate().map_err(|m| parse_err(line_no, m))?;
        if let Some(prev) = records.last().map(|r: &InfluentRecord| r.time) {
            if !(rec.time > prev) {
                return Err(parse_err(
                    line_no,
                    format!("time {} does not increase past {}", rec.time, prev),
                ));
            }
        }
        records.push(rec);
    }
    let series = WeatherSeries::new(weather, records)?;
    let report = LoadReport {
        rows: series.len(),
        start: series.start(),
        end: series.end(),
    };
    Ok((series, report))
}

/// Deterministic synthetic influent at 15-minute resolution.
///
/// Dry weather follows a diurnal flow and load pattern with a weekend dip,
/// rescaled so that its flow-weighted mean equals
/// [`InfluentRecord::bsm1_constant`]. Rain adds long low-intensity events that
/// dilute the sewage; storm adds short intense events with a first-flush of
/// particulates. Wet-weather events start early (within the first two days)
/// and recur in the second week.
pub fn synthetic_weather(weather: Weather, days: f64, seed: u64) -> WeatherSeries {
    let n = (days * STEPS_PER_DAY as f64).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5_eed0_f1f1_u64);
    let target = InfluentRecord::bsm1_constant();
    let two_pi = std::f64::consts::TAU;

    let mut dry: Vec<InfluentRecord> = (0..n)
        .map(|k| {
            let t = k as f64 * SAMPLE_DAYS;
            let phase = t.fract();
            let weekday = (t / 7.0).fract() * 7.0;
            let weekend = if weekday >= 5.0 { 0.88 } else { 1.0 };
            let diurnal = 1.0
                + 0.28 * (two_pi * (phase - 0.30)).sin()
                + 0.07 * (2.0 * two_pi * (phase - 0.10)).sin();
            let jitter = 1.0 + 0.02 * (rng.random::<f64>() - 0.5);
            let q0 = diurnal * weekend * jitter;
            let load = 1.0 + 0.22 * (two_pi * (phase - 0.36)).sin();
            let mut conc = [0.0; N_SPECIES];
            for s in 0..N_SPECIES {
                let shape = match s {
                    x if x == Species::SI as usize || x == Species::SALK as usize => 1.0,
                    _ => load * (1.0 + 0.03 * (rng.random::<f64>() - 0.5)),
                };
                conc[s] = shape;
            }
            InfluentRecord { time: t, q0, conc }
        })
        .collect();

    // Rescale to the target flow-weighted mean; the last record only closes
    // the span and carries no weight.
    let weighted = &dry[..n - 1];
    let mean_q = weighted.iter().map(|r| r.q0).sum::<f64>() / weighted.len() as f64;
    let mut conc_scale = [0.0; N_SPECIES];
    for s in 0..N_SPECIES {
        let num: f64 = weighted.iter().map(|r| r.q0 * r.conc[s]).sum();
        let den: f64 = weighted.iter().map(|r| r.q0).sum();
        conc_scale[s] = target.conc[s] / (num / den);
    }
    for r in dry.iter_mut() {
        r.q0 *= target.q0 / mean_q;
        for s in 0..N_SPECIES {
            r.conc[s] *= conc_scale[s];
        }
    }

    let events: &[(f64, f64, f64)] = match weather {
        Weather::Dry => &[],
        // (start day, duration days, peak extra flow as a multiple of mean)
        Weather::Rain => &[(0.6, 1.1, 0.9), (8.0, 2.5, 0.7)],
        Weather::Storm => &[(0.9, 0.3, 2.2), (8.5, 0.25, 2.0), (10.5, 0.3, 2.4)],
    };
    let records = dry
        .into_iter()
        .map(|mut r| {
            let mut extra = 0.0;
            let mut flush = 0.0;
            for &(start, dur, peak) in events {
                let x = (r.time - start) / dur;
                if (0.0..1.0).contains(&x) {
                    let shape = (std::f64::consts::PI * x).sin().powi(2);
                    extra += peak * shape * target.q0;
                    if weather == Weather::Storm && x < 0.4 {
                        flush += 1.5 * (1.0 - x / 0.4);
                    }
                }
            }
            if extra > 0.0 {
                let dilution = r.q0 / (r.q0 + extra);
                for s in 0..N_SPECIES {
                    let particulate = matches!(s, 2..=6 | 11);
                    let keep = if s == Species::SALK as usize {
                        1.0
                    } else {
                        dilution
                    };
                    let boost = if particulate { 1.0 + flush } else { 1.0 };
                    r.conc[s] *= keep * boost;
                }
                r.q0 += extra;
            }
            r
        })
        .collect();
    WeatherSeries::new(weather, records).expect("generated times are increasing")
}
