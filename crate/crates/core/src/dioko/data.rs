//! Recorded closed-loop-free plant trajectories and the training windows cut
//! from them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{info, warn};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scaling, Standardizer};
use crate::error::{Error, Result};
use crate::excitation::{excitation_sequence, ExcitationConfig};
use crate::indices::{stage_cost, IndexWeights};
use crate::influent::{synthetic_weather, Weather, N_DISTURBANCES};
use crate::plant::{
    measure, step, NoiseConfig, PlantParams, PlantState, N_MEASUREMENTS, SAMPLE_DAYS, STEPS_PER_DAY,
};

/// One recorded episode; row `k` of every column belongs to sample instant `k`
/// and `u[k]` is the input applied from `k` to `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub label: String,
    pub y: Array2<f64>,
    pub u: Array2<f64>,
    pub d: Array2<f64>,
    pub c: Array1<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    fn truncate(&mut self, n: usize) {
        use ndarray::s;
        self.y = self.y.slice(s![..n, ..]).to_owned();
        self.u = self.u.slice(s![..n, ..]).to_owned();
        self.d = self.d.slice(s![..n, ..]).to_owned();
        self.c = self.c.slice(s![..n]).to_owned();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Start of a window: samples `start..=start + horizon` of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub episode: usize,
    pub start: usize,
}

/// Episodes in chronological order with a chronological train/val/test split
/// over the concatenated samples. A window belongs to a split only if all of
/// its samples do, so splits never share samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ny: usize,
    pub nd: usize,
    pub nu: usize,
    pub horizon: usize,
    pub episodes: Vec<Trajectory>,
    /// Global sample indices where validation and test begin.
    pub split_bounds: [usize; 2],
}

impl Dataset {
    /// Split by fractions of the total sample count.
    pub fn new(episodes: Vec<Trajectory>, horizon: usize, train: f64, val: f64) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::EmptySplit("all".into()))?;
        let (ny, nd, nu) = (first.y.ncols(), first.d.ncols(), first.u.ncols());
        for e in &episodes {
            let n = e.len();
            if e.y.dim() != (n, ny) || e.d.dim() != (n, nd) || e.u.dim() != (n, nu) {
                return Err(Error::Shape {
                    context: format!("episode `{}`", e.label),
                    expected: format!("{n} rows of y {ny}, d {nd}, u {nu}"),
                    got: format!("y {:?}, d {:?}, u {:?}", e.y.dim(), e.d.dim(), e.u.dim()),
                });
            }
        }
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::Config(format!("bad split fractions {train}, {val}")));
        }
        let total: usize = episodes.iter().map(Trajectory::len).sum();
        let b0 = (train * total as f64).round() as usize;
        let b1 = ((train + val) * total as f64).round() as usize;
        Ok(Self {
            ny,
            nd,
            nu,
            horizon,
            episodes,
            split_bounds: [b0, b1.max(b0)],
        })
    }

    pub fn n_samples(&self) -> usize {
        self.episodes.iter().map(Trajectory::len).sum()
    }

    fn split_of(&self, global: usize) -> Split {
        if global < self.split_bounds[0] {
            Split::Train
        } else if global < self.split_bounds[1] {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Windows of length `horizon + 1` with stride 1 inside `split`.
    pub fn windows(&self, split: Split) -> Vec<WindowRef> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (e, traj) in self.episodes.iter().enumerate() {
            let n = traj.len();
            for start in 0..n.saturating_sub(self.horizon) {
                let (a, b) = (offset + start, offset + start + self.horizon);
                if self.split_of(a) == split && self.split_of(b) == split {
                    out.push(WindowRef { episode: e, start });
                }
            }
            offset += n;
        }
        out
    }

    fn split_rows(&self, split: Split, pick: impl Fn(&Trajectory) -> &Array2<f64>) -> Array2<f64> {
        let width = pick(&self.episodes[0]).ncols();
        let mut data = Vec::new();
        let mut offset = 0;
        for traj in &self.episodes {
            for (k, row) in pick(traj).rows().into_iter().enumerate() {
                if self.split_of(offset + k) == split {
                    data.extend(row.iter());
                }
            }
            offset += traj.len();
        }
        Array2::from_shape_vec((data.len() / width.max(1), width), data).expect("row-major")
    }

    /// Standardization constants from the training samples.
    pub fn fit_scaling(&self) -> Result<Scaling> {
        let y = self.split_rows(Split::Train, |t| &t.y);
        if y.nrows() == 0 {
            return Err(Error::EmptySplit("train".into()));
        }
        let mut c = Vec::new();
        let mut offset = 0;
        for traj in &self.episodes {
            for (k, v) in traj.c.iter().enumerate() {
                if self.split_of(offset + k) == Split::Train {
                    c.push(*v);
                }
            }
            offset += traj.len();
        }
        let c = Array2::from_shape_vec((c.len(), 1), c).expect("column");
        Ok(Scaling {
            y: Standardizer::fit(&y),
            d: Standardizer::fit(&self.split_rows(Split::Train, |t| &t.d)),
            u: Standardizer::fit(&self.split_rows(Split::Train, |t| &t.u)),
            c: Standardizer::fit(&c),
        })
    }

    /// Copy with every channel standardized.
    pub fn standardized(&self, s: &Scaling) -> Dataset {
        let mut out = self.clone();
        for t in &mut out.episodes {
            s.y.apply_rows(&mut t.y);
            s.d.apply_rows(&mut t.d);
            s.u.apply_rows(&mut t.u);
            t.c.mapv_inplace(|c| s.cost_to_std(c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub weathers: Vec<Weather>,
    /// Total number of recorded samples.
    pub n_samples: usize,
    pub episode_days: f64,
    pub horizon: usize,
    pub excitation: ExcitationConfig,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Episodes allowed to diverge before collection gives up.
    pub max_failed_episodes: usize,
    /// Process and measurement noise; the stage cost is then computed from
    /// the noisy measurements.
    pub noise: Option<NoiseConfig>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            weathers: Weather::ALL.to_vec(),
            n_samples: 10_000,
            episode_days: 14.0,
            horizon: 30,
            excitation: ExcitationConfig::default(),
            seed: 0,
            train_fraction: 0.8,
            val_fraction: 0.1,
            max_failed_episodes: 10,
            noise: None,
        }
    }
}

fn episode(
    initial: &PlantState,
    params: &PlantParams,
    weights: &IndexWeights,
    weather: Weather,
    steps: usize,
    excitation: &ExcitationConfig,
    noise: Option<&NoiseConfig>,
    seed: u64,
) -> Result<Trajectory> {
    let days = steps as f64 * SAMPLE_DAYS;
    let series = synthetic_weather(weather, days.max(1.0), seed);
    let inputs = excitation_sequence(
        &ExcitationConfig {
            seed,
            ..*excitation
        },
        steps,
    )?;
    let mut y = Array2::zeros((steps, N_MEASUREMENTS));
    let mut u = Array2::zeros((steps, 2));
    let mut d = Array2::zeros((steps, N_DISTURBANCES));
    let mut c = Array1::zeros(steps);
    let mut x = initial.clone();
    x.time = 0.0;
    let y0 = measure(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ noise.map_or(0, |n| n.seed));
    for k in 0..steps {
        let t = k as f64 * SAMPLE_DAYS;
        let dk = series.disturbance_at(t)?;
        let yk = match noise {
            Some(n) => n.perturb_measurement(&measure(&x), &y0, &mut rng),
            None => measure(&x),
        };
        let snap = stage_cost(&yk, &inputs[k], &dk, params, weights);
        y.row_mut(k).assign(&Array1::from(yk.0.to_vec()));
        u.row_mut(k)
            .assign(&Array1::from(inputs[k].to_array().to_vec()));
        d.row_mut(k).assign(&Array1::from(dk.to_vector().to_vec()));
        c[k] = snap.stage_cost;
        x = step(&x, &inputs[k], &dk, SAMPLE_DAYS, params)?.0;
        if let Some(n) = noise {
            n.perturb_state(&mut x, initial, &mut rng);
        }
    }
    Ok(Trajectory {
        label: weather.to_string(),
        y,
        u,
        d,
        c,
    })
}

/// Simulate excitation episodes from `initial` under randomly chosen weather
/// until `n_samples` samples are recorded.
pub fn collect_dataset(
    initial: &PlantState,
    params: &PlantParams,
    weights: &IndexWeights,
    cfg: &CollectConfig,
) -> Result<Dataset> {
    if cfg.weathers.is_empty() {
        return Err(Error::Config(
            "no weather conditions to collect from".into(),
        ));
    }
    if cfg.n_samples == 0 {
        return Err(Error::EmptySplit("all".into()));
    }
    let per_episode = ((cfg.episode_days * STEPS_PER_DAY as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut episodes = Vec::new();
    let mut recorded = 0;
    let mut failures = 0;
    while recorded < cfg.n_samples {
        let weather = cfg.weathers[rng.random_range(0..cfg.weathers.len())];
        let seed: u64 = rng.random();
        let steps = per_episode.min(cfg.n_samples - recorded);
        match episode(
            initial,
            params,
            weights,
            weather,
            steps,
            &cfg.excitation,
            cfg.noise.as_ref(),
            seed,
        ) {
            Ok(mut traj) => {
                traj.truncate(steps);
                recorded += traj.len();
                info!(
                    "episode {} ({weather}): {} samples",
                    episodes.len(),
                    traj.len()
                );
                episodes.push(traj);
            }
            Err(e) => {
                failures += 1;
                warn!("discarding {weather} episode (seed {seed}): {e}");
                if failures > cfg.max_failed_episodes {
                    return Err(e);
                }
            }
        }
    }
    Dataset::new(episodes, cfg.horizon, cfg.train_fraction, cfg.val_fraction)
}

const MAGIC: &[u8; 8] = b"WWTPDS01";

/// Columnar binary: header of widths, horizon and split bounds, then per
/// episode its label and the y, u, d, c columns (little-endian f64).
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [ds.ny, ds.nd, ds.nu, ds.horizon, ds.episodes.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in ds.split_bounds {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for e in &ds.episodes {
        w.write_all(&(e.label.len() as u64).to_le_bytes())?;
        w.write_all(e.label.as_bytes())?;
        w.write_all(&(e.len() as u64).to_le_bytes())?;
        for col in [&e.y, &e.u, &e.d] {
            for c in col.columns() {
                for v in c {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        for v in &e.c {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b) as usize)
}

fn read_column_major(r: &mut impl Read, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut a = Array2::zeros((rows, cols));
    let mut b = [0u8; 8];
    for j in 0..cols {
        for i in 0..rows {
            r.read_exact(&mut b)?;
            a[[i, j]] = f64::from_le_bytes(b);
        }
    }
    Ok(a)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a dataset file",
            path.display()
        )));
    }
    let (ny, nd, nu, horizon, n_ep) = (
        read_u64(&mut r)?,
        read_u64(&mut r)?,
        read_u64(&mut r)?,
        read_u64(&mut r)?,
        read_u64(&mut r)?,
    );
    let split_bounds = [read_u64(&mut r)?, read_u64(&mut r)?];
    let mut episodes = Vec::with_capacity(n_ep);
    for _ in 0..n_ep {
        let len = read_u64(&mut r)?;
        let mut label = vec![0u8; len];
        r.read_exact(&mut label)?;
        let label = String::from_utf8(label).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = read_u64(&mut r)?;
        let y = read_column_major(&mut r, n, ny)?;
        let u = read_column_major(&mut r, n, nu)?;
        let d = read_column_major(&mut r, n, nd)?;
        let c = read_column_major(&mut r, n, 1)?.column(0).to_owned();
        episodes.push(Trajectory { label, y, u, d, c });
    }
    Ok(Dataset {
        ny,
        nd,
        nu,
        horizon,
        episodes,
        split_bounds,
    })
}

/// One row per sample: episode, step, split, weather, y, u, d, c.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["episode", "step", "split", "weather"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..ds.ny).map(|i| format!("y{i}")));
    header.extend((0..ds.nu).map(|i| format!("u{i}")));
    header.extend((0..ds.nd).map(|i| format!("d{i}")));
    header.push("c".into());
    w.write_record(&header)?;
    let mut offset = 0;
    for (e, t) in ds.episodes.iter().enumerate() {
        for k in 0..t.len() {
            let mut row = vec![
                e.to_string(),
                k.to_string(),
                ds.split_of(offset + k).as_str().to_string(),
                t.label.clone(),
            ];
            for col in [&t.y, &t.u, &t.d] {
                row.extend(col.row(k).iter().map(|v| format!("{v:e}")));
            }
            row.push(format!("{:e}", t.c[k]));
            w.write_record(&row)?;
        }
        offset += t.len();
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influent::InfluentRecord;
    use crate::plant::{ControlInput, MeasurementVector};

    fn toy(lengths: &[usize]) -> Vec<Trajectory> {
        lengths
            .iter()
            .enumerate()
            .map(|(e, &n)| Trajectory {
                label: format!("toy{e}"),
                y: Array2::from_shape_fn((n, 2), |(k, j)| (k * 10 + j + e * 1000) as f64),
                u: Array2::from_shape_fn((n, 1), |(k, _)| k as f64),
                d: Array2::zeros((n, 1)),
                c: Array1::from_shape_fn(n, |k| k as f64 * 0.5),
            })
            .collect()
    }

    #[test]
    fn minimal_sample_count_gives_one_window() {
        let ds = Dataset::new(toy(&[31]), 30, 1.0, 0.0).unwrap();
        assert_eq!(
            ds.windows(Split::Train),
            vec![WindowRef {
                episode: 0,
                start: 0
            }]
        );
    }

    #[test]
    fn splits_are_disjoint_and_chronological() {
        let ds = Dataset::new(toy(&[60, 40]), 5, 0.8, 0.1).unwrap();
        assert_eq!(ds.split_bounds, [80, 90]);
        let glob = |w: &WindowRef| w.episode * 60 + w.start;
        let train = ds.windows(Split::Train);
        let val = ds.windows(Split::Val);
        let test = ds.windows(Split::Test);
        assert!(train.iter().all(|w| glob(w) + 5 < 80));
        assert!(val.iter().all(|w| glob(w) >= 80 && glob(w) + 5 < 90));
        assert!(test.iter().all(|w| glob(w) >= 90));
        // no window crosses an episode boundary
        assert!(train
            .iter()
            .all(|w| w.start + 5 < ds.episodes[w.episode].len()));
        assert_eq!(train.len(), 55 + 15);
        assert_eq!(val.len(), 5);
    }

    #[test]
    fn scaling_uses_training_samples_only() {
        let ds = Dataset::new(toy(&[10]), 2, 0.5, 0.25).unwrap();
        let s = ds.fit_scaling().unwrap();
        assert_eq!(s.u.mean, vec![2.0]);
        assert_eq!(s.c.mean, vec![1.0]);
        let z = ds.standardized(&s);
        assert!((z.episodes[0].u[[2, 0]]).abs() < 1e-15);
    }

    #[test]
    fn binary_and_csv_export() {
        let ds = Dataset::new(toy(&[12, 7]), 3, 0.6, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.bin");
        write_dataset(&p, &ds).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds);
        let csvp = dir.path().join("ds.csv");
        write_dataset_csv(&csvp, &ds).unwrap();
        let text = std::fs::read_to_string(csvp).unwrap();
        assert_eq!(text.lines().count(), 1 + 19);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,train,toy0"));
    }

    #[test]
    fn collected_costs_recompute_exactly() {
        let params = PlantParams::default();
        let weights = IndexWeights::default();
        let cfg = CollectConfig {
            n_samples: 150,
            horizon: 10,
            seed: 3,
            ..Default::default()
        };
        let ds = collect_dataset(&PlantState::reference(), &params, &weights, &cfg).unwrap();
        assert_eq!(ds.n_samples(), 150);
        for t in &ds.episodes {
            for k in 0..t.len() {
                let y = MeasurementVector::from_slice(t.y.row(k).as_slice().unwrap());
                let u = ControlInput::from_slice(t.u.row(k).as_slice().unwrap());
                assert!(u.in_bounds());
                let d = InfluentRecord::from_vector(0.0, t.d.row(k).as_slice().unwrap());
                let c = stage_cost(&y, &u, &d, &params, &weights).stage_cost;
                assert_eq!(c.to_bits(), t.c[k].to_bits());
            }
        }
    }
}
