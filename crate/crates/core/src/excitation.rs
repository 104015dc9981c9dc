//! Random excitation inputs for data collection: a base input drawn
//! uniformly from the admissible box and held for a fixed number of steps,
//! plus per-step Gaussian perturbation proportional to the base value.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ControlInput, KLA5_MAX, QA_MAX};

/// How the relative noise scale is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `scale * base` is the standard deviation.
    StdDev,
    /// `scale * base` is the variance.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    /// Steps between base-input resamples.
    pub hold: usize,
    /// Relative perturbation scale.
    pub noise_scale: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            hold: 20,
            noise_scale: 0.05,
            noise_kind: NoiseKind::StdDev,
            seed: 0,
        }
    }
}

impl ExcitationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hold == 0 {
            return Err(Error::Config("excitation hold must be >= 1".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("excitation noise scale must be >= 0".into()));
        }
        Ok(())
    }
}

fn perturb(rng: &mut ChaCha8Rng, base: f64, cfg: &ExcitationConfig) -> f64 {
    let spread = match cfg.noise_kind {
        NoiseKind::StdDev => cfg.noise_scale * base,
        NoiseKind::Variance => (cfg.noise_scale * base).sqrt(),
    };
    if spread > 0.0 {
        base + Normal::new(0.0, spread).expect("finite spread").sample(rng)
    } else {
        base
    }
}

/// `n_steps` excitation inputs, clipped to the input box after perturbation.
pub fn excitation_sequence(cfg: &ExcitationConfig, n_steps: usize) -> Result<Vec<ControlInput>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut base = ControlInput::LOWER;
    let mut out = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        if k % cfg.hold == 0 {
            base = ControlInput::new(
                rng.random_range(0.0..=QA_MAX),
                rng.random_range(0.0..=KLA5_MAX),
            );
        }
        let u = ControlInput::new(
            perturb(&mut rng, base.q_a, cfg),
            perturb(&mut rng, base.kla5, cfg),
        );
        out.push(u.clamped());
    }
    Ok(out)
}

pub fn write_excitation_csv(path: &Path, inputs: &[ControlInput]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "Qa", "KLa5"])?;
    for (k, u) in inputs.iter().enumerate() {
        w.write_record([k.to_string(), u.q_a.to_string(), u.kla5.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
