use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MeasurementVector, PlantState, N_STATES};

/// Additive Gaussian noise. Standard deviations are fractions of a reference
/// state and of its measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub process: f64,
    pub measurement: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process: 0.001,
            measurement: 0.0005,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// Perturb every state by `process * |reference|`, keeping it nonnegative.
    pub fn perturb_state<R: Rng>(&self, x: &mut PlantState, reference: &PlantState, rng: &mut R) {
        for i in 0..N_STATES {
            let e: f64 = StandardNormal.sample(rng);
            x.x[i] = (x.x[i] + self.process * reference.x[i].abs() * e).max(0.0);
        }
    }

    pub fn perturb_measurement<R: Rng>(
        &self,
        y: &MeasurementVector,
        reference: &MeasurementVector,
        rng: &mut R,
    ) -> MeasurementVector {
        let mut out = *y;
        for (v, r) in out.0.iter_mut().zip(reference.0) {
            let e: f64 = StandardNormal.sample(rng);
            *v += self.measurement * r.abs() * e;
        }
        out
    }
}
