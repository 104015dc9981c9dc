use serde::{Deserialize, Serialize};

use super::asm1::Asm1Params;
use super::N_COMPARTMENTS;
use crate::error::{Error, Result};

/// Double-exponential settling velocity constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TakacsParams {
    /// Maximum practical settling velocity (m/day).
    pub v0_max: f64,
    /// Maximum Vesilind settling velocity (m/day).
    pub v0: f64,
    /// Hindered zone settling parameter (m3/g SS).
    pub r_h: f64,
    /// Flocculant zone settling parameter (m3/g SS).
    pub r_p: f64,
    /// Non-settleable fraction of the feed solids.
    pub f_ns: f64,
    /// Threshold concentration above which clarification flux is limited (g/m3).
    pub x_threshold: f64,
}

impl Default for TakacsParams {
    fn default() -> Self {
        Self {
            v0_max: 250.0,
            v0: 474.0,
            r_h: 0.000576,
            r_p: 0.00286,
            f_ns: 0.00228,
            x_threshold: 3000.0,
        }
    }
}

/// Plant geometry, fixed flows and biokinetic constants.
///
/// Every field can be overridden from a configuration file; missing keys keep
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Compartment volumes V1..V5 (m3).
    pub volumes: [f64; N_COMPARTMENTS],
    /// Wastage flow (m3/day).
    pub q_w: f64,
    /// External (return sludge) recycle flow (m3/day).
    pub q_r: f64,
    /// Settler cross-sectional area (m2).
    pub settler_area: f64,
    /// Height of each settler layer (m).
    pub layer_height: f64,
    /// Oxygen transfer coefficients of compartments 1..4 (1/day); compartment 5
    /// is manipulated.
    pub kla_fixed: [f64; 4],
    /// Oxygen saturation concentration (g/m3).
    pub so_sat: f64,
    pub asm1: Asm1Params,
    pub takacs: TakacsParams,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            volumes: [1000.0, 1000.0, 1333.0, 1333.0, 1333.0],
            q_w: 385.0,
            q_r: 18_846.0,
            settler_area: 1500.0,
            layer_height: 0.4,
            kla_fixed: [0.0, 0.0, 240.0, 240.0],
            so_sat: 8.0,
            asm1: Asm1Params::default(),
            takacs: TakacsParams::default(),
        }
    }
}

impl PlantParams {
    pub fn kla(&self, kla5: f64) -> [f64; N_COMPARTMENTS] {
        let k = self.kla_fixed;
        [k[0], k[1], k[2], k[3], kla5]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self
            .volumes
            .iter()
            .chain([self.settler_area, self.layer_height, self.so_sat].iter())
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::Config(
                "volumes, settler area, layer height and S_O saturation must be positive".into(),
            ));
        }
        if self.q_w < 0.0 || self.q_r < 0.0 || self.kla_fixed.iter().any(|k| *k < 0.0) {
            return Err(Error::Config("flows and KLa must be nonnegative".into()));
        }
        self.asm1.validate()
    }
}
