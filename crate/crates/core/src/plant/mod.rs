//! Five-compartment activated sludge reactor with a ten-layer secondary
//! settler, simulated as a 145-state ODE system.
//!
//! Flat state layout: 5 compartments x 13 species (species order
//! [`Species`]), followed by 10 settler layers x 8 variables (order
//! [`LayerVar`]). Settler layers are numbered top-down: layer 1 is the
//! effluent (top) layer, layer 10 the underflow (bottom) layer, and the feed
//! enters layer 5.

mod asm1;
mod checkpoint;
mod measure;
mod noise;
mod params;
mod settler;
mod sim;

pub use asm1::{reaction_rates, Asm1Params};
pub use checkpoint::{read_state_binary, read_state_csv, write_state_binary, write_state_csv};
pub use measure::{measure, stream_solids, MeasurementVector, MEASUREMENT_INDICES, N_MEASUREMENTS};
pub use noise::NoiseConfig;
pub use params::{PlantParams, TakacsParams};
pub use settler::stream_composition;
pub use settler::{settler_derivatives, settling_velocity, SettlerFlows};
pub use sim::{
    plant_derivatives, reactor_derivatives, settle_from, settle_to_steady_state, step,
    step_with_substep, StepReport, DEFAULT_SUBSTEP,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_COMPARTMENTS: usize = 5;
pub const N_SPECIES: usize = 13;
pub const N_LAYERS: usize = 10;
pub const N_LAYER_VARS: usize = 8;
pub const N_REACTOR_STATES: usize = N_COMPARTMENTS * N_SPECIES;
pub const N_SETTLER_STATES: usize = N_LAYERS * N_LAYER_VARS;
pub const N_STATES: usize = N_REACTOR_STATES + N_SETTLER_STATES;

/// Settler feed layer, 1-based from the top.
pub const FEED_LAYER: usize = 5;

pub const QA_MAX: f64 = 92_230.0;
pub const KLA5_MAX: f64 = 240.0;

/// Minutes per control interval.
pub const SAMPLE_MINUTES: f64 = 15.0;
pub const SAMPLE_DAYS: f64 = SAMPLE_MINUTES / 1440.0;
pub const STEPS_PER_DAY: usize = 96;

/// Reactor species in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Species {
    SI = 0,
    SS,
    XI,
    XS,
    XBH,
    XBA,
    XP,
    SO,
    SNO,
    SNH,
    SND,
    XND,
    SALK,
}

pub const SPECIES_NAMES: [&str; N_SPECIES] = [
    "S_I", "S_S", "X_I", "X_S", "X_BH", "X_BA", "X_P", "S_O", "S_NO", "S_NH", "S_ND", "X_ND",
    "S_ALK",
];

pub const SPECIES_UNITS: [&str; N_SPECIES] = [
    "gCOD/m3",
    "gCOD/m3",
    "gCOD/m3",
    "gCOD/m3",
    "gCOD/m3",
    "gCOD/m3",
    "gCOD/m3",
    "g(-COD)/m3",
    "gN/m3",
    "gN/m3",
    "gN/m3",
    "gN/m3",
    "mol/m3",
];

/// Settler layer variables: seven solubles followed by total sludge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum LayerVar {
    SI = 0,
    SS,
    SO,
    SNO,
    SNH,
    SND,
    SALK,
    X,
}

pub const LAYER_VAR_NAMES: [&str; N_LAYER_VARS] =
    ["S_I", "S_S", "S_O", "S_NO", "S_NH", "S_ND", "S_ALK", "X"];

pub const LAYER_VAR_UNITS: [&str; N_LAYER_VARS] = [
    "gCOD/m3",
    "gCOD/m3",
    "g(-COD)/m3",
    "gN/m3",
    "gN/m3",
    "gN/m3",
    "mol/m3",
    "gSS/m3",
];

/// Reactor species carried by each soluble settler variable.
pub const SOLUBLE_SPECIES: [Species; 7] = [
    Species::SI,
    Species::SS,
    Species::SO,
    Species::SNO,
    Species::SNH,
    Species::SND,
    Species::SALK,
];

/// Particulate species that make up the settler sludge.
pub const PARTICULATE_SPECIES: [Species; 5] = [
    Species::XI,
    Species::XS,
    Species::XBH,
    Species::XBA,
    Species::XP,
];

/// COD to suspended-solids conversion.
pub const COD_TO_SS: f64 = 0.75;

/// Flat index of species `s` in compartment `i` (0-based).
#[inline]
pub const fn reactor_index(compartment: usize, species: Species) -> usize {
    compartment * N_SPECIES + species as usize
}

/// Flat index of variable `v` in settler layer `layer` (1-based, top-down).
#[inline]
pub const fn settler_index(layer: usize, var: LayerVar) -> usize {
    N_REACTOR_STATES + (layer - 1) * N_LAYER_VARS + var as usize
}

/// Unit-bearing name of every flat state entry.
pub fn state_names() -> Vec<String> {
    let mut names = Vec::with_capacity(N_STATES);
    for c in 0..N_COMPARTMENTS {
        for s in 0..N_SPECIES {
            names.push(format!(
                "reactor{}.{}[{}]",
                c + 1,
                SPECIES_NAMES[s],
                SPECIES_UNITS[s]
            ));
        }
    }
    for l in 1..=N_LAYERS {
        for v in 0..N_LAYER_VARS {
            names.push(format!(
                "settler{:02}.{}[{}]",
                l, LAYER_VAR_NAMES[v], LAYER_VAR_UNITS[v]
            ));
        }
    }
    names
}

pub fn state_name(index: usize) -> String {
    state_names()
        .into_iter()
        .nth(index)
        .unwrap_or_else(|| format!("#{index}"))
}

/// Manipulated inputs: internal recycle flow and compartment-5 aeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Internal recycle flow Q_a (m3/day).
    pub q_a: f64,
    /// Oxygen transfer coefficient of compartment 5 (1/day).
    pub kla5: f64,
}

impl ControlInput {
    pub const LOWER: ControlInput = ControlInput {
        q_a: 0.0,
        kla5: 0.0,
    };
    pub const UPPER: ControlInput = ControlInput {
        q_a: QA_MAX,
        kla5: KLA5_MAX,
    };
    /// Constant inputs of the settling run. Under the average dry influent
    /// they hold compartment-5 S_O at 2 g/m3 and compartment-2 S_NO at 1 g/m3.
    pub const SETTLE: ControlInput = ControlInput {
        q_a: 16_167.6,
        kla5: 131.254,
    };

    pub fn new(q_a: f64, kla5: f64) -> Self {
        Self { q_a, kla5 }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.q_a, self.kla5]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            q_a: v[0],
            kla5: v[1],
        }
    }

    pub fn in_bounds(&self) -> bool {
        (0.0..=QA_MAX).contains(&self.q_a) && (0.0..=KLA5_MAX).contains(&self.kla5)
    }

    pub fn clamped(self) -> Self {
        Self {
            q_a: self.q_a.clamp(0.0, QA_MAX),
            kla5: self.kla5.clamp(0.0, KLA5_MAX),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_bounds() {
            Ok(())
        } else {
            Err(Error::InputOutOfBounds(format!(
                "Q_a = {}, KLa5 = {} outside [0, {QA_MAX}] x [0, {KLA5_MAX}]",
                self.q_a, self.kla5
            )))
        }
    }
}

/// The 13 concentrations of one reactor compartment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactorCompartmentState(pub [f64; N_SPECIES]);

impl ReactorCompartmentState {
    pub fn get(&self, s: Species) -> f64 {
        self.0[s as usize]
    }

    /// Particulate COD-to-SS weighted sum 0.75 (X_I + X_S + X_BH + X_BA + X_P).
    pub fn suspended_solids(&self) -> f64 {
        COD_TO_SS
            * PARTICULATE_SPECIES
                .iter()
                .map(|&s| self.0[s as usize])
                .sum::<f64>()
    }
}

/// The 8 variables of one settler layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlerLayerState(pub [f64; N_LAYER_VARS]);

impl SettlerLayerState {
    pub fn get(&self, v: LayerVar) -> f64 {
        self.0[v as usize]
    }
}

/// Full plant state plus simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: [f64; N_STATES],
    /// Simulation time in days.
    pub time: f64,
}

impl PlantState {
    pub fn zeros() -> Self {
        Self {
            x: [0.0; N_STATES],
            time: 0.0,
        }
    }

    pub fn from_slice(values: &[f64], time: f64) -> Result<Self> {
        if values.len() != N_STATES {
            return Err(Error::Shape {
                context: "plant state".into(),
                expected: N_STATES.to_string(),
                got: values.len().to_string(),
            });
        }
        let mut x = [0.0; N_STATES];
        x.copy_from_slice(values);
        Ok(Self { x, time })
    }

    pub fn compartment(&self, i: usize) -> ReactorCompartmentState {
        let mut c = [0.0; N_SPECIES];
        c.copy_from_slice(&self.x[i * N_SPECIES..(i + 1) * N_SPECIES]);
        ReactorCompartmentState(c)
    }

    /// Layer `layer` is 1-based, counted from the top.
    pub fn layer(&self, layer: usize) -> SettlerLayerState {
        let start = settler_index(layer, LayerVar::SI);
        let mut l = [0.0; N_LAYER_VARS];
        l.copy_from_slice(&self.x[start..start + N_LAYER_VARS]);
        SettlerLayerState(l)
    }

    pub fn reactor(&self, compartment: usize, s: Species) -> f64 {
        self.x[reactor_index(compartment, s)]
    }

    pub fn settler(&self, layer: usize, v: LayerVar) -> f64 {
        self.x[settler_index(layer, v)]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.x.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFiniteState {
                index,
                name: state_name(index),
            }),
            None => Ok(()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Total suspended solids stored in reactor and settler, in grams.
    pub fn stored_solids(&self, params: &PlantParams) -> f64 {
        let reactor: f64 = (0..N_COMPARTMENTS)
            .map(|i| self.compartment(i).suspended_solids() * params.volumes[i])
            .sum();
        let layer_volume = params.settler_area * params.layer_height;
        let settler: f64 = (1..=N_LAYERS)
            .map(|l| self.settler(l, LayerVar::X) * layer_volume)
            .sum();
        reactor + settler
    }

    /// Steady-state operating point tabulated for the benchmark (reactor
    /// values per compartment, settler values per layer).
    ///
    /// The settler table lists its index 1 as the thickened bottom layer
    /// (X = 6399.44) and index 10 as the clear top layer (X = 12.50); here
    /// that table is reversed into the top-down layer numbering.
    pub fn reference() -> Self {
        const REACTOR: [[f64; N_COMPARTMENTS]; N_SPECIES] = [
            [30.0, 30.0, 30.0, 30.0, 30.0],
            [3.24, 1.67, 1.22, 0.97, 0.81],
            [1149.21, 1149.21, 1149.21, 1149.21, 1149.21],
            [98.60, 91.70, 69.69, 54.45, 44.48],
            [2552.12, 2552.39, 2560.22, 2563.33, 2562.87],
            [151.67, 151.53, 152.69, 153.71, 154.17],
            [446.96, 448.12, 449.67, 451.22, 452.77],
            [7.696e-3, 6.027e-5, 1.63, 2.47, 2.00],
            [3.51, 1.00, 6.23, 11.07, 13.52],
            [11.83, 12.55, 7.32, 2.78, 0.67],
            [1.36, 0.79, 0.83, 0.75, 0.66],
            [6.18, 5.95, 4.71, 3.84, 3.26],
            [5.34, 5.57, 4.82, 4.15, 3.83],
        ];
        // Table order: index 1 (bottom) .. index 10 (top).
        const SETTLER_X_TABLE: [f64; N_LAYERS] = [
            6399.44, 356.29, 356.29, 356.29, 356.29, 356.29, 69.00, 29.55, 18.12, 12.50,
        ];
        const SETTLER_SOLUBLES: [f64; 7] = [30.0, 0.808, 2.0, 13.52, 0.67, 0.66, 3.83];

        let mut s = Self::zeros();
        for (species, row) in REACTOR.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                s.x[c * N_SPECIES + species] = *v;
            }
        }
        for layer in 1..=N_LAYERS {
            let base = settler_index(layer, LayerVar::SI);
            s.x[base..base + 7].copy_from_slice(&SETTLER_SOLUBLES);
            s.x[settler_index(layer, LayerVar::X)] = SETTLER_X_TABLE[N_LAYERS - layer];
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_layout_has_145_entries() {
        assert_eq!(N_STATES, 145);
        assert_eq!(state_names().len(), 145);
        assert_eq!(settler_index(10, LayerVar::X), 144);
        assert_eq!(reactor_index(4, Species::SALK), 64);
    }

    #[test]
    fn reference_layers_are_top_down() {
        let s = PlantState::reference();
        assert_eq!(s.settler(1, LayerVar::X), 12.50);
        assert_eq!(s.settler(10, LayerVar::X), 6399.44);
        assert_eq!(s.settler(FEED_LAYER, LayerVar::X), 356.29);
        assert_eq!(s.reactor(4, Species::SO), 2.00);
    }

    #[test]
    fn input_bounds() {
        assert!(ControlInput::new(92_230.0, 240.0).in_bounds());
        assert!(!ControlInput::new(-1.0, 10.0).in_bounds());
        assert!(ControlInput::new(1e6, -3.0).clamped().in_bounds());
    }
}
