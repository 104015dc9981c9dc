//! The 41 sensed states.
//!
//! Layout (frozen; documented in `docs/formats.md`):
//!
//! | positions | content |
//! |-----------|---------|
//! | 0..11  | compartment 5: S_I, S_S, X_I, X_S, X_BH, X_BA, X_P, S_NO, S_NH, S_ND, X_ND |
//! | 11..19 | settler layer 1 (top): S_I, S_S, S_O, S_NO, S_NH, S_ND, S_ALK, X |
//! | 19..27 | settler layer 10 (bottom): same eight variables |
//! | 27..35 | X of settler layers 2..9 |
//! | 35..41 | S_NO of compartment 2; S_O of compartments 3, 4, 5; S_NH of compartments 3, 4 |

use super::{
    reactor_index, settler_index, LayerVar, PlantState, Species, COD_TO_SS, N_LAYERS, N_LAYER_VARS,
    N_SPECIES, N_STATES, PARTICULATE_SPECIES, SOLUBLE_SPECIES,
};

pub const N_MEASUREMENTS: usize = 41;

const fn build_indices() -> [usize; N_MEASUREMENTS] {
    let mut idx = [0usize; N_MEASUREMENTS];
    let c5 = [
        Species::SI,
        Species::SS,
        Species::XI,
        Species::XS,
        Species::XBH,
        Species::XBA,
        Species::XP,
        Species::SNO,
        Species::SNH,
        Species::SND,
        Species::XND,
    ];
    let mut k = 0;
    while k < 11 {
        idx[k] = reactor_index(4, c5[k]);
        k += 1;
    }
    let mut v = 0;
    while v < N_LAYER_VARS {
        idx[11 + v] = settler_index(1, LayerVar::SI) + v;
        idx[19 + v] = settler_index(N_LAYERS, LayerVar::SI) + v;
        v += 1;
    }
    let mut l = 2;
    while l < N_LAYERS {
        idx[27 + l - 2] = settler_index(l, LayerVar::X);
        l += 1;
    }
    idx[35] = reactor_index(1, Species::SNO);
    idx[36] = reactor_index(2, Species::SO);
    idx[37] = reactor_index(3, Species::SO);
    idx[38] = reactor_index(4, Species::SO);
    idx[39] = reactor_index(2, Species::SNH);
    idx[40] = reactor_index(3, Species::SNH);
    idx
}

/// Flat state index of every measurement entry.
pub const MEASUREMENT_INDICES: [usize; N_MEASUREMENTS] = build_indices();

const C5_PARTICULATES: [(Species, usize); 6] = [
    (Species::XI, 2),
    (Species::XS, 3),
    (Species::XBH, 4),
    (Species::XBA, 5),
    (Species::XP, 6),
    (Species::XND, 10),
];

/// Sensor readings used by the cost indices and the encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementVector(pub [f64; N_MEASUREMENTS]);

impl MeasurementVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut y = [0.0; N_MEASUREMENTS];
        y.copy_from_slice(v);
        Self(y)
    }

    /// State with the measured entries filled in and everything else zero.
    pub fn embed(&self) -> PlantState {
        let mut s = PlantState::zeros();
        for (k, &i) in MEASUREMENT_INDICES.iter().enumerate() {
            s.x[i] = self.0[k];
        }
        s
    }

    /// Suspended solids of the settler feed, 0.75 x particulate COD of
    /// compartment 5.
    pub fn feed_solids(&self) -> f64 {
        COD_TO_SS * [2, 3, 4, 5, 6].iter().map(|&k| self.0[k]).sum::<f64>()
    }

    /// Sludge concentration X of settler layer `layer` (1-based, top-down).
    pub fn layer_x(&self, layer: usize) -> f64 {
        match layer {
            1 => self.0[11 + LayerVar::X as usize],
            N_LAYERS => self.0[19 + LayerVar::X as usize],
            l => self.0[27 + l - 2],
        }
    }

    fn layer_stream(&self, base: usize) -> [f64; N_SPECIES] {
        let x_layer = self.0[base + LayerVar::X as usize];
        let x_feed = self.feed_solids();
        let ratio = if x_feed > 0.0 { x_layer / x_feed } else { 0.0 };
        let mut z = [0.0; N_SPECIES];
        for (v, s) in SOLUBLE_SPECIES.iter().enumerate() {
            z[*s as usize] = self.0[base + v];
        }
        for (s, k) in C5_PARTICULATES {
            z[s as usize] = self.0[k] * ratio;
        }
        z
    }

    /// Effluent composition (13 species) drawn from the top layer.
    pub fn effluent(&self) -> [f64; N_SPECIES] {
        self.layer_stream(11)
    }

    /// Wastage composition (13 species) drawn from the bottom layer.
    pub fn wastage(&self) -> [f64; N_SPECIES] {
        self.layer_stream(19)
    }
}

/// Project the full state onto the 41 sensed entries.
pub fn measure(state: &PlantState) -> MeasurementVector {
    MeasurementVector(std::array::from_fn(|k| state.x[MEASUREMENT_INDICES[k]]))
}

/// Suspended solids of a stream composition.
pub fn stream_solids(z: &[f64; N_SPECIES]) -> f64 {
    COD_TO_SS
        * PARTICULATE_SPECIES
            .iter()
            .map(|&s| z[s as usize])
            .sum::<f64>()
}

const _: () = assert!(N_STATES == 145);
