//! Ten-layer non-reactive settler: Takács solids flux for the sludge and pure
//! advection for the solubles.

use super::{
    LayerVar, PlantParams, PlantState, Species, TakacsParams, FEED_LAYER, N_COMPARTMENTS, N_LAYERS,
    N_LAYER_VARS, N_SETTLER_STATES, SOLUBLE_SPECIES,
};

/// Volumetric flows around the settler (m3/day).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlerFlows {
    /// Feed from the last reactor compartment.
    pub feed: f64,
    /// Clarified effluent leaving the top layer.
    pub effluent: f64,
    /// Underflow leaving the bottom layer (return sludge plus wastage).
    pub underflow: f64,
}

impl SettlerFlows {
    pub fn new(q0: f64, params: &PlantParams) -> Self {
        let underflow = params.q_r + params.q_w;
        let feed = q0 + params.q_r;
        Self {
            feed,
            effluent: feed - underflow,
            underflow,
        }
    }
}

/// Double-exponential settling velocity (m/day) at sludge concentration `x`.
pub fn settling_velocity(x: f64, x_min: f64, p: &TakacsParams) -> f64 {
    let d = x - x_min;
    let v = p.v0 * ((-p.r_h * d).exp() - (-p.r_p * d).exp());
    v.clamp(0.0, p.v0_max)
}

/// Time derivatives of the 80 settler states.
///
/// The feed composition is the content of compartment 5; its suspended solids
/// are 0.75 times the particulate COD.
pub fn settler_derivatives(
    state: &PlantState,
    flows: &SettlerFlows,
    params: &PlantParams,
) -> [f64; N_SETTLER_STATES] {
    let feed = state.compartment(N_COMPARTMENTS - 1);
    let x_feed = feed.suspended_solids();
    let area = params.settler_area;
    let h = params.layer_height;
    let tk = &params.takacs;
    let v_up = flows.effluent / area;
    let v_dn = flows.underflow / area;
    let x_min = tk.f_ns * x_feed;

    let x: [f64; N_LAYERS] = std::array::from_fn(|j| state.settler(j + 1, LayerVar::X));
    let vs: [f64; N_LAYERS] = std::array::from_fn(|j| settling_velocity(x[j], x_min, tk));

    // Gravity flux from layer j into j+1 (0-based, top-down).
    let f = FEED_LAYER - 1;
    let mut flux = [0.0; N_LAYERS - 1];
    for j in 0..N_LAYERS - 1 {
        let own = vs[j] * x[j];
        let below = vs[j + 1] * x[j + 1];
        flux[j] = if j < f && x[j + 1] <= tk.x_threshold {
            own
        } else {
            own.min(below)
        };
    }

    let mut dx = [0.0; N_SETTLER_STATES];
    let at = |layer0: usize, var: LayerVar| layer0 * N_LAYER_VARS + var as usize;

    for j in 0..N_LAYERS {
        let flux_in = if j > 0 { flux[j - 1] } else { 0.0 };
        let flux_out = if j < N_LAYERS - 1 { flux[j] } else { 0.0 };
        let bulk = if j < f {
            v_up * (x[j + 1] - x[j])
        } else if j == f {
            flows.feed * x_feed / area - (v_up + v_dn) * x[j]
        } else {
            v_dn * (x[j - 1] - x[j])
        };
        dx[at(j, LayerVar::X)] = (bulk + flux_in - flux_out) / h;
    }

    for (k, species) in SOLUBLE_SPECIES.iter().enumerate() {
        let var = k;
        let z_feed = feed.0[*species as usize];
        let z = |j: usize| state.x[super::settler_index(j + 1, LayerVar::SI) + var];
        for j in 0..N_LAYERS {
            let d = if j < f {
                v_up * (z(j + 1) - z(j))
            } else if j == f {
                flows.feed * z_feed / area - (v_up + v_dn) * z(j)
            } else {
                v_dn * (z(j - 1) - z(j))
            };
            dx[j * N_LAYER_VARS + var] = d / h;
        }
    }
    dx
}

/// Concentrations of the 13 reactor species in a stream drawn from settler
/// layer `layer`: solubles taken directly, particulates apportioned by the
/// composition of the settler feed.
pub fn stream_composition(state: &PlantState, layer: usize) -> [f64; 13] {
    let feed = state.compartment(N_COMPARTMENTS - 1);
    let x_feed = feed.suspended_solids();
    let x_layer = state.settler(layer, LayerVar::X);
    let ratio = if x_feed > 0.0 { x_layer / x_feed } else { 0.0 };
    let mut z = [0.0; 13];
    for (k, s) in SOLUBLE_SPECIES.iter().enumerate() {
        z[*s as usize] = state.x[super::settler_index(layer, LayerVar::SI) + k];
    }
    for s in [
        Species::XI,
        Species::XS,
        Species::XBH,
        Species::XBA,
        Species::XP,
        Species::XND,
    ] {
        z[s as usize] = feed.0[s as usize] * ratio;
    }
    z
}
