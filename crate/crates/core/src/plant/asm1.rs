//! ASM1 biokinetics: eight processes acting on the 13 reactor species.

use serde::{Deserialize, Serialize};

use super::{Species, N_SPECIES};
use crate::error::{Error, Result};

/// Kinetic and stoichiometric constants at 15 degC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Asm1Params {
    pub mu_h: f64,
    pub k_s: f64,
    pub k_oh: f64,
    pub k_no: f64,
    pub b_h: f64,
    pub mu_a: f64,
    pub k_nh: f64,
    pub k_oa: f64,
    pub b_a: f64,
    pub eta_g: f64,
    pub k_a: f64,
    pub k_h: f64,
    pub k_x: f64,
    pub eta_h: f64,
    pub y_h: f64,
    pub y_a: f64,
    pub f_p: f64,
    pub i_xb: f64,
    pub i_xp: f64,
}

impl Default for Asm1Params {
    fn default() -> Self {
        Self {
            mu_h: 4.0,
            k_s: 10.0,
            k_oh: 0.2,
            k_no: 0.5,
            b_h: 0.3,
            mu_a: 0.5,
            k_nh: 1.0,
            k_oa: 0.4,
            b_a: 0.05,
            eta_g: 0.8,
            k_a: 0.05,
            k_h: 3.0,
            k_x: 0.1,
            eta_h: 0.8,
            y_h: 0.67,
            y_a: 0.24,
            f_p: 0.08,
            i_xb: 0.08,
            i_xp: 0.06,
        }
    }
}

impl Asm1Params {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu_h, self.k_s, self.k_oh, self.k_no, self.b_h, self.mu_a, self.k_nh, self.k_oa,
            self.b_a, self.eta_g, self.k_a, self.k_h, self.k_x, self.eta_h, self.y_h, self.y_a,
            self.f_p, self.i_xb, self.i_xp,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(
                "ASM1 constants must be strictly positive".into(),
            ))
        }
    }
}

/// Process rates rho_1..rho_8 (g/m3/day) for one compartment.
pub fn process_rates(c: &[f64; N_SPECIES], p: &Asm1Params) -> [f64; 8] {
    // Monod terms are evaluated on clamped concentrations so that tiny
    // negative excursions between sub-steps cannot flip reaction signs.
    let g = |s: Species| c[s as usize].max(0.0);
    let (ss, xs, xbh, xba) = (
        g(Species::SS),
        g(Species::XS),
        g(Species::XBH),
        g(Species::XBA),
    );
    let (so, sno, snh, snd, xnd) = (
        g(Species::SO),
        g(Species::SNO),
        g(Species::SNH),
        g(Species::SND),
        g(Species::XND),
    );

    let monod_s = ss / (p.k_s + ss);
    let o_h = so / (p.k_oh + so);
    let inhib_o = p.k_oh / (p.k_oh + so);
    let no = sno / (p.k_no + sno);

    let rho1 = p.mu_h * monod_s * o_h * xbh;
    let rho2 = p.mu_h * monod_s * inhib_o * no * p.eta_g * xbh;
    let rho3 = p.mu_a * (snh / (p.k_nh + snh)) * (so / (p.k_oa + so)) * xba;
    let rho4 = p.b_h * xbh;
    let rho5 = p.b_a * xba;
    let rho6 = p.k_a * snd * xbh;
    let rho7 = if xbh > 0.0 {
        let ratio = xs / xbh;
        p.k_h * (ratio / (p.k_x + ratio)) * (o_h + p.eta_h * inhib_o * no) * xbh
    } else {
        0.0
    };
    let rho8 = if xs > 0.0 { rho7 * xnd / xs } else { 0.0 };
    [rho1, rho2, rho3, rho4, rho5, rho6, rho7, rho8]
}

/// Net conversion rate of each species (g/m3/day) for one compartment.
pub fn reaction_rates(c: &[f64; N_SPECIES], p: &Asm1Params) -> [f64; N_SPECIES] {
    let [rho1, rho2, rho3, rho4, rho5, rho6, rho7, rho8] = process_rates(c, p);
    let (yh, ya, fp, ixb, ixp) = (p.y_h, p.y_a, p.f_p, p.i_xb, p.i_xp);
    let decay = rho4 + rho5;

    let mut r = [0.0; N_SPECIES];
    r[Species::SI as usize] = 0.0;
    r[Species::SS as usize] = -(rho1 + rho2) / yh + rho7;
    r[Species::XI as usize] = 0.0;
    r[Species::XS as usize] = (1.0 - fp) * decay - rho7;
    r[Species::XBH as usize] = rho1 + rho2 - rho4;
    r[Species::XBA as usize] = rho3 - rho5;
    r[Species::XP as usize] = fp * decay;
    r[Species::SO as usize] = -(1.0 - yh) / yh * rho1 - (4.57 - ya) / ya * rho3;
    r[Species::SNO as usize] = -(1.0 - yh) / (2.86 * yh) * rho2 + rho3 / ya;
    r[Species::SNH as usize] = -ixb * (rho1 + rho2) - (ixb + 1.0 / ya) * rho3 + rho6;
    r[Species::SND as usize] = -rho6 + rho8;
    r[Species::XND as usize] = (ixb - fp * ixp) * decay - rho8;
    r[Species::SALK as usize] = -ixb / 14.0 * rho1
        + ((1.0 - yh) / (14.0 * 2.86 * yh) - ixb / 14.0) * rho2
        - (ixb / 14.0 + 1.0 / (7.0 * ya)) * rho3
        + rho6 / 14.0;
    r
}
