//! Energy-loss straggling of minimum-ionizing muons in thin silicon.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

/// Mode of the standard Landau density.
pub const STANDARD_MODE: f64 = -0.222_782_2;

const ELECTRON_REST_2MC2_EV: f64 = 2.0 * 0.510_998_95e6;

/// Thin-absorber parameters for silicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StragglingParams {
    /// K/2 · Z/A · ρ in keV per cm of path.
    pub xi_per_cm_kev: f64,
    pub mean_excitation_ev: f64,
    pub plasma_energy_ev: f64,
    pub j: f64,
}

impl Default for StragglingParams {
    fn default() -> Self {
        // K = 0.307075 MeV cm²/mol, Z/A = 0.49848, ρ = 2.329 g/cm³
        let xi_per_cm_kev = 0.5 * 0.307_075e3 * 0.498_48 * 2.329;
        StragglingParams {
            xi_per_cm_kev,
            mean_excitation_ev: 173.0,
            plasma_energy_ev: 31.05,
            j: 0.200,
        }
    }
}

impl StragglingParams {
    /// Landau width parameter ξ for a path of `path_cm`, keV.
    pub fn xi_kev(&self, path_cm: f64) -> f64 {
        self.xi_per_cm_kev * path_cm
    }

    /// Most probable energy loss on the Fermi plateau, keV.
    pub fn most_probable_kev(&self, path_cm: f64) -> f64 {
        let xi = self.xi_kev(path_cm);
        let i = self.mean_excitation_ev;
        let wp = self.plasma_energy_ev;
        let log_term = (ELECTRON_REST_2MC2_EV * i / (wp * wp)).ln() + (xi * 1e3 / i).ln() + self.j;
        xi * log_term
    }
}

/// Standard Landau variate (Chambers–Mallows–Stuck, α = 1, β = 1).
pub fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
        let w: f64 = Exp1.sample(rng);
        let a = FRAC_PI_2 + v;
        let x = (a * v.tan() - (FRAC_PI_2 * w * v.cos() / a).ln()) / FRAC_PI_2;
        if x.is_finite() {
            return x;
        }
    }
}
