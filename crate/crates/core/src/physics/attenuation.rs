//! Mass attenuation coefficients (cm²/g) for the materials in the stack.
//!
//! Rows are `[energy MeV, photoelectric, coherent, incoherent]`. Up to
//! 0.8 MeV the partials come from the Elam photon cross-section database;
//! above that, incoherent is the free-electron Klein–Nishina value and the
//! small photoelectric and coherent terms are power-law continuations.
//! Interpolation is linear in log-log space.

use crate::error::{Error, Result};
use crate::geometry::Material;

pub const TABLE_MIN_MEV: f64 = 0.02;
pub const TABLE_MAX_MEV: f64 = 3.0;

#[rustfmt::skip]
const SILICON: [[f64; 4]; 20] = [
    [0.02, 4.0891e+00, 2.3415e-01, 1.4019e-01],
    [0.03, 1.1608e+00, 1.2549e-01, 1.5014e-01],
    [0.04, 4.6867e-01, 7.8859e-02, 1.5342e-01],
    [0.05, 2.3073e-01, 5.3993e-02, 1.5378e-01],
    [0.06, 1.2885e-01, 3.9175e-02, 1.5263e-01],
    [0.08, 5.1207e-02, 2.3244e-02, 1.4834e-01],
    [0.10, 2.4978e-02, 1.5367e-02, 1.4319e-01],
    [0.15, 6.8059e-03, 7.1254e-03, 1.3090e-01],
    [0.20, 2.7363e-03, 4.0849e-03, 1.2072e-01],
    [0.30, 7.8813e-04, 1.8437e-03, 1.0554e-01],
    [0.40, 3.4091e-04, 1.0433e-03, 9.4752e-02],
    [0.50, 1.8494e-04, 6.6969e-04, 8.6628e-02],
    [0.60, 1.1564e-04, 4.6574e-04, 8.0194e-02],
    [0.80, 5.8541e-05, 2.6247e-04, 7.0503e-02],
    [1.00, 3.4525e-05, 1.6823e-04, 6.3403e-02],
    [1.25, 2.0362e-05, 1.0782e-04, 5.6682e-02],
    [1.50, 1.3226e-05, 7.4965e-05, 5.1506e-02],
    [2.00, 6.6956e-06, 4.2247e-05, 4.3936e-02],
    [2.50, 3.9488e-06, 2.7078e-05, 3.8582e-02],
    [3.00, 2.5650e-06, 1.8826e-05, 3.4549e-02],
];

#[rustfmt::skip]
const ALUMINUM: [[f64; 4]; 20] = [
    [0.02, 3.1002e+00, 2.0458e-01, 1.3709e-01],
    [0.03, 8.7238e-01, 1.0955e-01, 1.4644e-01],
    [0.04, 3.5038e-01, 6.8584e-02, 1.4943e-01],
    [0.05, 1.7178e-01, 4.6783e-02, 1.4959e-01],
    [0.06, 9.5639e-02, 3.3859e-02, 1.4831e-01],
    [0.08, 3.7834e-02, 2.0048e-02, 1.4389e-01],
    [0.10, 1.8401e-02, 1.3235e-02, 1.3878e-01],
    [0.15, 4.9930e-03, 6.1223e-03, 1.2673e-01],
    [0.20, 2.0022e-03, 3.5043e-03, 1.1680e-01],
    [0.30, 5.7422e-04, 1.5797e-03, 1.0207e-01],
    [0.40, 2.4795e-04, 8.9341e-04, 9.1621e-02],
    [0.50, 1.3440e-04, 5.7321e-04, 8.3744e-02],
    [0.60, 8.4014e-05, 3.9864e-04, 7.7538e-02],
    [0.80, 4.2520e-05, 2.2455e-04, 6.8142e-02],
    [1.00, 2.5072e-05, 1.4387e-04, 6.1283e-02],
    [1.25, 1.4784e-05, 9.2177e-05, 5.4786e-02],
    [1.50, 9.6018e-06, 6.4069e-05, 4.9783e-02],
    [2.00, 4.8596e-06, 3.6090e-05, 4.2466e-02],
    [2.50, 2.8655e-06, 2.3123e-05, 3.7292e-02],
    [3.00, 1.8611e-06, 1.6072e-05, 3.3394e-02],
];

#[rustfmt::skip]
const COPPER: [[f64; 4]; 20] = [
    [0.02, 3.3084e+01, 6.0595e-01, 1.0984e-01],
    [0.03, 1.0454e+01, 3.3692e-01, 1.2310e-01],
    [0.04, 4.5200e+00, 2.1236e-01, 1.2888e-01],
    [0.05, 2.3352e+00, 1.4671e-01, 1.3106e-01],
    [0.06, 1.3533e+00, 1.0794e-01, 1.3135e-01],
    [0.08, 5.6760e-01, 6.5951e-02, 1.2945e-01],
    [0.10, 2.8779e-01, 4.4454e-02, 1.2623e-01],
    [0.15, 8.3456e-02, 2.1115e-02, 1.1713e-01],
    [0.20, 3.4878e-02, 1.2264e-02, 1.0879e-01],
    [0.30, 1.0509e-02, 5.6203e-03, 9.5810e-02],
    [0.40, 4.6633e-03, 3.2068e-03, 8.6258e-02],
    [0.50, 2.5685e-03, 2.0680e-03, 7.8991e-02],
    [0.60, 1.6206e-03, 1.4424e-03, 7.3190e-02],
    [0.80, 8.2654e-04, 8.1525e-04, 6.4415e-02],
    [1.00, 4.9029e-04, 5.2370e-04, 5.8046e-02],
    [1.25, 2.9083e-04, 3.3642e-04, 5.1893e-02],
    [1.50, 1.8981e-04, 2.3433e-04, 4.7154e-02],
    [2.00, 9.6807e-05, 1.3245e-04, 4.0223e-02],
    [2.50, 5.7424e-05, 8.5081e-05, 3.5322e-02],
    [3.00, 3.7478e-05, 5.9263e-05, 3.1630e-02],
];

#[rustfmt::skip]
const NICKEL: [[f64; 4]; 20] = [
    [0.02, 3.1491e+01, 5.9473e-01, 1.1646e-01],
    [0.03, 9.8847e+00, 3.3032e-01, 1.2990e-01],
    [0.04, 4.2558e+00, 2.0818e-01, 1.3565e-01],
    [0.05, 2.1929e+00, 1.4397e-01, 1.3770e-01],
    [0.06, 1.2672e+00, 1.0610e-01, 1.3780e-01],
    [0.08, 5.3001e-01, 6.4831e-02, 1.3575e-01],
    [0.10, 2.6799e-01, 4.3669e-02, 1.3226e-01],
    [0.15, 7.7462e-02, 2.0717e-02, 1.2262e-01],
    [0.20, 3.2294e-02, 1.2026e-02, 1.1390e-01],
    [0.30, 9.7007e-03, 5.5097e-03, 1.0018e-01],
    [0.40, 4.2991e-03, 3.1428e-03, 9.0203e-02],
    [0.50, 2.3654e-03, 2.0267e-03, 8.2592e-02],
    [0.60, 1.4910e-03, 1.4130e-03, 7.6537e-02],
    [0.80, 7.6039e-04, 7.9835e-04, 6.7354e-02],
    [1.00, 4.5104e-04, 5.1271e-04, 6.0681e-02],
    [1.25, 2.6754e-04, 3.2927e-04, 5.4249e-02],
    [1.50, 1.7460e-04, 2.2931e-04, 4.9295e-02],
    [2.00, 8.9048e-05, 1.2956e-04, 4.2050e-02],
    [2.50, 5.2820e-05, 8.3208e-05, 3.6926e-02],
    [3.00, 3.4472e-05, 5.7947e-05, 3.3066e-02],
];
/// Partial mass attenuation coefficients at one energy, cm²/g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub photoelectric: f64,
    pub coherent: f64,
    pub incoherent: f64,
}

impl Partials {
    pub fn total(&self) -> f64 {
        self.photoelectric + self.coherent + self.incoherent
    }

    /// Processes that deposit energy or change the photon energy.
    pub fn interacting(&self) -> f64 {
        self.photoelectric + self.incoherent
    }
}

/// Density in g/cm³. Cryophy is carried as its nickel-iron equivalent.
pub fn density(material: Material) -> f64 {
    match material {
        Material::Silicon => 2.329,
        Material::Aluminum => 2.699,
        Material::Copper => 8.96,
        Material::Cryophy => 8.7,
    }
}

fn table(material: Material) -> &'static [[f64; 4]] {
    match material {
        Material::Silicon => &SILICON,
        Material::Aluminum => &ALUMINUM,
        Material::Copper => &COPPER,
        Material::Cryophy => &NICKEL,
    }
}

pub fn check_energy(energy_mev: f64) -> Result<()> {
    if (TABLE_MIN_MEV..=TABLE_MAX_MEV).contains(&energy_mev) {
        Ok(())
    } else {
        Err(Error::EnergyOutOfRange {
            energy_mev,
            min_mev: TABLE_MIN_MEV,
            max_mev: TABLE_MAX_MEV,
        })
    }
}

pub fn mass_coefficients(material: Material, energy_mev: f64) -> Result<Partials> {
    check_energy(energy_mev)?;
    let t = table(material);
    let i = t.partition_point(|row| row[0] <= energy_mev).clamp(1, t.len() - 1);
    let (a, b) = (&t[i - 1], &t[i]);
    let f = (energy_mev / a[0]).ln() / (b[0] / a[0]).ln();
    let interp = |k: usize| (a[k].ln() + f * (b[k].ln() - a[k].ln())).exp();
    Ok(Partials {
        photoelectric: interp(1),
        coherent: interp(2),
        incoherent: interp(3),
    })
}

/// Linear attenuation coefficients in 1/cm.
pub fn linear_coefficients(material: Material, energy_mev: f64) -> Result<Partials> {
    let m = mass_coefficients(material, energy_mev)?;
    let rho = density(material);
    Ok(Partials {
        photoelectric: m.photoelectric * rho,
        coherent: m.coherent * rho,
        incoherent: m.incoherent * rho,
    })
}
