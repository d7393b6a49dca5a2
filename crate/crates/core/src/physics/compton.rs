//! Klein–Nishina scattering off free electrons at rest.

use std::f64::consts::TAU;

use rand::Rng;

use crate::geometry::Vec3;

pub const ELECTRON_MASS_MEV: f64 = 0.510_998_95;

/// Scattered photon energy and scattering-angle cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatter {
    pub energy_mev: f64,
    pub cos_theta: f64,
}

/// Samples the scattered photon from the Klein–Nishina cross-section using
/// the two-branch composition and rejection scheme.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, energy_mev: f64) -> Scatter {
    let k = energy_mev / ELECTRON_MASS_MEV;
    let eps0 = 1.0 / (1.0 + 2.0 * k);
    let eps0_sq = eps0 * eps0;
    let alpha1 = -eps0.ln();
    let alpha2 = alpha1 + 0.5 * (1.0 - eps0_sq);
    loop {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let (eps, eps_sq) = if alpha1 > alpha2 * u1 {
            let e = (-alpha1 * u2).exp();
            (e, e * e)
        } else {
            let e2 = eps0_sq + (1.0 - eps0_sq) * u2;
            (e2.sqrt(), e2)
        };
        let one_minus_cos = (1.0 - eps) / (eps * k);
        let sin_sq = one_minus_cos * (2.0 - one_minus_cos);
        let g = 1.0 - eps * sin_sq / (1.0 + eps_sq);
        if g >= u3 {
            return Scatter {
                energy_mev: eps * energy_mev,
                cos_theta: (1.0 - one_minus_cos).clamp(-1.0, 1.0),
            };
        }
    }
}

/// Rotates unit `dir` by polar angle `acos(cos_theta)` and a uniform azimuth.
pub fn deflect<R: Rng + ?Sized>(rng: &mut R, dir: Vec3, cos_theta: f64) -> Vec3 {
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = TAU * rng.random::<f64>();
    let (u, v) = dir.orthonormal_basis();
    (dir * cos_theta + u * (sin_theta * phi.cos()) + v * (sin_theta * phi.sin())).normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{derive_rng, Stream};

    /// dσ/dε up to a constant, ε = E'/E.
    fn kn_density(eps: f64, k: f64) -> f64 {
        let one_minus_cos = (1.0 - eps) / (eps * k);
        let sin_sq = one_minus_cos * (2.0 - one_minus_cos);
        (1.0 / eps + eps) * (1.0 - eps * sin_sq / (1.0 + eps * eps))
    }

    #[test]
    fn scattered_energy_matches_cross_section() {
        for e in [0.1, 1.0, 2.615] {
            let k = e / ELECTRON_MASS_MEV;
            let eps0 = 1.0 / (1.0 + 2.0 * k);
            let nb = 40;
            // Oracle bin probabilities by fine midpoint integration.
            let edges: Vec<f64> = (0..=nb).map(|i| eps0 + (1.0 - eps0) * i as f64 / nb as f64).collect();
            let probs: Vec<f64> = edges
                .windows(2)
                .map(|w| {
                    let m = 400;
                    (0..m)
                        .map(|j| kn_density(w[0] + (w[1] - w[0]) * (j as f64 + 0.5) / m as f64, k))
                        .sum::<f64>()
                        * (w[1] - w[0])
                        / m as f64
                })
                .collect();
            let norm: f64 = probs.iter().sum();
            let mut rng = derive_rng(1, Stream::GammaTransport, (e * 1000.0) as u64);
            let n = 400_000;
            let mut h = vec![0u64; nb];
            for _ in 0..n {
                let s = sample(&mut rng, e);
                let eps = s.energy_mev / e;
                let b = (((eps - eps0) / (1.0 - eps0)) * nb as f64) as usize;
                h[b.min(nb - 1)] += 1;
            }
            let chi2: f64 = h
                .iter()
                .zip(&probs)
                .map(|(&o, &p)| {
                    let ex = p / norm * n as f64;
                    (o as f64 - ex).powi(2) / ex
                })
                .sum();
            assert!(chi2 / ((nb - 1) as f64) < 1.6, "E={e}: chi2/ndf {}", chi2 / (nb - 1) as f64);
        }
    }

    #[test]
    fn compton_kinematics_hold() {
        let mut rng = derive_rng(2, Stream::GammaTransport, 0);
        for _ in 0..10_000 {
            let e = 1.461;
            let s = sample(&mut rng, e);
            let expect = e / (1.0 + e / ELECTRON_MASS_MEV * (1.0 - s.cos_theta));
            assert!((s.energy_mev - expect).abs() < 1e-9);
            assert!(s.energy_mev <= e && s.energy_mev >= e / (1.0 + 2.0 * e / ELECTRON_MASS_MEV) - 1e-12);
        }
    }

    #[test]
    fn deflection_preserves_angle() {
        let mut rng = derive_rng(3, Stream::GammaTransport, 0);
        let d = Vec3::new(0.3, -0.4, 0.5).normalized();
        for c in [-0.9, 0.0, 0.7] {
            let n = deflect(&mut rng, d, c);
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!((n.dot(d) - c).abs() < 1e-12);
        }
    }
}
