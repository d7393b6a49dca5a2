//! Primary generators for cosmic muons and ambient γ-rays.
//!
//! Both species are generated with the disk-on-sphere method: a direction is
//! drawn from the angular distribution, then a uniform point on the disk of
//! radius `R` perpendicular to it through the sphere center, then the ray is
//! started on the sphere. The rate of generated rays is `flux · πR² · g`,
//! where `g` converts the configured flux convention into a per-direction
//! intensity (see [`AngularModel::geometry_factor`]).

use std::f64::consts::{PI, TAU};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Muon,
    Gamma,
}

impl Species {
    pub fn name(self) -> &'static str {
        match self {
            Species::Muon => "muon",
            Species::Gamma => "gamma",
        }
    }

    pub fn parse(s: &str) -> Option<Species> {
        match s {
            "muon" => Some(Species::Muon),
            "gamma" => Some(Species::Gamma),
            _ => None,
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primary {
    pub species: Species,
    pub energy_mev: f64,
    pub origin: Vec3,
    pub direction: Vec3,
    pub time_s: f64,
}

impl Primary {
    pub fn ray(&self) -> Ray {
        Ray {
            origin: self.origin,
            direction: self.direction,
        }
    }
}

/// Flux normalization and generation surfaces.
///
/// `muon_flux` is the rate through a horizontal plane (per cm² of plane).
/// `gamma_flux` is the omnidirectional fluence rate: crossings of a small
/// sphere per cm² of its cross-section, so a convex body of surface `S`
/// sees `gamma_flux · S / 4` crossings per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxConfig {
    pub muon_flux: f64,
    pub gamma_flux: f64,
    pub hemisphere_radius: f64,
    pub gamma_shell_radius: f64,
}

impl Default for FluxConfig {
    fn default() -> Self {
        FluxConfig {
            muon_flux: 0.0140,
            gamma_flux: 13.5,
            hemisphere_radius: 8.0,
            gamma_shell_radius: 8.0,
        }
    }
}

impl FluxConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("muon_flux", self.muon_flux), ("gamma_flux", self.gamma_flux)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("sources.flux.{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("hemisphere_radius", self.hemisphere_radius),
            ("gamma_shell_radius", self.gamma_shell_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("sources.flux.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Zenith-angle intensity of sea-level muons, per unit solid angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AngularModel {
    /// `I(θ) ∝ cosⁿθ`.
    CosPower { exponent: f64 },
    /// Curved-atmosphere form `I(θ) ∝ D(θ)^-(n-1)` with
    /// `D = sqrt(r² cos²θ + 2r + 1) − r cosθ` and `r = R_earth / d_production`.
    Parametric { earth_over_height: f64, index: f64 },
}

impl Default for AngularModel {
    fn default() -> Self {
        AngularModel::CosPower { exponent: 0.65 }
    }
}

impl AngularModel {
    /// Unnormalized intensity as a function of cos(zenith).
    pub fn intensity(&self, cos_theta: f64) -> f64 {
        if cos_theta <= 0.0 {
            return 0.0;
        }
        match *self {
            AngularModel::CosPower { exponent } => cos_theta.powf(exponent),
            AngularModel::Parametric {
                earth_over_height: r,
                index,
            } => {
                let d = (r * r * cos_theta * cos_theta + 2.0 * r + 1.0).sqrt() - r * cos_theta;
                d.powf(-(index - 1.0))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AngularModel::CosPower { exponent } if exponent >= 0.0 && exponent.is_finite() => Ok(()),
            AngularModel::Parametric {
                earth_over_height,
                index,
            } if earth_over_height > 0.0 && index > 1.0 => Ok(()),
            _ => Err(Error::Config(format!("invalid angular model {self:?}"))),
        }
    }

    pub fn sampler(&self) -> Result<AngularSampler> {
        self.validate()?;
        Ok(match *self {
            AngularModel::CosPower { exponent } => AngularSampler::CosPower { exponent },
            AngularModel::Parametric { .. } => AngularSampler::Table(CosTable::new(|c| self.intensity(c))),
        })
    }

    /// Normalized density per steradian over the downward hemisphere.
    pub fn density(&self, cos_theta: f64) -> f64 {
        match *self {
            AngularModel::CosPower { exponent } => (exponent + 1.0) / TAU * cos_theta.max(0.0).powf(exponent),
            AngularModel::Parametric { .. } => {
                self.intensity(cos_theta) / (TAU * integrate_unit(|c| self.intensity(c)))
            }
        }
    }

    /// `∫ I dΩ / ∫ I cosθ dΩ`: converts a horizontal-plane flux into the
    /// rate through a disk perpendicular to each direction.
    pub fn geometry_factor(&self) -> f64 {
        match *self {
            AngularModel::CosPower { exponent } => (exponent + 2.0) / (exponent + 1.0),
            AngularModel::Parametric { .. } => {
                integrate_unit(|c| self.intensity(c)) / integrate_unit(|c| c * self.intensity(c))
            }
        }
    }
}

/// Composite Simpson rule over cos θ ∈ [0, 1].
fn integrate_unit(f: impl Fn(f64) -> f64) -> f64 {
    let n = 4096;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0
}

/// Inverse-CDF table in cos θ.
#[derive(Debug, Clone)]
pub struct CosTable {
    cdf: Vec<f64>,
    step: f64,
}

impl CosTable {
    fn new(f: impl Fn(f64) -> f64) -> CosTable {
        let n = 8192;
        let step = 1.0 / n as f64;
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        let mut prev = f(0.0);
        for i in 1..=n {
            let cur = f(i as f64 * step);
            acc += 0.5 * (prev + cur) * step;
            cdf.push(acc);
            prev = cur;
        }
        for v in &mut cdf {
            *v /= acc;
        }
        CosTable { cdf, step }
    }

    fn invert(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        ((i - 1) as f64 + frac) * self.step
    }
}

#[derive(Debug, Clone)]
pub enum AngularSampler {
    CosPower { exponent: f64 },
    Table(CosTable),
}

impl AngularSampler {
    pub fn sample_cos_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            // pdf in cos θ is (n+1) cᶰ
            AngularSampler::CosPower { exponent } => (1.0 - u).powf(1.0 / (exponent + 1.0)),
            AngularSampler::Table(t) => t.invert(u),
        }
    }

    /// Downward-going unit direction.
    pub fn sample_downward<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let c = self.sample_cos_theta(rng);
        let s = (1.0 - c * c).max(0.0).sqrt();
        let phi = TAU * rng.random::<f64>();
        Vec3::new(s * phi.cos(), s * phi.sin(), -c)
    }
}

/// Isotropic unit direction.
pub fn sample_isotropic<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let c = 2.0 * rng.random::<f64>() - 1.0;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let phi = TAU * rng.random::<f64>();
    Vec3::new(s * phi.cos(), s * phi.sin(), c)
}

/// Sea-level muon energy spectrum `(E0 + E)^-n / (1 + E/ε)`, energies in GeV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuonSpectrum {
    pub e0_gev: f64,
    pub index: f64,
    pub epsilon_gev: f64,
    pub e_min_gev: f64,
    pub e_max_gev: f64,
}

impl Default for MuonSpectrum {
    fn default() -> Self {
        MuonSpectrum {
            e0_gev: 4.29,
            index: 3.01,
            epsilon_gev: 854.0,
            e_min_gev: 0.105,
            e_max_gev: 1.0e4,
        }
    }
}

impl MuonSpectrum {
    pub fn validate(&self) -> Result<()> {
        let ok = self.e0_gev >= 0.0
            && self.index > 1.0
            && self.epsilon_gev > 0.0
            && self.e_min_gev > 0.0
            && self.e_max_gev > self.e_min_gev;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid muon spectrum {self:?}")))
        }
    }

    pub fn density(&self, e_gev: f64) -> f64 {
        if e_gev < self.e_min_gev || e_gev > self.e_max_gev {
            return 0.0;
        }
        (self.e0_gev + e_gev).powf(-self.index) / (1.0 + e_gev / self.epsilon_gev)
    }

    /// Power-law proposal by inversion, high-energy softening by rejection.
    pub fn sample_gev<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m = 1.0 - self.index;
        let a = (self.e0_gev + self.e_min_gev).powf(m);
        let b = (self.e0_gev + self.e_max_gev).powf(m);
        loop {
            let u: f64 = rng.random();
            let e = (a + u * (b - a)).powf(1.0 / m) - self.e0_gev;
            let accept = (1.0 + self.e_min_gev / self.epsilon_gev) / (1.0 + e / self.epsilon_gev);
            if rng.random::<f64>() < accept {
                return e.clamp(self.e_min_gev, self.e_max_gev);
            }
        }
    }
}

/// Ambient γ spectrum: discrete lines plus a piecewise power-law continuum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaSpectrumParams {
    /// (energy MeV, weight) pairs.
    pub lines: Vec<[f64; 2]>,
    pub continuum_weight: f64,
    /// (energy MeV, relative density) knots, interpolated log-log.
    pub continuum_knots: Vec<[f64; 2]>,
    /// Photons below this energy are not part of the quoted flux.
    pub low_energy_cutoff_mev: f64,
}

impl Default for GammaSpectrumParams {
    fn default() -> Self {
        GammaSpectrumParams {
            lines: vec![[1.461, 0.08], [2.615, 0.04]],
            continuum_weight: 0.88,
            continuum_knots: vec![
                [0.02, 0.01],
                [0.1, 0.3],
                [0.2, 1.0],
                [0.4, 0.6],
                [1.0, 0.1],
                [2.615, 0.02],
            ],
            low_energy_cutoff_mev: 0.02,
        }
    }
}

/// Sampling-ready form of [`GammaSpectrumParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSpectrum {
    /// (energy, cumulative probability) for lines, then the continuum.
    lines: Vec<(f64, f64)>,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    lo: f64,
    hi: f64,
    slope: f64,
    /// Cumulative probability at the top of this segment.
    cum: f64,
    weight: f64,
}

impl Segment {
    fn integral(lo: f64, hi: f64, d_lo: f64, slope: f64) -> f64 {
        let k1 = slope + 1.0;
        if k1.abs() < 1e-12 {
            d_lo * lo * (hi / lo).ln()
        } else {
            d_lo * lo / k1 * ((hi / lo).powf(k1) - 1.0)
        }
    }

    fn invert(&self, u: f64) -> f64 {
        let k1 = self.slope + 1.0;
        if k1.abs() < 1e-12 {
            self.lo * (self.hi / self.lo).powf(u)
        } else {
            let r = (self.hi / self.lo).powf(k1);
            self.lo * (1.0 + u * (r - 1.0)).powf(1.0 / k1)
        }
    }
}

pub const GAMMA_MAX_MEV: f64 = 2.615;

impl GammaSpectrum {
    pub fn new(p: &GammaSpectrumParams) -> Result<GammaSpectrum> {
        let bad = |m: String| Err(Error::Config(format!("sources.gamma_spectrum: {m}")));
        let cut = p.low_energy_cutoff_mev;
        if !(cut > 0.0) {
            return bad(format!("low_energy_cutoff_mev must be positive, got {cut}"));
        }
        for &[e, w] in &p.lines {
            if !(e > 0.02 && e <= GAMMA_MAX_MEV + 1e-12) || !(w >= 0.0) {
                return bad(format!("line ({e}, {w}) outside (0.02, {GAMMA_MAX_MEV}] MeV"));
            }
        }
        for pair in p.continuum_knots.windows(2) {
            if pair[1][0] <= pair[0][0] {
                return bad("continuum knots must increase in energy".into());
            }
        }
        if p.continuum_knots.iter().any(|k| k[1] <= 0.0 || k[0] < 0.02 || k[0] > GAMMA_MAX_MEV + 1e-12) {
            return bad("continuum knots need positive density within [0.02, 2.615] MeV".into());
        }
        if p.continuum_weight < 0.0 {
            return bad("continuum_weight must be >= 0".into());
        }
        if p.continuum_weight > 0.0 && p.continuum_knots.len() < 2 {
            return bad("a weighted continuum needs at least two knots".into());
        }

        // Continuum segments, each with its share of the full continuum.
        let mut raw = Vec::new();
        let mut total = 0.0;
        for pair in p.continuum_knots.windows(2) {
            let ([e0, d0], [e1, d1]) = (pair[0], pair[1]);
            let slope = (d1 / d0).ln() / (e1 / e0).ln();
            let full = Segment::integral(e0, e1, d0, slope);
            total += full;
            if e1 <= cut {
                continue;
            }
            let lo = e0.max(cut);
            let d_lo = d0 * (lo / e0).powf(slope);
            raw.push((lo, e1, slope, Segment::integral(lo, e1, d_lo, slope)));
        }

        let mut weights: Vec<(f64, f64)> = p
            .lines
            .iter()
            .filter(|l| l[0] >= cut)
            .map(|l| (l[0], l[1]))
            .collect();
        let mut seg_weights: Vec<f64> = raw
            .iter()
            .map(|r| if total > 0.0 { p.continuum_weight * r.3 / total } else { 0.0 })
            .collect();
        let norm: f64 = weights.iter().map(|w| w.1).sum::<f64>() + seg_weights.iter().sum::<f64>();
        if !(norm > 0.0) {
            return bad("spectrum has no weight above the low-energy cutoff".into());
        }
        for w in &mut weights {
            w.1 /= norm;
        }
        for w in &mut seg_weights {
            *w /= norm;
        }

        let mut cum = 0.0;
        let lines = weights
            .into_iter()
            .map(|(e, w)| {
                cum += w;
                (e, cum)
            })
            .collect();
        let segments = raw
            .iter()
            .zip(seg_weights)
            .map(|(&(lo, hi, slope, _), weight)| {
                cum += weight;
                Segment {
                    lo,
                    hi,
                    slope,
                    cum,
                    weight,
                }
            })
            .collect();
        Ok(GammaSpectrum { lines, segments })
    }

    /// A spectrum consisting of a single line.
    pub fn line(energy_mev: f64) -> GammaSpectrum {
        GammaSpectrum {
            lines: vec![(energy_mev, 1.0)],
            segments: vec![],
        }
    }

    pub fn sample_mev<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        for &(e, cum) in &self.lines {
            if u < cum {
                return e;
            }
        }
        for s in &self.segments {
            if u < s.cum || std::ptr::eq(s, self.segments.last().unwrap()) {
                let v = ((u - (s.cum - s.weight)) / s.weight).clamp(0.0, 1.0);
                return s.invert(v).clamp(s.lo, s.hi);
            }
        }
        // Rounding left u above the final cumulative value.
        self.lines.last().map(|l| l.0).unwrap_or(GAMMA_MAX_MEV)
    }

    /// Probability mass of each discrete line.
    pub fn line_weights(&self) -> Vec<(f64, f64)> {
        let mut prev = 0.0;
        self.lines
            .iter()
            .map(|&(e, c)| {
                let w = c - prev;
                prev = c;
                (e, w)
            })
            .collect()
    }
}

/// Sphere on which primaries start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl GenerationSphere {
    /// Smallest sphere around the box `(lo, hi)`, scaled by `factor`.
    pub fn enclosing((lo, hi): (Vec3, Vec3), factor: f64) -> GenerationSphere {
        let center = (lo + hi) * 0.5;
        GenerationSphere {
            center,
            radius: (hi - center).norm() * factor,
        }
    }

    pub fn encloses(&self, (lo, hi): (Vec3, Vec3)) -> bool {
        let far = Vec3::new(
            (lo.x - self.center.x).abs().max((hi.x - self.center.x).abs()),
            (lo.y - self.center.y).abs().max((hi.y - self.center.y).abs()),
            (lo.z - self.center.z).abs().max((hi.z - self.center.z).abs()),
        );
        far.norm() <= self.radius
    }

    pub fn disk_area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    /// Ray with the given direction, uniform over the perpendicular disk,
    /// starting on the sphere.
    pub fn sample_ray<R: Rng + ?Sized>(&self, rng: &mut R, direction: Vec3) -> Ray {
        let (u, v) = direction.orthonormal_basis();
        let r = self.radius * rng.random::<f64>().sqrt();
        let phi = TAU * rng.random::<f64>();
        let p = self.center + u * (r * phi.cos()) + v * (r * phi.sin());
        let back = (self.radius * self.radius - r * r).max(0.0).sqrt();
        Ray {
            origin: p - direction * back,
            direction,
        }
    }
}

/// Muon generator with its sampling tables resolved.
#[derive(Debug, Clone)]
pub struct MuonSource {
    pub flux: f64,
    pub sphere: GenerationSphere,
    pub angular: AngularSampler,
    pub geometry_factor: f64,
    pub spectrum: MuonSpectrum,
}

impl MuonSource {
    pub fn new(flux: &FluxConfig, model: &AngularModel, spectrum: &MuonSpectrum, center: Vec3) -> Result<MuonSource> {
        spectrum.validate()?;
        Ok(MuonSource {
            flux: flux.muon_flux,
            sphere: GenerationSphere {
                center,
                radius: flux.hemisphere_radius,
            },
            angular: model.sampler()?,
            geometry_factor: model.geometry_factor(),
            spectrum: spectrum.clone(),
        })
    }

    /// Primaries per second emitted from the generation surface.
    pub fn generation_rate(&self) -> f64 {
        self.flux * self.sphere.disk_area() * self.geometry_factor
    }
}

/// Draws one muon (time left at zero).
pub fn sample_muon<R: Rng + ?Sized>(rng: &mut R, source: &MuonSource) -> Primary {
    let direction = source.angular.sample_downward(rng);
    let ray = source.sphere.sample_ray(rng, direction);
    let energy_mev = source.spectrum.sample_gev(rng) * 1.0e3;
    Primary {
        species: Species::Muon,
        energy_mev,
        origin: ray.origin,
        direction,
        time_s: 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct GammaSource {
    pub flux: f64,
    pub sphere: GenerationSphere,
    pub spectrum: GammaSpectrum,
}

impl GammaSource {
    pub fn new(flux: &FluxConfig, spectrum: GammaSpectrum, center: Vec3) -> GammaSource {
        GammaSource {
            flux: flux.gamma_flux,
            sphere: GenerationSphere {
                center,
                radius: flux.gamma_shell_radius,
            },
            spectrum,
        }
    }

    pub fn generation_rate(&self) -> f64 {
        self.flux * self.sphere.disk_area()
    }
}

/// Draws one γ (time left at zero).
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, source: &GammaSource) -> Primary {
    let direction = sample_isotropic(rng);
    let ray = source.sphere.sample_ray(rng, direction);
    Primary {
        species: Species::Gamma,
        energy_mev: source.spectrum.sample_mev(rng),
        origin: ray.origin,
        direction,
        time_s: 0.0,
    }
}

/// Exposure time represented by `n_generated` primaries.
pub fn equivalent_livetime(n_generated: u64, flux: f64, generation_surface: f64, geometry_factor: f64) -> Result<f64> {
    if !(flux > 0.0) {
        return Err(Error::InvalidArgument(format!("flux must be positive, got {flux}")));
    }
    if !(generation_surface > 0.0) || !(geometry_factor > 0.0) {
        return Err(Error::InvalidArgument(
            "generation surface and geometry factor must be positive".into(),
        ));
    }
    Ok(n_generated as f64 / (flux * generation_surface * geometry_factor))
}

/// Ascending uniform order statistics on `[0, span]`, generated one at a
/// time so that long runs need no buffer.
pub struct SortedUniforms<R> {
    rng: R,
    remaining: u64,
    current: f64,
    span: f64,
}

impl<R: Rng> SortedUniforms<R> {
    pub fn new(rng: R, n: u64, span: f64) -> Self {
        SortedUniforms {
            rng,
            remaining: n,
            current: 0.0,
            span,
        }
    }
}

impl<R: Rng> Iterator for SortedUniforms<R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.remaining == 0 {
            return None;
        }
        // Minimum of `remaining` uniforms on [current, 1].
        let u: f64 = self.rng.random();
        let step = 1.0 - (1.0 - u).powf(1.0 / self.remaining as f64);
        self.current += (1.0 - self.current) * step;
        self.remaining -= 1;
        Some(self.current * self.span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{derive_rng, Stream};

    fn rng(i: u64) -> rand_chacha::ChaCha8Rng {
        derive_rng(99, Stream::MuonTransport, i)
    }

    #[test]
    fn angular_density_normalized() {
        for model in [
            AngularModel::CosPower { exponent: 2.0 },
            AngularModel::CosPower { exponent: 0.65 },
            AngularModel::Parametric {
                earth_over_height: 174.0,
                index: 3.01,
            },
        ] {
            let total = TAU * integrate_unit(|c| model.density(c));
            assert!((total - 1.0).abs() < 1e-3, "{model:?}: {total}");
        }
    }

    #[test]
    fn cos_power_geometry_factor_matches_numeric() {
        let m = AngularModel::CosPower { exponent: 2.0 };
        let numeric = integrate_unit(|c| c * c) / integrate_unit(|c| c * c * c);
        assert!((m.geometry_factor() - numeric).abs() < 1e-9);
        assert!((m.geometry_factor() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zenith_histogram_matches_density() {
        let model = AngularModel::Parametric {
            earth_over_height: 174.0,
            index: 3.01,
        };
        let sampler = model.sampler().unwrap();
        let mut r = rng(1);
        let nbins = 50;
        let n = 1_000_000;
        let mut h = vec![0u64; nbins];
        for _ in 0..n {
            let c = sampler.sample_cos_theta(&mut r);
            h[((c * nbins as f64) as usize).min(nbins - 1)] += 1;
        }
        let norm = integrate_unit(|c| model.intensity(c));
        let mut chi2 = 0.0;
        for (i, &k) in h.iter().enumerate() {
            let (a, b) = (i as f64 / nbins as f64, (i + 1) as f64 / nbins as f64);
            let p = simpson(|c| model.intensity(c), a, b) / norm;
            let e = p * n as f64;
            chi2 += (k as f64 - e).powi(2) / e;
        }
        let ndf = (nbins - 1) as f64;
        assert!(chi2 / ndf < 1.5, "chi2/ndf = {}", chi2 / ndf);
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let n = 200;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn muon_mean_energy_near_four_gev() {
        let s = MuonSpectrum::default();
        // Oracle: numeric mean of the density on a log grid.
        let (mut num, mut den) = (0.0, 0.0);
        let n = 200_000;
        let (l0, l1) = (s.e_min_gev.ln(), s.e_max_gev.ln());
        for i in 0..n {
            let e = (l0 + (i as f64 + 0.5) / n as f64 * (l1 - l0)).exp();
            let w = s.density(e) * e;
            num += w * e;
            den += w;
        }
        let oracle = num / den;
        assert!((oracle - 4.0).abs() < 0.8, "{oracle}");
        let mut r = rng(2);
        let m = 400_000;
        let mean: f64 = (0..m).map(|_| s.sample_gev(&mut r)).sum::<f64>() / m as f64;
        assert!((mean - oracle).abs() / oracle < 0.05, "{mean} vs {oracle}");
    }

    #[test]
    fn single_line_spectrum_is_degenerate() {
        let p = GammaSpectrumParams {
            lines: vec![[1.461, 1.0]],
            continuum_weight: 0.0,
            continuum_knots: vec![],
            low_energy_cutoff_mev: 0.02,
        };
        let s = GammaSpectrum::new(&p).unwrap();
        let mut r = rng(3);
        assert!((0..1000).all(|_| s.sample_mev(&mut r) == 1.461));
    }

    #[test]
    fn gamma_spectrum_within_range_and_weights_normalized() {
        let s = GammaSpectrum::new(&GammaSpectrumParams::default()).unwrap();
        let total: f64 = s.line_weights().iter().map(|w| w.1).sum::<f64>()
            + s.segments.iter().map(|x| x.weight).sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
        let mut r = rng(4);
        for _ in 0..100_000 {
            let e = s.sample_mev(&mut r);
            assert!((0.02..=GAMMA_MAX_MEV).contains(&e), "{e}");
        }
    }

    #[test]
    fn continuum_segment_shape() {
        // Single power-law segment E^-2 on [0.1, 1]: compare fraction below 0.3.
        let p = GammaSpectrumParams {
            lines: vec![],
            continuum_weight: 1.0,
            continuum_knots: vec![[0.1, 1.0], [1.0, 0.01]],
            low_energy_cutoff_mev: 0.02,
        };
        let s = GammaSpectrum::new(&p).unwrap();
        let expected = (1.0 / 0.1 - 1.0 / 0.3) / (1.0 / 0.1 - 1.0);
        let mut r = rng(5);
        let n = 200_000;
        let below = (0..n).filter(|_| s.sample_mev(&mut r) < 0.3).count() as f64 / n as f64;
        assert!((below - expected).abs() < 0.005, "{below} vs {expected}");
    }

    #[test]
    fn cutoff_removes_low_energy_photons() {
        let p = GammaSpectrumParams {
            low_energy_cutoff_mev: 0.2,
            ..GammaSpectrumParams::default()
        };
        let s = GammaSpectrum::new(&p).unwrap();
        let mut r = rng(6);
        assert!((0..50_000).all(|_| s.sample_mev(&mut r) >= 0.2));
    }

    #[test]
    fn gamma_directions_isotropic() {
        // cos of the angle to any fixed axis is uniform on [-1, 1].
        let mut r = rng(7);
        let n = 1_000_000;
        let mut v: Vec<f64> = (0..n).map(|_| sample_isotropic(&mut r).x).collect();
        v.sort_by(f64::total_cmp);
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (x + 1.0) / 2.0;
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at p = 0.01.
        assert!(d < 1.628 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn inward_cosines_on_a_surface_element_follow_cosine_law() {
        // Rays crossing a small horizontal patch through the sphere center:
        // |cos θ| must be distributed as 2c dc (CDF c²) for an isotropic field.
        let flux = FluxConfig::default();
        let source = GammaSource::new(&flux, GammaSpectrum::line(1.0), Vec3::ZERO);
        let mut r = rng(8);
        let mut cosines = Vec::new();
        while cosines.len() < 20_000 {
            let p = sample_gamma(&mut r, &source);
            if p.direction.z.abs() < 1e-9 {
                continue;
            }
            let t = -p.origin.z / p.direction.z;
            let hit = p.origin + p.direction * t;
            if t > 0.0 && hit.x.abs() < 1.0 && hit.y.abs() < 1.0 {
                cosines.push(p.direction.z.abs());
            }
        }
        cosines.sort_by(f64::total_cmp);
        let n = cosines.len() as f64;
        let d = cosines
            .iter()
            .enumerate()
            .map(|(i, &c)| (c * c - i as f64 / n).abs().max((c * c - (i + 1) as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn livetime_linear_in_flux() {
        assert_eq!(equivalent_livetime(0, 1.0, 10.0, 1.0).unwrap(), 0.0);
        let a = equivalent_livetime(1000, 1.0, 10.0, 1.2).unwrap();
        let b = equivalent_livetime(1000, 2.0, 10.0, 1.2).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(equivalent_livetime(10, 0.0, 10.0, 1.0).is_err());
        assert!(equivalent_livetime(10, -1.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn sorted_uniforms_are_sorted_and_uniform() {
        let n = 100_000;
        let v: Vec<f64> = SortedUniforms::new(rng(9), n, 50.0).collect();
        assert_eq!(v.len() as u64, n);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert!(v[v.len() - 1] <= 50.0);
        // Index of dispersion of counts in unit bins.
        let mut counts = vec![0f64; 50];
        for t in &v {
            counts[(*t as usize).min(49)] += 1.0;
        }
        let mean = n as f64 / 50.0;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 49.0;
        // Multinomial counts have dispersion 1 - 1/50.
        let disp = var / mean;
        assert!((disp - 1.0).abs() < 3.0 * (2.0f64 / 49.0).sqrt(), "{disp}");
    }

    #[test]
    fn sphere_rays_start_on_sphere() {
        let s = GenerationSphere {
            center: Vec3::new(0.0, 0.0, -1.0),
            radius: 8.0,
        };
        let mut r = rng(10);
        for _ in 0..1000 {
            let d = sample_isotropic(&mut r);
            let ray = s.sample_ray(&mut r, d);
            assert!(((ray.origin - s.center).norm() - 8.0).abs() < 1e-9);
            assert!((ray.origin - s.center).dot(d) <= 1e-9);
        }
    }
}
