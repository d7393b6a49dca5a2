//! Detector stack geometry and ray/box chords.
//!
//! Coordinates are in cm with `z` pointing up. The CENTER wafer sits at the
//! origin; TOP and BOTTOM are placed one wafer thickness plus `layer_gap_cm`
//! above and below it. Every solid is an axis-aligned box.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{derive_rng, Stream};
use crate::sources::{AngularModel, GenerationSphere};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    /// Two unit vectors completing `self` (assumed unit) to an orthonormal basis.
    pub fn orthonormal_basis(self) -> (Vec3, Vec3) {
        let helper = if self.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let u = self.cross(helper).normalized();
        let v = self.cross(u);
        (u, v)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// One of the three instrumented silicon wafers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorId {
    Top,
    Center,
    Bottom,
}

impl DetectorId {
    /// Channel order used for every per-detector array and file column.
    pub const ALL: [DetectorId; 3] = [DetectorId::Top, DetectorId::Center, DetectorId::Bottom];

    pub fn index(self) -> usize {
        match self {
            DetectorId::Top => 0,
            DetectorId::Center => 1,
            DetectorId::Bottom => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<DetectorId> {
        DetectorId::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorId::Top => "top",
            DetectorId::Center => "center",
            DetectorId::Bottom => "bottom",
        }
    }

    pub fn parse(s: &str) -> Option<DetectorId> {
        match s {
            "top" => Some(DetectorId::Top),
            "center" => Some(DetectorId::Center),
            "bottom" => Some(DetectorId::Bottom),
            _ => None,
        }
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Silicon,
    Copper,
    Aluminum,
    /// Cryophy magnetic shield, transported as its nickel-iron equivalent.
    Cryophy,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub material: Material,
}

/// Entry point and length of a ray segment inside a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chord {
    pub entry_point: Vec3,
    pub t_entry: f64,
    pub t_exit: f64,
    pub path_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Ray {
        Ray {
            origin,
            direction: direction.normalized(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn is_unit(&self) -> bool {
        (self.direction.norm() - 1.0).abs() <= 1e-12
    }
}

impl Slab {
    pub fn new(center: Vec3, half_extents: Vec3, material: Material) -> Slab {
        Slab {
            center,
            half_extents,
            material,
        }
    }

    pub fn min_corner(&self) -> Vec3 {
        self.center - self.half_extents
    }

    pub fn max_corner(&self) -> Vec3 {
        self.center + self.half_extents
    }

    pub fn overlaps(&self, other: &Slab) -> bool {
        const EPS: f64 = 1e-12;
        (0..3).all(|i| {
            let (a_lo, a_hi) = (self.min_corner().axis(i), self.max_corner().axis(i));
            let (b_lo, b_hi) = (other.min_corner().axis(i), other.max_corner().axis(i));
            a_lo < b_hi - EPS && b_lo < a_hi - EPS
        })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| (p.axis(i) - self.center.axis(i)).abs() <= self.half_extents.axis(i))
    }
}

/// Chord of `ray` through `slab`, restricted to `t >= 0`.
///
/// Returns `None` when the ray misses the box or only grazes it.
pub fn intersect_slab(ray: &Ray, slab: &Slab) -> Option<Chord> {
    let lo = slab.min_corner();
    let hi = slab.max_corner();
    let mut t_min = 0.0_f64;
    let mut t_max = f64::INFINITY;
    for i in 0..3 {
        let o = ray.origin.axis(i);
        let d = ray.direction.axis(i);
        let (a, b) = (lo.axis(i), hi.axis(i));
        if d.abs() < 1e-300 {
            if o < a || o > b {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut t0, mut t1) = ((a - o) * inv, (b - o) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_min = t_min.max(t0);
        t_max = t_max.min(t1);
        if t_max <= t_min {
            return None;
        }
    }
    let path_length = t_max - t_min;
    if path_length <= 0.0 || !path_length.is_finite() {
        return None;
    }
    Some(Chord {
        entry_point: ray.at(t_min),
        t_entry: t_min,
        t_exit: t_max,
        path_length,
    })
}

/// Geometry parameters as they appear in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryParams {
    /// Full wafer thickness (525 µm).
    pub silicon_thickness_cm: f64,
    /// Vertical clearance between adjacent wafers.
    pub layer_gap_cm: f64,
    /// Lateral size (x, y) of TOP and BOTTOM.
    pub outer_size_cm: [f64; 2],
    /// Lateral size (x, y) of CENTER.
    pub center_size_cm: [f64; 2],
    /// Lateral offset of CENTER relative to the outer wafers.
    pub center_offset_cm: [f64; 2],
    pub copper_box: Option<CopperBoxParams>,
    pub holders: Option<HolderParams>,
    /// Shield inner cavity half extents (x, y, z).
    pub shield_inner_half_extents_cm: [f64; 3],
    pub shield_spacing_cm: f64,
    /// Shield layers from the inside out.
    pub shields: Vec<ShieldLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopperBoxParams {
    pub wall_thickness_cm: f64,
    pub lid_thickness_cm: f64,
    pub clearance_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderParams {
    pub frame_width_cm: f64,
    pub frame_height_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShieldLayer {
    pub material: Material,
    pub thickness_cm: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            silicon_thickness_cm: 0.0525,
            layer_gap_cm: 0.45,
            outer_size_cm: [4.5, 4.5],
            center_size_cm: [4.0, 2.0],
            center_offset_cm: [0.0, 0.0],
            copper_box: Some(CopperBoxParams::default()),
            holders: Some(HolderParams::default()),
            shield_inner_half_extents_cm: [3.5, 3.5, 1.5],
            shield_spacing_cm: 0.05,
            shields: vec![
                ShieldLayer {
                    material: Material::Aluminum,
                    thickness_cm: 0.1,
                },
                ShieldLayer {
                    material: Material::Copper,
                    thickness_cm: 0.1,
                },
                ShieldLayer {
                    material: Material::Cryophy,
                    thickness_cm: 0.1,
                },
            ],
        }
    }
}

impl Default for CopperBoxParams {
    fn default() -> Self {
        CopperBoxParams {
            wall_thickness_cm: 0.5,
            lid_thickness_cm: 0.2,
            clearance_cm: 0.05,
        }
    }
}

impl Default for HolderParams {
    fn default() -> Self {
        HolderParams {
            frame_width_cm: 0.5,
            frame_height_cm: 0.1,
        }
    }
}

/// The instrumented stack plus passive material.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGeometry {
    /// Silicon wafers ordered from top to bottom.
    pub detectors: Vec<(DetectorId, Slab)>,
    pub layer_gap: f64,
    pub passive: Vec<Slab>,
}

/// Six non-overlapping plates enclosing the cavity `inner` (half extents).
/// Lids carry the full outer footprint, x-walls the full y depth.
pub fn box_shell(center: Vec3, inner: Vec3, wall: f64, lid: f64, material: Material) -> Vec<Slab> {
    let mut plates = Vec::with_capacity(6);
    for sign in [1.0, -1.0] {
        plates.push(Slab::new(
            center + Vec3::new(0.0, 0.0, sign * (inner.z + lid / 2.0)),
            Vec3::new(inner.x + wall, inner.y + wall, lid / 2.0),
            material,
        ));
        plates.push(Slab::new(
            center + Vec3::new(sign * (inner.x + wall / 2.0), 0.0, 0.0),
            Vec3::new(wall / 2.0, inner.y + wall, inner.z),
            material,
        ));
        plates.push(Slab::new(
            center + Vec3::new(0.0, sign * (inner.y + wall / 2.0), 0.0),
            Vec3::new(inner.x, wall / 2.0, inner.z),
            material,
        ));
    }
    plates
}

/// Four bars framing a wafer in its own plane.
fn frame(center: Vec3, inner_half: [f64; 2], width: f64, height: f64) -> Vec<Slab> {
    let box_inner = Vec3::new(inner_half[0], inner_half[1], height / 2.0);
    box_shell(center, box_inner, width, 0.0, Material::Copper)
        .into_iter()
        .filter(|s| s.half_extents.z > 0.0)
        .filter(|s| s.center.z == center.z)
        .collect()
}

impl StackGeometry {
    pub fn from_params(p: &GeometryParams) -> Result<StackGeometry> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("geometry.{name} must be positive, got {v}")))
            }
        };
        positive("silicon_thickness_cm", p.silicon_thickness_cm)?;
        positive("layer_gap_cm", p.layer_gap_cm)?;
        for (name, v) in [
            ("outer_size_cm[0]", p.outer_size_cm[0]),
            ("outer_size_cm[1]", p.outer_size_cm[1]),
            ("center_size_cm[0]", p.center_size_cm[0]),
            ("center_size_cm[1]", p.center_size_cm[1]),
        ] {
            positive(name, v)?;
        }

        let half_t = p.silicon_thickness_cm / 2.0;
        let pitch = p.silicon_thickness_cm + p.layer_gap_cm;
        let outer = Vec3::new(p.outer_size_cm[0] / 2.0, p.outer_size_cm[1] / 2.0, half_t);
        let center_half = Vec3::new(p.center_size_cm[0] / 2.0, p.center_size_cm[1] / 2.0, half_t);
        let center_pos = Vec3::new(p.center_offset_cm[0], p.center_offset_cm[1], 0.0);
        let detectors = vec![
            (
                DetectorId::Top,
                Slab::new(Vec3::new(0.0, 0.0, pitch), outer, Material::Silicon),
            ),
            (
                DetectorId::Center,
                Slab::new(center_pos, center_half, Material::Silicon),
            ),
            (
                DetectorId::Bottom,
                Slab::new(Vec3::new(0.0, 0.0, -pitch), outer, Material::Silicon),
            ),
        ];

        let mut passive = Vec::new();
        if let Some(b) = &p.copper_box {
            positive("copper_box.wall_thickness_cm", b.wall_thickness_cm)?;
            positive("copper_box.lid_thickness_cm", b.lid_thickness_cm)?;
            let inner = Vec3::new(
                center_half.x + b.clearance_cm,
                center_half.y + b.clearance_cm,
                half_t + b.clearance_cm,
            );
            passive.extend(box_shell(
                center_pos,
                inner,
                b.wall_thickness_cm,
                b.lid_thickness_cm,
                Material::Copper,
            ));
        }
        if let Some(h) = &p.holders {
            positive("holders.frame_width_cm", h.frame_width_cm)?;
            positive("holders.frame_height_cm", h.frame_height_cm)?;
            for z in [pitch, -pitch] {
                passive.extend(frame(
                    Vec3::new(0.0, 0.0, z),
                    [outer.x, outer.y],
                    h.frame_width_cm,
                    h.frame_height_cm,
                ));
            }
        }
        let mut inner = Vec3::new(
            p.shield_inner_half_extents_cm[0],
            p.shield_inner_half_extents_cm[1],
            p.shield_inner_half_extents_cm[2],
        );
        for layer in &p.shields {
            positive("shields.thickness_cm", layer.thickness_cm)?;
            passive.extend(box_shell(
                Vec3::ZERO,
                inner,
                layer.thickness_cm,
                layer.thickness_cm,
                layer.material,
            ));
            let grow = layer.thickness_cm + p.shield_spacing_cm;
            inner = inner + Vec3::new(grow, grow, grow);
        }

        let geometry = StackGeometry {
            detectors,
            layer_gap: p.layer_gap_cm,
            passive,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Checks ordering and that no two solids overlap.
    pub fn validate(&self) -> Result<()> {
        let z = |id: DetectorId| self.slab(id).map(|s| s.center.z);
        if let (Some(t), Some(c), Some(b)) = (
            z(DetectorId::Top),
            z(DetectorId::Center),
            z(DetectorId::Bottom),
        ) {
            if !(t > c && c > b) {
                return Err(Error::Config(
                    "TOP must lie above CENTER, which must lie above BOTTOM".into(),
                ));
            }
        }
        let all: Vec<&Slab> = self
            .detectors
            .iter()
            .map(|(_, s)| s)
            .chain(self.passive.iter())
            .collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::Config(format!(
                        "overlapping solids: {:?} at {:?} and {:?} at {:?}",
                        a.material, a.center, b.material, b.center
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn slab(&self, id: DetectorId) -> Option<&Slab> {
        self.detectors.iter().find(|(d, _)| *d == id).map(|(_, s)| s)
    }

    /// Bounding box (min, max) of the silicon only.
    pub fn silicon_bounds(&self) -> (Vec3, Vec3) {
        bounds(self.detectors.iter().map(|(_, s)| s))
    }

    /// Bounding box (min, max) of every solid.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds(self.detectors.iter().map(|(_, s)| s).chain(self.passive.iter()))
    }
}

fn bounds<'a>(slabs: impl Iterator<Item = &'a Slab>) -> (Vec3, Vec3) {
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in slabs {
        let (a, b) = (s.min_corner(), s.max_corner());
        lo = Vec3::new(lo.x.min(a.x), lo.y.min(a.y), lo.z.min(a.z));
        hi = Vec3::new(hi.x.max(b.x), hi.y.max(b.y), hi.z.max(b.z));
    }
    (lo, hi)
}

/// Silicon wafers crossed by `ray`, ordered by entry distance.
pub fn stack_traversal(ray: &Ray, geometry: &StackGeometry) -> Vec<(DetectorId, f64)> {
    let mut hits: Vec<(f64, DetectorId, f64)> = geometry
        .detectors
        .iter()
        .filter_map(|(id, slab)| intersect_slab(ray, slab).map(|c| (c.t_entry, *id, c.path_length)))
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    hits.into_iter().map(|(_, id, l)| (id, l)).collect()
}

/// Fraction of muon rays crossing CENTER that also cross TOP and BOTTOM.
///
/// Rays are drawn from the muon angular model on a sphere that tightly
/// encloses the silicon; passive material is irrelevant for muons.
pub fn geometric_tagging_fraction(
    geometry: &StackGeometry,
    angular_model: &AngularModel,
    n_samples: u64,
    seed: u64,
) -> Result<f64> {
    let (tagged, total) = geometric_tagging_counts(geometry, angular_model, n_samples, seed)?;
    if total == 0 {
        return Err(Error::InvalidArgument(
            "no sampled ray crossed the CENTER wafer".into(),
        ));
    }
    Ok(tagged as f64 / total as f64)
}

/// `(tagged, center_crossings)` behind [`geometric_tagging_fraction`].
pub fn geometric_tagging_counts(
    geometry: &StackGeometry,
    angular_model: &AngularModel,
    n_samples: u64,
    seed: u64,
) -> Result<(u64, u64)> {
    use rayon::prelude::*;

    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let sampler = angular_model.sampler()?;
    let sphere = GenerationSphere::enclosing(geometry.silicon_bounds(), 1.001);
    const BLOCK: u64 = 1 << 14;
    let n_blocks = n_samples.div_ceil(BLOCK);
    let (tagged, total) = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = derive_rng(seed, Stream::GeometricScan, b);
            let n = BLOCK.min(n_samples - b * BLOCK);
            let mut tagged = 0u64;
            let mut total = 0u64;
            for _ in 0..n {
                let dir = sampler.sample_downward(&mut rng);
                let ray = sphere.sample_ray(&mut rng, dir);
                let hits = stack_traversal(&ray, geometry);
                let has = |id| hits.iter().any(|(d, _)| *d == id);
                if has(DetectorId::Center) {
                    total += 1;
                    if has(DetectorId::Top) && has(DetectorId::Bottom) {
                        tagged += 1;
                    }
                }
            }
            (tagged, total)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((tagged, total))
}

/// Uniform random point inside `slab`.
pub fn sample_point_in<R: Rng + ?Sized>(rng: &mut R, slab: &Slab) -> Vec3 {
    let u = |rng: &mut R, c: f64, h: f64| c + h * (2.0 * rng.random::<f64>() - 1.0);
    Vec3::new(
        u(rng, slab.center.x, slab.half_extents.x),
        u(rng, slab.center.y, slab.half_extents.y),
        u(rng, slab.center.z, slab.half_extents.z),
    )
}
