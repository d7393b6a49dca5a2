//! Particle transport through the stack and energy-deposit sampling.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunLength};
use crate::error::{Error, Result};
use crate::geometry::{intersect_slab, stack_traversal, DetectorId, Material, Ray, Slab, StackGeometry, Vec3};
use crate::physics::{compton, landau, linear_coefficients, StragglingParams, TABLE_MIN_MEV};
use crate::seeding::{derive_rng, Stream};
use crate::sources::{
    sample_gamma, sample_muon, GammaSource, GammaSpectrum, MuonSource, Primary, SortedUniforms, Species,
};
use crate::stats::{binomial_fraction, binomial_rate, Measured};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaTracking {
    /// Scattered photons are followed through every solid until they
    /// escape, are absorbed or fall below the table range.
    Full,
    /// The primary is followed along its initial line only; the first
    /// interaction in silicon ends the history.
    Straight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportParams {
    pub threshold_kev: f64,
    pub max_deposit_kev: f64,
    pub gamma_tracking: GammaTracking,
    pub straggling: StragglingParams,
}

impl Default for TransportParams {
    fn default() -> Self {
        TransportParams {
            threshold_kev: 1.0,
            max_deposit_kev: 1.0e4,
            gamma_tracking: GammaTracking::Full,
            straggling: StragglingParams::default(),
        }
    }
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_kev >= 0.0) || !(self.max_deposit_kev > self.threshold_kev) {
            return Err(Error::Config(
                "transport: need 0 <= threshold_kev < max_deposit_kev".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeposit {
    pub detector: DetectorId,
    pub energy_kev: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub event_id: u64,
    pub primary: Primary,
    /// At most one entry per detector, in detector order.
    pub deposits: Vec<EnergyDeposit>,
}

impl SimEvent {
    pub fn deposit(&self, id: DetectorId) -> Option<f64> {
        self.deposits.iter().find(|d| d.detector == id).map(|d| d.energy_kev)
    }

    pub fn has(&self, id: DetectorId) -> bool {
        self.deposit(id).is_some()
    }
}

/// Landau-distributed energy loss of a muon over `path_cm` of silicon, keV.
pub fn muon_deposit<R: Rng + ?Sized>(path_cm: f64, params: &TransportParams, rng: &mut R) -> Result<f64> {
    if !(path_cm > 0.0) {
        return Err(Error::InvalidArgument(format!("path length must be positive, got {path_cm}")));
    }
    let s = &params.straggling;
    let mpv = s.most_probable_kev(path_cm);
    let xi = s.xi_kev(path_cm);
    // Clamped rather than resampled: on grazing chords far below a micron the
    // most probable value turns negative, and on in-plane chords it exceeds
    // the cap, so rejection would never terminate.
    let e = mpv + xi * (landau::sample_standard(rng) - landau::STANDARD_MODE);
    Ok(e.clamp(0.0, params.max_deposit_kev))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionKind {
    Photoelectric,
    Compton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub kind: InteractionKind,
    pub position: Vec3,
    pub energy_kev: f64,
    /// Scattered photon energy and direction for Compton events.
    pub scattered: Option<(f64, Vec3)>,
}

/// Samples at most one photon interaction inside `slab` along `ray`.
pub fn gamma_interact<R: Rng + ?Sized>(ray: &Ray, slab: &Slab, energy_mev: f64, rng: &mut R) -> Result<Option<Interaction>> {
    let mu = linear_coefficients(slab.material, energy_mev)?;
    let Some(chord) = intersect_slab(ray, slab) else {
        return Ok(None);
    };
    let total = mu.interacting();
    let s: f64 = Exp1.sample(rng);
    let depth = s / total;
    if depth >= chord.path_length {
        return Ok(None);
    }
    let position = ray.at(chord.t_entry + depth);
    Ok(Some(interact_at(rng, position, ray.direction, energy_mev, mu.photoelectric / total)))
}

fn interact_at<R: Rng + ?Sized>(rng: &mut R, position: Vec3, dir: Vec3, energy_mev: f64, p_photo: f64) -> Interaction {
    if rng.random::<f64>() < p_photo {
        return Interaction {
            kind: InteractionKind::Photoelectric,
            position,
            energy_kev: energy_mev * 1e3,
            scattered: None,
        };
    }
    let sc = compton::sample(rng, energy_mev);
    let new_dir = compton::deflect(rng, dir, sc.cos_theta);
    Interaction {
        kind: InteractionKind::Compton,
        position,
        energy_kev: (energy_mev - sc.energy_mev) * 1e3,
        scattered: Some((sc.energy_mev, new_dir)),
    }
}

/// Whether a γ crosses every passive chord along `ray` without interacting.
pub fn passive_attenuation<R: Rng + ?Sized>(ray: &Ray, passive: &[Slab], energy_mev: f64, rng: &mut R) -> Result<bool> {
    crate::physics::attenuation::check_energy(energy_mev)?;
    let mut optical_depth = 0.0;
    for slab in passive {
        if let Some(c) = intersect_slab(ray, slab) {
            optical_depth += linear_coefficients(slab.material, energy_mev)?.interacting() * c.path_length;
        }
    }
    Ok(rng.random::<f64>() < (-optical_depth).exp())
}

/// Muons lose a negligible fraction of their GeV energy in the passive
/// material, so they always survive it.
pub fn muon_survives_passive(_ray: &Ray, _passive: &[Slab]) -> bool {
    true
}

#[derive(Debug, Clone, Copy)]
struct Solid {
    slab: Slab,
    detector: Option<DetectorId>,
}

/// Geometry and parameters ready for per-primary transport.
#[derive(Debug, Clone)]
pub struct Transporter {
    pub geometry: StackGeometry,
    pub params: TransportParams,
    solids: Vec<Solid>,
}

const MAX_STEPS: usize = 10_000;
const MIN_CHORD_CM: f64 = 1e-10;

impl Transporter {
    pub fn new(geometry: StackGeometry, params: TransportParams) -> Transporter {
        let solids = geometry
            .detectors
            .iter()
            .map(|(id, s)| Solid {
                slab: *s,
                detector: Some(*id),
            })
            .chain(geometry.passive.iter().map(|s| Solid {
                slab: *s,
                detector: None,
            }))
            .collect();
        Transporter {
            geometry,
            params,
            solids,
        }
    }

    /// Raw energy deposited per detector (keV), before thresholds.
    pub fn transport<R: Rng + ?Sized>(&self, primary: &Primary, rng: &mut R) -> Result<[f64; 3]> {
        match primary.species {
            Species::Muon => self.transport_muon(primary, rng),
            Species::Gamma => match self.params.gamma_tracking {
                GammaTracking::Full => self.track_gamma(primary, rng),
                GammaTracking::Straight => self.straight_gamma(primary, rng),
            },
        }
    }

    fn transport_muon<R: Rng + ?Sized>(&self, primary: &Primary, rng: &mut R) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (id, path) in stack_traversal(&primary.ray(), &self.geometry) {
            out[id.index()] += muon_deposit(path, &self.params, rng)?;
        }
        Ok(out)
    }

    fn straight_gamma<R: Rng + ?Sized>(&self, primary: &Primary, rng: &mut R) -> Result<[f64; 3]> {
        let ray = primary.ray();
        let mut out = [0.0; 3];
        let mut hits: Vec<(f64, &Solid, f64)> = self
            .solids
            .iter()
            .filter_map(|s| intersect_slab(&ray, &s.slab).map(|c| (c.t_entry, s, c.path_length)))
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, solid, _) in hits {
            match solid.detector {
                None => {
                    if !passive_attenuation(&ray, std::slice::from_ref(&solid.slab), primary.energy_mev, rng)? {
                        break;
                    }
                }
                Some(id) => {
                    if let Some(hit) = gamma_interact(&ray, &solid.slab, primary.energy_mev, rng)? {
                        out[id.index()] += hit.energy_kev;
                        break;
                    }
                }
            }
        }
        Ok(out)
    }

    fn track_gamma<R: Rng + ?Sized>(&self, primary: &Primary, rng: &mut R) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        let mut pos = primary.origin;
        let mut dir = primary.direction;
        let mut energy = primary.energy_mev;
        for _ in 0..MAX_STEPS {
            let ray = Ray {
                origin: pos,
                direction: dir,
            };
            let next = self
                .solids
                .iter()
                .filter_map(|s| {
                    intersect_slab(&ray, &s.slab)
                        .filter(|c| c.path_length > MIN_CHORD_CM)
                        .map(|c| (s, c))
                })
                .min_by(|a, b| a.1.t_entry.total_cmp(&b.1.t_entry));
            let Some((solid, chord)) = next else {
                break;
            };
            let mu = linear_coefficients(solid.slab.material, energy)?;
            let total = mu.interacting();
            let depth: f64 = Distribution::<f64>::sample(&Exp1, rng) / total;
            if depth >= chord.path_length {
                pos = ray.at(chord.t_exit);
                continue;
            }
            let hit = interact_at(rng, ray.at(chord.t_entry + depth), dir, energy, mu.photoelectric / total);
            if let Some(id) = solid.detector {
                out[id.index()] += hit.energy_kev;
            }
            match hit.scattered {
                None => break,
                Some((e, _)) if e < TABLE_MIN_MEV => {
                    if let Some(id) = solid.detector {
                        out[id.index()] += e * 1e3;
                    }
                    break;
                }
                Some((e, d)) => {
                    energy = e;
                    dir = d;
                    pos = hit.position;
                }
            }
        }
        Ok(out)
    }

    /// Transports one primary and applies the detection threshold.
    pub fn simulate_primary<R: Rng + ?Sized>(&self, primary: &Primary, rng: &mut R) -> Result<Vec<EnergyDeposit>> {
        let raw = self.transport(primary, rng)?;
        Ok(DetectorId::ALL
            .iter()
            .filter(|id| raw[id.index()] >= self.params.threshold_kev && raw[id.index()] > 0.0)
            .map(|&detector| EnergyDeposit {
                detector,
                energy_kev: raw[detector.index()].min(self.params.max_deposit_kev),
                time_s: primary.time_s,
            })
            .collect())
    }
}

/// Generators and transport resolved from a run configuration.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub transporter: Transporter,
    pub muons: MuonSource,
    pub gammas: GammaSource,
}

impl SimulationSetup {
    pub fn from_config(config: &RunConfig) -> Result<SimulationSetup> {
        config.validate()?;
        let geometry = StackGeometry::from_params(&config.geometry)?;
        let bounds = geometry.bounds();
        let center = (bounds.0 + bounds.1) * 0.5;
        let src = &config.sources;
        let muons = MuonSource::new(&src.flux, &src.angular, &src.muon_spectrum, center)?;
        let gammas = GammaSource::new(&src.flux, GammaSpectrum::new(&src.gamma_spectrum)?, center);
        for (name, sphere) in [("hemisphere_radius", muons.sphere), ("gamma_shell_radius", gammas.sphere)] {
            if !sphere.encloses(bounds) {
                return Err(Error::Config(format!(
                    "sources.flux.{name} = {} cm does not enclose the geometry",
                    sphere.radius
                )));
            }
        }
        Ok(SimulationSetup {
            transporter: Transporter::new(geometry, config.transport.clone()),
            muons,
            gammas,
        })
    }

    pub fn generation_rate(&self, species: Species) -> f64 {
        match species {
            Species::Muon => self.muons.generation_rate(),
            Species::Gamma => self.gammas.generation_rate(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, species: Species, rng: &mut R) -> Primary {
        match species {
            Species::Muon => sample_muon(rng, &self.muons),
            Species::Gamma => sample_gamma(rng, &self.gammas),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSummary {
    pub species: Species,
    pub n_generated: u64,
    pub generation_rate_hz: f64,
    /// Events above threshold in TOP, CENTER, BOTTOM.
    pub singles: [u64; 3],
    pub tb_coincidences: u64,
    pub center_total: u64,
    /// CENTER events that also deposit in TOP and BOTTOM.
    pub tagged: u64,
    pub single_rates: [Measured; 3],
    pub tb_rate: Measured,
    pub tagging_efficiency: Option<Measured>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub format: String,
    pub complete: bool,
    pub seed: u64,
    pub livetime_s: f64,
    pub threshold_kev: f64,
    pub species: Vec<SpeciesSummary>,
}

pub const SUMMARY_FORMAT: &str = "muontag-summary/1";

impl SimulationSummary {
    pub fn species(&self, s: Species) -> Option<&SpeciesSummary> {
        self.species.iter().find(|x| x.species == s)
    }

    /// Builds the summary from the retained event list.
    pub fn from_events(
        events: &[SimEvent],
        generated: &[(Species, u64, f64)],
        livetime_s: f64,
        seed: u64,
        threshold_kev: f64,
        complete: bool,
    ) -> SimulationSummary {
        let species = generated
            .iter()
            .map(|&(species, n_generated, generation_rate_hz)| {
                let mut singles = [0u64; 3];
                let (mut tb, mut center, mut tagged) = (0u64, 0u64, 0u64);
                for e in events.iter().filter(|e| e.primary.species == species) {
                    for d in &e.deposits {
                        singles[d.detector.index()] += 1;
                    }
                    let (t, c, b) = (e.has(DetectorId::Top), e.has(DetectorId::Center), e.has(DetectorId::Bottom));
                    tb += (t && b) as u64;
                    center += c as u64;
                    tagged += (c && t && b) as u64;
                }
                let rate = |k| binomial_rate(k, n_generated, livetime_s);
                SpeciesSummary {
                    species,
                    n_generated,
                    generation_rate_hz,
                    singles,
                    tb_coincidences: tb,
                    center_total: center,
                    tagged,
                    single_rates: singles.map(rate),
                    tb_rate: rate(tb),
                    tagging_efficiency: binomial_fraction(tagged, center).ok(),
                }
            })
            .collect();
        SimulationSummary {
            format: SUMMARY_FORMAT.into(),
            complete,
            seed,
            livetime_s,
            threshold_kev,
            species,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub events: Vec<SimEvent>,
    pub summary: SimulationSummary,
}

const CHUNK: usize = 1 << 15;

fn streams(species: Species) -> (Stream, Stream) {
    match species {
        Species::Muon => (Stream::MuonTransport, Stream::MuonTimes),
        Species::Gamma => (Stream::GammaTransport, Stream::GammaTimes),
    }
}

/// Runs the Monte Carlo for all species with non-zero flux.
///
/// `RunLength::Primaries` fixes the count of the first enabled species and
/// thereby the livetime; other species get Poisson counts for that livetime.
/// Output is identical for any worker count. When `cancel` is raised the
/// run stops between chunks and the summary is marked incomplete, covering
/// only the time span processed for every species.
pub fn run_simulation(
    config: &RunConfig,
    length: RunLength,
    seed: u64,
    workers: usize,
    cancel: Option<&AtomicBool>,
) -> Result<SimulationOutput> {
    let setup = SimulationSetup::from_config(config)?;
    let enabled: Vec<Species> = [Species::Muon, Species::Gamma]
        .into_iter()
        .filter(|&s| setup.generation_rate(s) > 0.0)
        .collect();

    let livetime = match length {
        RunLength::Livetime(t) => t,
        RunLength::Primaries(n) => match enabled.first() {
            Some(&s) => n as f64 / setup.generation_rate(s),
            None => 0.0,
        },
    };
    if !(livetime >= 0.0 && livetime.is_finite()) {
        return Err(Error::Config(format!("invalid livetime {livetime}")));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;

    let mut per_species = Vec::new();
    let mut generated = Vec::new();
    let mut covered = livetime;
    let mut complete = true;
    for (k, &species) in enabled.iter().enumerate() {
        let rate = setup.generation_rate(species);
        let n = match length {
            RunLength::Primaries(n) if k == 0 => n,
            _ => {
                let mean = rate * livetime;
                if mean > 0.0 {
                    let mut rng = derive_rng(seed, Stream::SpeciesCounts, species as u64);
                    Poisson::new(mean)
                        .map_err(|e| Error::Config(format!("poisson mean {mean}: {e}")))?
                        .sample(&mut rng) as u64
                } else {
                    0
                }
            }
        };
        let (transport_stream, time_stream) = streams(species);
        let mut times = SortedUniforms::new(derive_rng(seed, time_stream, 0), n, livetime);
        let mut events = Vec::new();
        let mut done = 0u64;
        let mut last_time = 0.0;
        while done < n {
            if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                complete = false;
                covered = covered.min(last_time);
                break;
            }
            let m = CHUNK.min((n - done) as usize);
            let chunk: Vec<(u64, f64)> = (done..done + m as u64).zip(times.by_ref()).collect();
            let results: Vec<Result<Option<SimEvent>>> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&(index, t)| {
                        let mut rng: ChaCha8Rng = derive_rng(seed, transport_stream, index);
                        let mut primary = setup.sample(species, &mut rng);
                        primary.time_s = t;
                        let deposits = setup.transporter.simulate_primary(&primary, &mut rng)?;
                        Ok((!deposits.is_empty()).then_some(SimEvent {
                            event_id: index,
                            primary,
                            deposits,
                        }))
                    })
                    .collect()
            });
            for r in results {
                if let Some(e) = r? {
                    events.push(e);
                }
            }
            last_time = chunk.last().map(|c| c.1).unwrap_or(last_time);
            done += m as u64;
        }
        generated.push((species, done, rate));
        per_species.push(events);
    }

    let mut events: Vec<SimEvent> = per_species.into_iter().flatten().filter(|e| e.primary.time_s <= covered).collect();
    // Species lists are each time-ordered; a stable sort merges them.
    events.sort_by(|a, b| a.primary.time_s.total_cmp(&b.primary.time_s));
    for (i, e) in events.iter_mut().enumerate() {
        e.event_id = i as u64;
    }
    if !complete {
        // Rescale generated counts to the covered span.
        for g in &mut generated {
            if livetime > 0.0 {
                g.1 = ((g.1 as f64) * (covered / livetime).min(1.0)).round() as u64;
            }
        }
    }
    let summary = SimulationSummary::from_events(
        &events,
        &generated,
        covered,
        seed,
        config.transport.threshold_kev,
        complete,
    );
    Ok(SimulationOutput { events, summary })
}

/// Per-material linear interaction coefficient, 1/cm (convenience for reports).
pub fn interaction_coefficient(material: Material, energy_mev: f64) -> Result<f64> {
    Ok(linear_coefficients(material, energy_mev)?.interacting())
}
