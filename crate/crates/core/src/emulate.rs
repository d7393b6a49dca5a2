//! Pulse-level emulation of the readout for sideband studies.
//!
//! Skips waveforms entirely: TOP/BOTTOM pulses are drawn as Poisson streams
//! with a coincident component, records are opened with the same rule as the
//! synthetic DAQ (fixed length, pre-trigger clipped at the previous record end,
//! triggers inside an open record absorbed), and the delay histogram is built
//! from the largest pulse per channel and record. Every pulse carries its
//! origin, so the number of accidental pairs inside the window is known.
//!
//! One entry per record means an accidental pair is lost whenever a larger
//! pulse shares its record, so the histogram holds fewer accidentals than
//! `R_T · R_B · Δt`. The sideband estimates what the histogram holds.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::coincidence::{analytic_accidentals_measured, sideband_accidentals, CoincidenceWindow, DelayHistogram};
use crate::error::{Error, Result};
use crate::physics::landau;
use crate::seeding::{derive_rng, Stream};
use crate::stats::{poisson_rate, Measured};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorParams {
    /// Total single rates including the coincident component, events/s.
    pub rate_top: f64,
    pub rate_bottom: f64,
    /// Rate of physical TOP–BOTTOM coincidences, events/s. Zero by default:
    /// the streams are then independent and every in-window pair is accidental.
    pub coincidence_rate: f64,
    /// Per-pulse timing jitter; the delay spread is √2 larger.
    pub jitter_us: f64,
    pub livetime_s: f64,
    pub record_duration_s: f64,
    pub pre_trigger_s: f64,
    pub window: CoincidenceWindow,
    pub negative_sideband_us: [f64; 2],
    pub bin_width_us: f64,
    /// Mean of the exponential γ amplitude above threshold, keV.
    pub gamma_mean_kev: f64,
    pub threshold_kev: f64,
    pub muon_mpv_kev: f64,
    pub muon_width_kev: f64,
}

impl Default for EmulatorParams {
    fn default() -> Self {
        EmulatorParams {
            rate_top: 3.43,
            rate_bottom: 2.97,
            coincidence_rate: 0.0,
            jitter_us: 40.0,
            livetime_s: 4700.0,
            record_duration_s: 0.024,
            pre_trigger_s: 0.006,
            window: CoincidenceWindow {
                center_us: 0.0,
                half_width_us: 170.0,
            },
            negative_sideband_us: [-2500.0, -400.0],
            bin_width_us: 20.0,
            gamma_mean_kev: 60.0,
            threshold_kev: 10.0,
            muon_mpv_kev: 150.0,
            muon_width_kev: 12.0,
        }
    }
}

impl EmulatorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("emulator: {m}")));
        if !(self.coincidence_rate >= 0.0) || !(self.rate_top >= self.coincidence_rate) || !(self.rate_bottom >= self.coincidence_rate) {
            return bad("single rates must be finite and at least the coincidence rate");
        }
        if !(self.livetime_s > 0.0) || !(self.record_duration_s > 0.0) {
            return bad("livetime and record duration must be > 0");
        }
        if !(0.0..self.record_duration_s).contains(&self.pre_trigger_s) {
            return bad("pre-trigger must lie inside the record");
        }
        if !(self.jitter_us >= 0.0) || !(self.bin_width_us > 0.0) || !(self.gamma_mean_kev > 0.0) {
            return bad("jitter, bin width and γ amplitude scale must be positive");
        }
        Ok(())
    }

    /// Positive-delay mirror of the negative sideband.
    pub fn positive_sideband_us(&self) -> [f64; 2] {
        [-self.negative_sideband_us[1], -self.negative_sideband_us[0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EmPulse {
    time_s: f64,
    bottom: bool,
    amplitude: f64,
    /// Index of the coincidence this pulse belongs to.
    source: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorRun {
    pub seed: u64,
    pub livetime_s: f64,
    pub records: u64,
    pub singles_top: u64,
    pub singles_bottom: u64,
    pub rate_top: Measured,
    pub rate_bottom: Measured,
    /// `R_T · R_B · Δt` from the counted singles.
    pub analytic: Measured,
    pub sideband_negative: Measured,
    pub sideband_positive: Measured,
    /// Pairs inside the window whose pulses come from different particles.
    pub accidentals_in_window: u64,
    pub true_in_window: u64,
    pub truth: Measured,
    #[serde(skip)]
    pub histogram: Option<DelayHistogram>,
}

impl EmulatorRun {
    /// Whether the negative-sideband estimate agrees with both the analytic
    /// value and the injected truth within `k` combined standard deviations.
    pub fn compatible(&self, k: f64) -> bool {
        let ok = |other: Measured| self.sideband_negative.pull(other).is_some_and(|p| p.abs() <= k);
        ok(self.analytic) && ok(self.truth)
    }
}

fn poisson_times<R: Rng>(rng: &mut R, rate: f64, livetime: f64, out: &mut Vec<f64>) {
    if rate <= 0.0 {
        return;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += Distribution::<f64>::sample(&gap, rng);
        if t >= livetime {
            break;
        }
        out.push(t);
    }
}

pub fn emulate(params: &EmulatorParams, seed: u64) -> Result<EmulatorRun> {
    params.validate()?;
    let mut rng = derive_rng(seed, Stream::Emulation, 0);
    let jitter = Normal::new(0.0, params.jitter_us * 1e-6).map_err(|e| Error::Config(format!("emulator: {e}")))?;
    let gamma_amp = Exp::new(1.0 / params.gamma_mean_kev).expect("positive mean");

    let mut pulses = Vec::new();
    let mut times = Vec::new();
    poisson_times(&mut rng, params.coincidence_rate, params.livetime_s, &mut times);
    for (i, &t) in times.iter().enumerate() {
        for bottom in [false, true] {
            let dt: f64 = Distribution::<f64>::sample(&jitter, &mut rng);
            let e = params.muon_mpv_kev + params.muon_width_kev * (landau::sample_standard(&mut rng) - landau::STANDARD_MODE);
            pulses.push(EmPulse {
                time_s: t + dt,
                bottom,
                amplitude: e.max(params.threshold_kev),
                source: Some(i as u64),
            });
        }
    }
    for (bottom, rate) in [(false, params.rate_top), (true, params.rate_bottom)] {
        times.clear();
        poisson_times(&mut rng, rate - params.coincidence_rate, params.livetime_s, &mut times);
        for &t in &times {
            let dt: f64 = Distribution::<f64>::sample(&jitter, &mut rng);
            pulses.push(EmPulse {
                time_s: t + dt,
                bottom,
                amplitude: params.threshold_kev + Distribution::<f64>::sample(&gamma_amp, &mut rng),
                source: None,
            });
        }
    }
    pulses.retain(|p| (0.0..params.livetime_s).contains(&p.time_s));
    pulses.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));

    let window_us = params.window.total_width_us();
    let range_us = params.record_duration_s * 1e6;
    let mut hist = DelayHistogram::new(params.bin_width_us, range_us);
    let mut records = 0u64;
    let mut accidental = 0u64;
    let mut genuine = 0u64;
    let mut last_end = f64::NEG_INFINITY;
    let mut i = 0;
    while i < pulses.len() {
        let trigger = pulses[i].time_s;
        let start = (trigger - params.pre_trigger_s).max(last_end);
        let end = start + params.record_duration_s;
        if end > params.livetime_s {
            break;
        }
        records += 1;
        let mut best: [Option<EmPulse>; 2] = [None, None];
        while i < pulses.len() && pulses[i].time_s < end {
            let p = pulses[i];
            let slot = &mut best[p.bottom as usize];
            if slot.is_none_or(|q| p.amplitude > q.amplitude) {
                *slot = Some(p);
            }
            i += 1;
        }
        last_end = end;
        if let [Some(t), Some(b)] = best {
            let delay_us = (b.time_s - t.time_s) * 1e6;
            hist.fill(delay_us);
            if params.window.contains(delay_us) {
                if t.source.is_some() && t.source == b.source {
                    genuine += 1;
                } else {
                    accidental += 1;
                }
            }
        }
    }

    let livetime = params.livetime_s;
    let singles_top = pulses.iter().filter(|p| !p.bottom).count() as u64;
    let singles_bottom = pulses.len() as u64 - singles_top;
    let rate_top = poisson_rate(singles_top, livetime);
    let rate_bottom = poisson_rate(singles_bottom, livetime);
    Ok(EmulatorRun {
        seed,
        livetime_s: livetime,
        records,
        singles_top,
        singles_bottom,
        rate_top,
        rate_bottom,
        analytic: analytic_accidentals_measured(rate_top, rate_bottom, window_us * 1e-6),
        sideband_negative: sideband_accidentals(&hist, params.negative_sideband_us, window_us, livetime)?,
        sideband_positive: sideband_accidentals(&hist, params.positive_sideband_us(), window_us, livetime)?,
        accidentals_in_window: accidental,
        true_in_window: genuine,
        truth: poisson_rate(accidental, livetime),
        histogram: Some(hist),
    })
}

/// Aggregate of many independent emulator runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandStudy {
    pub runs: Vec<EmulatorRun>,
    pub passed: usize,
    /// `Σ positive / Σ negative − 1` over the runs.
    pub positive_excess: f64,
}

pub fn sideband_study(params: &EmulatorParams, seeds: impl IntoIterator<Item = u64>, k: f64) -> Result<SidebandStudy> {
    let runs: Vec<EmulatorRun> = seeds.into_iter().map(|s| emulate(params, s)).collect::<Result<_>>()?;
    let passed = runs.iter().filter(|r| r.compatible(k)).count();
    let (pos, neg) = runs
        .iter()
        .fold((0.0, 0.0), |(p, n), r| (p + r.sideband_positive.value, n + r.sideband_negative.value));
    let positive_excess = if neg > 0.0 { pos / neg - 1.0 } else { 0.0 };
    Ok(SidebandStudy {
        runs,
        passed,
        positive_excess,
    })
}
