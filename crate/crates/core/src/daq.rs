//! Synthetic KID readout: continuous per-channel streams, band-pass trigger
//! and fixed-length multi-channel records.
//!
//! Sample `n` of every stream is taken at time `n / fs`. Streams are built in
//! chunks so that hour-long runs never hold more than a few records of
//! samples in memory; the chunked path and the whole-stream helpers share the
//! same code and produce identical output.

use std::f64::consts::{PI, TAU};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DetectorId;
use crate::seeding::{derive_rng, Stream};
use crate::stats::robust_sigma;
use crate::transport::SimEvent;

/// Double-exponential phonon pulse with unit peak before gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTemplate {
    pub rise_time_us: f64,
    pub decay_time_us: f64,
    /// Amplitude units per keV.
    pub gain: f64,
}

impl PulseTemplate {
    pub fn new(rise_time_us: f64, decay_time_us: f64, gain: f64) -> Result<PulseTemplate> {
        if !(rise_time_us > 0.0 && decay_time_us > rise_time_us) {
            return Err(Error::Config(format!(
                "pulse template needs decay > rise > 0, got rise {rise_time_us} us, decay {decay_time_us} us"
            )));
        }
        Ok(PulseTemplate {
            rise_time_us,
            decay_time_us,
            gain,
        })
    }

    pub fn peak_time_us(&self) -> f64 {
        let (r, d) = (self.rise_time_us, self.decay_time_us);
        r * d / (d - r) * (d / r).ln()
    }

    fn raw(&self, t_us: f64) -> f64 {
        (-t_us / self.decay_time_us).exp() - (-t_us / self.rise_time_us).exp()
    }

    /// Unit-peak shape; zero before onset.
    pub fn shape(&self, t_us: f64) -> f64 {
        if t_us <= 0.0 {
            return 0.0;
        }
        self.raw(t_us) / self.raw(self.peak_time_us())
    }

    /// `n` samples of the unit-peak shape with onset at sample 0.
    pub fn sampled(&self, n: usize, sampling_rate_hz: f64) -> Vec<f64> {
        let dt_us = 1e6 / sampling_rate_hz;
        (0..n).map(|i| self.shape(i as f64 * dt_us)).collect()
    }
}

/// Unit-peak pulse value at `t_us` after onset.
pub fn pulse_shape(t_us: f64, template: &PulseTemplate) -> f64 {
    template.shape(t_us)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub white_rms: f64,
    /// Frequency where the 1/f component equals the white level; 0 disables it.
    pub low_freq_knee_hz: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            white_rms: 1.0,
            low_freq_knee_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaqParams {
    pub sampling_rate_hz: f64,
    pub record_length: usize,
    pub pre_trigger_fraction: f64,
    pub rise_time_us: f64,
    pub decay_time_us: f64,
    /// Amplitude units per keV for TOP, CENTER, BOTTOM.
    pub gain_per_kev: [f64; 3],
    /// Gaussian spread of each pulse onset around its deposit time.
    pub onset_jitter_us: f64,
    pub noise: NoiseModel,
    pub trigger_threshold_sigma: f64,
    pub bandpass_hz: [f64; 2],
    /// Stream prefix used to measure the filtered baseline RMS.
    pub calibration_s: f64,
    /// Pulse tails are dropped after this many decay times.
    pub tail_decay_times: f64,
}

impl Default for DaqParams {
    fn default() -> Self {
        DaqParams {
            sampling_rate_hz: 1.0e5,
            record_length: 2400,
            pre_trigger_fraction: 0.25,
            rise_time_us: 50.0,
            decay_time_us: 500.0,
            gain_per_kev: [40.0 / 150.0; 3],
            onset_jitter_us: 0.0,
            noise: NoiseModel::default(),
            trigger_threshold_sigma: 5.0,
            bandpass_hz: [20.0, 2000.0],
            calibration_s: 1.0,
            tail_decay_times: 20.0,
        }
    }
}

impl DaqParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("daq: {m}")));
        if !(self.sampling_rate_hz > 0.0) {
            return bad("sampling_rate_hz must be positive");
        }
        if self.record_length < 16 {
            return bad("record_length must be at least 16 samples");
        }
        if !(0.0..1.0).contains(&self.pre_trigger_fraction) {
            return bad("pre_trigger_fraction must be in [0, 1)");
        }
        PulseTemplate::new(self.rise_time_us, self.decay_time_us, 1.0)?;
        if self.gain_per_kev.iter().any(|g| !(*g > 0.0)) {
            return bad("gains must be positive");
        }
        if !(self.noise.white_rms > 0.0) || !(self.noise.low_freq_knee_hz >= 0.0) {
            return bad("noise.white_rms must be positive and low_freq_knee_hz >= 0");
        }
        if !(self.onset_jitter_us >= 0.0) {
            return bad("onset_jitter_us must be >= 0");
        }
        let [lo, hi] = self.bandpass_hz;
        if !(lo > 0.0 && hi > lo && hi < self.sampling_rate_hz / 2.0) {
            return bad("bandpass_hz must satisfy 0 < low < high < fs/2");
        }
        if !(self.trigger_threshold_sigma > 0.0) || !(self.calibration_s > 0.0) || !(self.tail_decay_times > 1.0) {
            return bad("trigger_threshold_sigma, calibration_s and tail_decay_times must be positive");
        }
        Ok(())
    }

    pub fn template(&self, channel: DetectorId) -> PulseTemplate {
        PulseTemplate {
            rise_time_us: self.rise_time_us,
            decay_time_us: self.decay_time_us,
            gain: self.gain_per_kev[channel.index()],
        }
    }

    pub fn pre_trigger_samples(&self) -> usize {
        (self.pre_trigger_fraction * self.record_length as f64).round() as usize
    }

    pub fn record_duration_s(&self) -> f64 {
        self.record_length as f64 / self.sampling_rate_hz
    }

    pub fn trigger_settings(&self) -> TriggerSettings {
        TriggerSettings {
            threshold_sigma: self.trigger_threshold_sigma,
            bandpass_hz: self.bandpass_hz,
            sampling_rate_hz: self.sampling_rate_hz,
            record_length: self.record_length,
            pre_trigger: self.pre_trigger_samples(),
            calibration_samples: (self.calibration_s * self.sampling_rate_hz).round().max(1.0) as usize,
        }
    }

    fn tail_samples(&self) -> u64 {
        (self.tail_decay_times * self.decay_time_us * 1e-6 * self.sampling_rate_hz).ceil() as u64
    }
}

/// First-order IIR section from the bilinear transform.
#[derive(Debug, Clone, Copy)]
struct OnePole {
    b0: f64,
    b1: f64,
    a1: f64,
    x1: f64,
    y1: f64,
}

impl OnePole {
    fn high_pass(fc: f64, fs: f64) -> OnePole {
        let k = (PI * fc / fs).tan();
        let b0 = 1.0 / (1.0 + k);
        OnePole {
            b0,
            b1: -b0,
            a1: (k - 1.0) / (k + 1.0),
            x1: 0.0,
            y1: 0.0,
        }
    }

    fn low_pass(fc: f64, fs: f64) -> OnePole {
        let k = (PI * fc / fs).tan();
        let b0 = k / (1.0 + k);
        OnePole {
            b0,
            b1: b0,
            a1: (k - 1.0) / (k + 1.0),
            x1: 0.0,
            y1: 0.0,
        }
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b1 * self.x1 - self.a1 * self.y1;
        self.x1 = x;
        self.y1 = y;
        y
    }
}

/// High-pass then low-pass, first order each.
#[derive(Debug, Clone, Copy)]
pub struct BandPass {
    hp: OnePole,
    lp: OnePole,
}

impl BandPass {
    pub fn new([lo, hi]: [f64; 2], fs: f64) -> BandPass {
        BandPass {
            hp: OnePole::high_pass(lo, fs),
            lp: OnePole::low_pass(hi, fs),
        }
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        self.lp.step(self.hp.step(x))
    }

    pub fn apply(&mut self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.step(v)).collect()
    }
}

/// White Gaussian noise plus an optional 1/f component built from a bank
/// of one-pole low-pass filters with log-spaced corners.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    rng: ChaCha8Rng,
    white_rms: f64,
    bank: Vec<(f64, f64, f64)>,
}

impl NoiseGenerator {
    pub fn new(rng: ChaCha8Rng, model: &NoiseModel, fs: f64) -> NoiseGenerator {
        let mut bank = Vec::new();
        if model.low_freq_knee_hz > 0.0 {
            let f_lo = (model.low_freq_knee_hz / 1000.0).max(1e-3);
            let f_hi = fs / 4.0;
            let n = ((f_hi / f_lo).log10() * 3.0).ceil() as usize + 1;
            let poles: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let f = f_lo * (f_hi / f_lo).powf(i as f64 / (n - 1) as f64);
                    let a = (-TAU * f / fs).exp();
                    (a, (1.0 - a) / f.sqrt())
                })
                .collect();
            // Scale so the bank's one-sided PSD equals the white level at the knee.
            let w = TAU * model.low_freq_knee_hz / fs;
            let psd_unit: f64 = poles
                .iter()
                .map(|&(a, g)| 2.0 * g * g / fs / (1.0 - 2.0 * a * w.cos() + a * a))
                .sum();
            let white_psd = 2.0 * model.white_rms * model.white_rms / fs;
            let k = (white_psd / psd_unit).sqrt();
            bank = poles.into_iter().map(|(a, g)| (a, g * k, 0.0)).collect();
        }
        NoiseGenerator {
            rng,
            white_rms: model.white_rms,
            bank,
        }
    }

    #[inline]
    pub fn next_sample(&mut self) -> f64 {
        let mut x = self.white_rms * Distribution::<f64>::sample(&StandardNormal, &mut self.rng);
        for pole in &mut self.bank {
            let w: f64 = StandardNormal.sample(&mut self.rng);
            pole.2 = pole.0 * pole.2 + pole.1 * w;
            x += pole.2;
        }
        x
    }
}

/// A pulse onset on one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    onset_s: f64,
    amplitude: f64,
}

struct ChannelSynth {
    template: PulseTemplate,
    noise: NoiseGenerator,
    hits: Vec<Hit>,
    first_active: usize,
}

impl ChannelSynth {
    fn fill(&mut self, start: u64, out: &mut [f64], fs: f64, tail: u64) {
        for v in out.iter_mut() {
            *v = self.noise.next_sample();
        }
        let end = start + out.len() as u64;
        let tail_s = tail as f64 / fs;
        let start_s = start as f64 / fs;
        while self.first_active < self.hits.len() && self.hits[self.first_active].onset_s + tail_s < start_s {
            self.first_active += 1;
        }
        let dt_us = 1e6 / fs;
        for h in &self.hits[self.first_active..] {
            let first = (h.onset_s * fs).ceil().max(0.0) as u64;
            if first >= end {
                break;
            }
            let last = (first + tail).min(end);
            for n in first.max(start)..last {
                let t_us = n as f64 * dt_us - h.onset_s * 1e6;
                out[(n - start) as usize] += h.amplitude * self.template.shape(t_us);
            }
        }
    }
}

/// Incremental multi-channel stream builder.
pub struct StreamSynthesizer {
    channels: Vec<ChannelSynth>,
    fs: f64,
    tail: u64,
    next: u64,
    total: u64,
}

impl StreamSynthesizer {
    /// `events` must be sorted by time.
    pub fn new(events: &[SimEvent], params: &DaqParams, seed: u64, n_samples: u64) -> Result<StreamSynthesizer> {
        params.validate()?;
        check_sorted(events)?;
        let fs = params.sampling_rate_hz;
        let channels = DetectorId::ALL
            .iter()
            .map(|&id| {
                let c = id.index() as u64;
                let mut jitter_rng = derive_rng(seed, Stream::DaqJitter, c);
                let template = params.template(id);
                let mut hits: Vec<Hit> = events
                    .iter()
                    .filter_map(|e| e.deposit(id).map(|kev| (e.primary.time_s, kev)))
                    .map(|(t, kev)| {
                        let jitter = if params.onset_jitter_us > 0.0 {
                            params.onset_jitter_us * 1e-6 * jitter_rng.sample::<f64, _>(StandardNormal)
                        } else {
                            0.0
                        };
                        Hit {
                            onset_s: t + jitter,
                            amplitude: template.gain * kev,
                        }
                    })
                    .collect();
                hits.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
                ChannelSynth {
                    template,
                    noise: NoiseGenerator::new(derive_rng(seed, Stream::DaqNoise, c), &params.noise, fs),
                    hits,
                    first_active: 0,
                }
            })
            .collect();
        Ok(StreamSynthesizer {
            channels,
            fs,
            tail: params.tail_samples(),
            next: 0,
            total: n_samples,
        })
    }

    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.next
    }

    /// Next block of at most `len` samples per channel; `None` at the end.
    pub fn next_chunk(&mut self, len: usize) -> Option<[Vec<f64>; 3]> {
        let n = (len as u64).min(self.total - self.next) as usize;
        if n == 0 {
            return None;
        }
        let start = self.next;
        let (fs, tail) = (self.fs, self.tail);
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; 3];
        self.channels
            .par_iter_mut()
            .zip(out.par_iter_mut())
            .for_each(|(ch, buf)| ch.fill(start, buf, fs, tail));
        self.next += n as u64;
        let mut it = out.into_iter();
        Some([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
    }
}

pub fn check_sorted(events: &[SimEvent]) -> Result<()> {
    for (i, w) in events.windows(2).enumerate() {
        if w[1].primary.time_s < w[0].primary.time_s {
            return Err(Error::UnsortedEvents {
                index: i + 1,
                time_s: w[1].primary.time_s,
            });
        }
    }
    Ok(())
}

/// Whole-stream synthesis of `n_samples` per channel.
pub fn synthesize_stream(events: &[SimEvent], params: &DaqParams, seed: u64, n_samples: u64) -> Result<[Vec<f64>; 3]> {
    let mut s = StreamSynthesizer::new(events, params, seed, n_samples)?;
    Ok(s.next_chunk(n_samples as usize).unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub record_id: u64,
    pub trigger_channel: DetectorId,
    /// Sample index of the trigger within the record.
    pub trigger_index: u32,
    /// Stream index of the first sample.
    pub start_sample: u64,
    pub sampling_rate_hz: f64,
    /// One array per detector, in [`DetectorId::ALL`] order.
    pub channels: Vec<Vec<f32>>,
}

impl WaveformRecord {
    pub fn t0_s(&self) -> f64 {
        self.start_sample as f64 / self.sampling_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn channel(&self, id: DetectorId) -> &[f32] {
        &self.channels[id.index()]
    }

    pub fn span(&self) -> (u64, u64) {
        (self.start_sample, self.start_sample + self.n_samples() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerSettings {
    pub threshold_sigma: f64,
    pub bandpass_hz: [f64; 2],
    pub sampling_rate_hz: f64,
    pub record_length: usize,
    pub pre_trigger: usize,
    pub calibration_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DaqSummary {
    pub n_samples: u64,
    pub duration_s: f64,
    pub filtered_sigma: [f64; 3],
    pub thresholds: [f64; 3],
    pub triggers: u64,
    /// Triggers falling inside an already open record.
    pub absorbed_triggers: u64,
    pub records: u64,
    /// Records that would have run past the end of the stream.
    pub dropped_records: u64,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    start: u64,
    trigger: u64,
    channel: DetectorId,
}

/// Streaming trigger: consumes raw chunks and emits finished records.
///
/// A channel arms when its filtered signal is below threshold and fires on
/// the next upcrossing. A trigger opens a record starting `pre_trigger`
/// samples earlier, but never before the end of the previous record, so
/// record spans are disjoint; triggers inside an open span are absorbed.
pub struct RecordCutter {
    settings: TriggerSettings,
    filters: [BandPass; 3],
    sigma: Option<[f64; 3]>,
    armed: [bool; 3],
    raw: [Vec<f64>; 3],
    raw_start: u64,
    filtered: [Vec<f64>; 3],
    scanned: u64,
    last_end: u64,
    pending: Vec<Pending>,
    next_id: u64,
    summary: DaqSummary,
}

impl RecordCutter {
    pub fn new(settings: TriggerSettings) -> RecordCutter {
        let bp = BandPass::new(settings.bandpass_hz, settings.sampling_rate_hz);
        RecordCutter {
            settings,
            filters: [bp; 3],
            sigma: None,
            armed: [true; 3],
            raw: Default::default(),
            raw_start: 0,
            filtered: Default::default(),
            scanned: 0,
            last_end: 0,
            pending: Vec::new(),
            next_id: 0,
            summary: DaqSummary::default(),
        }
    }

    /// Uses fixed filtered-baseline RMS values instead of calibrating.
    pub fn with_sigma(mut self, sigma: [f64; 3]) -> RecordCutter {
        self.sigma = Some(sigma);
        self
    }

    fn buffered_end(&self) -> u64 {
        self.raw_start + self.raw[0].len() as u64
    }

    #[allow(clippy::needless_range_loop)]
    pub fn push(&mut self, chunk: [&[f64]; 3], emit: &mut dyn FnMut(WaveformRecord) -> Result<()>) -> Result<()> {
        for c in 0..3 {
            self.raw[c].extend_from_slice(chunk[c]);
            let f = &mut self.filters[c];
            self.filtered[c].extend(chunk[c].iter().map(|&x| f.step(x)));
        }
        if self.sigma.is_none() && self.filtered[0].len() >= self.settings.calibration_samples {
            self.calibrate();
        }
        if self.sigma.is_some() {
            self.scan();
        }
        self.flush(emit)
    }

    fn calibrate(&mut self) {
        let n = self.settings.calibration_samples.min(self.filtered[0].len());
        let s = [0, 1, 2].map(|c| robust_sigma(&self.filtered[c][..n]).max(f64::MIN_POSITIVE));
        self.sigma = Some(s);
    }

    #[allow(clippy::needless_range_loop)]
    fn scan(&mut self) {
        let sigma = self.sigma.expect("calibrated");
        let thr = sigma.map(|s| s * self.settings.threshold_sigma);
        let len = self.filtered[0].len();
        for i in 0..len {
            let n = self.scanned + i as u64;
            let mut best: Option<(usize, f64)> = None;
            for c in 0..3 {
                let f = self.filtered[c][i];
                if self.armed[c] {
                    if f > thr[c] {
                        self.armed[c] = false;
                        let strength = f / thr[c];
                        if best.is_none_or(|b| strength > b.1) {
                            best = Some((c, strength));
                        }
                    }
                } else if f < thr[c] {
                    self.armed[c] = true;
                }
            }
            let Some((c, _)) = best else { continue };
            self.summary.triggers += 1;
            if n < self.last_end {
                self.summary.absorbed_triggers += 1;
                continue;
            }
            let start = n.saturating_sub(self.settings.pre_trigger as u64).max(self.last_end);
            self.last_end = start + self.settings.record_length as u64;
            self.pending.push(Pending {
                start,
                trigger: n,
                channel: DetectorId::from_index(c).unwrap(),
            });
        }
        self.scanned += len as u64;
        for f in &mut self.filtered {
            f.clear();
        }
    }

    fn flush(&mut self, emit: &mut dyn FnMut(WaveformRecord) -> Result<()>) -> Result<()> {
        let l = self.settings.record_length as u64;
        let end = self.buffered_end();
        let mut keep = Vec::new();
        for p in std::mem::take(&mut self.pending) {
            if p.start + l <= end {
                let off = (p.start - self.raw_start) as usize;
                let record = WaveformRecord {
                    record_id: self.next_id,
                    trigger_channel: p.channel,
                    trigger_index: (p.trigger - p.start) as u32,
                    start_sample: p.start,
                    sampling_rate_hz: self.settings.sampling_rate_hz,
                    channels: self.raw.iter().map(|r| r[off..off + l as usize].iter().map(|&x| x as f32).collect()).collect(),
                };
                self.next_id += 1;
                self.summary.records += 1;
                emit(record)?;
            } else {
                keep.push(p);
            }
        }
        self.pending = keep;
        // Keep what pending records and future pre-trigger windows need.
        let need_from = self
            .pending
            .iter()
            .map(|p| p.start)
            .chain(std::iter::once(
                self.scanned.saturating_sub(self.settings.pre_trigger as u64).max(self.last_end.min(self.scanned)),
            ))
            .min()
            .unwrap()
            .min(self.scanned);
        if need_from > self.raw_start {
            let drop = ((need_from - self.raw_start) as usize).min(self.raw[0].len());
            for r in &mut self.raw {
                r.drain(..drop);
            }
            self.raw_start += drop as u64;
        }
        Ok(())
    }

    /// Ends the stream; records that cannot be completed are dropped.
    pub fn finish(mut self, emit: &mut dyn FnMut(WaveformRecord) -> Result<()>) -> Result<DaqSummary> {
        if self.sigma.is_none() && !self.filtered[0].is_empty() {
            self.calibrate();
        }
        if self.sigma.is_some() {
            self.scan();
        }
        self.flush(emit)?;
        self.summary.dropped_records = self.pending.len() as u64;
        let sigma = self.sigma.unwrap_or([0.0; 3]);
        self.summary.filtered_sigma = sigma;
        self.summary.thresholds = sigma.map(|s| s * self.settings.threshold_sigma);
        self.summary.n_samples = self.scanned;
        self.summary.duration_s = self.scanned as f64 / self.settings.sampling_rate_hz;
        self.summary.complete = true;
        Ok(self.summary)
    }
}

/// Whole-stream trigger over aligned channel arrays.
pub fn trigger_and_record(streams: &[Vec<f64>; 3], settings: TriggerSettings, sigma: Option<[f64; 3]>) -> Result<(Vec<WaveformRecord>, DaqSummary)> {
    let n = streams[0].len();
    if streams.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidArgument("streams must be aligned".into()));
    }
    let mut cutter = RecordCutter::new(settings);
    if let Some(s) = sigma {
        cutter = cutter.with_sigma(s);
    }
    let mut records = Vec::new();
    let mut emit = |r| {
        records.push(r);
        Ok(())
    };
    cutter.push([&streams[0], &streams[1], &streams[2]], &mut emit)?;
    let summary = cutter.finish(&mut emit)?;
    Ok((records, summary))
}

const CHUNK_SAMPLES: usize = 1 << 16;

/// Streams `duration_s` of synthetic data through the trigger, handing
/// each finished record to `sink`.
pub fn run_daq(
    events: &[SimEvent],
    duration_s: f64,
    params: &DaqParams,
    seed: u64,
    cancel: Option<&AtomicBool>,
    sink: &mut dyn FnMut(WaveformRecord) -> Result<()>,
) -> Result<DaqSummary> {
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration must be >= 0, got {duration_s}")));
    }
    let n_samples = (duration_s * params.sampling_rate_hz).floor() as u64;
    let mut synth = StreamSynthesizer::new(events, params, seed, n_samples)?;
    let mut cutter = RecordCutter::new(params.trigger_settings());
    let mut complete = true;
    while let Some(chunk) = synth.next_chunk(CHUNK_SAMPLES) {
        cutter.push([&chunk[0], &chunk[1], &chunk[2]], sink)?;
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            complete = false;
            break;
        }
    }
    let mut summary = cutter.finish(sink)?;
    summary.complete = complete;
    Ok(summary)
}
