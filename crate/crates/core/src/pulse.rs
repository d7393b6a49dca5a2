//! Noise PSD estimation and optimal (matched) filtering of records.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::daq::{PulseTemplate, WaveformRecord};
use crate::error::{Error, Result};
use crate::geometry::DetectorId;
use crate::stats::{median_in_place, robust_sigma};

/// One-sided noise power spectral density, amplitude²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePsd {
    pub channel: DetectorId,
    pub sampling_rate_hz: f64,
    pub n_samples: usize,
    /// Bins `0..=n/2`, spaced `fs / n`.
    pub psd: Vec<f64>,
    pub records_used: usize,
}

impl NoisePsd {
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.sampling_rate_hz / self.n_samples as f64
    }

    /// Integrated power, amplitude².
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.sampling_rate_hz / self.n_samples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdOptions {
    pub min_records: usize,
    pub max_records: usize,
    /// Records whose largest excursion exceeds this many typical-noise
    /// sigmas are treated as containing a pulse.
    pub veto_sigma: f64,
}

impl Default for PsdOptions {
    fn default() -> Self {
        PsdOptions {
            min_records: 20,
            max_records: 500,
            veto_sigma: 6.0,
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed one-sided periodograms averaged over `traces`.
pub fn averaged_periodogram(traces: &[Vec<f64>], sampling_rate_hz: f64) -> Vec<f64> {
    let n = traces[0].len();
    let w = hann(n);
    let norm = sampling_rate_hz * w.iter().map(|x| x * x).sum::<f64>();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut acc = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex64::default(); n];
    for x in traces {
        let mean = x.iter().sum::<f64>() / n as f64;
        for (b, (&v, &wi)) in buf.iter_mut().zip(x.iter().zip(&w)) {
            *b = Complex64::new((v - mean) * wi, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let c = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
            *a += c * buf[k].norm_sqr() / norm;
        }
    }
    for a in &mut acc {
        *a /= traces.len() as f64;
    }
    acc
}

fn trace(record: &WaveformRecord, channel: DetectorId) -> Vec<f64> {
    record.channel(channel).iter().map(|&x| x as f64).collect()
}

/// Records of `channel` judged free of pulses by a raw amplitude veto.
pub fn pulse_free_indices(records: &[WaveformRecord], channel: DetectorId, veto_sigma: f64) -> Vec<usize> {
    let stats: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let x = trace(r, channel);
            let mut tmp = x.clone();
            let med = median_in_place(&mut tmp);
            let excursion = x.iter().map(|v| (v - med).abs()).fold(0.0, f64::max);
            (robust_sigma(&x), excursion)
        })
        .collect();
    if stats.is_empty() {
        return vec![];
    }
    let mut sigmas: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let typical = median_in_place(&mut sigmas);
    stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1 <= veto_sigma * typical)
        .map(|(i, _)| i)
        .collect()
}

/// Noise PSD of `channel` from the pulse-free subset of `records`.
pub fn estimate_noise_psd(records: &[WaveformRecord], channel: DetectorId, opts: &PsdOptions) -> Result<NoisePsd> {
    let chosen: Vec<usize> = pulse_free_indices(records, channel, opts.veto_sigma)
        .into_iter()
        .take(opts.max_records)
        .collect();
    psd_from_indices(records, channel, &chosen, opts.min_records)
}

fn psd_from_indices(records: &[WaveformRecord], channel: DetectorId, chosen: &[usize], min_records: usize) -> Result<NoisePsd> {
    if chosen.len() < min_records.max(1) {
        return Err(Error::InsufficientNoiseRecords {
            found: chosen.len(),
            required: min_records.max(1),
        });
    }
    let first = &records[chosen[0]];
    let n = first.n_samples();
    let fs = first.sampling_rate_hz;
    if chosen.iter().any(|&i| records[i].n_samples() != n || records[i].sampling_rate_hz != fs) {
        return Err(Error::GridMismatch("noise records differ in length or rate".into()));
    }
    let traces: Vec<Vec<f64>> = chosen.iter().map(|&i| trace(&records[i], channel)).collect();
    let mut psd = averaged_periodogram(&traces, fs);
    // Mean removal empties the DC bin; keep the PSD strictly positive.
    psd[0] = psd[1];
    let floor = psd.iter().cloned().fold(f64::INFINITY, f64::min).max(f64::MIN_POSITIVE);
    for p in &mut psd {
        if !(*p > 0.0) {
            *p = floor;
        }
    }
    Ok(NoisePsd {
        channel,
        sampling_rate_hz: fs,
        n_samples: n,
        psd,
        records_used: chosen.len(),
    })
}

/// Two-pass estimate: the raw veto, then a second veto on the optimal-filter
/// output built from the first-pass PSD, which also removes small pulses.
pub fn estimate_noise_psd_refined(
    records: &[WaveformRecord],
    channel: DetectorId,
    template: &PulseTemplate,
    opts: &PsdOptions,
) -> Result<NoisePsd> {
    let first = estimate_noise_psd(records, channel, opts)?;
    let filter = OptimalFilter::new(template, &first)?;
    let cut = opts.veto_sigma * filter.resolution();
    let candidates: Vec<usize> = pulse_free_indices(records, channel, opts.veto_sigma)
        .into_iter()
        .filter(|&i| {
            let a = filter.filter(&trace(&records[i], channel));
            a[..filter.max_lag()].iter().cloned().fold(f64::MIN, f64::max) <= cut
        })
        .take(opts.max_records)
        .collect();
    psd_from_indices(records, channel, &candidates, opts.min_records)
}

/// Frequency-domain optimal filter for one channel.
#[derive(Clone)]
pub struct OptimalFilter {
    n: usize,
    fs: f64,
    /// `conj(S_k) / J_k / D`, DC excluded.
    kernel: Vec<Complex64>,
    /// Filter output for a unit template with onset at lag 0.
    response_spectrum: Vec<Complex64>,
    denominator: f64,
    peak_offset_us: f64,
    guard: usize,
    exclusion: usize,
    separation: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for OptimalFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimalFilter")
            .field("n", &self.n)
            .field("fs", &self.fs)
            .field("denominator", &self.denominator)
            .finish()
    }
}

/// Result of filtering one channel of one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutput {
    pub amplitude: f64,
    pub peak_time_us: f64,
    pub baseline_rms: f64,
    pub lag: usize,
}

impl OptimalFilter {
    pub fn new(template: &PulseTemplate, psd: &NoisePsd) -> Result<OptimalFilter> {
        let n = psd.n_samples;
        if psd.psd.len() != n / 2 + 1 {
            return Err(Error::GridMismatch(format!(
                "PSD has {} bins, expected {} for {n} samples",
                psd.psd.len(),
                n / 2 + 1
            )));
        }
        if psd.psd.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidArgument("PSD must be strictly positive".into()));
        }
        let fs = psd.sampling_rate_hz;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let mut s: Vec<Complex64> = template.sampled(n, fs).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        fft.process(&mut s);
        let j = |k: usize| psd.psd[k.min(n - k)];
        let denominator: f64 = (1..n).map(|k| s[k].norm_sqr() / j(k)).sum();
        let mut kernel = vec![Complex64::default(); n];
        for k in 1..n {
            kernel[k] = s[k].conj() / j(k) / denominator;
        }
        let dt_us = 1e6 / fs;
        let samples = |t_us: f64| (t_us / dt_us).round().max(1.0) as usize;
        let mut f = OptimalFilter {
            n,
            fs,
            kernel,
            response_spectrum: vec![],
            denominator,
            peak_offset_us: template.peak_time_us(),
            guard: samples(3.0 * template.rise_time_us),
            exclusion: samples(5.0 * template.decay_time_us),
            separation: samples(3.0 * template.rise_time_us),
            fft,
            ifft,
        };
        let mut spectrum: Vec<Complex64> = f.filter(&template.sampled(n, fs)).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        f.fft.process(&mut spectrum);
        f.response_spectrum = spectrum;
        Ok(f)
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    /// Lags `0..max_lag()` are searched for pulses.
    pub fn max_lag(&self) -> usize {
        self.n.saturating_sub(self.guard)
    }

    /// Expected standard deviation of the amplitude estimate for noise that
    /// matches the PSD.
    pub fn resolution(&self) -> f64 {
        (self.n as f64 * self.fs / (2.0 * self.denominator)).sqrt()
    }

    /// Amplitude estimate for every circular lag.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.ifft.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Sub-sample offset of the maximum from a parabola through three lags.
    fn subsample(&self, a: &[f64], lag: usize) -> f64 {
        let n = a.len();
        let (ym, y0, yp) = (a[(lag + n - 1) % n], a[lag], a[(lag + 1) % n]);
        let curv = ym - 2.0 * y0 + yp;
        if curv < 0.0 {
            (0.5 * (ym - yp) / curv).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    }

    fn peak_time_us(&self, position: f64) -> f64 {
        position * 1e6 / self.fs + self.peak_offset_us
    }

    /// Samples of `a` farther than `5 τ_d` from every lag in `lags`.
    fn outside(&self, a: &[f64], lags: &[usize]) -> Vec<f64> {
        let n = a.len() as isize;
        let ex = self.exclusion as isize;
        a.iter()
            .enumerate()
            .filter(|(m, _)| {
                lags.iter().all(|&lag| {
                    let d = (*m as isize - lag as isize).rem_euclid(n);
                    d.min(n - d) > ex
                })
            })
            .map(|(_, v)| *v)
            .collect()
    }

    fn baseline_rms(&self, a: &[f64], lags: &[usize]) -> f64 {
        let rest = self.outside(a, lags);
        if rest.is_empty() {
            0.0
        } else {
            (rest.iter().map(|v| v * v).sum::<f64>() / rest.len() as f64).sqrt()
        }
    }

    /// Filter response to a unit template delayed by `shift` samples.
    fn shifted_response(&self, shift: f64) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = self
            .response_spectrum
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let f = if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
                // The Nyquist bin of an even length stays real.
                let phase = if 2 * k == n { 0.0 } else { -std::f64::consts::TAU * f * shift / n as f64 };
                r * Complex64::from_polar(1.0, phase)
            })
            .collect();
        self.ifft.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    /// Global maximum over the allowed lags.
    pub fn analyze(&self, x: &[f64]) -> Result<FilterOutput> {
        if x.len() != self.n {
            return Err(Error::GridMismatch(format!("record has {} samples, filter expects {}", x.len(), self.n)));
        }
        let a = self.filter(x);
        let lag = self.main_lag(&a);
        Ok(FilterOutput {
            amplitude: a[lag].max(0.0),
            peak_time_us: self.peak_time_us(lag as f64 + self.subsample(&a, lag)),
            baseline_rms: self.baseline_rms(&a, &[lag]),
            lag,
        })
    }

    fn main_lag(&self, a: &[f64]) -> usize {
        a[..self.max_lag()]
            .iter()
            .enumerate()
            .max_by(|p, q| p.1.total_cmp(q.1))
            .map(|p| p.0)
            .unwrap_or(0)
    }

    /// Main pulse plus further local maxima of the template-subtracted
    /// output above `threshold_sigma · baseline_rms`, separated by more than
    /// `3 τ_r`. The baseline excludes the region around every pulse found.
    pub fn find_pulses(&self, x: &[f64], threshold_sigma: f64) -> Result<Vec<FilterOutput>> {
        const MAX_PULSES: usize = 16;
        if x.len() != self.n {
            return Err(Error::GridMismatch(format!("record has {} samples, filter expects {}", x.len(), self.n)));
        }
        let a = self.filter(x);
        let limit = self.max_lag();
        let sep = self.separation;
        let mut resid = a.clone();
        let mut found: Vec<FilterOutput> = Vec::new();
        let mut lag = self.main_lag(&a);
        loop {
            let delta = self.subsample(&resid, lag);
            let amplitude = resid[lag].max(0.0);
            let model = self.shifted_response(lag as f64 + delta);
            for (r, m) in resid.iter_mut().zip(&model) {
                *r -= amplitude * m;
            }
            found.push(FilterOutput {
                amplitude,
                peak_time_us: self.peak_time_us(lag as f64 + delta),
                baseline_rms: 0.0,
                lag,
            });
            if found.len() == MAX_PULSES {
                break;
            }
            // A robust spread keeps unfound pulses from inflating the threshold.
            let lags: Vec<usize> = found.iter().map(|f| f.lag).collect();
            let thr = threshold_sigma * robust_sigma(&self.outside(&a, &lags)).min(self.baseline_rms(&a, &lags));
            let next = (0..limit)
                .filter(|&m| {
                    let lo = m.saturating_sub(sep);
                    let hi = (m + sep + 1).min(limit);
                    resid[m] > thr && lags.iter().all(|l| l.abs_diff(m) > sep) && (lo..hi).all(|k| resid[k] <= resid[m])
                })
                .max_by(|&p, &q| resid[p].total_cmp(&resid[q]));
            match next {
                Some(m) => lag = m,
                None => break,
            }
        }
        let lags: Vec<usize> = found.iter().map(|f| f.lag).collect();
        let rms = self.baseline_rms(&a, &lags);
        for f in &mut found {
            f.baseline_rms = rms;
        }
        Ok(found)
    }
}

/// Single-pulse optimal-filter reconstruction of one channel.
pub fn matched_filter(record: &WaveformRecord, template: &PulseTemplate, psd: &NoisePsd, channel: DetectorId) -> Result<FilterOutput> {
    if psd.channel != channel {
        return Err(Error::GridMismatch(format!("PSD is for {}, not {channel}", psd.channel)));
    }
    if record.n_samples() != psd.n_samples || record.sampling_rate_hz != psd.sampling_rate_hz {
        return Err(Error::GridMismatch(format!(
            "record ({} samples at {} Hz) vs PSD ({} samples at {} Hz)",
            record.n_samples(),
            record.sampling_rate_hz,
            psd.n_samples,
            psd.sampling_rate_hz
        )));
    }
    OptimalFilter::new(template, psd)?.analyze(&trace(record, channel))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub record_id: u64,
    pub channel: DetectorId,
    /// Stream time of the record's first sample.
    pub t0_s: f64,
    pub peak_time_us: f64,
    pub amplitude: f64,
    pub baseline_rms: f64,
}

/// Keeps pulses with `amplitude > threshold_sigma · baseline_rms`.
pub fn select_pulses(pulses: &[Pulse], threshold_sigma: f64) -> Vec<Pulse> {
    pulses
        .iter()
        .filter(|p| p.amplitude > threshold_sigma * p.baseline_rms)
        .copied()
        .collect()
}

/// Per-channel filters for a record stream.
#[derive(Debug, Clone)]
pub struct ChannelFilters {
    pub filters: Vec<(DetectorId, OptimalFilter)>,
}

impl ChannelFilters {
    pub fn reconstruct(&self, record: &WaveformRecord, threshold_sigma: f64) -> Result<Vec<Pulse>> {
        let mut out = Vec::new();
        for (id, f) in &self.filters {
            for p in f.find_pulses(&trace(record, *id), threshold_sigma)? {
                out.push(Pulse {
                    record_id: record.record_id,
                    channel: *id,
                    t0_s: record.t0_s(),
                    peak_time_us: p.peak_time_us,
                    amplitude: p.amplitude,
                    baseline_rms: p.baseline_rms,
                });
            }
        }
        Ok(out)
    }
}
