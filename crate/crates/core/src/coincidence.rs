//! Delay histograms, coincidence window, accidental estimates, γ subtraction
//! and assembly of the rate report.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DetectorId;
use crate::pulse::Pulse;
use crate::sources::Species;
use crate::stats::{binomial_fraction, poisson_rate, Measured};
use crate::transport::SimulationSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Use `window_center_us ± window_half_width_us` as configured.
    Fixed,
    /// Centre ± 3σ of a Gaussian-plus-flat fit to the delay histogram.
    Fit,
}

/// Which accidental estimate enters the muon-rate subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccidentalsFrom {
    /// Analytic, from simulated γ and muon singles.
    Simulated,
    /// Analytic, from measured singles.
    Measured,
    /// Negative-delay sideband of the measured histogram.
    Sideband,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    pub pulse_threshold_sigma: f64,
    pub min_noise_records: usize,
    pub max_noise_records: usize,
    pub noise_veto_sigma: f64,
    pub bin_width_us: f64,
    pub window_mode: WindowMode,
    pub window_half_width_us: f64,
    pub window_center_us: f64,
    /// Half-range of delays used in the window fit.
    pub fit_range_us: f64,
    pub min_significance: f64,
    pub sideband_us: [f64; 2],
    pub veto_times_s: Vec<f64>,
    /// Relative systematic on the simulated γ–γ coincidence rate.
    pub gamma_gamma_systematic: f64,
    pub accidentals_from: AccidentalsFrom,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            pulse_threshold_sigma: 5.0,
            min_noise_records: 20,
            max_noise_records: 500,
            noise_veto_sigma: 6.0,
            bin_width_us: 20.0,
            window_mode: WindowMode::Fixed,
            window_half_width_us: 170.0,
            window_center_us: 0.0,
            fit_range_us: 3000.0,
            min_significance: 5.0,
            sideband_us: [-2500.0, -400.0],
            veto_times_s: vec![1e-3, 5e-3, 25e-3],
            gamma_gamma_systematic: 0.05,
            accidentals_from: AccidentalsFrom::Simulated,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pulse_threshold_sigma", self.pulse_threshold_sigma),
            ("noise_veto_sigma", self.noise_veto_sigma),
            ("bin_width_us", self.bin_width_us),
            ("window_half_width_us", self.window_half_width_us),
            ("fit_range_us", self.fit_range_us),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("analysis.{name} must be > 0, got {v}")));
            }
        }
        if self.min_noise_records == 0 || self.max_noise_records < self.min_noise_records {
            return Err(Error::Config(
                "analysis: need 0 < min_noise_records <= max_noise_records".into(),
            ));
        }
        let [lo, hi] = self.sideband_us;
        if !(lo < hi) {
            return Err(Error::Config(format!("analysis.sideband_us must be increasing, got [{lo}, {hi}]")));
        }
        if self.window_mode == WindowMode::Fixed {
            let w = self.window();
            if hi > w.low_us() && lo < w.high_us() {
                return Err(Error::Config("analysis.sideband_us overlaps the coincidence window".into()));
            }
        }
        if self.veto_times_s.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("analysis.veto_times_s must be >= 0".into()));
        }
        if !(self.gamma_gamma_systematic >= 0.0) || !self.min_significance.is_finite() || !self.window_center_us.is_finite() {
            return Err(Error::Config("analysis: invalid systematic, significance or window centre".into()));
        }
        Ok(())
    }

    /// Window as configured (fixed mode).
    pub fn window(&self) -> CoincidenceWindow {
        CoincidenceWindow {
            center_us: self.window_center_us,
            half_width_us: self.window_half_width_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindow {
    pub center_us: f64,
    pub half_width_us: f64,
}

impl CoincidenceWindow {
    pub fn total_width_us(&self) -> f64 {
        2.0 * self.half_width_us
    }

    pub fn width_s(&self) -> f64 {
        self.total_width_us() * 1e-6
    }

    pub fn low_us(&self) -> f64 {
        self.center_us - self.half_width_us
    }

    pub fn high_us(&self) -> f64 {
        self.center_us + self.half_width_us
    }

    pub fn contains(&self, delay_us: f64) -> bool {
        (delay_us - self.center_us).abs() <= self.half_width_us
    }
}

/// BOTTOM − TOP peak delays, binned, with the raw delays kept for exact
/// interval counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayHistogram {
    pub bin_width_us: f64,
    /// Lower edge of bin 0; a multiple of the bin width.
    pub low_us: f64,
    pub counts: Vec<u64>,
    pub delays_us: Vec<f64>,
}

impl DelayHistogram {
    /// Empty histogram covering at least `±range_us`.
    pub fn new(bin_width_us: f64, range_us: f64) -> DelayHistogram {
        let half_bins = (range_us / bin_width_us).ceil().max(1.0) as usize;
        DelayHistogram {
            bin_width_us,
            low_us: -(half_bins as f64) * bin_width_us,
            counts: vec![0; 2 * half_bins],
            delays_us: Vec::new(),
        }
    }

    pub fn high_us(&self) -> f64 {
        self.low_us + self.counts.len() as f64 * self.bin_width_us
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.counts.len())
            .map(|i| self.low_us + i as f64 * self.bin_width_us)
            .collect()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.low_us + (i as f64 + 0.5) * self.bin_width_us
    }

    pub fn fill(&mut self, delay_us: f64) {
        self.delays_us.push(delay_us);
        let i = ((delay_us - self.low_us) / self.bin_width_us).floor();
        if i >= 0.0 && (i as usize) < self.counts.len() {
            self.counts[i as usize] += 1;
        }
    }

    pub fn entries(&self) -> u64 {
        self.delays_us.len() as u64
    }

    /// Number of delays in `[lo, hi]`.
    pub fn count_between(&self, lo_us: f64, hi_us: f64) -> u64 {
        self.delays_us.iter().filter(|d| **d >= lo_us && **d <= hi_us).count() as u64
    }

    pub fn count_in(&self, window: &CoincidenceWindow) -> u64 {
        self.delays_us.iter().filter(|d| window.contains(**d)).count() as u64
    }

    /// Associative merge of partial histograms with identical binning.
    pub fn merge(&mut self, other: &DelayHistogram) -> Result<()> {
        if other.bin_width_us != self.bin_width_us || other.low_us != self.low_us || other.counts.len() != self.counts.len() {
            return Err(Error::GridMismatch("delay histograms have different binning".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.delays_us.extend_from_slice(&other.delays_us);
        Ok(())
    }
}

/// One delay per record that has selected pulses on both TOP and BOTTOM,
/// pairing the largest pulse of each channel.
pub fn build_delay_histogram(pulses: &[Pulse], bin_width_us: f64, range_us: f64) -> DelayHistogram {
    let mut best: BTreeMap<u64, [Option<Pulse>; 2]> = BTreeMap::new();
    for p in pulses {
        let slot = match p.channel {
            DetectorId::Top => 0,
            DetectorId::Bottom => 1,
            DetectorId::Center => continue,
        };
        let entry = best.entry(p.record_id).or_default();
        if entry[slot].is_none_or(|q| p.amplitude > q.amplitude) {
            entry[slot] = Some(*p);
        }
    }
    let mut hist = DelayHistogram::new(bin_width_us, range_us);
    for pair in best.values() {
        if let [Some(t), Some(b)] = pair {
            hist.fill(b.peak_time_us - t.peak_time_us);
        }
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub center_us: f64,
    pub center_err_us: f64,
    pub sigma_us: f64,
    pub sigma_err_us: f64,
    /// Counts in the Gaussian component.
    pub signal: f64,
    pub signal_err: f64,
    /// Flat level, counts per bin.
    pub background: f64,
    pub background_err: f64,
    pub chi2: f64,
    pub ndf: usize,
    pub significance: f64,
}

impl WindowFit {
    pub fn window(&self) -> CoincidenceWindow {
        CoincidenceWindow {
            center_us: self.center_us,
            half_width_us: 3.0 * self.sigma_us,
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn bin_model(p: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let sigma = p[2].exp();
    p[0] * (normal_cdf((hi - p[1]) / sigma) - normal_cdf((lo - p[1]) / sigma)) + p[3]
}

/// Peak excess over the sideband level in the 7 bins around the maximum,
/// in units of the background fluctuation.
pub fn peak_significance(hist: &DelayHistogram, params: &AnalysisParams) -> f64 {
    let (lo, hi) = fit_bins(hist, params.fit_range_us);
    if lo >= hi {
        return 0.0;
    }
    let imax = (lo..hi).max_by_key(|&i| (hist.counts[i], std::cmp::Reverse(i))).unwrap();
    let level = sideband_level(hist, params);
    let a = imax.saturating_sub(3).max(lo);
    let b = (imax + 4).min(hi);
    let n = (b - a) as f64;
    let sum: u64 = hist.counts[a..b].iter().sum();
    let expected = n * level;
    (sum as f64 - expected) / expected.max(1.0).sqrt()
}

fn fit_bins(hist: &DelayHistogram, range_us: f64) -> (usize, usize) {
    let lo = (0..hist.counts.len()).find(|&i| hist.bin_center(i) >= -range_us).unwrap_or(hist.counts.len());
    let hi = (0..hist.counts.len()).rev().find(|&i| hist.bin_center(i) <= range_us).map_or(0, |i| i + 1);
    (lo, hi)
}

fn sideband_level(hist: &DelayHistogram, params: &AnalysisParams) -> f64 {
    let [lo, hi] = params.sideband_us;
    hist.count_between(lo, hi) as f64 * hist.bin_width_us / (hi - lo)
}

/// Gaussian-plus-flat Levenberg–Marquardt fit of the delay peak.
pub fn fit_coincidence_window(hist: &DelayHistogram, params: &AnalysisParams) -> Result<WindowFit> {
    let significance = peak_significance(hist, params);
    if !(significance >= params.min_significance) {
        return Err(Error::InsufficientSignificance {
            significance,
            required: params.min_significance,
        });
    }
    let (lo, hi) = fit_bins(hist, params.fit_range_us);
    let bins: Vec<(f64, f64, f64)> = (lo..hi)
        .map(|i| {
            let a = hist.low_us + i as f64 * hist.bin_width_us;
            (a, a + hist.bin_width_us, hist.counts[i] as f64)
        })
        .collect();
    if bins.len() < 6 {
        return Err(Error::FitFailed("fewer than six bins in the fit range".into()));
    }
    let weights: Vec<f64> = bins.iter().map(|b| 1.0 / b.2.max(1.0)).collect();

    // Starting values from the excess over the sideband level.
    let level = sideband_level(hist, params);
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &(a, b, y) in &bins {
        let excess = (y - level).max(0.0);
        let x = 0.5 * (a + b);
        s0 += excess;
        s1 += excess * x;
        s2 += excess * x * x;
    }
    let mu0 = if s0 > 0.0 { s1 / s0 } else { 0.0 };
    let var0 = if s0 > 0.0 { (s2 / s0 - mu0 * mu0).max(0.0) } else { 0.0 };
    let sigma0 = var0.sqrt().clamp(0.3 * hist.bin_width_us, params.fit_range_us / 3.0);
    let mut p = [s0.max(1.0), mu0, sigma0.ln(), level];

    let chi2 = |p: &[f64; 4]| -> f64 {
        bins.iter()
            .zip(&weights)
            .map(|(&(a, b, y), w)| w * (y - bin_model(p, a, b)).powi(2))
            .sum()
    };
    let normal = |p: &[f64; 4]| -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&(a, b, y), w) in bins.iter().zip(&weights) {
            let f = bin_model(p, a, b);
            let mut g = [0.0; 4];
            for k in 0..4 {
                let h = 1e-6 * p[k].abs().max(1e-3);
                let mut q = *p;
                q[k] += h;
                let fp = bin_model(&q, a, b);
                q[k] = p[k] - h;
                let fm = bin_model(&q, a, b);
                g[k] = (fp - fm) / (2.0 * h);
            }
            let g = Vector4::from(g);
            jtr += g * (w * (y - f));
            jtj += g * g.transpose() * *w;
        }
        (jtj, jtr)
    };

    let mut lambda = 1e-3;
    let mut current = chi2(&p);
    let mut converged = false;
    for _ in 0..500 {
        let (jtj, jtr) = normal(&p);
        let mut a = jtj;
        for i in 0..4 {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = a.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p;
        for k in 0..4 {
            trial[k] += step[k];
        }
        let next = chi2(&trial);
        if next.is_finite() && next <= current {
            let done = current - next <= 1e-10 * current.max(1.0);
            p = trial;
            current = next;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // No downhill step left: at a minimum to machine precision.
                converged = true;
                break;
            }
        }
    }
    if !converged || !p.iter().all(|v| v.is_finite()) || p[0] <= 0.0 {
        return Err(Error::FitFailed(format!("Levenberg-Marquardt did not converge (parameters {p:?})")));
    }
    let (jtj, _) = normal(&p);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailed("singular curvature matrix".into()))?;
    let err = |k: usize| cov[(k, k)].max(0.0).sqrt();
    let sigma = p[2].exp();
    Ok(WindowFit {
        center_us: p[1],
        center_err_us: err(1),
        sigma_us: sigma,
        sigma_err_us: sigma * err(2),
        signal: p[0],
        signal_err: err(0),
        background: p[3],
        background_err: err(3),
        chi2: current,
        ndf: bins.len() - 4,
        significance,
    })
}

/// `r_t · r_b · window` for independent Poisson streams.
pub fn analytic_accidentals(r_t: f64, r_b: f64, window_s: f64) -> f64 {
    r_t * r_b * window_s
}

/// [`analytic_accidentals`] with first-order error propagation.
pub fn analytic_accidentals_measured(r_t: Measured, r_b: Measured, window_s: f64) -> Measured {
    let value = analytic_accidentals(r_t.value, r_b.value, window_s);
    let error = window_s * (r_b.value * r_t.error).hypot(r_t.value * r_b.error);
    Measured::new(value, error)
}

/// One-sided 68 % Poisson upper limit for zero observed counts.
const ZERO_COUNT_LIMIT: f64 = 1.841;

/// Accidentals from a delay sideband, scaled to the window width.
pub fn sideband_accidentals(hist: &DelayHistogram, sideband_us: [f64; 2], window_width_us: f64, livetime_s: f64) -> Result<Measured> {
    let [lo, hi] = sideband_us;
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty sideband range [{lo}, {hi}]")));
    }
    if !(livetime_s > 0.0) {
        return Err(Error::InvalidArgument(format!("livetime must be > 0, got {livetime_s}")));
    }
    let n = hist.count_between(lo, hi);
    let scale = window_width_us / (hi - lo) / livetime_s;
    let error = if n == 0 { ZERO_COUNT_LIMIT } else { (n as f64).sqrt() };
    Ok(Measured::new(n as f64 * scale, error * scale))
}

/// `R_TB − R_γγ − R_acc` with quadrature errors.
pub fn extract_muon_rate(r_tb_total: Measured, r_tb_gamma_gamma: Measured, r_acc: Measured) -> Measured {
    r_tb_total.minus(r_tb_gamma_gamma).minus(r_acc)
}

/// Fraction of time vetoed when every γ-induced or accidental tag opens a
/// veto of `veto_s`.
pub fn dead_time_fraction(r_gamma_coinc: f64, r_acc: f64, veto_s: f64) -> f64 {
    (r_gamma_coinc + r_acc) * veto_s
}

pub fn tagging_efficiency(tagged: u64, total: u64) -> Result<Measured> {
    binomial_fraction(tagged, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Simulated,
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportValue {
    pub value: f64,
    pub error: f64,
    pub source: ValueSource,
}

impl ReportValue {
    pub fn simulated(m: Measured) -> ReportValue {
        ReportValue {
            value: m.value,
            error: m.error,
            source: ValueSource::Simulated,
        }
    }

    pub fn measured(m: Measured) -> ReportValue {
        ReportValue {
            value: m.value,
            error: m.error,
            source: ValueSource::Measured,
        }
    }

    pub fn as_measured(&self) -> Measured {
        Measured::new(self.value, self.error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadTime {
    pub veto_s: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRates {
    pub top: ReportValue,
    pub center: ReportValue,
    pub bottom: ReportValue,
}

impl ChannelRates {
    fn from_fn(mut f: impl FnMut(DetectorId) -> ReportValue) -> ChannelRates {
        ChannelRates {
            top: f(DetectorId::Top),
            center: f(DetectorId::Center),
            bottom: f(DetectorId::Bottom),
        }
    }

    pub fn get(&self, id: DetectorId) -> ReportValue {
        match id {
            DetectorId::Top => self.top,
            DetectorId::Center => self.center,
            DetectorId::Bottom => self.bottom,
        }
    }
}

pub const REPORT_FORMAT: &str = "muontag-report/1";

/// Everything needed to fill Tables I and II.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub format: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub livetime_s: f64,
    /// True when a synthetic-DAQ analysis fed the report.
    pub has_measurement: bool,
    pub complete: bool,

    /// Singles used for Table II: measured when available, else simulated.
    pub singles: ChannelRates,
    pub singles_muon: ChannelRates,
    pub singles_gamma: ChannelRates,
    pub singles_simulated: ChannelRates,

    /// T–B rate inside the window (measured, or simulated truth plus
    /// accidentals in simulation-only reports).
    pub r_tb: ReportValue,
    pub r_tb_mu_mu_true: ReportValue,
    pub r_tb_gamma_gamma: ReportValue,
    /// Simulated true coincidences only (µµ + γγ).
    pub r_tb_expected_true: ReportValue,
    /// Simulated true coincidences plus analytic accidentals.
    pub r_tb_expected_with_accidentals: ReportValue,

    pub r_acc_gamma_gamma: ReportValue,
    pub r_acc_gamma_muon: ReportValue,
    pub r_acc: ReportValue,
    pub r_acc_measured_singles: Option<ReportValue>,
    pub r_acc_sideband: Option<ReportValue>,
    pub accidentals_from: AccidentalsFrom,

    pub r_tb_mu_mu: ReportValue,
    pub r_tb_mu_mu_negative: bool,

    pub tagging_efficiency: Option<ReportValue>,
    pub tagged: u64,
    pub center_muons: u64,
    pub dead_time: Vec<DeadTime>,

    pub window: CoincidenceWindow,
    pub window_fit: Option<WindowFit>,
    pub delay_entries: u64,
    pub coincidences_in_window: u64,
}

/// Synthetic-DAQ side of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredInputs {
    pub livetime_s: f64,
    pub sampling_rate_hz: f64,
    /// Selected pulses per channel.
    pub singles: [u64; 3],
    pub histogram: DelayHistogram,
}

/// Tally selected pulses per channel.
pub fn count_singles(pulses: &[Pulse]) -> [u64; 3] {
    let mut n = [0u64; 3];
    for p in pulses {
        n[p.channel.index()] += 1;
    }
    n
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMeta {
    pub tool_version: String,
    pub config_digest: String,
}

pub fn assemble_report(
    simulation: &SimulationSummary,
    measured: Option<&MeasuredInputs>,
    params: &AnalysisParams,
    meta: &ReportMeta,
) -> Result<RateReport> {
    let livetime = simulation.livetime_s;
    if let Some(m) = measured {
        let tol = 2.0 / m.sampling_rate_hz;
        if (m.livetime_s - livetime).abs() > tol {
            return Err(Error::LivetimeMismatch {
                simulated_s: livetime,
                recorded_s: m.livetime_s,
            });
        }
    }

    let zero = ReportValue::simulated(Measured::ZERO);
    let species_rates = |s: Species| -> ChannelRates {
        match simulation.species(s) {
            Some(sum) => ChannelRates::from_fn(|id| ReportValue::simulated(sum.single_rates[id.index()])),
            None => ChannelRates::from_fn(|_| zero),
        }
    };
    let singles_muon = species_rates(Species::Muon);
    let singles_gamma = species_rates(Species::Gamma);
    let singles_simulated = ChannelRates::from_fn(|id| {
        ReportValue::simulated(singles_muon.get(id).as_measured().plus(singles_gamma.get(id).as_measured()))
    });
    let tb = |s: Species| simulation.species(s).map_or(Measured::ZERO, |x| x.tb_rate);
    let r_tb_mu_mu_true = tb(Species::Muon);
    let r_tb_gamma_gamma = tb(Species::Gamma).with_relative_systematic(params.gamma_gamma_systematic);

    // Window: fixed, or fitted on the measured histogram.
    let window_fit = match (params.window_mode, measured) {
        (WindowMode::Fit, Some(m)) => Some(fit_coincidence_window(&m.histogram, params)?),
        _ => None,
    };
    let window = window_fit.map_or(params.window(), |f| f.window());
    let w = window.width_s();

    let top_gamma = singles_gamma.top.as_measured();
    let bottom_gamma = singles_gamma.bottom.as_measured();
    let top_muon = singles_muon.top.as_measured();
    let bottom_muon = singles_muon.bottom.as_measured();
    let r_acc_gg = analytic_accidentals_measured(top_gamma, bottom_gamma, w);
    let r_acc_gm = analytic_accidentals_measured(top_gamma, bottom_muon, w).plus(analytic_accidentals_measured(top_muon, bottom_gamma, w));
    let r_acc_sim = Measured::new(r_acc_gg.value + r_acc_gm.value, r_acc_gg.error.hypot(r_acc_gm.error));

    let r_tb_expected_true = r_tb_mu_mu_true.plus(r_tb_gamma_gamma);
    let r_tb_expected_with_acc = r_tb_expected_true.plus(r_acc_sim);

    let (singles, r_tb, r_acc_measured, r_acc_sideband, delay_entries, in_window) = match measured {
        Some(m) => {
            let rates = m.singles.map(|k| poisson_rate(k, m.livetime_s));
            let singles = ChannelRates::from_fn(|id| ReportValue::measured(rates[id.index()]));
            let n_in = m.histogram.count_in(&window);
            let r_tb = poisson_rate(n_in, m.livetime_s);
            let acc_meas = analytic_accidentals_measured(rates[0], rates[2], w);
            let sb = sideband_accidentals(&m.histogram, params.sideband_us, window.total_width_us(), m.livetime_s)?;
            (
                singles,
                ReportValue::measured(r_tb),
                Some(acc_meas),
                Some(sb),
                m.histogram.entries(),
                n_in,
            )
        }
        None => (singles_simulated, ReportValue::simulated(r_tb_expected_with_acc), None, None, 0, 0),
    };

    let r_acc = match params.accidentals_from {
        AccidentalsFrom::Simulated => ReportValue::simulated(r_acc_sim),
        AccidentalsFrom::Measured => r_acc_measured.map_or(ReportValue::simulated(r_acc_sim), ReportValue::measured),
        AccidentalsFrom::Sideband => r_acc_sideband.map_or(ReportValue::simulated(r_acc_sim), ReportValue::measured),
    };
    let extracted = extract_muon_rate(r_tb.as_measured(), r_tb_gamma_gamma, r_acc.as_measured());

    let (tagged, center_muons, tagging) = match simulation.species(Species::Muon) {
        Some(s) if s.center_total > 0 => (
            s.tagged,
            s.center_total,
            Some(ReportValue::simulated(tagging_efficiency(s.tagged, s.center_total)?)),
        ),
        Some(s) => (s.tagged, s.center_total, None),
        None => (0, 0, None),
    };
    let dead_time = params
        .veto_times_s
        .iter()
        .map(|&v| DeadTime {
            veto_s: v,
            fraction: dead_time_fraction(r_tb_gamma_gamma.value, r_acc.value, v),
        })
        .collect();

    Ok(RateReport {
        format: REPORT_FORMAT.into(),
        tool_version: meta.tool_version.clone(),
        config_digest: meta.config_digest.clone(),
        seed: simulation.seed,
        livetime_s: livetime,
        has_measurement: measured.is_some(),
        complete: simulation.complete,
        singles,
        singles_muon,
        singles_gamma,
        singles_simulated,
        r_tb,
        r_tb_mu_mu_true: ReportValue::simulated(r_tb_mu_mu_true),
        r_tb_gamma_gamma: ReportValue::simulated(r_tb_gamma_gamma),
        r_tb_expected_true: ReportValue::simulated(r_tb_expected_true),
        r_tb_expected_with_accidentals: ReportValue::simulated(r_tb_expected_with_acc),
        r_acc_gamma_gamma: ReportValue::simulated(r_acc_gg),
        r_acc_gamma_muon: ReportValue::simulated(r_acc_gm),
        r_acc,
        r_acc_measured_singles: r_acc_measured.map(ReportValue::measured),
        r_acc_sideband: r_acc_sideband.map(ReportValue::measured),
        accidentals_from: params.accidentals_from,
        r_tb_mu_mu: ReportValue {
            value: extracted.value,
            error: extracted.error,
            source: r_tb.source,
        },
        r_tb_mu_mu_negative: extracted.value < 0.0,
        tagging_efficiency: tagging,
        tagged,
        center_muons,
        dead_time,
        window,
        window_fit,
        delay_entries,
        coincidences_in_window: in_window,
    })
}

/// A row of a rendered table: label then (value, error) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: &'static str,
    pub cells: Vec<Measured>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<TableRow>,
}

/// Simulated muon, γ and total rates for T, B and T–B.
pub fn table_simulated(report: &RateReport) -> Table {
    let m = |v: ReportValue| v.as_measured();
    let row = |label, mu: Measured, g: Measured| TableRow {
        label,
        cells: vec![mu, g, mu.plus(g)],
    };
    Table {
        columns: vec!["muon_rate", "gamma_rate", "total_rate"],
        rows: vec![
            row("T", m(report.singles_muon.top), m(report.singles_gamma.top)),
            row("B", m(report.singles_muon.bottom), m(report.singles_gamma.bottom)),
            row("T-B", m(report.r_tb_mu_mu_true), m(report.r_tb_gamma_gamma)),
        ],
    }
}

/// Measured (synthetic DAQ) against expected (simulated) rates.
pub fn table_measured(report: &RateReport) -> Table {
    let m = |v: ReportValue| v.as_measured();
    Table {
        columns: vec!["measured", "expected"],
        rows: vec![
            TableRow {
                label: "T",
                cells: vec![m(report.singles.top), m(report.singles_simulated.top)],
            },
            TableRow {
                label: "B",
                cells: vec![m(report.singles.bottom), m(report.singles_simulated.bottom)],
            },
            TableRow {
                label: "T-B",
                cells: vec![m(report.r_tb), m(report.r_tb_expected_with_accidentals)],
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{derive_rng, Stream};
    use crate::transport::SpeciesSummary;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn analytic_accidentals_reference_values() {
        assert!(close(analytic_accidentals(2.9, 3.0, 340e-6), 2.958e-3, 1e-6));
        assert!(close(analytic_accidentals(3.43, 2.97, 340e-6), 3.4636e-3, 1e-6));
        assert_eq!(analytic_accidentals(0.0, 3.0, 340e-6), 0.0);
        // Mixed term from Table I singles.
        let mixed = analytic_accidentals(2.9, 0.296, 340e-6) + analytic_accidentals(0.312, 3.0, 340e-6);
        assert!(close(mixed, 0.6e-3, 0.05e-3), "{mixed}");
        let w = 340e-6;
        assert_eq!(analytic_accidentals(1.3, 2.1, 2.0 * w), 2.0 * analytic_accidentals(1.3, 2.1, w));
    }

    #[test]
    fn dead_time_reference_values() {
        assert!(close(dead_time_fraction(15e-3, 3.6e-3, 1e-3), 1.86e-5, 1e-10));
        assert!(close(dead_time_fraction(15e-3, 3.6e-3, 5e-3), 9.3e-5, 1e-10));
        assert!(close(dead_time_fraction(15e-3, 3.6e-3, 25e-3), 4.65e-4, 1e-10));
        assert_eq!(dead_time_fraction(15e-3, 3.6e-3, 0.0), 0.0);
    }

    #[test]
    fn muon_rate_extraction() {
        let r = extract_muon_rate(Measured::new(211e-3, 8e-3), Measured::new(15e-3, 4e-3), Measured::new(3.6e-3, 0.0));
        assert!(close(r.value, 192.4e-3, 1e-12));
        assert!(close(r.error, 8.94e-3, 1e-5));
        let same = extract_muon_rate(Measured::new(0.2, 0.01), Measured::ZERO, Measured::ZERO);
        assert_eq!(same, Measured::new(0.2, 0.01));
    }

    #[test]
    fn quadrature_error_matches_bootstrap() {
        let (a, b, c) = (Measured::new(0.211, 0.008), Measured::new(0.015, 0.004), Measured::new(0.0036, 0.0004));
        let analytic = extract_muon_rate(a, b, c).error;
        let mut rng = derive_rng(7, Stream::Emulation, 0);
        let draw = |m: Measured, rng: &mut rand_chacha::ChaCha8Rng| Normal::new(m.value, m.error).unwrap().sample(rng);
        let trials: Vec<f64> = (0..10_000)
            .map(|_| draw(a, &mut rng) - draw(b, &mut rng) - draw(c, &mut rng))
            .collect();
        let boot = crate::stats::variance(&trials).sqrt();
        assert!((boot - analytic).abs() / analytic < 0.05);
    }

    #[test]
    fn tagging_efficiency_reference() {
        let e = tagging_efficiency(4589, 5073).unwrap();
        assert!(close(e.value, 0.9046, 5e-5) && close(e.error, 0.0041, 5e-5));
        assert!(tagging_efficiency(0, 0).is_err());
    }

    fn pulse(record_id: u64, channel: DetectorId, peak_time_us: f64, amplitude: f64) -> Pulse {
        Pulse {
            record_id,
            channel,
            t0_s: 0.0,
            peak_time_us,
            amplitude,
            baseline_rms: 1.0,
        }
    }

    #[test]
    fn simultaneous_pulses_fill_zero_bin() {
        let pulses: Vec<Pulse> = (0..50)
            .flat_map(|r| [pulse(r, DetectorId::Top, 6128.0, 10.0), pulse(r, DetectorId::Bottom, 6128.0, 12.0)])
            .chain([pulse(99, DetectorId::Top, 100.0, 1.0)])
            .collect();
        let h = build_delay_histogram(&pulses, 20.0, 24_000.0);
        assert_eq!(h.entries(), 50);
        let zero_bin = ((0.0 - h.low_us) / 20.0) as usize;
        assert_eq!(h.counts[zero_bin], 50);
        assert_eq!(h.counts.iter().sum::<u64>(), 50);
    }

    #[test]
    fn largest_pulse_per_channel_is_paired() {
        let pulses = [
            pulse(0, DetectorId::Top, 1000.0, 50.0),
            pulse(0, DetectorId::Top, 9000.0, 5.0),
            pulse(0, DetectorId::Bottom, 1010.0, 40.0),
            pulse(0, DetectorId::Center, 0.0, 100.0),
        ];
        let h = build_delay_histogram(&pulses, 20.0, 24_000.0);
        assert_eq!(h.delays_us, vec![10.0]);
    }

    fn independent_histogram(seed: u64, n: usize) -> DelayHistogram {
        let mut rng = derive_rng(seed, Stream::Emulation, 0);
        let mut h = DelayHistogram::new(20.0, 24_000.0);
        for _ in 0..n {
            h.fill(rng.random_range(-6000.0..6000.0));
        }
        h
    }

    #[test]
    fn independent_streams_give_flat_histogram() {
        let h = independent_histogram(8, 60_000);
        let (lo, hi) = fit_bins(&h, 5980.0);
        let counts = &h.counts[lo..hi];
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        let dof = (counts.len() - 1) as f64;
        let p = 1.0 - statrs::distribution::ContinuousCDF::cdf(&statrs::distribution::ChiSquared::new(dof).unwrap(), chi2);
        assert!(p > 0.01, "chi2 {chi2} dof {dof}");
        assert!(matches!(
            fit_coincidence_window(&h, &AnalysisParams::default()),
            Err(Error::InsufficientSignificance { .. })
        ));
    }

    fn peaked_histogram(seed: u64, sigma: f64, center: f64, signal: usize, flat: usize) -> DelayHistogram {
        let mut h = independent_histogram(seed, flat);
        let mut rng = derive_rng(seed, Stream::Emulation, 1);
        let g = Normal::new(center, sigma).unwrap();
        for _ in 0..signal {
            h.fill(g.sample(&mut rng));
        }
        h
    }

    #[test]
    fn fitted_window_recovers_three_sigma() {
        let h = peaked_histogram(9, 56.7, 0.0, 700, 20_000);
        let fit = fit_coincidence_window(&h, &AnalysisParams::default()).unwrap();
        let w = fit.window();
        assert!((w.half_width_us - 170.0).abs() / 170.0 < 0.1, "{fit:?}");
        assert!(fit.center_us.abs() < 20.0);
        assert!((fit.signal - 700.0).abs() < 4.0 * fit.signal_err);
        assert!(fit.sigma_err_us > 0.0 && fit.sigma_err_us < 10.0);
    }

    #[test]
    fn offset_peak_centre_found() {
        let h = peaked_histogram(10, 40.0, 123.0, 1000, 5000);
        let fit = fit_coincidence_window(&h, &AnalysisParams::default()).unwrap();
        assert!((fit.center_us - 123.0).abs() < 4.0 * fit.center_err_us.max(1.0));
    }

    #[test]
    fn sideband_estimate() {
        let h = independent_histogram(11, 50_000);
        let sb = sideband_accidentals(&h, [-2500.0, -400.0], 340.0, 100.0).unwrap();
        let truth = 50_000.0 / 12_000.0 * 340.0 / 100.0;
        assert!((sb.value - truth).abs() < 2.0 * sb.error);
        let empty = DelayHistogram::new(20.0, 24_000.0);
        let z = sideband_accidentals(&empty, [-2500.0, -400.0], 340.0, 100.0).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(close(z.error, 1.841 * 340.0 / 2100.0 / 100.0, 1e-12));
        assert!(sideband_accidentals(&h, [-400.0, -400.0], 340.0, 100.0).is_err());
        assert!(sideband_accidentals(&h, [-2500.0, -400.0], 340.0, 0.0).is_err());
    }

    #[test]
    fn histogram_merge_is_associative() {
        let a = independent_histogram(12, 100);
        let b = independent_histogram(13, 200);
        let c = independent_histogram(14, 300);
        let mut ab_c = a.clone();
        ab_c.merge(&b).unwrap();
        ab_c.merge(&c).unwrap();
        let mut bc = b.clone();
        bc.merge(&c).unwrap();
        let mut a_bc = a.clone();
        a_bc.merge(&bc).unwrap();
        assert_eq!(ab_c.counts, a_bc.counts);
        assert_eq!(ab_c.entries(), 600);
        assert!(a.clone().merge(&DelayHistogram::new(10.0, 100.0)).is_err());
    }

    #[test]
    fn params_validation() {
        AnalysisParams::default().validate().unwrap();
        let p = AnalysisParams {
            sideband_us: [-300.0, 100.0],
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = AnalysisParams {
            bin_width_us: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    fn summary(muon_tb: u64, gamma: bool) -> SimulationSummary {
        let livetime = 1000.0;
        let sp = |species, singles: [u64; 3], tb: u64, n: u64| SpeciesSummary {
            species,
            n_generated: n,
            generation_rate_hz: n as f64 / livetime,
            singles,
            tb_coincidences: tb,
            center_total: singles[1],
            tagged: tb.min(singles[1]),
            single_rates: singles.map(|k| crate::stats::binomial_rate(k, n, livetime)),
            tb_rate: crate::stats::binomial_rate(tb, n, livetime),
            tagging_efficiency: None,
        };
        let mut species = vec![sp(Species::Muon, [312, 100, 296], muon_tb, 100_000)];
        if gamma {
            species.push(sp(Species::Gamma, [2900, 500, 3000], 15, 10_000_000));
        }
        SimulationSummary {
            format: crate::transport::SUMMARY_FORMAT.into(),
            complete: true,
            seed: 1,
            livetime_s: livetime,
            threshold_kev: 1.0,
            species,
        }
    }

    #[test]
    fn muon_only_report_has_no_gamma_terms() {
        let s = summary(195, false);
        let hist = DelayHistogram::new(20.0, 24_000.0);
        let mut h = hist.clone();
        for _ in 0..195 {
            h.fill(0.0);
        }
        let m = MeasuredInputs {
            livetime_s: 1000.0,
            sampling_rate_hz: 1e5,
            singles: [312, 100, 296],
            histogram: h,
        };
        let r = assemble_report(&s, Some(&m), &AnalysisParams::default(), &ReportMeta::default()).unwrap();
        assert_eq!(r.singles_gamma.top.value, 0.0);
        assert_eq!(r.r_tb_gamma_gamma.value, 0.0);
        assert_eq!(r.r_acc.value, 0.0);
        assert_eq!(r.r_tb_mu_mu.value, r.r_tb.value);
        assert!(close(r.r_tb.value, 0.195, 1e-12));
    }

    #[test]
    fn simulated_report_reproduces_table_arithmetic() {
        let r = assemble_report(&summary(195, true), None, &AnalysisParams::default(), &ReportMeta::default()).unwrap();
        assert!(close(r.r_acc_gamma_gamma.value, 2.958e-3, 1e-9));
        assert!(close(r.r_acc.value, 3.6e-3, 0.05e-3));
        assert!(close(r.r_tb_expected_true.value, 0.210, 1e-9));
        assert!(close(r.r_tb_expected_with_accidentals.value, 0.2136, 0.1e-3));
        assert!(close(r.r_tb_mu_mu.value, 0.195, 1e-9));
        assert_eq!(r.r_tb.source, ValueSource::Simulated);
        let t1 = table_simulated(&r);
        assert!(close(t1.rows[0].cells[2].value, 3.212, 1e-9));
        let json = serde_json::to_string(&r).unwrap();
        let back: RateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn livetime_mismatch_rejected() {
        let m = MeasuredInputs {
            livetime_s: 999.0,
            sampling_rate_hz: 1e5,
            singles: [0; 3],
            histogram: DelayHistogram::new(20.0, 24_000.0),
        };
        assert!(matches!(
            assemble_report(&summary(1, false), Some(&m), &AnalysisParams::default(), &ReportMeta::default()),
            Err(Error::LivetimeMismatch { .. })
        ));
    }
}
