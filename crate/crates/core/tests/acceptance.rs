//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use muontag_core::coincidence::{analytic_accidentals, dead_time_fraction};
use muontag_core::config::RunLength;
use muontag_core::daq::{DaqParams, WaveformRecord};
use muontag_core::emulate::{sideband_study, EmulatorParams};
use muontag_core::pipeline::{self, compare_reports, run_end_to_end, simulation_report, EndToEnd};
use muontag_core::pulse::{estimate_noise_psd, select_pulses, OptimalFilter, PsdOptions, Pulse};
use muontag_core::seeding::{derive_rng, Stream};
use muontag_core::stats::Measured;
use muontag_core::transport::run_simulation;
use muontag_core::{DetectorId, RunConfig, Species};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

fn muon_only(n: u64) -> muontag_core::SimulationSummary {
    let mut cfg = RunConfig::default();
    cfg.sources.flux.gamma_flux = 0.0;
    run_simulation(&cfg, RunLength::Primaries(n), 11, 0, None).unwrap().summary
}

fn tagging(summary: &muontag_core::SimulationSummary) -> Outcome {
    let m = summary.species(Species::Muon).unwrap();
    let eff = m.tagging_efficiency.unwrap();
    outcome(
        m.n_generated >= 1_000_000 && (eff.value - 0.90).abs() <= 0.03,
        format!("efficiency {:.4} ± {:.4} ({}/{} CENTER muons, {} primaries); target 0.90 ± 0.03, reference 4589/5073 = 0.905", eff.value, eff.error, m.tagged, m.center_total, m.n_generated),
    )
}

fn muon_singles(summary: &muontag_core::SimulationSummary) -> Outcome {
    let m = summary.species(Species::Muon).unwrap();
    let (t, b) = (m.single_rates[0], m.single_rates[2]);
    outcome(
        within(t.value, 0.312, 0.15) && within(b.value, 0.296, 0.15),
        format!("T {:.4} ± {:.4}, B {:.4} ± {:.4} /s; targets 0.312, 0.296 ± 15%", t.value, t.error, b.value, b.error),
    )
}

fn muon_coincidences(summary: &muontag_core::SimulationSummary) -> Outcome {
    let r = summary.species(Species::Muon).unwrap().tb_rate;
    outcome(within(r.value, 0.195, 0.15), format!("T-B {:.4} ± {:.4} /s; target 0.195 ± 15%", r.value, r.error))
}

fn gamma_rates(summary: &muontag_core::SimulationSummary) -> Outcome {
    let g = summary.species(Species::Gamma).unwrap();
    let (t, b, tb) = (g.single_rates[0].value, g.single_rates[2].value, g.tb_rate);
    let factor2 = |x: f64, target: f64| x >= target / 2.0 && x <= target * 2.0;
    let same_order = tb.value > 0.015 / 10.0 && tb.value < 0.015 * 10.0;
    outcome(
        factor2(t, 2.9) && factor2(b, 3.0) && tb.value < 0.1 * t.min(b) && same_order,
        format!("T {t:.3}, B {b:.3} /s (targets 2.9, 3.0 within x2); gamma-gamma T-B {:.4} ± {:.4} /s (target 0.015 order, < 10% of singles)", tb.value, tb.error),
    )
}

fn accidentals() -> Outcome {
    let w = 340e-6;
    let rounded = |x: f64| format!("{:.1}", x * 1e3);
    let mc = analytic_accidentals(2.9, 3.0, w);
    let measured = analytic_accidentals(3.43, 2.97, w);
    let mixed = analytic_accidentals(2.9, 0.296, w) + analytic_accidentals(0.312, 3.0, w);
    let total = mc + mixed;
    let got = [rounded(mc), rounded(measured), rounded(mixed), rounded(total)];
    outcome(
        got == ["3.0", "3.5", "0.6", "3.6"],
        format!("MC {}e-3, measured {}e-3, mixed {}e-3, total {}e-3", got[0], got[1], got[2], got[3]),
    )
}

fn dead_time() -> Outcome {
    let f = |veto: f64| dead_time_fraction(0.015, 3.6e-3, veto);
    let (one, five, long) = (f(1e-3), f(5e-3), f(25e-3));
    let sig1 = |x: f64| format!("{x:.0e}");
    let pct = format!("{:.2}", long * 100.0);
    outcome(
        sig1(one) == "2e-5" && sig1(five) == "9e-5" && pct == "0.05",
        format!("1 ms {one:.2e}, 5 ms {five:.2e}, 25 ms {pct}%"),
    )
}

fn sideband() -> Outcome {
    let study = sideband_study(&EmulatorParams::default(), 0..50, 2.0).unwrap();
    let mean = |f: &dyn Fn(&muontag_core::emulate::EmulatorRun) -> f64| study.runs.iter().map(f).sum::<f64>() / study.runs.len() as f64;
    let vs_truth = study.runs.iter().filter(|r| r.sideband_negative.pull(r.truth).is_some_and(|p| p.abs() <= 2.0)).count();
    let vs_analytic = study.runs.iter().filter(|r| r.sideband_negative.pull(r.analytic).is_some_and(|p| p.abs() <= 2.0)).count();
    outcome(
        study.passed >= 45,
        format!(
            "{}/50 runs compatible with both ({vs_analytic}/50 vs analytic, {vs_truth}/50 vs truth); mean sideband {:.2}e-3, analytic {:.2}e-3, truth {:.2}e-3; positive-sideband excess {:+.1}%",
            study.passed,
            mean(&|r| r.sideband_negative.value) * 1e3,
            mean(&|r| r.analytic.value) * 1e3,
            mean(&|r| r.truth.value) * 1e3,
            100.0 * study.positive_excess
        ),
    )
}

fn closure(e2e: &EndToEnd) -> Outcome {
    let r = &e2e.report;
    let got = r.r_tb_mu_mu.as_measured();
    let truth = r.r_tb_mu_mu_true.as_measured();
    let pull = got.pull(truth).unwrap_or(f64::INFINITY);
    outcome(
        r.livetime_s >= 3600.0 && pull.abs() <= 2.0,
        format!(
            "extracted ({:.1} ± {:.1})e-3 vs injected ({:.1} ± {:.1})e-3 /s, pull {pull:+.2}; {:.0} s livetime, {} records",
            got.value * 1e3,
            got.error * 1e3,
            truth.value * 1e3,
            truth.error * 1e3,
            r.livetime_s,
            e2e.daq.records
        ),
    )
}

const N: usize = 2400;
const FS: f64 = 1e5;

fn pulse_trace(params: &DaqParams, amplitude: f64, onset: f64) -> Vec<f64> {
    let t = params.template(DetectorId::Top);
    (0..N).map(|i| amplitude * t.shape((i as f64 - onset) * 1e6 / FS)).collect()
}

fn noise_trace(rng: &mut impl Rng, sigma: f64) -> Vec<f64> {
    (0..N).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn as_record(id: u64, trace: &[f64]) -> WaveformRecord {
    let ch: Vec<f32> = trace.iter().map(|&x| x as f32).collect();
    WaveformRecord {
        record_id: id,
        trigger_channel: DetectorId::Top,
        trigger_index: 600,
        start_sample: id * N as u64,
        sampling_rate_hz: FS,
        channels: vec![ch.clone(), ch.clone(), ch],
    }
}

fn pulse_properties() -> Outcome {
    let params = DaqParams::default();
    let sigma = params.noise.white_rms;
    let mut rng = derive_rng(9, Stream::Emulation, 1);
    let noise_records: Vec<WaveformRecord> = (0..300).map(|i| as_record(i, &noise_trace(&mut rng, sigma))).collect();
    let psd = estimate_noise_psd(&noise_records, DetectorId::Top, &PsdOptions::default()).unwrap();
    let filter = OptimalFilter::new(&params.template(DetectorId::Top), &psd).unwrap();
    let res = filter.resolution();

    // unbiasedness at 20 sigma, random sub-sample onsets
    let amp = 20.0 * res;
    let trials = 3000;
    let mut sum = 0.0;
    for _ in 0..trials {
        let onset = 500.0 + 400.0 * rng.random::<f64>();
        let mut x = noise_trace(&mut rng, sigma);
        for (v, p) in x.iter_mut().zip(pulse_trace(&params, amp, onset)) {
            *v += p;
        }
        sum += filter.analyze(&x).unwrap().amplitude;
    }
    let bias = sum / trials as f64 / amp - 1.0;

    // shift covariance on the sample grid
    let base = filter.analyze(&pulse_trace(&params, amp, 600.25)).unwrap();
    let shift_ok = [1usize, 13, 400].iter().all(|&k| {
        let s = filter.analyze(&pulse_trace(&params, amp, 600.25 + k as f64)).unwrap();
        s.lag == base.lag + k && (s.peak_time_us - base.peak_time_us - k as f64 * 1e6 / FS).abs() < 1e-6 && (s.amplitude - base.amplitude).abs() <= 1e-9 * amp
    });

    // noiseless linearity over three decades
    let reference = filter.analyze(&pulse_trace(&params, 1.0, 700.0)).unwrap().amplitude;
    let linearity = [0.5, 3.0, 40.0, 150.0, 999.0]
        .iter()
        .map(|&a| (filter.analyze(&pulse_trace(&params, a, 700.0)).unwrap().amplitude / (a * reference) - 1.0).abs())
        .fold(0.0, f64::max);

    // noise-only survival of the 5 sigma selection
    let noise_trials = 10_000u64;
    let mut survivors = 0;
    for id in 0..noise_trials {
        let x = noise_trace(&mut rng, sigma);
        let pulses: Vec<Pulse> = filter
            .find_pulses(&x, 5.0)
            .unwrap()
            .into_iter()
            .map(|f| Pulse {
                record_id: id,
                channel: DetectorId::Top,
                t0_s: 0.0,
                peak_time_us: f.peak_time_us,
                amplitude: f.amplitude,
                baseline_rms: f.baseline_rms,
            })
            .collect();
        if !select_pulses(&pulses, 5.0).is_empty() {
            survivors += 1;
        }
    }
    let survival = survivors as f64 / noise_trials as f64;
    outcome(
        bias.abs() < 0.005 && shift_ok && linearity < 1e-6 && survival < 1e-3,
        format!(
            "20 sigma bias {:+.3}%, shift covariance {}, linearity {linearity:.1e}, noise survival {survivors}/{noise_trials}",
            bias * 100.0,
            if shift_ok { "exact" } else { "BROKEN" }
        ),
    )
}

fn determinism() -> Outcome {
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, workers) in dirs.iter().zip([1usize, 2, 8]) {
        let mut cfg = RunConfig::default();
        cfg.set_run_length(RunLength::Livetime(60.0));
        cfg.run.seed = 2024;
        cfg.run.workers = workers;
        let out = dir.path();
        pipeline::stage_simulate(&cfg, None, out, None).unwrap();
        pipeline::stage_daq(&cfg, &out.join(pipeline::EVENTS_FILE), &out.join(pipeline::SUMMARY_FILE), out, None).unwrap();
        pipeline::stage_analyze(&cfg, &out.join(pipeline::RECORDS_FILE), &out.join(pipeline::SUMMARY_FILE), &out.join(pipeline::DAQ_SUMMARY_FILE), out).unwrap();
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let files = [pipeline::EVENTS_FILE, pipeline::RECORDS_FILE, pipeline::PULSES_FILE, pipeline::REPORT_FILE];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let a = read(dirs[0].path(), f);
            dirs[1..].iter().any(|d| read(d.path(), f) != a)
        })
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} identical across 1, 2 and 8 workers", files.join(", "))
        } else {
            format!("differ across worker counts: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("criterion {id:>2} {:<26} {} ({secs:.1} s): {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };

    let t = Instant::now();
    let muons = muon_only(1_000_000);
    println!("muon-only run: 10^6 primaries in {:.1} s", t.elapsed().as_secs_f64());
    run(1, "tagging efficiency", &mut || tagging(&muons));
    run(2, "muon single rates", &mut || muon_singles(&muons));
    run(3, "muon T-B coincidences", &mut || muon_coincidences(&muons));

    let t = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.set_run_length(RunLength::Livetime(3600.0));
    cfg.run.seed = 7;
    let e2e = run_end_to_end(&cfg, 0, None).unwrap();
    println!("end-to-end run: {:.0} s livetime in {:.1} s", e2e.report.livetime_s, t.elapsed().as_secs_f64());
    run(4, "gamma rates", &mut || gamma_rates(&e2e.simulation.summary));
    run(5, "analytic accidentals", &mut accidentals);
    run(6, "dead-time formula", &mut dead_time);
    run(7, "sideband estimator", &mut sideband);
    run(8, "end-to-end closure", &mut || closure(&e2e));
    run(9, "pulse pipeline properties", &mut pulse_properties);
    run(10, "determinism", &mut determinism);

    // measured vs simulated comparison of the closure run, for reference
    let sim = simulation_report(&cfg, &e2e.simulation.summary).unwrap();
    let rows = compare_reports(&[e2e.report.clone(), sim]).unwrap();
    let pulls: Vec<String> = rows.iter().map(|r| format!("{} {:+.2}", r.quantity, r.pull.unwrap_or(f64::NAN))).collect();
    println!("measured vs simulated pulls (1 h): {}", pulls.join(", "));
    if let Some(sb) = e2e.report.r_acc_sideband {
        let sb = Measured::new(sb.value, sb.error);
        println!("closure-run negative sideband ({:.2} ± {:.2})e-3 /s", sb.value * 1e3, sb.error * 1e3);
    }

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{}/{} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing: {failed:?}");
        ExitCode::FAILURE
    }
}
