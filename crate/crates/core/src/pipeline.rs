//! Stage-wise orchestration: simulate → daq → analyze → report, either
//! through files in an output directory or entirely in memory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coincidence::{
    assemble_report, build_delay_histogram, count_singles, table_measured, table_simulated, DelayHistogram, MeasuredInputs,
    RateReport, ReportMeta, ReportValue,
};
use crate::config::RunConfig;
use crate::daq::{run_daq, DaqParams, DaqSummary, WaveformRecord};
use crate::error::{Error, Result};
use crate::geometry::DetectorId;
use crate::io;
use crate::manifest::{FileDigest, RunManifest, StageEntry};
use crate::pulse::{estimate_noise_psd_refined, select_pulses, ChannelFilters, NoisePsd, OptimalFilter, PsdOptions, Pulse};
use crate::stats::Measured;
use crate::transport::{run_simulation, SimulationOutput, SimulationSummary};

pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const RECORDS_FILE: &str = "records.bin";
pub const DAQ_SUMMARY_FILE: &str = "daq_summary.json";
pub const PULSES_FILE: &str = "pulses.csv";
pub const DELAYS_FILE: &str = "delays.csv";
pub const PSD_FILE: &str = "psd.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SIM_REPORT_FILE: &str = "sim_report.json";
pub const TABLE_SIMULATED_FILE: &str = "table_simulated.csv";
pub const TABLE_MEASURED_FILE: &str = "table_measured.csv";

const ANALYSIS_BATCH: usize = 256;

/// Incremental record analysis. The first records are buffered until
/// enough exist to estimate the noise PSDs; after that each batch is
/// filtered as it arrives, so memory stays bounded on long runs.
pub struct Analyzer {
    params: crate::coincidence::AnalysisParams,
    daq: DaqParams,
    warmup: usize,
    pending: Vec<WaveformRecord>,
    filters: Option<ChannelFilters>,
    psd: Option<[NoisePsd; 3]>,
    pulses: Vec<Pulse>,
    records: u64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    /// Every reconstructed pulse, before the amplitude cut.
    pub pulses: Vec<Pulse>,
    pub selected: Vec<Pulse>,
    pub psd: [NoisePsd; 3],
    pub records: u64,
}

impl Analyzer {
    pub fn new(daq: &DaqParams, params: &crate::coincidence::AnalysisParams) -> Analyzer {
        Analyzer {
            params: params.clone(),
            daq: daq.clone(),
            warmup: (4 * params.max_noise_records).max(1000),
            pending: Vec::new(),
            filters: None,
            psd: None,
            pulses: Vec::new(),
            records: 0,
        }
    }

    pub fn push(&mut self, record: WaveformRecord) -> Result<()> {
        self.records += 1;
        self.pending.push(record);
        if self.filters.is_none() {
            if self.pending.len() >= self.warmup {
                self.build_filters()?;
                self.flush()?;
            }
        } else if self.pending.len() >= ANALYSIS_BATCH {
            self.flush()?;
        }
        Ok(())
    }

    fn build_filters(&mut self) -> Result<()> {
        let opts = PsdOptions {
            min_records: self.params.min_noise_records,
            max_records: self.params.max_noise_records,
            veto_sigma: self.params.noise_veto_sigma,
        };
        let mut psds = Vec::with_capacity(3);
        let mut filters = Vec::with_capacity(3);
        for id in DetectorId::ALL {
            let template = self.daq.template(id);
            let psd = estimate_noise_psd_refined(&self.pending, id, &template, &opts)?;
            filters.push((id, OptimalFilter::new(&template, &psd)?));
            psds.push(psd);
        }
        self.psd = Some(psds.try_into().expect("three channels"));
        self.filters = Some(ChannelFilters { filters });
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let filters = self.filters.as_ref().expect("filters built before flushing");
        let k = self.params.pulse_threshold_sigma;
        let batch: Vec<Vec<Pulse>> = self
            .pending
            .par_iter()
            .map(|r| filters.reconstruct(r, k))
            .collect::<Result<_>>()?;
        self.pulses.extend(batch.into_iter().flatten());
        self.pending.clear();
        Ok(())
    }

    pub fn finish(mut self) -> Result<AnalysisOutput> {
        if self.filters.is_none() {
            self.build_filters()?;
        }
        self.flush()?;
        let selected = select_pulses(&self.pulses, self.params.pulse_threshold_sigma);
        Ok(AnalysisOutput {
            pulses: self.pulses,
            selected,
            psd: self.psd.expect("filters built"),
            records: self.records,
        })
    }
}

pub fn delay_histogram(selected: &[Pulse], config: &RunConfig) -> DelayHistogram {
    build_delay_histogram(selected, config.analysis.bin_width_us, config.daq.record_duration_s() * 1e6)
}

fn measured_inputs(out: &AnalysisOutput, daq: &DaqSummary, config: &RunConfig) -> MeasuredInputs {
    MeasuredInputs {
        livetime_s: daq.duration_s,
        sampling_rate_hz: config.daq.sampling_rate_hz,
        singles: count_singles(&out.selected),
        histogram: delay_histogram(&out.selected, config),
    }
}

fn meta(config: &RunConfig) -> ReportMeta {
    ReportMeta {
        tool_version: crate::TOOL_VERSION.into(),
        config_digest: config.digest(),
    }
}

/// Everything produced by an in-memory end-to-end run.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub simulation: SimulationOutput,
    pub daq: DaqSummary,
    pub analysis: AnalysisOutput,
    pub histogram: DelayHistogram,
    pub report: RateReport,
}

/// simulate → daq → analyze without touching the filesystem.
pub fn run_end_to_end(config: &RunConfig, workers: usize, cancel: Option<&AtomicBool>) -> Result<EndToEnd> {
    let seed = config.run.seed;
    let simulation = run_simulation(config, config.run_length()?, seed, workers, cancel)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        let mut analyzer = Analyzer::new(&config.daq, &config.analysis);
        let daq = run_daq(
            &simulation.events,
            simulation.summary.livetime_s,
            &config.daq,
            seed,
            cancel,
            &mut |r| analyzer.push(r),
        )?;
        let analysis = analyzer.finish()?;
        let measured = measured_inputs(&analysis, &daq, config);
        let histogram = measured.histogram.clone();
        let report = assemble_report(&simulation.summary, Some(&measured), &config.analysis, &meta(config))?;
        Ok(EndToEnd {
            simulation,
            daq,
            analysis,
            histogram,
            report,
        })
    })
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths.iter().map(|p| FileDigest::of(p)).collect()
}

fn record_stage(out_dir: &Path, config: &RunConfig, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf], started: Instant, complete: bool) -> Result<()> {
    let mut manifest = RunManifest::load_or_default(out_dir)?;
    manifest.record(StageEntry {
        stage: stage.into(),
        seed: config.run.seed,
        config_digest: config.digest(),
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
        wall_time_s: started.elapsed().as_secs_f64(),
        complete,
    });
    manifest.save(out_dir)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs the Monte Carlo and writes events, summary, a simulation-only
/// report and the resolved config.
pub fn stage_simulate(config: &RunConfig, config_path: Option<&Path>, out_dir: &Path, cancel: Option<&AtomicBool>) -> Result<SimulationSummary> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let out = run_simulation(config, config.run_length()?, config.run.seed, config.run.workers, cancel)?;
    let events = out_dir.join(EVENTS_FILE);
    let summary = out_dir.join(SUMMARY_FILE);
    let resolved = out_dir.join(CONFIG_FILE);
    let report = out_dir.join(SIM_REPORT_FILE);
    io::write_events(&events, &out.events)?;
    io::write_json(&summary, &out.summary)?;
    io::write_json(&report, &simulation_report(config, &out.summary)?)?;
    std::fs::write(&resolved, config.to_toml_string()?).map_err(|e| Error::io(&resolved, e))?;
    let inputs: Vec<PathBuf> = config_path.into_iter().map(Path::to_path_buf).collect();
    record_stage(out_dir, config, "simulate", &inputs, &[events, summary, resolved, report], started, out.summary.complete)?;
    Ok(out.summary)
}

pub fn read_summary(path: &Path) -> Result<SimulationSummary> {
    let s: SimulationSummary = io::read_json(path)?;
    if s.format != crate::transport::SUMMARY_FORMAT {
        return Err(Error::Schema(format!("{}: unknown summary format {}", path.display(), s.format)));
    }
    Ok(s)
}

/// Synthesizes the readout for an event file and writes the triggered
/// records. The stream covers the simulated livetime.
pub fn stage_daq(config: &RunConfig, events_path: &Path, summary_path: &Path, out_dir: &Path, cancel: Option<&AtomicBool>) -> Result<DaqSummary> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let events = io::read_events(events_path)?;
    let summary = read_summary(summary_path)?;
    let records_path = out_dir.join(RECORDS_FILE);
    let file = io::create(&records_path)?;
    let mut writer = io::RecordWriter::new(file, config.daq.sampling_rate_hz, 3, config.daq.record_length).map_err(|e| Error::io(&records_path, e))?;
    let daq = {
        let mut sink = |r: WaveformRecord| writer.write(&r).map_err(|e| Error::io(&records_path, e));
        run_daq(&events, summary.livetime_s, &config.daq, config.run.seed, cancel, &mut sink)?
    };
    writer.finish().map_err(|e| Error::io(&records_path, e))?;
    let daq_summary = out_dir.join(DAQ_SUMMARY_FILE);
    io::write_json(&daq_summary, &daq)?;
    record_stage(
        out_dir,
        config,
        "daq",
        &[events_path.to_path_buf(), summary_path.to_path_buf()],
        &[records_path, daq_summary],
        started,
        daq.complete,
    )?;
    Ok(daq)
}

/// Reconstructs pulses from a record file and assembles the rate report.
pub fn stage_analyze(config: &RunConfig, records_path: &Path, summary_path: &Path, daq_summary_path: &Path, out_dir: &Path) -> Result<RateReport> {
    let started = Instant::now();
    ensure_dir(out_dir)?;
    let summary = read_summary(summary_path)?;
    let daq: DaqSummary = io::read_json(daq_summary_path)?;
    let reader = io::RecordReader::open(records_path)?;
    if reader.header.n_samples != config.daq.record_length || reader.header.sampling_rate_hz != config.daq.sampling_rate_hz {
        return Err(Error::GridMismatch(format!(
            "{}: records have {} samples at {} Hz, config expects {} at {} Hz",
            records_path.display(),
            reader.header.n_samples,
            reader.header.sampling_rate_hz,
            config.daq.record_length,
            config.daq.sampling_rate_hz
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let analysis = pool.install(|| -> Result<AnalysisOutput> {
        let mut analyzer = Analyzer::new(&config.daq, &config.analysis);
        for r in reader {
            analyzer.push(r?)?;
        }
        analyzer.finish()
    })?;
    let measured = measured_inputs(&analysis, &daq, config);
    let report = assemble_report(&summary, Some(&measured), &config.analysis, &meta(config))?;

    let paths: Vec<PathBuf> = [PULSES_FILE, DELAYS_FILE, PSD_FILE, REPORT_FILE, TABLE_SIMULATED_FILE, TABLE_MEASURED_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    io::write_pulses(&paths[0], &analysis.pulses)?;
    io::write_histogram(&paths[1], &measured.histogram)?;
    io::write_psd(&paths[2], &analysis.psd)?;
    io::write_json(&paths[3], &report)?;
    io::write_table(&paths[4], &table_simulated(&report))?;
    io::write_table(&paths[5], &table_measured(&report))?;
    record_stage(
        out_dir,
        config,
        "analyze",
        &[records_path.to_path_buf(), summary_path.to_path_buf(), daq_summary_path.to_path_buf()],
        &paths,
        started,
        report.complete && daq.complete,
    )?;
    Ok(report)
}

/// Report from the simulation alone (no synthetic DAQ).
pub fn simulation_report(config: &RunConfig, summary: &SimulationSummary) -> Result<RateReport> {
    assemble_report(summary, None, &config.analysis, &meta(config))
}

fn fmt_value(v: Measured) -> String {
    format!("{:.4} ± {:.4}", v.value, v.error)
}

fn fmt_milli(v: Measured) -> String {
    format!("({:.1} ± {:.1})e-3", v.value * 1e3, v.error * 1e3)
}

/// Human-readable summary of one report.
pub fn render_report(report: &RateReport) -> String {
    let mut s = String::new();
    let m = |v: ReportValue| v.as_measured();
    let _ = writeln!(s, "livetime {:.1} s, seed {}, window {:.0} ± {:.0} us{}", report.livetime_s, report.seed, report.window.center_us, report.window.half_width_us, if report.complete { "" } else { " (INCOMPLETE)" });
    let _ = writeln!(s, "\nSimulated rates [events/s]");
    let _ = writeln!(s, "{:<5} {:>22} {:>22} {:>22}", "", "muon", "gamma", "total");
    for row in table_simulated(report).rows {
        let _ = writeln!(s, "{:<5} {:>22} {:>22} {:>22}", row.label, fmt_value(row.cells[0]), fmt_value(row.cells[1]), fmt_value(row.cells[2]));
    }
    if report.has_measurement {
        let _ = writeln!(s, "\nMeasured vs expected [events/s]");
        let _ = writeln!(s, "{:<5} {:>22} {:>22}", "", "measured", "expected");
        for row in table_measured(report).rows {
            let _ = writeln!(s, "{:<5} {:>22} {:>22}", row.label, fmt_value(row.cells[0]), fmt_value(row.cells[1]));
        }
    }
    let _ = writeln!(s, "\nAccidentals");
    let _ = writeln!(s, "  gamma-gamma (simulated singles)   {}", fmt_milli(m(report.r_acc_gamma_gamma)));
    let _ = writeln!(s, "  gamma-muon (simulated singles)    {}", fmt_milli(m(report.r_acc_gamma_muon)));
    if let Some(v) = report.r_acc_measured_singles {
        let _ = writeln!(s, "  analytic (measured singles)       {}", fmt_milli(m(v)));
    }
    if let Some(v) = report.r_acc_sideband {
        let _ = writeln!(s, "  negative sideband                 {}", fmt_milli(m(v)));
    }
    let _ = writeln!(s, "  subtracted ({:?})            {}", report.accidentals_from, fmt_milli(m(report.r_acc)));
    let _ = writeln!(s, "\nT-B expected, true only            {}", fmt_milli(m(report.r_tb_expected_true)));
    let _ = writeln!(s, "T-B expected, with accidentals     {}", fmt_milli(m(report.r_tb_expected_with_accidentals)));
    let _ = writeln!(s, "gamma-gamma true coincidences      {}", fmt_milli(m(report.r_tb_gamma_gamma)));
    let _ = writeln!(
        s,
        "extracted muon T-B rate            {}{}",
        fmt_milli(m(report.r_tb_mu_mu)),
        if report.r_tb_mu_mu_negative { "  NEGATIVE" } else { "" }
    );
    let _ = writeln!(s, "injected muon T-B rate             {}", fmt_milli(m(report.r_tb_mu_mu_true)));
    if let Some(e) = report.tagging_efficiency {
        let _ = writeln!(s, "tagging efficiency                 {:.4} ± {:.4} ({}/{})", e.value, e.error, report.tagged, report.center_muons);
    }
    for d in &report.dead_time {
        let _ = writeln!(s, "dead time, veto {:>6.1} ms          {:.2e}", d.veto_s * 1e3, d.fraction);
    }
    if let Some(f) = report.window_fit {
        let _ = writeln!(s, "window fit: centre {:.1} ± {:.1} us, sigma {:.1} ± {:.1} us, chi2/ndf {:.1}/{}", f.center_us, f.center_err_us, f.sigma_us, f.sigma_err_us, f.chi2, f.ndf);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub values: Vec<Measured>,
    /// `(first − second) / σ` when exactly two reports are compared.
    pub pull: Option<f64>,
}

fn comparison_quantities(r: &RateReport) -> Vec<(&'static str, Measured)> {
    let m = |v: ReportValue| v.as_measured();
    let mut q = vec![
        ("R_T", m(r.singles.top)),
        ("R_B", m(r.singles.bottom)),
        ("R_TB", m(r.r_tb)),
        ("R_TB_mumu", m(r.r_tb_mu_mu)),
        ("R_TB_gammagamma", m(r.r_tb_gamma_gamma)),
        ("R_acc", m(r.r_acc)),
    ];
    if let Some(e) = r.tagging_efficiency {
        q.push(("efficiency", m(e)));
    }
    q
}

/// Side-by-side comparison of reports, with pulls for a pair.
pub fn compare_reports(reports: &[RateReport]) -> Result<Vec<ComparisonRow>> {
    let Some(first) = reports.first() else {
        return Err(Error::InvalidArgument("at least one report is required".into()));
    };
    if let Some(r) = reports.iter().find(|r| r.format != first.format) {
        return Err(Error::Schema(format!("report formats differ: {} vs {}", first.format, r.format)));
    }
    let per: Vec<Vec<(&str, Measured)>> = reports.iter().map(comparison_quantities).collect();
    let names: Vec<&str> = per[0].iter().map(|(n, _)| *n).filter(|n| per.iter().all(|p| p.iter().any(|(k, _)| k == n))).collect();
    Ok(names
        .into_iter()
        .map(|name| {
            let values: Vec<Measured> = per.iter().map(|p| p.iter().find(|(k, _)| *k == name).unwrap().1).collect();
            let pull = (values.len() == 2).then(|| values[0].pull(values[1])).flatten();
            ComparisonRow {
                quantity: name.into(),
                values,
                pull,
            }
        })
        .collect())
}

pub fn render_comparison(labels: &[String], rows: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<16}", "quantity");
    for l in labels {
        let _ = write!(s, " {:>24}", l);
    }
    if rows.iter().any(|r| r.pull.is_some()) || labels.len() == 2 {
        let _ = write!(s, " {:>8}", "pull");
    }
    let _ = writeln!(s);
    for r in rows {
        let _ = write!(s, "{:<16}", r.quantity);
        for v in &r.values {
            let _ = write!(s, " {:>24}", fmt_value(*v));
        }
        if labels.len() == 2 {
            match r.pull {
                Some(p) => {
                    let _ = write!(s, " {:>8.2}", p);
                }
                None => {
                    let _ = write!(s, " {:>8}", "-");
                }
            }
        }
        let _ = writeln!(s);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunLength;

    fn short_config(seconds: f64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.set_run_length(RunLength::Livetime(seconds));
        cfg.daq.calibration_s = 0.5;
        cfg
    }

    #[test]
    fn file_stages_chain_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let cfg = short_config(120.0);
        let summary = stage_simulate(&cfg, None, out, None).unwrap();
        assert!(summary.complete);
        let daq = stage_daq(&cfg, &out.join(EVENTS_FILE), &out.join(SUMMARY_FILE), out, None).unwrap();
        assert!(daq.records > 100);
        let report = stage_analyze(&cfg, &out.join(RECORDS_FILE), &out.join(SUMMARY_FILE), &out.join(DAQ_SUMMARY_FILE), out).unwrap();
        assert!(report.has_measurement);
        assert!(report.singles.top.value > 1.0 && report.singles.top.value < 6.0, "{:?}", report.singles);
        let back = io::read_report(&out.join(REPORT_FILE)).unwrap();
        assert_eq!(back, report);
        let manifest = RunManifest::load_or_default(out).unwrap();
        for stage in ["simulate", "daq", "analyze"] {
            let e = manifest.stage(stage).unwrap();
            assert!(!e.outputs.is_empty() && e.outputs.iter().all(|d| d.sha256.len() == 64));
        }
        let text = render_report(&report);
        assert!(text.contains("Measured vs expected"));
    }

    #[test]
    fn comparison_pulls() {
        let cfg = short_config(0.0);
        let summary = run_simulation(&cfg, RunLength::Primaries(20_000), 3, 0, None).unwrap().summary;
        let a = simulation_report(&cfg, &summary).unwrap();
        let rows = compare_reports(&[a.clone(), a.clone()]).unwrap();
        assert!(rows.iter().all(|r| r.pull.is_none_or(|p| p == 0.0)));
        let single = compare_reports(std::slice::from_ref(&a)).unwrap();
        assert!(single.iter().all(|r| r.pull.is_none()));
        let mut b = a.clone();
        b.format = "muontag-report/0".into();
        assert!(matches!(compare_reports(&[a, b]), Err(Error::Schema(_))));
        assert!(compare_reports(&[]).is_err());
    }
}
