use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use muontag_core::coincidence::{AccidentalsFrom, WindowMode};
use muontag_core::config::RunLength;
use muontag_core::emulate::{sideband_study, EmulatorParams};
use muontag_core::io;
use muontag_core::pipeline::{self, CONFIG_FILE, DAQ_SUMMARY_FILE, EVENTS_FILE, RECORDS_FILE, SUMMARY_FILE};
use muontag_core::RunConfig;

/// Exit status when a run was interrupted and partial outputs were written.
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Parser)]
#[command(name = "muontag", version, about = "Digital twin of a cryogenic muon tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo and write events, summary and a simulation-only report.
    Simulate(SimulateArgs),
    /// Synthesize waveforms for an event file and write triggered records.
    Daq(DaqArgs),
    /// Reconstruct pulses, build delay histograms and assemble the rate report.
    Analyze(AnalyzeArgs),
    /// Compare one or more reports side by side.
    Report(ReportArgs),
    /// simulate, daq and analyze in one output directory.
    Run(SimulateArgs),
    /// Sideband study on pulse-level emulated runs.
    Sideband(SidebandArgs),
    /// Print the default configuration.
    Config,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults to `<out-dir>/config.toml` when present, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, conflicts_with = "livetime_s")]
    n_primaries: Option<u64>,
    #[arg(long)]
    livetime_s: Option<f64>,
}

#[derive(Args)]
struct DaqArgs {
    #[command(flatten)]
    common: Common,
    /// Event file; defaults to `<out-dir>/events.csv`.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Fixed,
    Fit,
}

#[derive(Clone, Copy, ValueEnum)]
enum AccidentalsArg {
    Simulated,
    Measured,
    Sideband,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Record file; defaults to `<out-dir>/records.bin`.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    daq_summary: Option<PathBuf>,
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
    #[arg(long, value_enum)]
    accidentals_from: Option<AccidentalsArg>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Also write the comparison as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SidebandArgs {
    #[arg(long, default_value_t = 50)]
    runs: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    livetime_s: Option<f64>,
}

fn out_dir(common: &Common) -> PathBuf {
    common.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(common: &Common, fallback_dir: Option<&Path>) -> Result<RunConfig> {
    let path = common
        .config
        .clone()
        .or_else(|| fallback_dir.map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists()));
    let mut cfg = match &path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.run.workers = w;
    }
    if let Some(d) = &common.out_dir {
        cfg.run.output_dir = d.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(args: &SimulateArgs, cancel: &AtomicBool) -> Result<bool> {
    let mut cfg = load_config(&args.common, None)?;
    match (args.n_primaries, args.livetime_s) {
        (Some(n), _) => cfg.set_run_length(RunLength::Primaries(n)),
        (None, Some(t)) => cfg.set_run_length(RunLength::Livetime(t)),
        (None, None) => {}
    }
    cfg.validate()?;
    let dir = args.common.out_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    let summary = pipeline::stage_simulate(&cfg, args.common.config.as_deref(), &dir, Some(cancel))?;
    println!("livetime {:.1} s", summary.livetime_s);
    for s in &summary.species {
        println!(
            "{:?}: {} primaries, rates T {:.4} C {:.4} B {:.4} T-B {:.4} /s",
            s.species, s.n_generated, s.single_rates[0].value, s.single_rates[1].value, s.single_rates[2].value, s.tb_rate.value
        );
    }
    println!("wrote {}", dir.display());
    Ok(summary.complete)
}

fn daq(args: &DaqArgs, cancel: &AtomicBool) -> Result<bool> {
    let dir = out_dir(&args.common);
    let cfg = load_config(&args.common, Some(&dir))?;
    let events = args.events.clone().unwrap_or_else(|| dir.join(EVENTS_FILE));
    let summary = args.summary.clone().unwrap_or_else(|| sibling(&events, SUMMARY_FILE));
    let s = pipeline::stage_daq(&cfg, &events, &summary, &dir, Some(cancel))?;
    println!(
        "{} records from {} triggers ({} absorbed, {} dropped) over {:.1} s",
        s.records, s.triggers, s.absorbed_triggers, s.dropped_records, s.duration_s
    );
    Ok(s.complete)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map(|p| p.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn analyze(args: &AnalyzeArgs) -> Result<bool> {
    let dir = out_dir(&args.common);
    let mut cfg = load_config(&args.common, Some(&dir))?;
    if let Some(w) = args.window {
        cfg.analysis.window_mode = match w {
            WindowArg::Fixed => WindowMode::Fixed,
            WindowArg::Fit => WindowMode::Fit,
        };
    }
    if let Some(a) = args.accidentals_from {
        cfg.analysis.accidentals_from = match a {
            AccidentalsArg::Simulated => AccidentalsFrom::Simulated,
            AccidentalsArg::Measured => AccidentalsFrom::Measured,
            AccidentalsArg::Sideband => AccidentalsFrom::Sideband,
        };
    }
    cfg.validate()?;
    let records = args.records.clone().unwrap_or_else(|| dir.join(RECORDS_FILE));
    let summary = args.summary.clone().unwrap_or_else(|| sibling(&records, SUMMARY_FILE));
    let daq_summary = args.daq_summary.clone().unwrap_or_else(|| sibling(&records, DAQ_SUMMARY_FILE));
    let report = pipeline::stage_analyze(&cfg, &records, &summary, &daq_summary, &dir)?;
    print!("{}", pipeline::render_report(&report));
    Ok(report.complete)
}

fn report(args: &ReportArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| io::read_report(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if let [single] = reports.as_slice() {
        print!("{}", pipeline::render_report(single));
        println!();
    }
    let rows = pipeline::compare_reports(&reports)?;
    let labels: Vec<String> = args.reports.iter().map(|p| p.display().to_string()).collect();
    print!("{}", pipeline::render_comparison(&labels, &rows));
    if let Some(path) = &args.json {
        io::write_json(path, &rows)?;
    }
    Ok(())
}

fn run_all(args: &SimulateArgs, cancel: &AtomicBool) -> Result<bool> {
    if !simulate(args, cancel)? {
        return Ok(false);
    }
    // later stages pick up the resolved config written by simulate
    let common = Common {
        config: None,
        ..args.common.clone()
    };
    let dir = args.common.out_dir.clone().unwrap_or_else(|| out_dir(&common));
    let common = Common {
        out_dir: Some(dir),
        ..common
    };
    let daq_args = DaqArgs {
        common: common.clone(),
        events: None,
        summary: None,
    };
    if !daq(&daq_args, cancel)? {
        return Ok(false);
    }
    analyze(&AnalyzeArgs {
        common,
        records: None,
        summary: None,
        daq_summary: None,
        window: None,
        accidentals_from: None,
    })
}

fn sideband(args: &SidebandArgs) -> Result<()> {
    let mut params = EmulatorParams::default();
    if let Some(t) = args.livetime_s {
        params.livetime_s = t;
    }
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let study = sideband_study(&params, args.seed..args.seed + args.runs, 2.0)?;
    println!("{:>6} {:>22} {:>22} {:>22} {:>22}", "seed", "negative sideband", "positive sideband", "analytic", "truth");
    for r in &study.runs {
        let f = |m: muontag_core::stats::Measured| format!("({:.2} ± {:.2})e-3", m.value * 1e3, m.error * 1e3);
        println!(
            "{:>6} {:>22} {:>22} {:>22} {:>22}{}",
            r.seed,
            f(r.sideband_negative),
            f(r.sideband_positive),
            f(r.analytic),
            f(r.truth),
            if r.compatible(2.0) { "" } else { "  *" }
        );
    }
    println!(
        "{}/{} runs compatible within 2 sigma; positive-sideband excess {:+.1}%",
        study.passed,
        study.runs.len(),
        100.0 * study.positive_excess
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = Arc::clone(&cancel);
        let _ = ctrlc::set_handler(move || {
            eprintln!("interrupt received, finishing current chunk");
            cancel.store(true, Ordering::Relaxed);
        });
    }
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a, &cancel),
        Command::Daq(a) => daq(a, &cancel),
        Command::Analyze(a) => analyze(a),
        Command::Run(a) => run_all(a, &cancel),
        Command::Report(a) => report(a).map(|_| true),
        Command::Sideband(a) => sideband(a).map(|_| true),
        Command::Config => RunConfig::default()
            .to_toml_string()
            .map(|s| {
                print!("{s}");
                true
            })
            .map_err(Into::into),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("run incomplete; partial outputs are marked as such");
            ExitCode::from(EXIT_INTERRUPTED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
