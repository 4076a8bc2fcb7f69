#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use haloscope::acquisition::{AcquisitionMode, RawSpectrum, SearchTruth};
use haloscope::config::{Mode, ResolvedConfig, RunConfig};
use haloscope::experiment::{self, Experiment};
use haloscope::export;
use haloscope::pipeline::{aggregate_trials, Enhancement, ExcessHistogram, SearchOutcome};
use haloscope::Execution;

#[derive(Parser)]
#[command(name = "haloscope", version, about = "Quantum-network haloscope simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel sections.
    #[arg(long)]
    threads: Option<usize>,
    /// Run every data-parallel section on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Scattering gains versus detuning.
    Sparams {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Visibility curves for QL, GC and GCI with the scan-rate report.
    Visibility {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan-rate integrals and enhancement ratios as JSON.
    ScanRate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo faxion search into a run directory.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        trials: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_acq_mode)]
        acq_mode: Option<AcquisitionMode>,
        #[arg(long)]
        out: PathBuf,
        /// Write every raw spectrum to raw/.
        #[arg(long)]
        keep_raw: bool,
        /// Regenerate the cached envelope.
        #[arg(long)]
        force_envelope: bool,
    },
    /// Aggregate run directories into histograms and enhancement figures.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Histogram bin width in σ units.
        #[arg(long, default_value_t = 0.5)]
        bin_width: f64,
    },
    /// Build or refresh the cached spectral envelope.
    EnvelopeCache {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        force: bool,
    },
}

fn parse_acq_mode(s: &str) -> std::result::Result<AcquisitionMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "fast" => Ok(AcquisitionMode::Fast),
        "timedomain" | "time-domain" => Ok(AcquisitionMode::TimeDomain),
        _ => Err(format!("unknown acquisition mode {s:?} (fast, timedomain)")),
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(cfg)
    }

    fn execution(&self) -> Result<Execution> {
        #[cfg(feature = "parallel")]
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring worker threads")?;
        }
        #[cfg(not(feature = "parallel"))]
        if self.threads.is_some() {
            eprintln!("warning: built without the parallel feature; --threads ignored");
        }
        Ok(if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn sparams(common: &Common, mode: Option<Mode>, out: &Path) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let mode = mode.unwrap_or(cfg.mode);
    let rows = export::sparam_rows(&cfg.system_for(mode), &cfg.detuning_grid().points_hz())?;
    let mut w = create(out)?;
    export::write_sparams(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

fn visibility(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let exec = common.execution()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ql = experiment::visibility_sweep(&cfg, Mode::QL, exec)?;
    let reference = ql.curve()?.peak();
    for mode in Mode::ALL {
        let sweep = if mode == Mode::QL {
            ql.clone()
        } else {
            experiment::visibility_sweep(&cfg, mode, exec)?
        };
        let mut w = create(&out.join(format!("visibility_{}.csv", mode.label())))?;
        export::write_visibility(&mut w, &sweep, reference)?;
        w.flush()?;
    }
    write_json(&out.join("scan_rate.json"), &experiment::scan_rate_summary(&cfg, exec)?)
}

fn scan_rate(common: &Common, out: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let summary = experiment::scan_rate_summary(&cfg, common.execution()?)?;
    match out {
        Some(p) => write_json(p, &summary),
        None => {
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RunReport {
    mode: Mode,
    trials: u32,
    master_seed: u64,
    acquisition_mode: AcquisitionMode,
    spectra_per_trial: usize,
    hit_fraction: f64,
    /// Gaussian fit of the per-trial best excess; absent for a single trial.
    histogram: Option<HistogramSummary>,
}

#[derive(Serialize, Deserialize)]
struct HistogramSummary {
    mean: f64,
    std: f64,
    mean_error: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct RawIndex {
    resolution_hz: f64,
    bins_per_spectrum: usize,
    spectra: Vec<RawIndexEntry>,
}

#[derive(Serialize)]
struct RawIndexEntry {
    trial: u32,
    file: String,
    spectra: usize,
}

fn write_raw(path: &Path, spectra: &[RawSpectrum]) -> Result<()> {
    let mut w = create(path)?;
    for s in spectra {
        for v in &s.psd {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn search(
    common: &Common,
    mode: Option<Mode>,
    trials: Option<u32>,
    seed: Option<u64>,
    acq_mode: Option<AcquisitionMode>,
    out: &Path,
    keep_raw: bool,
    force_envelope: bool,
) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(a) = acq_mode {
        cfg.acquisition_mode = a;
    }
    cfg.validate()?;
    let exec = common.execution()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("manifest.json"), &ResolvedConfig::from(&cfg))?;

    let envelope = experiment::load_envelope(&cfg, force_envelope)?;
    let exp = Experiment::build(&cfg, cfg.mode, envelope, exec)?;
    let mut truths: Vec<SearchTruth> = Vec::new();
    let mut outcomes: Vec<SearchOutcome> = Vec::new();
    let mut raw_index = Vec::new();
    let mut spectra_per_trial = 0;
    for trial in 0..cfg.trials {
        let run = haloscope::acquisition::run_search(&exp.setup, cfg.master_seed, trial, cfg.acquisition_mode, exec)?;
        spectra_per_trial = run.analysis.spectra.len();
        if keep_raw {
            let file = format!("trial-{trial:04}.f32");
            write_raw(&out.join("raw").join(&file), &run.analysis.spectra)?;
            raw_index.push(RawIndexEntry {
                trial,
                file,
                spectra: spectra_per_trial,
            });
        }
        let record = exp.analyze(run.analysis, run.truth, exec)?;
        if trial == 0 {
            let mut w = create(&out.join("combined.csv"))?;
            export::write_combined(&mut w, &record.analysis.combined)?;
            w.flush()?;
            let mut w = create(&out.join("grand.csv"))?;
            export::write_grand(&mut w, &record.analysis.grand)?;
            w.flush()?;
        }
        eprintln!(
            "trial {trial}: offset {} Hz, excess {:.3}, hit {}",
            record.outcome.best_bin_offset, record.outcome.best_excess, record.outcome.truth_hit
        );
        truths.push(record.truth);
        outcomes.push(record.outcome);
    }
    if keep_raw {
        write_json(
            &out.join("raw").join("index.json"),
            &RawIndex {
                resolution_hz: cfg.acquisition.resolution_hz,
                bins_per_spectrum: exp.setup.model.grid.len(),
                spectra: raw_index,
            },
        )?;
    }
    write_json(&out.join("truth.json"), &truths)?;
    let mut w = create(&out.join("outcomes.csv"))?;
    export::write_outcomes(&mut w, &outcomes)?;
    w.flush()?;

    let excess: Vec<f64> = outcomes.iter().map(|o| o.best_excess).collect();
    let histogram = if excess.len() >= 2 {
        let h = ExcessHistogram::fit(excess)?;
        Some(HistogramSummary {
            mean: h.mean,
            std: h.std,
            mean_error: h.mean_error,
            std_error: h.std_error,
        })
    } else {
        None
    };
    let hits = outcomes.iter().filter(|o| o.truth_hit).count();
    write_json(
        &out.join("report.json"),
        &RunReport {
            mode: cfg.mode,
            trials: cfg.trials,
            master_seed: cfg.master_seed,
            acquisition_mode: cfg.acquisition_mode,
            spectra_per_trial,
            hit_fraction: hits as f64 / outcomes.len() as f64,
            histogram,
        },
    )
}

#[derive(Deserialize)]
struct OutcomeRow {
    #[allow(dead_code)]
    trial: u32,
    #[allow(dead_code)]
    offset: f64,
    excess: f64,
    #[allow(dead_code)]
    truth_hit: bool,
}

#[derive(Serialize)]
struct RunSummary {
    dir: String,
    mode: Mode,
    trials: usize,
    hit_fraction: f64,
    mean: f64,
    std: f64,
    mean_error: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct AggregateReport {
    runs: Vec<RunSummary>,
    /// `(μ_GC/μ_QL)²` when both modes are present.
    #[serde(skip_serializing_if = "Option::is_none")]
    gc_over_ql_excess_sq: Option<Enhancement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gci_over_ql_excess_sq: Option<Enhancement>,
}

fn report(runs: &[PathBuf], out: &Path, bin_width: f64) -> Result<()> {
    if !(bin_width > 0.0) {
        bail!(haloscope::Error::Config("bin width must be > 0".into()));
    }
    let mut fits = Vec::new();
    for dir in runs {
        if !dir.is_dir() {
            bail!(haloscope::Error::Config(format!("run directory {} does not exist", dir.display())));
        }
        let run: RunReport = read_json(&dir.join("report.json"))?;
        let path = dir.join("outcomes.csv");
        let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut excess = Vec::new();
        for row in reader.deserialize() {
            let row: OutcomeRow = row.with_context(|| format!("parsing {}", path.display()))?;
            excess.push(row.excess);
        }
        let fit = ExcessHistogram::fit(excess)?;
        fits.push((dir.display().to_string(), run, fit));
    }

    let find = |m: Mode| fits.iter().find(|(_, r, _)| r.mode == m).map(|(_, _, f)| f);
    let ratio = |m: Mode| -> Result<Option<Enhancement>> {
        match (find(m), find(Mode::QL)) {
            (Some(n), Some(d)) => Ok(Some(aggregate_trials(n, d)?)),
            _ => Ok(None),
        }
    };
    let aggregate = AggregateReport {
        gc_over_ql_excess_sq: ratio(Mode::GC)?,
        gci_over_ql_excess_sq: ratio(Mode::GCI)?,
        runs: fits
            .iter()
            .map(|(dir, r, f)| RunSummary {
                dir: dir.clone(),
                mode: r.mode,
                trials: f.values.len(),
                hit_fraction: r.hit_fraction,
                mean: f.mean,
                std: f.std,
                mean_error: f.mean_error,
                std_error: f.std_error,
            })
            .collect(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("report.json"), &aggregate)?;

    let lo = fits
        .iter()
        .flat_map(|(_, _, f)| f.values.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let hi = fits
        .iter()
        .flat_map(|(_, _, f)| f.values.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let start = (lo / bin_width).floor() * bin_width;
    let bins = ((hi - start) / bin_width).floor() as usize + 1;
    let counts: Vec<Vec<usize>> = fits.iter().map(|(_, _, f)| f.counts(start, bin_width, bins)).collect();
    let mut w = csv::Writer::from_writer(create(&out.join("histogram.csv"))?);
    let mut header = vec!["bin_start".to_string()];
    header.extend(fits.iter().map(|(_, r, _)| r.mode.label().to_string()));
    w.write_record(&header)?;
    for b in 0..bins {
        let mut row = vec![(start + b as f64 * bin_width).to_string()];
        row.extend(counts.iter().map(|c| c[b].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn envelope_cache(common: &Common, force: bool) -> Result<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let env = experiment::load_envelope(&cfg, force)?;
    let cache = haloscope::faxion::EnvelopeCache::new(&cfg.envelope.cache_dir);
    let hash = haloscope::faxion::envelope_hash(
        &cfg.faxion_config(),
        cfg.acquisition.resolution_hz,
        cfg.envelope.duration_s,
        cfg.envelope.seed,
    );
    let (csv_path, _) = cache.paths(&hash);
    println!("{} ({} bins)", csv_path.display(), env.len());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<haloscope::Error>() {
        Some(e) if e.is_config() => 2,
        Some(haloscope::Error::Io { .. }) | Some(haloscope::Error::Serde(_)) => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sparams { common, mode, out } => sparams(common, *mode, out),
        Command::Visibility { common, out } => visibility(common, out),
        Command::ScanRate { common, out } => scan_rate(common, out.as_deref()),
        Command::Search {
            common,
            mode,
            trials,
            seed,
            acq_mode,
            out,
            keep_raw,
            force_envelope,
        } => search(common, *mode, *trials, *seed, *acq_mode, out, *keep_raw, *force_envelope),
        Command::Report { runs, out, bin_width } => report(runs, out, *bin_width),
        Command::EnvelopeCache { common, force } => envelope_cache(common, *force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
