//! Command-line entry point.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on computation errors.
//! Computation errors are printed on stderr as one line of JSON,
//! `{"error": "<code>", "message": "<text>"}`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fingerprint::{evaluate_fitted, fit_recordings, identify, FitConfig, RecordingKey, ReferenceDB};
use crate::graph_export::export_edges;
use crate::io;
use crate::modal::{modal_features, FeatureSource};
use crate::model::{ModelStructure, Recording, RegionPartition};
use crate::reachability::{grid_layout, reachability_landscape_with, GridLayout, NormMode, ReachOptions, TerminalInput};
use crate::simgen::{self, CohortConfig, SimConfig};
use crate::sysid::{default_lambda, fit_with, FitOptions, Penalty};

/// Toolkit and on-disk format versions.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (format 1)");

#[derive(Parser, Debug)]
#[command(name = "causalsig", version = VERSION, about = "Two-timescale causal signatures for multivariate time series")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Identify [Q A B1 B2] from one recording.
    Fit(FitArgs),
    /// Match a fitted recording against a directory of reference params.
    Identify(IdentifyArgs),
    /// Run the fold protocol over a manifest of recordings.
    Evaluate(EvaluateArgs),
    /// Compute a reachability landscape.
    Reach(ReachArgs),
    /// Sample a system and simulate one recording.
    Simulate(SimulateArgs),
    /// Generate a synthetic cohort with a manifest.
    MakeCohort(CohortArgs),
    /// Export thresholded directed edges of Q and A.
    ExportGraph(ExportArgs),
    /// Keep every k-th sample of a recording.
    Downsample(DownsampleArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    /// Regularization weight (default: 1e-3 times the sample count).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Fit the lag-only model (Q = 0, B1 = 0).
    #[arg(long)]
    single_timescale: bool,
    #[arg(long, value_enum, default_value_t = PenaltyArg::Ridge)]
    penalty: PenaltyArg,
    /// Z-score each region before fitting.
    #[arg(long)]
    zscore: bool,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    #[arg(long)]
    query: PathBuf,
    /// Directory of labeled params JSON files.
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    task: String,
    #[arg(long, value_enum, default_value_t = SourceArg::Slow)]
    source: SourceArg,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReachArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Energy2)]
    mode: ModeArg,
    /// JSON array of [row, col] cells, one per region.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    out_values: Option<PathBuf>,
    #[arg(long)]
    out_grid: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TerminalArg::Zero)]
    terminal_input: TerminalArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long, default_value = "sim")]
    subject: String,
    #[arg(long, default_value = "sim")]
    task: String,
    #[arg(long, default_value = "scan1")]
    scan: String,
}

#[derive(Args, Debug)]
struct CohortArgs {
    #[arg(long)]
    subjects: usize,
    #[arg(long)]
    scans: usize,
    /// Simulation config JSON shared by all subjects.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, required = true)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "rest")]
    task: String,
    /// Subjects are one template plus a perturbation of this relative size.
    #[arg(long)]
    subject_variation: Option<f64>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    threshold: f64,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DownsampleArgs {
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    factor: usize,
    #[arg(long)]
    out_recording: PathBuf,
    #[arg(long)]
    out_meta: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PenaltyArg {
    Ridge,
    Group,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceArg {
    Slow,
    Fast,
    Both,
    Single,
}

impl From<SourceArg> for FeatureSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Slow => FeatureSource::SlowOnly,
            SourceArg::Fast => FeatureSource::FastOnly,
            SourceArg::Both => FeatureSource::Both,
            SourceArg::Single => FeatureSource::SingleTimescale,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Energy2,
    Boxinf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TerminalArg {
    Zero,
    Bounded,
}

/// Batch evaluation input. Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub recordings: Vec<ManifestEntry>,
    /// Input rows; defaults to the sidecar `input_indices`, which must then
    /// agree across recordings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub source: FeatureSource,
    /// Scan conditions used as references, one fold each; default all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_conditions: Option<Vec<String>>,
    /// Where to write one params file per recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Keep every k-th sample before fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<usize>,
    #[serde(default)]
    pub zscore: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub csv: PathBuf,
    pub meta: PathBuf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": e.code(), "message": e.to_string()}));
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.jobs {
        Some(0) => Err(Error::InvalidArgument("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Reach(a) => cmd_reach(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::MakeCohort(a) => cmd_make_cohort(a),
        Command::ExportGraph(a) => cmd_export_graph(a),
        Command::Downsample(a) => cmd_downsample(a),
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let (rec, meta) = io::read_recording(&a.recording, &a.meta)?;
    let rec = if a.zscore { rec.zscored() } else { rec };
    let part = RegionPartition::from_inputs(rec.regions(), meta.input_indices)?;
    let (x, u) = part.split(&rec)?;
    let mut opts = FitOptions::ridge(a.lambda.unwrap_or_else(|| default_lambda(rec.samples()))).with_dt(rec.dt());
    if a.single_timescale {
        opts = opts.with_structure(ModelStructure::SingleTimescale);
    }
    if let PenaltyArg::Group = a.penalty {
        opts = opts.with_penalty(Penalty::group_frobenius());
    }
    let report = fit_with(&x, &u, &opts)?;
    if !report.condition_warnings.is_empty() {
        log::warn!(
            "{} rows have rank-deficient regressors: {:?}",
            report.condition_warnings.len(),
            report.condition_warnings
        );
    }
    io::write_params(&a.out, &report.params, Some(&RecordingKey::of(&rec)))
}

fn cmd_identify(a: IdentifyArgs) -> Result<()> {
    let source = FeatureSource::from(a.source);
    let (query, _) = io::read_params(&a.query)?;
    let query = modal_features(&query, source)?;
    let mut db = ReferenceDB::new();
    for (path, params, key) in io::read_params_dir(&a.db)? {
        let key = key.ok_or_else(|| Error::format(&path, "params file lacks subject/task/scan labels"))?;
        let features = modal_features(&params, source)?;
        db.insert(key, params, features)?;
    }
    let id = identify(&query, &db, &a.task)?;
    println!("{}", json!({"subject_id": id.subject_id, "distance": id.distance}));
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest: Manifest = io::read_json(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    if manifest.recordings.is_empty() {
        return Err(Error::format(&a.manifest, "manifest lists no recordings"));
    }
    let mut recordings = Vec::with_capacity(manifest.recordings.len());
    let mut inputs = manifest.input_indices.clone();
    for entry in &manifest.recordings {
        let meta_path = resolve(&base, &entry.meta);
        let (rec, meta) = io::read_recording(resolve(&base, &entry.csv), &meta_path)?;
        match &inputs {
            None => inputs = Some(meta.input_indices),
            Some(i) if manifest.input_indices.is_none() && *i != meta.input_indices => {
                return Err(Error::format(&meta_path, "input_indices differ from the first recording"));
            }
            Some(_) => {}
        }
        let rec = match manifest.downsample {
            Some(k) => rec.downsample(k)?,
            None => rec,
        };
        recordings.push(rec);
    }
    let p = recordings[0].regions();
    let part = RegionPartition::from_inputs(p, inputs.unwrap_or_default())?;
    let cfg = FitConfig {
        lambda: manifest.lambda,
        zscore: manifest.zscore,
        with_single: manifest.source == FeatureSource::SingleTimescale,
    };
    let fitted = fit_recordings(&recordings, &part, &cfg)?;
    if let Some(dir) = &manifest.output_dir {
        let dir = resolve(&base, dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for f in &fitted {
            let name = format!("{}_{}_{}.json", f.key.subject_id, f.key.task_id, f.key.scan_id);
            io::write_params(dir.join(name), &f.params, Some(&f.key))?;
        }
    }
    let table = evaluate_fitted(&fitted, manifest.source, manifest.reference_conditions.as_deref())?;
    io::atomic_write(&a.out, table.to_csv().as_bytes())
}

fn cmd_reach(a: ReachArgs) -> Result<()> {
    let (params, _) = io::read_params(&a.params)?;
    let opts = ReachOptions {
        horizon: a.horizon,
        mode: match a.mode {
            ModeArg::Energy2 => NormMode::Energy2,
            ModeArg::Boxinf => NormMode::BoxInf,
        },
        terminal_input: match a.terminal_input {
            TerminalArg::Zero => TerminalInput::Zero,
            TerminalArg::Bounded => TerminalInput::Bounded,
        },
    };
    let landscape = reachability_landscape_with(&params, &opts)?;
    if let Some(out) = &a.out_values {
        io::atomic_write(out, io::values_to_csv(&landscape.values).as_bytes())?;
    }
    if let Some(out) = &a.out_grid {
        let grid = match &a.layout {
            Some(path) => grid_layout(&landscape.values, &io::read_layout(path)?)?,
            None => grid_layout(&landscape.values, &GridLayout::row_major(landscape.values.len())?)?,
        };
        io::atomic_write(out, io::grid_to_csv(&grid).as_bytes())?;
    }
    if a.out_values.is_none() && a.out_grid.is_none() {
        print!("{}", io::values_to_csv(&landscape.values));
    }
    Ok(())
}

fn read_sim_config(path: &Path, seed: u64) -> Result<SimConfig> {
    let mut cfg: SimConfig = io::read_json(path)?;
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn write_labeled(dir: &Path, stem: &str, rec: &Recording, inputs: &[usize]) -> Result<ManifestEntry> {
    let entry = ManifestEntry {
        csv: PathBuf::from(format!("{stem}.csv")),
        meta: PathBuf::from(format!("{stem}.json")),
    };
    io::write_recording(rec, inputs, dir.join(&entry.csv), dir.join(&entry.meta))?;
    Ok(entry)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = read_sim_config(&a.config, a.seed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let truth = simgen::sample_system(&cfg)?;
    let rec = simgen::simulate(&truth, &cfg)?.with_labels(a.subject, a.task, a.scan);
    let part = cfg.partition()?;
    write_labeled(&a.out_dir, "recording", &rec, part.input_indices())?;
    io::write_params(a.out_dir.join("truth.json"), &truth, Some(&RecordingKey::of(&rec)))
}

fn cmd_make_cohort(a: CohortArgs) -> Result<()> {
    let sim = read_sim_config(&a.config, a.seed)?;
    let part = sim.partition()?;
    let cfg = CohortConfig {
        subjects: a.subjects,
        scans: a.scans,
        sim,
        task_id: a.task,
        subject_variation: a.subject_variation,
    };
    let cohort = simgen::make_cohort(&cfg)?;
    let truth_dir = a.out_dir.join("truth");
    fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;
    let mut entries = Vec::new();
    for subject in &cohort {
        io::write_params(truth_dir.join(format!("{}.json", subject.subject_id)), &subject.truth, None)?;
        for rec in &subject.recordings {
            let stem = format!("{}_{}_{}", rec.subject_id(), rec.task_id(), rec.scan_id());
            entries.push(write_labeled(&a.out_dir, &stem, rec, part.input_indices())?);
        }
    }
    let manifest = Manifest {
        recordings: entries,
        input_indices: None,
        lambda: None,
        source: FeatureSource::SlowOnly,
        reference_conditions: None,
        output_dir: None,
        downsample: None,
        zscore: false,
    };
    io::write_json(a.out_dir.join("manifest.json"), &manifest)
}

fn cmd_export_graph(a: ExportArgs) -> Result<()> {
    if a.threshold.is_nan() || a.threshold < 0.0 {
        return Err(Error::InvalidArgument("threshold must be >= 0".into()));
    }
    let (params, _) = io::read_params(&a.params)?;
    let edges = export_edges(&params, a.threshold, a.top_k);
    io::atomic_write(&a.out, edges.to_csv().as_bytes())
}

fn cmd_downsample(a: DownsampleArgs) -> Result<()> {
    let (rec, meta) = io::read_recording(&a.recording, &a.meta)?;
    let rec = rec.downsample(a.factor)?;
    io::write_recording(&rec, &meta.input_indices, &a.out_recording, &a.out_meta)
}
