use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use skelact::pipeline::{
    emit_report, evaluate_pipeline, load_artifacts, load_dataset, parse_report, preset_meta, restore_experiment,
    run_pipeline, save_artifacts, MasterConfig, ReportFormat, RestoreOptions, Variant,
};
use skelact::registration::RegistrationMethod;
use skelact::skeleton_io::{generate_synthetic, parse_dataset, write_canonical, DatasetFormat, DatasetMeta, SyntheticSpec};
use skelact::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "skelact", version, about = "Skeleton-based action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert raw benchmark files to canonical JSONL.
    Convert(ConvertArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train and evaluate the full pipeline on the configured protocol.
    Train(RunArgs),
    /// Evaluate previously trained models.
    Eval(EvalArgs),
    /// Corrupt and restore held-out sequences with the autoencoder.
    Restore(RestoreArgs),
    /// Re-render a saved report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    registration: Option<RegistrationMethod>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// msr, utkinect, florence or canonical.
    #[arg(long)]
    format: DatasetFormat,
    /// msr_action3d, utkinect or florence3d.
    #[arg(long, conflicts_with = "meta")]
    preset: Option<String>,
    /// JSON dataset metadata, for layouts without a preset.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Raw files or directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator settings are read from `dataset.synthetic`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory of an earlier `train` run.
    #[arg(long)]
    models: PathBuf,
}

#[derive(Debug, Args)]
struct RestoreArgs {
    #[command(flatten)]
    common: Common,
    /// Probability of dropping a joint.
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    /// Standard deviation of the added noise.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A `report.json` written by `train` or `eval`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Writes into this directory instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    version: String,
    seed: Option<u64>,
    /// Paths relative to the output directory.
    files: Vec<String>,
    /// Wall-clock seconds per stage.
    timings: Vec<(String, f64)>,
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::BadPath { path: dir.to_path_buf(), msg: e.to_string() })?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), timings: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::BadPath { path, msg: e.to_string() })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn record(&mut self, paths: Vec<PathBuf>) {
        for p in paths {
            let rel = p.strip_prefix(&self.dir).unwrap_or(&p);
            self.files.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings.push((stage.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn finish(mut self, command: &str, seed: Option<u64>) -> Result<()> {
        self.files.push("manifest.json".into());
        let manifest = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            files: self.files.clone(),
            timings: self.timings.clone(),
        };
        let mut body = serde_json::to_vec_pretty(&manifest)?;
        body.push(b'\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, body).map_err(|e| Error::BadPath { path, msg: e.to_string() })?;
        Ok(())
    }
}

fn load_config(common: &Common) -> Result<MasterConfig> {
    let mut cfg = match &common.config {
        Some(p) => MasterConfig::load(p)?,
        None => MasterConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.registration {
        cfg.registration.method = m;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    Ok(body)
}

fn write_dataset(out: &mut Output, data: &[skelact::skeleton_io::ActionSequence], meta: &DatasetMeta) -> Result<()> {
    out.write("dataset.jsonl", &write_canonical(data, meta)?)?;
    out.write("meta.json", &json_bytes(meta)?)
}

fn convert(args: ConvertArgs) -> Result<()> {
    let mut meta = match (&args.preset, &args.meta) {
        (Some(p), _) => preset_meta(p)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::BadPath { path: path.clone(), msg: e.to_string() })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(Error::Config("convert needs --preset or --meta".into())),
    };
    meta.validate()?;
    let mut out = Output::create(&args.out)?;
    let mut paths = Vec::new();
    for p in &args.inputs {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::BadPath { path: p.clone(), msg: e.to_string() })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file())
                .collect();
            entries.sort();
            if args.format == DatasetFormat::Msr {
                entries.retain(|e| e.to_string_lossy().ends_with("_skeleton3D.txt"));
            }
            paths.extend(entries);
        } else {
            paths.push(p.clone());
        }
    }
    let data = out.time("parse", || parse_dataset(args.format, &paths, &meta))?;
    meta.sequence_count = data.len();
    write_dataset(&mut out, &data, &meta)?;
    eprintln!("converted {} sequences", data.len());
    out.finish("convert", None)
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => MasterConfig::load(p)?,
        None => MasterConfig::default(),
    };
    let mut spec = cfg.dataset.synthetic.unwrap_or_else(SyntheticSpec::default);
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let mut out = Output::create(&args.out)?;
    let (data, meta) = out.time("generate", || generate_synthetic(&spec))?;
    write_dataset(&mut out, &data, &meta)?;
    out.write("synthetic.json", &json_bytes(&spec)?)?;
    eprintln!("generated {} sequences", data.len());
    out.finish("synth", Some(spec.seed))
}

fn write_reports(out: &mut Output, report: &skelact::pipeline::RunReport) -> Result<()> {
    out.write("report.json", &emit_report(report, ReportFormat::Json)?)?;
    out.write("report.csv", &emit_report(report, ReportFormat::Csv)?)
}

fn train(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let mut out = Output::create(&args.common.out)?;
    let (data, meta) = out.time("load", || load_dataset(&cfg.dataset))?;
    let (report, artifacts) = out.time("train_and_test", || run_pipeline(&data, &meta, &cfg))?;
    out.write("config.json", cfg.to_json()?.as_bytes())?;
    let models = out.dir.join("models");
    let written = out.time("save", || save_artifacts(&models, &artifacts))?;
    out.record(written);
    write_reports(&mut out, &report)?;
    eprintln!("accuracy {:.4}", report.accuracy);
    out.finish("train", Some(cfg.seed))
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let mut out = Output::create(&args.common.out)?;
    let (data, meta) = out.time("load", || load_dataset(&cfg.dataset))?;
    let models = args.models.join("models");
    let artifacts = out.time("load_models", || load_artifacts(&models, &data, &meta, &cfg))?;
    let report = out.time("test", || evaluate_pipeline(&data, &meta, &cfg, &artifacts))?;
    write_reports(&mut out, &report)?;
    eprintln!("accuracy {:.4}", report.accuracy);
    out.finish("eval", Some(cfg.seed))
}

fn restore(args: RestoreArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let opts = RestoreOptions { q: args.q, sigma: args.sigma };
    let mut out = Output::create(&args.common.out)?;
    let (data, meta) = out.time("load", || load_dataset(&cfg.dataset))?;
    let outcome = out.time("restore", || restore_experiment(&data, &meta, &cfg, &opts))?;
    out.write("restore.json", &json_bytes(&outcome.report)?)?;
    out.write("clean.jsonl", &write_canonical(&outcome.clean, &meta)?)?;
    out.write("corrupted.jsonl", &write_canonical(&outcome.corrupted, &meta)?)?;
    out.write("restored.jsonl", &write_canonical(&outcome.restored, &meta)?)?;
    out.write("meta.json", &json_bytes(&meta)?)?;
    eprintln!(
        "corrupted mse {:.6}, restored mse {:.6}",
        outcome.report.corrupted_mse, outcome.report.restored_mse
    );
    out.finish("restore", Some(cfg.seed))
}

fn report(args: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::BadPath { path: args.input.clone(), msg: e.to_string() })?;
    let report = parse_report(&text).map_err(|e| Error::BadPath { path: args.input.clone(), msg: e.to_string() })?;
    let body = emit_report(&report, args.format)?;
    match args.out {
        Some(dir) => {
            let mut out = Output::create(&dir)?;
            let name = match args.format {
                ReportFormat::Json => "report.json",
                ReportFormat::Csv => "report.csv",
            };
            out.write(name, &body)?;
            out.finish("report", Some(report.config.seed))
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&body)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Convert(a) => convert(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Restore(a) => restore(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
