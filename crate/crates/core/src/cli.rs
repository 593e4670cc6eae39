//! Command-line lifecycle: synth, train, evaluate, compare, explain, predict.
//!
//! Every command echoes its resolved configuration on stdout, writes its
//! outputs under `--out`, and records them in `manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::digest::bytes_digest;
use crate::domain::{Dataset, Feature};
use crate::error::{Error, Result};
use crate::eval::{compare_baselines, cross_validate, emit_curves, evaluate_model, pipeline_factory};
use crate::fusion::{fit_pipeline, write_predictions_csv, Pipeline, PipelineSeeds};
use crate::ingest::{parse_csv_path, train_test_split, write_csv};
use crate::interpret::{
    ablate, contrast_report, render_tables, select_samples, sensitivity_chain, sensitivity_fd, write_ablation_csv,
    write_sensitivity_csv, SampleSelection,
};
use crate::synth::{generate, SynthSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREADS_ENV: &str = "WINDFUSE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "windfuse", version, about = "Dual-stream wind risk classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Fit the full pipeline on a train split and save the bundle.
    Train(TrainArgs),
    /// Score a bundle and cross-validate its configuration.
    Evaluate(EvaluateArgs),
    /// Five-row baseline comparison on one split.
    Compare(TrainArgs),
    /// Sensitivity, ablation and their contrast.
    Explain(ExplainArgs),
    /// Write predictions for every row.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long)]
    complementary: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    delta_num: Option<f64>,
    #[arg(long)]
    delta_text: Option<f64>,
    #[arg(long)]
    pi_high: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Overrides applied on top of the defaults or of `--config`.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// RunConfig JSON file used instead of the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Text encoder epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Text encoder learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    fusion_epochs: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// TF-IDF vocabulary cap.
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    min_df: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Append TF-IDF features to the forest input.
    #[arg(long)]
    rf_tfidf: bool,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut c = match (&self.config, base) {
            (Some(path), _) => {
                let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&s)?
            }
            (None, Some(b)) => b,
            (None, None) => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.text.epochs = v;
        }
        if let Some(v) = self.lr {
            c.text.lr = v;
        }
        if let Some(v) = self.fusion_epochs {
            c.fusion.epochs = v;
        }
        if let Some(v) = self.trees {
            c.rf.n_trees = v;
        }
        if let Some(v) = self.depth {
            c.rf.max_depth = v;
        }
        if let Some(v) = self.vocab {
            c.text.tfidf_max_terms = v;
        }
        if let Some(v) = self.min_df {
            c.text.tfidf_min_df = v;
        }
        if let Some(v) = self.max_tokens {
            c.text.max_tokens = v;
        }
        if self.rf_tfidf {
            c.rf.use_tfidf = true;
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Defaults to the model directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Fd,
    ExactMeta,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplesArg {
    CorrectHigh,
    All,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "fd")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "correct-high")]
    samples: SamplesArg,
    /// Finite-difference step; defaults to the model configuration's.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    seeds: PipelineSeeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<&'a SynthSpec>,
    parameters: BTreeMap<&'a str, String>,
    inputs: Vec<FileDigest>,
    artifacts: Vec<FileDigest>,
}

/// Collects artifacts written under the output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn record(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    fn manifest(self, mut m: Manifest<'_>, inputs: &[&Path]) -> Result<()> {
        m.inputs = inputs.iter().map(|p| file_digest(p, None)).collect::<Result<_>>()?;
        m.artifacts = self
            .files
            .iter()
            .map(|p| file_digest(p, Some(&self.dir)))
            .collect::<Result<_>>()?;
        let path = self.dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

fn file_digest(path: &Path, relative_to: Option<&Path>) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let shown = relative_to.and_then(|d| path.strip_prefix(d).ok()).unwrap_or(path);
    Ok(FileDigest {
        path: shown.display().to_string(),
        sha256: bytes_digest(&bytes),
    })
}

fn manifest<'a>(command: &'a str, config: &'a RunConfig) -> Manifest<'a> {
    Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        seeds: PipelineSeeds::from_run_seed(config.seed),
        synth: None,
        parameters: BTreeMap::new(),
        inputs: Vec::new(),
        artifacts: Vec::new(),
    }
}

fn echo(config: &RunConfig) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(config)?).map_err(|e| Error::io("<stdout>", e))
}

fn json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn configure_threads() -> std::result::Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // the global pool can only be built once per process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command; `argv[0]` is the program name. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = configure_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth(a) => synth(a)?,
        Command::Train(a) => train(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Compare(a) => compare(a)?,
        Command::Explain(a) => explain(a)?,
        Command::Predict(a) => predict(a)?,
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n: a.n,
        seed: a.seed,
        complementary: a.complementary,
        delta_num: a.delta_num.unwrap_or(d.delta_num),
        delta_text: a.delta_text.unwrap_or(d.delta_text),
        pi_high: a.pi_high.unwrap_or(d.pi_high),
        informative: vec![Feature::Sknt],
    };
    let config = RunConfig {
        seed: a.seed,
        ..RunConfig::default()
    };
    echo(&config)?;
    let ds = generate(&spec)?;
    let mut out = Outputs::new(&a.out)?;
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf)?;
    out.write("data.csv", buf)?;
    let mut m = manifest("synth", &config);
    m.synth = Some(&spec);
    out.manifest(m, &[])
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve(None)?;
    echo(&config)?;
    let ds = parse_csv_path(&a.data)?;
    let split = train_test_split(ds.len(), config.eval.train_fraction, config.seed)?;
    let (pipeline, curves) = fit_pipeline(&ds, &split.train_indices, Some(&split.test_indices), &config)?;

    let mut out = Outputs::new(&a.out)?;
    out.record(pipeline.save(&a.out)?);
    out.write("split.json", json(&split)?)?;
    let report = evaluate_model(&pipeline, &ds, &split.test_indices)?;
    out.write("holdout_report.json", report.to_json()? + "\n")?;
    for (stem, records) in [("text", &curves.text), ("fusion", &curves.fusion)] {
        if !records.is_empty() {
            let files = emit_curves(records, &a.out, stem)?;
            for p in files.all() {
                out.record(p.to_path_buf());
            }
        }
    }
    out.manifest(manifest("train", &config), &[&a.data])
}

fn evaluate(a: EvaluateArgs) -> std::result::Result<(), Failure> {
    let folds = a.folds.unwrap_or(RunConfig::default().eval.folds);
    if folds < 2 {
        return Err(Failure::Usage(Error::TooFewFolds.to_string()));
    }
    let model_dir = a.model.ok_or_else(|| Failure::Usage("--model is required".into()))?;
    let data = a.data.ok_or_else(|| Failure::Usage("--data is required".into()))?;
    let out_dir = a.out.unwrap_or_else(|| {
        if model_dir.is_dir() {
            model_dir.clone()
        } else {
            model_dir.parent().map(Path::to_path_buf).unwrap_or_default()
        }
    });

    let pipeline = Pipeline::load(&model_dir)?;
    let mut config = a.config.resolve(Some(pipeline.config.clone()))?;
    config.eval.folds = folds;
    echo(&config)?;
    let ds = parse_csv_path(&data)?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let report = evaluate_model(&pipeline, &ds, &rows)?;
    let cv = cross_validate(pipeline_factory(&config), &ds, folds, config.seed)?;

    let mut out = Outputs::new(&out_dir)?;
    out.write("eval_report.json", report.to_json()? + "\n")?;
    out.write("cv_report.json", json(&cv)?)?;
    let mut m = manifest("evaluate", &config);
    m.parameters.insert("folds", folds.to_string());
    let bundle = if model_dir.is_dir() {
        model_dir.join(crate::fusion::pipeline::BUNDLE_FILE)
    } else {
        model_dir
    };
    out.manifest(m, &[&bundle, &data])?;
    Ok(())
}

fn compare(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve(None)?;
    echo(&config)?;
    let ds = parse_csv_path(&a.data)?;
    let split = train_test_split(ds.len(), config.eval.train_fraction, config.seed)?;
    let (table, _) = compare_baselines(&ds, &split, &config)?;
    let mut out = Outputs::new(&a.out)?;
    out.write("comparison.csv", table.to_csv())?;
    out.write("comparison.json", json(&table)?)?;
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", table.to_csv());
    out.manifest(manifest("compare", &config), &[&a.data])
}

fn load_model_and_data(model: &Path, data: &Path) -> Result<(Pipeline, Dataset, PathBuf)> {
    let pipeline = Pipeline::load(model)?;
    echo(&pipeline.config)?;
    let ds = parse_csv_path(data)?;
    let bundle = if model.is_dir() {
        model.join(crate::fusion::pipeline::BUNDLE_FILE)
    } else {
        model.to_path_buf()
    };
    Ok((pipeline, ds, bundle))
}

fn explain(a: ExplainArgs) -> Result<()> {
    let (pipeline, ds, bundle) = load_model_and_data(&a.model, &a.data)?;
    let selection = match a.samples {
        SamplesArg::CorrectHigh => SampleSelection::CorrectHighRisk,
        SamplesArg::All => SampleSelection::All,
    };
    let rows: Vec<usize> = (0..ds.len()).collect();
    let samples = select_samples(&pipeline, &ds, &rows, selection)?;
    let step = a.step.unwrap_or(pipeline.config.eval.sensitivity_step);
    let sensitivity = match a.method {
        MethodArg::Fd => sensitivity_fd(&pipeline, &samples, step)?,
        MethodArg::ExactMeta => sensitivity_chain(&pipeline, &samples, step)?,
    };
    let ablation = ablate(&pipeline, &samples)?;
    let contrast = contrast_report(&sensitivity, &ablation);

    let mut out = Outputs::new(&a.out)?;
    let mut buf = Vec::new();
    write_sensitivity_csv(&sensitivity, &mut buf)?;
    out.write("sensitivity.csv", buf)?;
    let mut buf = Vec::new();
    write_ablation_csv(&ablation, &mut buf)?;
    out.write("ablation.csv", buf)?;
    let tables = render_tables(&sensitivity, &ablation, &contrast);
    out.write("explain.txt", &tables)?;
    print!("{tables}");
    let mut m = manifest("explain", &pipeline.config);
    m.parameters.insert("method", sensitivity.method.as_str().to_string());
    m.parameters.insert("step", format!("{step}"));
    m.parameters.insert("samples", format!("{selection:?}"));
    out.manifest(m, &[&bundle, &a.data])
}

fn predict(a: PredictArgs) -> Result<()> {
    let (pipeline, ds, bundle) = load_model_and_data(&a.model, &a.data)?;
    let preds = pipeline.predict_batch(&ds.observations)?;
    let ids: Vec<usize> = (0..ds.len()).collect();
    let mut buf = Vec::new();
    write_predictions_csv(&ids, &preds, &mut buf)?;
    let mut out = Outputs::new(&a.out)?;
    out.write("predictions.csv", buf)?;
    out.manifest(manifest("predict", &pipeline.config), &[&bundle, &a.data])
}
