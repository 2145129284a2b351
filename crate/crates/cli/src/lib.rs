//! Subcommands behind the `noah` binary, callable in-process.
//!
//! Exit codes: 0 ok, 2 usage or configuration, 3 data, 4 internal invariant
//! violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use noah_core::bench::{run_bench, BenchReport};
use noah_core::config::{parse_pairs, ExperimentConfig, HeadKind};
use noah_core::heads::{count_cost, count_gap_cost};
use noah_core::train::{evaluate, load_data, train, Checkpoint, EvalReport, MetricsLog};
use noah_core::viz::{render_maps, VizRequest};
use noah_core::{Error, Model32};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const BENCH_FILE: &str = "bench.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::ConfigFile { .. } => 2,
            CliError::Output { .. } => 3,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Unsupported(_) => 2,
                Error::Range(_)
                | Error::Format(_)
                | Error::Consistency(_)
                | Error::Version { .. }
                | Error::Truncated(_)
                | Error::Checksum
                | Error::Io { .. } => 3,
                Error::Dimension { .. } | Error::InvalidTensor(_) | Error::Contract(_) => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct RunSpec {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Overrides the `seed` key.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
}

fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

impl RunSpec {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunSpec {
            out: out.into(),
            ..Self::default()
        }
    }

    pub fn with_config(mut self, path: impl Into<PathBuf>) -> Self {
        self.config = Some(path.into());
        self
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }

    /// File pairs, then `--set` overrides, then `--seed`.
    fn pairs(&self, base: Option<&str>) -> CliResult<Vec<(String, String)>> {
        let mut pairs = match base {
            Some(text) => parse_pairs(text)?,
            None => Vec::new(),
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
                path: path.clone(),
                source,
            })?;
            pairs.extend(
                parse_pairs(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            );
        }
        pairs.extend(self.overrides.iter().cloned());
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
        }
        Ok(pairs)
    }

    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        Ok(ExperimentConfig::from_pairs(self.pairs(None)?)?)
    }

    /// The checkpoint's own configuration with this run's overrides on top.
    fn resolve_over(&self, base: &ExperimentConfig) -> CliResult<ExperimentConfig> {
        Ok(ExperimentConfig::from_pairs(
            self.pairs(Some(&base.to_text()))?,
        )?)
    }

    fn out_dir(&self) -> CliResult<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|source| CliError::Output {
            path: self.out.clone(),
            source,
        })?;
        Ok(&self.out)
    }
}

fn write(path: PathBuf, bytes: &[u8]) -> CliResult<PathBuf> {
    std::fs::write(&path, bytes).map_err(|source| CliError::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint<f32>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: MetricsLog,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

/// Train on the configured data; writes `metrics.csv` and `model.ckpt`.
pub fn cmd_train(spec: &RunSpec) -> CliResult<TrainOutcome> {
    let cfg = spec.resolve()?;
    cfg.validate()?;
    let out = spec.out_dir()?;
    let (train_set, eval_set) = load_data::<f32>(&cfg.data)?;
    let (model, log) = train(&cfg.model, &cfg.train, &train_set, &eval_set)?;
    let metrics = write(out.join(METRICS_FILE), log.to_csv().as_bytes())?;
    let checkpoint = write(
        out.join(CHECKPOINT_FILE),
        &Checkpoint::new(cfg, model)?.to_bytes(),
    )?;
    Ok(TrainOutcome {
        log,
        metrics,
        checkpoint,
    })
}

/// Accuracy of a checkpoint on the eval set its config (plus overrides) describes.
pub fn cmd_eval(spec: &RunSpec, checkpoint: &Path) -> CliResult<EvalReport> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = spec.resolve_over(ck.config())?;
    let (_, eval_set) = load_data::<f32>(&cfg.data)?;
    eval_set.validate_labels(ck.model().config().categories())?;
    Ok(evaluate(ck.model(), &eval_set)?)
}

/// `key=value` cost lines for both heads at the configured geometry.
pub fn cmd_cost(spec: &RunSpec) -> CliResult<String> {
    let cfg = spec.resolve()?;
    let (noah_cfg, b) = (&cfg.model.noah, &cfg.bench);
    let noah = count_cost(noah_cfg, b.channels, b.height, b.width)?;
    let gap = count_gap_cost(
        b.channels,
        b.height,
        b.width,
        noah_cfg.categories,
        noah_cfg.use_bias,
    )?;
    let mut out = String::new();
    writeln!(out, "channels={}", b.channels).unwrap();
    writeln!(out, "height={}", b.height).unwrap();
    writeln!(out, "width={}", b.width).unwrap();
    writeln!(out, "categories={}", noah_cfg.categories).unwrap();
    writeln!(out, "groups={}", noah_cfg.groups).unwrap();
    writeln!(out, "key_ratio={}", noah_cfg.key_ratio).unwrap();
    writeln!(out, "head_bias={}", noah_cfg.use_bias).unwrap();
    writeln!(out, "noah_params={}", noah.params).unwrap();
    writeln!(out, "noah_madds={}", noah.madds).unwrap();
    writeln!(out, "gap_params={}", gap.params).unwrap();
    writeln!(out, "gap_madds={}", gap.madds).unwrap();
    for (head, report) in [("noah", &noah), ("gap", &gap)] {
        for item in &report.breakdown {
            writeln!(out, "{head}.{}.params={}", item.stage, item.params).unwrap();
            writeln!(out, "{head}.{}.madds={}", item.stage, item.madds).unwrap();
        }
    }
    Ok(out)
}

/// Latency comparison; writes `bench.csv`.
pub fn cmd_bench(spec: &RunSpec) -> CliResult<(BenchReport, PathBuf)> {
    let cfg = spec.resolve()?;
    cfg.model.backbone.validate()?;
    let report = run_bench(&cfg)?;
    let out = spec.out_dir()?;
    let csv = write(out.join(BENCH_FILE), report.to_csv().as_bytes())?;
    Ok((report, csv))
}

/// Attention and POCA maps for the given eval samples; `categories = None`
/// exports every category.
pub fn cmd_viz(
    spec: &RunSpec,
    checkpoint: &Path,
    samples: &[usize],
    block: usize,
    categories: Option<&[usize]>,
) -> CliResult<Vec<PathBuf>> {
    let ck = load_checkpoint(checkpoint)?;
    let model: &Model32 = ck.model();
    if model.config().head != HeadKind::Noah {
        return Err(Error::Unsupported(
            "viz needs a NOAH checkpoint, this one holds a GAP head".into(),
        )
        .into());
    }
    let cfg = spec.resolve_over(ck.config())?;
    let (_, eval_set) = load_data::<f32>(&cfg.data)?;
    let all: Vec<usize> = (0..model.config().categories()).collect();
    let request = VizRequest {
        samples: samples.to_vec(),
        block,
        categories: categories.map_or(all, <[usize]>::to_vec),
    };
    let maps = render_maps(model, &eval_set.images, &request)?;
    let out = spec.out_dir()?;
    maps.into_iter()
        .map(|(name, pgm)| write(out.join(name), &pgm.to_bytes()))
        .collect()
}

#[derive(Debug, Parser)]
#[command(
    name = "noah",
    version,
    about = "Attentive classification heads: train, eval, cost, bench, viz"
)]
struct Cli {
    #[command(flatten)]
    spec: RunSpec,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write metrics.csv and model.ckpt.
    Train,
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Print parameter and MAdd counts for both heads.
    Cost,
    /// Time NOAH against GAP, forward only.
    Bench,
    /// Export attention and POCA maps as PGM files.
    Viz {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Eval-set sample indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        samples: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        block: usize,
        /// Category indices; all categories when omitted.
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<usize>>,
    },
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let spec = &cli.spec;
    let emit = |stdout: &mut dyn Write, s: &str| {
        stdout
            .write_all(s.as_bytes())
            .map_err(|source| CliError::Output {
                path: "<stdout>".into(),
                source,
            })
    };
    match cli.command {
        Command::Train => {
            let t = cmd_train(spec)?;
            let mut s = t.log.to_csv();
            writeln!(s, "metrics={}", t.metrics.display()).unwrap();
            writeln!(s, "checkpoint={}", t.checkpoint.display()).unwrap();
            emit(stdout, &s)
        }
        Command::Eval { checkpoint } => {
            let r = cmd_eval(spec, &checkpoint)?;
            let mut s = format!("samples={}\ntop1={:.6}\n", r.samples, r.top1);
            if let Some(t5) = r.top5 {
                writeln!(s, "top5={t5:.6}").unwrap();
            }
            emit(stdout, &s)
        }
        Command::Cost => emit(stdout, &cmd_cost(spec)?),
        Command::Bench => {
            let (report, csv) = cmd_bench(spec)?;
            emit(
                stdout,
                &format!("{}csv={}\n", report.to_text(), csv.display()),
            )
        }
        Command::Viz {
            checkpoint,
            samples,
            block,
            categories,
        } => {
            let files = cmd_viz(spec, &checkpoint, &samples, block, categories.as_deref())?;
            let s: String = files.iter().map(|f| format!("{}\n", f.display())).collect();
            emit(stdout, &s)
        }
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, A>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
