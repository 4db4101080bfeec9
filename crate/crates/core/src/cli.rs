//! Command-line front end: `gen-toy`, `train`, `fit-evt`, `eval`, `infer`
//! and `plot-hist`.
//!
//! A run is described by one JSON [`RunConfig`]; flags override its keys.
//! The seed resolves as `--seed`, then the config's `seed`, then the
//! `C2AE_SEED` environment variable, then 0, and replaces both the training
//! and the split seed.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! or fitting failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{gen_toy, load_idx, read_csv, read_csv_table, split_known_unknown, write_csv, LabeledDataset, SplitSpec, ToyKind};
use crate::error::Error;
use crate::eval::{
    evaluate_model, fit_threshold, openness, split_with_cap, ArchSpec, ErrorHistogram, OpennessSpec, PuMode,
    HISTOGRAM_BINS,
};
use crate::infer::{batch_inference, OpenSetPrediction};
use crate::nets::{load_checkpoint, save_checkpoint, NetworkDef, OpenSetModel};
use crate::tensor::Tensor;
use crate::train::{collect_error_sets, error_rng, train_stage1, train_stage2, TrainConfig};

pub const SEED_ENV: &str = "C2AE_SEED";

/// Where a command reads its labelled data from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated on the fly with the run seed.
    Toy { toy: ToyKind, n_per_class: usize },
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
}

/// Known/unknown class split; its seed is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub known_classes: Vec<usize>,
    #[serde(default)]
    pub unknown_classes: Vec<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub histogram_svg: Option<PathBuf>,
    pub histogram_csv: Option<PathBuf>,
}

/// One reproducible run. `network` takes precedence over `arch`; without
/// either the toy networks are used. `train.seed` is replaced by the
/// resolved run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub network: Option<NetworkDef>,
    pub arch: Option<ArchSpec>,
    pub train: TrainConfig,
    pub data: Option<DataSource>,
    pub split: Option<SplitConfig>,
    /// Cap on the number of training samples after the split.
    pub max_train: Option<usize>,
    pub p_u: Option<PuMode>,
    pub outputs: OutputPaths,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let Some(PuMode::Fixed { value }) = self.p_u {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Contract(format!("p_u {value} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn split_spec(&self, seed: u64) -> Option<SplitSpec> {
        self.split.as_ref().map(|s| SplitSpec {
            known_classes: s.known_classes.clone(),
            unknown_classes: s.unknown_classes.clone(),
            train_fraction: s.train_fraction,
            seed,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "c2ae", version, about = "Open-set recognition with class-conditioned auto-encoders")]
pub struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed; falls back to the config, then C2AE_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Labelled CSV file.
    #[arg(long, value_name = "PATH", conflicts_with = "images")]
    pub data: Option<PathBuf>,
    /// IDX image file (optionally gzipped).
    #[arg(long, value_name = "PATH", requires = "labels")]
    pub images: Option<PathBuf>,
    /// IDX label file (optionally gzipped).
    #[arg(long, value_name = "PATH", requires = "images")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Auroc,
    Fmeasure,
}

impl Protocol {
    fn name(self) -> &'static str {
        match self {
            Protocol::Auroc => "auroc",
            Protocol::Fmeasure => "fmeasure",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a two-dimensional toy dataset as CSV.
    GenToy {
        #[arg(long)]
        kind: Option<ToyKind>,
        /// Samples per class.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run both training stages and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs_stage1: Option<usize>,
        #[arg(long)]
        epochs_stage2: Option<usize>,
    },
    /// Fit the tail models and threshold on the training errors.
    FitEvt {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Prior probability of unknowns.
        #[arg(long)]
        pu: Option<f64>,
        /// Defaults to overwriting the input checkpoint.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Evaluate on the held-out split and write a JSON report.
    Eval {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "auroc")]
        protocol: Protocol,
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to standard output.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Print one JSON prediction per input row.
    Infer {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// CSV of feature rows, with or without a trailing label column.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Histogram the match and non-match training errors.
    PlotHist {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// SVG output.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// CSV output.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = HISTOGRAM_BINS)]
        bins: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(e) => error_exit_code(e),
        }
    }
}

/// 2 for data, format and contract errors; 3 for numeric and fitting
/// failures.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_)
        | Error::Fit { .. }
        | Error::InsufficientData(_)
        | Error::InsufficientTail { .. }
        | Error::ThresholdMissing => 3,
        Error::Dimension(_)
        | Error::Index(_)
        | Error::Contract(_)
        | Error::Format { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            e.exit_code()
        }
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let seed = match cli.seed.or(cfg.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let ctx = Ctx { cfg, seed };
    match cli.command {
        Command::GenToy { kind, n, out } => ctx.gen_toy(kind, n, out),
        Command::Train {
            data,
            out,
            lr,
            alpha,
            batch_size,
            epochs_stage1,
            epochs_stage2,
        } => {
            let mut tc = ctx.cfg.train.clone();
            tc.lr = lr.unwrap_or(tc.lr);
            tc.alpha = alpha.unwrap_or(tc.alpha);
            tc.batch_size = batch_size.unwrap_or(tc.batch_size);
            tc.epochs_stage1 = epochs_stage1.unwrap_or(tc.epochs_stage1);
            tc.epochs_stage2 = epochs_stage2.unwrap_or(tc.epochs_stage2);
            tc.seed = ctx.seed;
            ctx.train(&data, out, tc)
        }
        Command::FitEvt { model, data, pu, out } => ctx.fit_evt(&model, &data, pu, out),
        Command::Eval {
            model,
            protocol,
            data,
            report,
        } => ctx.eval(&model, protocol, &data, report),
        Command::Infer { model, input } => infer(&model, &input),
        Command::PlotHist {
            model,
            data,
            out,
            csv,
            bins,
        } => ctx.plot_hist(&model, &data, out, csv, bins),
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
}

impl Ctx {
    fn dataset(&self, args: &DataArgs) -> CliResult<LabeledDataset> {
        let source = match (&args.data, &args.images, &args.labels) {
            (Some(p), _, _) => DataSource::Csv { path: p.clone() },
            (None, Some(i), Some(l)) => DataSource::Idx {
                images: i.clone(),
                labels: l.clone(),
            },
            _ => self
                .cfg
                .data
                .clone()
                .ok_or_else(|| usage("no data given: pass --data, --images/--labels or set `data` in the config"))?,
        };
        Ok(match source {
            DataSource::Toy { toy, n_per_class } => gen_toy(toy, n_per_class, self.seed)?,
            DataSource::Idx { images, labels } => load_idx(images, labels)?,
            DataSource::Csv { path } => read_csv(path)?,
        })
    }

    /// The split recorded in the checkpoint, else the configured one.
    fn split_for(&self, model: &OpenSetModel) -> Option<SplitSpec> {
        model.split.clone().or_else(|| self.cfg.split_spec(self.seed))
    }

    /// Training portion the model was fitted on: the capped known-class
    /// training split, or the whole dataset when no split applies.
    fn training_part(&self, model: &OpenSetModel, data: LabeledDataset) -> CliResult<LabeledDataset> {
        Ok(match self.split_for(model) {
            Some(spec) => split_with_cap(&data, &spec, self.cfg.max_train)?.train_known,
            None => data,
        })
    }

    fn output(&self, flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
        flag.or_else(|| configured.clone())
            .ok_or_else(|| usage(format!("no {what} output path: pass the flag or set it under `outputs`")))
    }

    fn gen_toy(&self, kind: Option<ToyKind>, n: Option<usize>, out: Option<PathBuf>) -> CliResult<()> {
        let (cfg_kind, cfg_n) = match &self.cfg.data {
            Some(DataSource::Toy { toy, n_per_class }) => (Some(*toy), Some(*n_per_class)),
            _ => (None, None),
        };
        let kind = kind.or(cfg_kind).ok_or_else(|| usage("--kind is required"))?;
        let n = n.or(cfg_n).ok_or_else(|| usage("--n is required"))?;
        let out = self.output(out, &self.cfg.outputs.data, "data")?;
        let ds = gen_toy(kind, n, self.seed)?;
        write_csv(&ds, &out)?;
        println!("wrote {} samples of {kind} to {}", ds.len(), out.display());
        Ok(())
    }

    fn network(&self, input_dim: usize, k: usize) -> CliResult<NetworkDef> {
        let def = match (&self.cfg.network, &self.cfg.arch) {
            (Some(def), _) => def.clone(),
            (None, Some(arch)) => arch.network(input_dim, k)?,
            (None, None) => ArchSpec::Toy.network(input_dim, k)?,
        };
        def.validate()?;
        if def.input_dim != input_dim || def.k != k {
            return Err(Error::Dimension(format!(
                "network expects {} features and {} classes, data has {input_dim} and {k}",
                def.input_dim, def.k
            ))
            .into());
        }
        Ok(def)
    }

    fn train(&self, args: &DataArgs, out: Option<PathBuf>, tc: TrainConfig) -> CliResult<()> {
        let out = self.output(out, &self.cfg.outputs.model, "model")?;
        let data = self.dataset(args)?;
        let spec = self.cfg.split_spec(self.seed);
        let train = match &spec {
            Some(s) => split_with_cap(&data, s, self.cfg.max_train)?.train_known,
            None => data,
        };
        let def = self.network(train.dim(), train.class_count())?;
        let mut model = OpenSetModel::new(def, tc.seed)?;
        let l1 = train_stage1(&mut model, &train, &tc)?;
        let l2 = train_stage2(&mut model, &train, &tc)?;
        model.split = spec;
        save_checkpoint(&model, &out)?;
        println!(
            "trained on {} samples: stage-1 loss {:.6}, stage-2 loss {:.6}; wrote {}",
            train.len(),
            l1.last().copied().unwrap_or(f64::NAN),
            l2.total.last().copied().unwrap_or(f64::NAN),
            out.display()
        );
        Ok(())
    }

    fn resolve_pu(&self, flag: Option<f64>, model: &OpenSetModel) -> CliResult<f64> {
        let mode = match (flag, self.cfg.p_u) {
            (Some(v), _) => PuMode::Fixed { value: v },
            (None, Some(m)) => m,
            (None, None) => return Err(usage("--pu is required (or set `p_u` in the config)")),
        };
        let o = match (mode, self.split_for(model)) {
            (PuMode::OpennessScaled, Some(spec)) => {
                let k = spec.known_classes.len();
                openness(OpennessSpec {
                    n_train: k,
                    n_test: k + spec.unknown_classes.len(),
                    n_target: k,
                })?
            }
            (PuMode::OpennessScaled, None) => {
                return Err(usage("openness-scaled p_u needs a known/unknown split"));
            }
            (PuMode::Fixed { .. }, _) => 0.0,
        };
        Ok(mode.resolve(o)?)
    }

    fn fit_evt(&self, model_path: &Path, args: &DataArgs, pu: Option<f64>, out: Option<PathBuf>) -> CliResult<()> {
        let mut model = load_checkpoint(model_path)?;
        let p_u = self.resolve_pu(pu, &model)?;
        let train = self.training_part(&model, self.dataset(args)?)?;
        let tm = fit_threshold(&model, &train, p_u, self.seed)?;
        let tau = tm.tau_star;
        model.threshold = Some(tm);
        let out = out.unwrap_or_else(|| model_path.to_path_buf());
        save_checkpoint(&model, &out)?;
        println!("tau* = {tau} at p_u = {p_u}; wrote {}", out.display());
        Ok(())
    }

    fn eval(&self, model_path: &Path, protocol: Protocol, args: &DataArgs, report: Option<PathBuf>) -> CliResult<()> {
        let model = load_checkpoint(model_path)?;
        let spec = self
            .split_for(&model)
            .ok_or_else(|| usage("evaluation needs a known/unknown split in the checkpoint or config"))?;
        let split = split_known_unknown(&self.dataset(args)?, &spec)?;
        let rep = evaluate_model(&model, &split, protocol.name())?;
        let mut json = serde_json::to_string_pretty(&rep).map_err(Error::from)?;
        json.push('\n');
        match report.or_else(|| self.cfg.outputs.report.clone()) {
            Some(p) => fs::write(p, json).map_err(Error::from)?,
            None => print!("{json}"),
        }
        Ok(())
    }

    fn plot_hist(
        &self,
        model_path: &Path,
        args: &DataArgs,
        out: Option<PathBuf>,
        csv: Option<PathBuf>,
        bins: usize,
    ) -> CliResult<()> {
        let svg_path = out.or_else(|| self.cfg.outputs.histogram_svg.clone());
        let csv_path = csv.or_else(|| self.cfg.outputs.histogram_csv.clone());
        if svg_path.is_none() && csv_path.is_none() {
            return Err(usage("plot-hist needs --out and/or --csv"));
        }
        let model = load_checkpoint(model_path)?;
        let train = self.training_part(&model, self.dataset(args)?)?;
        let errors = collect_error_sets(&model, &train, &mut error_rng(self.seed))?;
        let h = ErrorHistogram::new(&errors, bins)?;
        if let Some(p) = svg_path {
            fs::write(p, h.to_svg()).map_err(Error::from)?;
        }
        if let Some(p) = csv_path {
            fs::write(p, h.to_csv()).map_err(Error::from)?;
        }
        println!("overlap coefficient {:.4}", h.overlap_coefficient());
        Ok(())
    }
}

fn infer(model_path: &Path, input: &Path) -> CliResult<()> {
    let model = load_checkpoint(model_path)?;
    model.threshold()?;
    let table = read_csv_table(input)?;
    let rows = table.features.len() / table.dim;
    let x = Tensor::new(vec![rows, table.dim], table.features)?;
    let preds = batch_inference(&model, &x)?;
    match write_predictions(&preds) {
        // a closed downstream pipe (e.g. `| head`) is not a failure
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.map_err(|e| Error::from(e).into()),
    }
}

fn write_predictions(preds: &[OpenSetPrediction]) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        writeln!(w)?;
    }
    w.flush()
}
