// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. [`run`] parses argv, echoes the resolved
//! configuration as one JSON line on stderr and maps failures onto exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other failure (plot rendering, server runtime) |
//! | 2 | usage error (unknown flag, missing argument) |
//! | 3 | I/O error (missing or unreadable file) |
//! | 4 | malformed data file or checkpoint, failed validation |
//! | 5 | degenerate data (single class, rank-deficient PCA input) |
//! | 6 | invalid argument or shape/dimension/mode mismatch |

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature_store::{
    read_dataset, split, validate, write_dataset, DatasetHeader, SegmentMode, SignalPlacement, SynthConfig,
};
use crate::metrics::{rac_csv, roc_csv, EvalReport};
use crate::plot;
use crate::pooling::PoolingSpec;
use crate::probes::{encode_checkpoint, load_checkpoint};
use crate::router::{self, LatencyModel, PolicyMode, RoutePolicy, ServiceState};
use crate::training::{
    default_fractions, evaluate, layer_sweep, layer_table_csv, ood_matrix, run_split_study, truncation_sweep,
    truncation_table_csv, DataSource, LayerRow, ProbeSpec, StudyConfig, TruncationRow,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;
pub const EXIT_INVALID: i32 = 6;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::Corrupt(_)
        | Error::NonFinite(_)
        | Error::Json(_) => EXIT_FORMAT,
        Error::Degenerate(_) | Error::RankDeficient { .. } => EXIT_DEGENERATE,
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::ShapeMismatch(_) | Error::ModeMismatch(_) => {
            EXIT_INVALID
        }
        Error::Plot(_) => EXIT_OTHER,
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "hsprobe", version, about = "Hidden-state correctness probes and routing")]
struct Cli {
    /// Seed for every random choice (data synthesis, split, init, shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Write a synthetic HSDS dataset.
    Synth(SynthArgs),
    /// Check a dataset's invariants and print its label statistics.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Stratified train/val/test split into three HSDS files.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Train a probe on one dataset and evaluate it on the held-out split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Write the test-split evaluation report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-epoch training history here.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Score every record of a dataset with a trained probe.
    Eval {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        roc_csv: Option<PathBuf>,
        #[arg(long)]
        rac_csv: Option<PathBuf>,
    },
    /// Train and evaluate one probe per layer file.
    LayerSweep {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Cross-dataset generalization matrix at one layer.
    Ood {
        /// `name=path`, one per dataset.
        #[arg(long = "dataset", num_args = 1.., required = true)]
        datasets: Vec<String>,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Evaluate a question+answer probe on answer prefixes.
    TruncateSweep {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated fractions in (0, 1]; default 0.05 to 1.0 in steps of 0.05.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rejection-accuracy curve of an evaluation report as CSV.
    Rac {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a figure as SVG.
    Plot {
        kind: PlotKind,
        /// JSON written by `eval`/`train --report`, `layer-sweep` or `truncate-sweep`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a probe over HTTP until interrupted.
    Serve(ServeArgs),
    /// Latency/accuracy of the serving strategies on a scored trace.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PlotKind {
    Roc,
    Rac,
    Layers,
    Truncation,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Arch {
    Mlp,
    Transformer,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    QuestionOnly,
    QuestionAndAnswer,
}

impl From<ModeArg> for SegmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::QuestionOnly => SegmentMode::QuestionOnly,
            ModeArg::QuestionAndAnswer => SegmentMode::QuestionAndAnswer,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SignalArg {
    AllTokens,
    LateAnswer,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    /// Seed of the signal direction; datasets sharing it are identically distributed.
    #[arg(long)]
    direction_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "all-tokens")]
    signal: SignalArg,
    #[arg(long, default_value = "synthetic")]
    model_name: String,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value = "synth")]
    id_prefix: String,
}

/// Study configuration: `--config` file first, then individual flags.
#[derive(Debug, Args, Serialize)]
struct StudyArgs {
    /// TOML or JSON study config (`.toml` is read as TOML, anything else as JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// MLP hidden width.
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// MLP pooling: mean, max, last or pca:N.
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    /// Turn off the transformer's positional encoding.
    #[arg(long)]
    no_positional_encoding: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Train,val,test fractions, e.g. `0.8,0.1,0.1`.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
}

const DEFAULT_MLP_HIDDEN: usize = 512;

impl StudyArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<StudyConfig> {
        let mut s = match &self.config {
            Some(path) => read_config(path)?,
            None => StudyConfig::default(),
        };
        if let Some(m) = self.mode {
            s.mode = m.into();
        }
        let arch = self.arch.unwrap_or(match s.probe {
            ProbeSpec::Mlp { .. } => Arch::Mlp,
            ProbeSpec::Transformer { .. } => Arch::Transformer,
        });
        s.probe = match (arch, s.probe) {
            (Arch::Mlp, p @ ProbeSpec::Mlp { .. }) | (Arch::Transformer, p @ ProbeSpec::Transformer { .. }) => p,
            (Arch::Mlp, _) => ProbeSpec::mlp(DEFAULT_MLP_HIDDEN, PoolingSpec::Mean),
            (Arch::Transformer, _) => ProbeSpec::default(),
        };
        match &mut s.probe {
            ProbeSpec::Mlp {
                hidden_dim,
                n_layers,
                pooling,
            } => {
                if self.model_dim.is_some() || self.n_heads.is_some() || self.no_positional_encoding {
                    return Err(Error::InvalidArgument(
                        "--model-dim, --n-heads and --no-positional-encoding apply to the transformer".into(),
                    ));
                }
                set(hidden_dim, self.hidden_dim);
                set(n_layers, self.n_layers);
                if let Some(p) = &self.pooling {
                    *pooling = p.parse()?;
                }
            }
            ProbeSpec::Transformer {
                model_dim,
                n_layers,
                n_heads,
                positional_encoding,
                ..
            } => {
                if self.hidden_dim.is_some() || self.pooling.is_some() {
                    return Err(Error::InvalidArgument("--hidden-dim and --pooling apply to the MLP".into()));
                }
                set(model_dim, self.model_dim);
                set(n_layers, self.n_layers);
                if self.n_heads.is_some() {
                    *n_heads = self.n_heads;
                }
                if self.no_positional_encoding {
                    *positional_encoding = false;
                }
            }
        }
        set(&mut s.train.learning_rate, self.lr);
        set(&mut s.train.batch_size, self.batch_size);
        set(&mut s.train.max_epochs, self.epochs);
        set(&mut s.train.patience, self.patience);
        if let Some(f) = &self.split {
            if f.len() != 3 {
                return Err(Error::InvalidArgument(format!("--split wants three fractions, got {}", f.len())));
            }
            (s.split.train, s.split.val, s.split.test) = (f[0], f[1], f[2]);
        }
        if let Some(seed) = seed {
            s.train.seed = seed;
            s.split.seed = seed;
        }
        s.check()?;
        Ok(s)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_config(path: &Path) -> Result<StudyConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: String| Error::InvalidArgument(format!("config {}: {e}", path.display()));
    if path.extension().is_some_and(|x| x == "toml") {
        toml::from_str(&text).map_err(|e| bad(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    #[arg(long)]
    probe: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value = "fallback")]
    fallback: String,
    /// Score after this fraction of the answer (question+answer probes only).
    #[arg(long)]
    answer_fraction: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Evaluation report JSON supplying scores and labels.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Take answer lengths from this HSDS file, matched by id.
    #[arg(long, conflicts_with = "answer_tokens")]
    lengths_from: Option<PathBuf>,
    /// Same answer length for every item.
    #[arg(long)]
    answer_tokens: Option<usize>,
    #[arg(long)]
    default_token_secs: f64,
    #[arg(long)]
    fallback_token_secs: f64,
    #[arg(long)]
    probe_secs: f64,
    #[arg(long)]
    fallback_accuracy: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `args` (program name first) and run. Never panics on bad input;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            exit_code(&e)
        }
    }
}

fn echo(cli: &Cli, study: Option<&StudyConfig>) {
    let line = serde_json::json!({ "invocation": cli, "study": study });
    eprintln!("config {line}");
}

fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    stdout(&format!("{}\n", serde_json::to_string_pretty(v)?));
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_file(path, serde_json::to_vec_pretty(v)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn source_of(h: &DatasetHeader) -> DataSource {
    DataSource {
        model_name: h.model_name.clone(),
        layer_index: h.layer_index,
    }
}

#[derive(Serialize)]
struct ReportSummary {
    n: usize,
    positives: usize,
    accuracy: f64,
    auroc: f64,
    aurac: f64,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            n: r.n,
            positives: r.positives,
            accuracy: r.accuracy,
            auroc: r.auroc,
            aurac: r.aurac,
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Synth(a) => {
            echo(cli, None);
            let cfg = SynthConfig {
                direction_seed: a.direction_seed,
                signal: match a.signal {
                    SignalArg::AllTokens => SignalPlacement::AllTokens,
                    SignalArg::LateAnswer => SignalPlacement::LateAnswer,
                },
                id_prefix: a.id_prefix.clone(),
                ..SynthConfig::new(a.n, a.dim, a.separation, seed.unwrap_or(0))
            };
            let records = crate::feature_store::synth_dataset_with(&cfg)?;
            let header = DatasetHeader::new(&a.model_name, a.layer, a.dim).with_record_count(records.len());
            write_dataset(&records, &header, &a.out)?;
            print_json(&validate(&records))
        }
        Command::Validate { data } => {
            echo(cli, None);
            let (_, records) = read_dataset(data)?;
            let report = validate(&records);
            print_json(&report)?;
            if report.is_clean() {
                Ok(())
            } else {
                Err(Error::Corrupt(format!("{} invariant violations", report.violations.len())))
            }
        }
        Command::Split { data, out_dir, study } => {
            let s = study.resolve(seed)?;
            echo(cli, Some(&s));
            let (header, mut records) = read_dataset(data)?;
            records.sort_by(|a, b| a.id.cmp(&b.id));
            let parts = split(&records, &s.split)?;
            std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
            let stem = data.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            let mut counts = serde_json::Map::new();
            for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
                let path = out_dir.join(format!("{stem}.{name}.hsds"));
                write_dataset(part, &header.clone().with_record_count(part.len()), &path)?;
                counts.insert(name.into(), part.len().into());
            }
            print_json(&counts)
        }
        Command::Train {
            data,
            out,
            report,
            history,
            study,
        } => {
            let s = study.resolve(seed)?;
            echo(cli, Some(&s));
            let (header, records) = read_dataset(data)?;
            let (params, hist, test) = run_split_study(records, &source_of(&header), &s)?;
            let bytes = encode_checkpoint(&params)?;
            write_file(out, &bytes)?;
            if let Some(p) = report {
                write_json(p, &test)?;
            }
            if let Some(p) = history {
                write_json(p, &hist)?;
            }
            print_json(&serde_json::json!({
                "checkpoint": out,
                "probe_version": router::probe_version(&bytes),
                "epochs_run": hist.epochs.len(),
                "best_epoch": hist.best().epoch,
                "val_auroc": hist.best().val_auroc,
                "test": ReportSummary::from(&test),
            }))
        }
        Command::Eval {
            probe,
            data,
            out,
            roc_csv: roc_path,
            rac_csv: rac_path,
        } => {
            echo(cli, None);
            let params = load_checkpoint(probe)?;
            let (_, records) = read_dataset(data)?;
            let report = evaluate(&params, &records)?;
            if let Some(p) = out {
                write_json(p, &report)?;
            }
            if let Some(p) = roc_path {
                write_file(p, roc_csv(&report.roc))?;
            }
            if let Some(p) = rac_path {
                write_file(p, rac_csv(&report.rac))?;
            }
            print_json(&ReportSummary::from(&report))
        }
        Command::LayerSweep {
            data,
            out,
            csv,
            jobs,
            study,
        } => {
            let s = study.resolve(seed)?;
            echo(cli, Some(&s));
            let rows = layer_sweep(data, &s, *jobs)?;
            let table = layer_table_csv(&rows);
            if let Some(p) = out {
                write_json(p, &rows)?;
            }
            if let Some(p) = csv {
                write_file(p, &table)?;
            }
            stdout(&table);
            Ok(())
        }
        Command::Ood {
            datasets,
            layer,
            out,
            csv,
            jobs,
            study,
        } => {
            let s = study.resolve(seed)?;
            echo(cli, Some(&s));
            let named = datasets
                .iter()
                .map(|d| match d.split_once('=') {
                    Some((name, path)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
                    _ => Err(Error::InvalidArgument(format!("--dataset wants name=path, got {d:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let m = ood_matrix(&named, &s, *layer, *jobs)?;
            let table = m.to_csv();
            if let Some(p) = out {
                write_json(p, &m)?;
            }
            if let Some(p) = csv {
                write_file(p, &table)?;
            }
            stdout(&table);
            Ok(())
        }
        Command::TruncateSweep {
            probe,
            data,
            fractions,
            out,
            csv,
        } => {
            echo(cli, None);
            let params = load_checkpoint(probe)?;
            let (_, records) = read_dataset(data)?;
            let fractions = fractions.clone().unwrap_or_else(default_fractions);
            let rows = truncation_sweep(&params, &records, &fractions)?;
            let table = truncation_table_csv(&rows);
            if let Some(p) = out {
                write_json(p, &rows)?;
            }
            if let Some(p) = csv {
                write_file(p, &table)?;
            }
            stdout(&table);
            Ok(())
        }
        Command::Rac { report, out } => {
            echo(cli, None);
            let r: EvalReport = read_json(report)?;
            let table = rac_csv(&r.rac);
            match out {
                Some(p) => {
                    write_file(p, &table)?;
                    print_json(&serde_json::json!({ "aurac": r.aurac, "accuracy": r.accuracy, "n": r.n }))
                }
                None => {
                    stdout(&table);
                    Ok(())
                }
            }
        }
        Command::Plot { kind, input, out } => {
            echo(cli, None);
            let svg = match kind {
                PlotKind::Roc => plot::roc_svg(&read_json::<EvalReport>(input)?)?,
                PlotKind::Rac => plot::rac_svg(&read_json::<EvalReport>(input)?)?,
                PlotKind::Layers => plot::layer_sweep_svg(&read_json::<Vec<LayerRow>>(input)?)?,
                PlotKind::Truncation => plot::truncation_svg(&read_json::<Vec<TruncationRow>>(input)?)?,
            };
            write_file(out, svg)
        }
        Command::Serve(a) => {
            echo(cli, None);
            serve(a)
        }
        Command::Simulate(a) => {
            echo(cli, None);
            let report = simulate(a)?;
            if let Some(p) = &a.out {
                write_json(p, &report)?;
            }
            print_json(&serde_json::json!({
                "n": report.n,
                "tau": report.tau,
                "strategies": report.strategies,
                "max_added_fallback": report.max_added_fallback,
                "added_latency_bound": report.added_latency_bound,
                "bound_holds": report.bound_holds,
            }))
        }
    }
}

fn serve(a: &ServeArgs) -> Result<()> {
    let mode = match a.answer_fraction {
        Some(fraction) => PolicyMode::PartialAnswer { fraction },
        None => PolicyMode::QuestionOnly,
    };
    let policy = RoutePolicy::new(a.tau, &a.fallback, mode)?;
    let state = Arc::new(ServiceState::load(&a.probe, policy)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async {
        let listener = router::bind(a.addr).await?;
        if let Ok(addr) = listener.local_addr() {
            eprintln!("listening on http://{addr}");
        }
        router::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

fn simulate(a: &SimulateArgs) -> Result<router::SimReport> {
    let report: EvalReport = read_json(&a.report)?;
    let lengths = match (&a.lengths_from, a.answer_tokens) {
        (Some(path), _) => {
            let (_, records) = read_dataset(path)?;
            let by_id: HashMap<&str, usize> = records.iter().map(|r| (r.id.as_str(), r.n_answer)).collect();
            report
                .ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("no record {id:?} in {}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?
        }
        (None, Some(n)) => vec![n; report.n],
        (None, None) => {
            return Err(Error::InvalidArgument(
                "answer lengths needed: --lengths-from or --answer-tokens".into(),
            ))
        }
    };
    let lm = LatencyModel {
        default_token_secs: a.default_token_secs,
        fallback_token_secs: a.fallback_token_secs,
        probe_secs: a.probe_secs,
        fallback_accuracy: a.fallback_accuracy,
    };
    let policy = RoutePolicy::new(a.tau, "fallback", PolicyMode::QuestionOnly)?;
    router::simulate(&report.scored_set(), &lengths, &policy, &lm)
}
