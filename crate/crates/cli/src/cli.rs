use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rnla_core::nn::io::read_manifest;
use rnla_core::nn::AttentionKernel;
use rnla_core::tuner::{LayerSelector, ParamSpace};
use thiserror::Error;

use crate::bench::{
    run_attention_bench, run_conv_bench, run_decomp_bench, run_linear_bench, AttentionGrid, BenchError, ConvGrid,
    DecompKind, DecompParams, LinearGrid, Protocol, DEFAULT_BATCH, DEFAULT_MAX_BYTES, DEFAULT_MEM_BUDGET,
    DEFAULT_TRIALS, DEFAULT_WARMUP,
};
use crate::record::{write_csv, write_csv_to, BenchRecord};
use crate::tune::{run_tune, write_report, Constraint, Metric, Objective, TuneJob};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rnla", version, about = "Benchmarks and tuning for sketched layers and randomized decompositions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time dense and sketched workloads and write CSV records.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Search sketching parameters for the layers of a saved model.
    Tune(TuneArgs),
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    Linear(LinearArgs),
    Conv(ConvArgs),
    Attention(AttentionArgs),
    Decomp(DecompArgs),
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Print the manifest of a saved model.
    Inspect { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Timed trials per configuration; the reported time is their mean.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    /// Untimed calls before the timed trials.
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads. Timed kernels run on one thread either way, and
    /// timings taken with more than one are not comparable across rows.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ProtocolArgs {
    fn protocol(&self) -> Protocol {
        Protocol {
            trials: self.trials,
            warmup: self.warmup,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct LinearArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub din: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub dout: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub l: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    /// Configurations estimated above this many bytes are skipped.
    #[arg(long, default_value_t = DEFAULT_MAX_BYTES)]
    pub max_bytes: u64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct ConvArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub cin: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub cout: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub kernel: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub image: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub l: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_BYTES)]
    pub max_bytes: u64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub dmodel: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub heads: Vec<usize>,
    /// Random feature counts `m`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub features: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "softmax")]
    pub kernel: Vec<AttentionKernel>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub seqlen: Vec<usize>,
    /// Rows whose estimated footprint exceeds this many bytes are skipped.
    #[arg(long, default_value_t = DEFAULT_MEM_BUDGET)]
    pub mem_budget: u64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct DecompArgs {
    #[arg(long)]
    pub kind: DecompKind,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Rank of the synthetic input and target rank of rsvd.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = rnla_core::decomp::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = rnla_core::decomp::DEFAULT_OVERSAMPLE)]
    pub oversample: usize,
    #[arg(long, default_value_t = rnla_core::decomp::DEFAULT_POWER_ITERS)]
    pub power_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub rank_tol: f64,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Manifest of the model to tune.
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out CSV: feature columns and a final integer label column.
    #[arg(long)]
    pub data: PathBuf,
    /// `type:<Kind>`, `pattern:<regex>` or `names:<a,b,...>`; repeatable.
    #[arg(long, required = true)]
    pub select: Vec<LayerSelector>,
    /// `auto` or a comma-separated list of `<l>x<k>` pairs.
    #[arg(long, default_value = "auto", value_parser = parse_space)]
    pub params: ParamSpace,
    /// Bound the metric must meet.
    #[arg(long, required_unless_present = "tolerance", conflicts_with = "tolerance")]
    pub threshold: Option<f64>,
    /// Allowed worsening of the metric relative to the input model.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value = "loss")]
    pub metric: Metric,
    /// Treat larger metric values as better (implied by `--metric accuracy`).
    #[arg(long)]
    pub higher_is_better: bool,
    #[arg(long, default_value = "params")]
    pub objective: Objective,
    /// Random search with this many samples; exhaustive grid when absent.
    #[arg(long)]
    pub n_trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Search all selected layers jointly instead of one at a time.
    #[arg(long)]
    pub joint: bool,
    /// Initialize sketched layers afresh instead of from the dense weights.
    #[arg(long)]
    pub fresh_init: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Where to save the model with the best configuration applied.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_space(s: &str) -> Result<ParamSpace, String> {
    if s == "auto" {
        return Ok(ParamSpace::Auto);
    }
    s.split(',')
        .map(|pair| {
            let (l, k) = pair.trim().split_once('x').ok_or_else(|| format!("expected <l>x<k>, got {pair:?}"))?;
            let l = l.parse::<usize>().map_err(|e| format!("{pair:?}: {e}"))?;
            let k = k.parse::<usize>().map_err(|e| format!("{pair:?}: {e}"))?;
            Ok((l, k))
        })
        .collect::<Result<Vec<_>, String>>()
        .map(ParamSpace::Explicit)
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Usage(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<rnla_core::Error>() {
            Some(rnla_core::Error::Selection { .. } | rnla_core::Error::Parameter(_)) => CliError::Usage(format!("{e:#}")),
            _ => CliError::Runtime(e),
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bench(cmd) => run_bench(cmd),
        Command::Tune(args) => run_tune_cmd(args),
        Command::Model(ModelCommand::Inspect { path }) => {
            let manifest = read_manifest(&path).map_err(|e| CliError::Runtime(e.into()))?;
            let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.into()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run_bench(cmd: BenchCommand) -> Result<(), CliError> {
    let p = match &cmd {
        BenchCommand::Linear(a) => &a.protocol,
        BenchCommand::Conv(a) => &a.protocol,
        BenchCommand::Attention(a) => &a.protocol,
        BenchCommand::Decomp(a) => &a.protocol,
    };
    if p.threads == 0 {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(p.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    let out = p.out.clone();
    let records = pool.install(|| bench_records(&cmd))?;
    emit(&records, out)
}

fn bench_records(cmd: &BenchCommand) -> Result<Vec<BenchRecord>, BenchError> {
    match cmd {
        BenchCommand::Linear(a) => run_linear_bench(&LinearGrid {
            d_in: a.din.clone(),
            d_out: a.dout.clone(),
            num_terms: a.l.clone(),
            low_ranks: a.k.clone(),
            batch: a.batch,
            max_bytes: a.max_bytes,
            protocol: a.protocol.protocol(),
        }),
        BenchCommand::Conv(a) => run_conv_bench(&ConvGrid {
            c_in: a.cin.clone(),
            c_out: a.cout.clone(),
            kernels: a.kernel.clone(),
            images: a.image.clone(),
            num_terms: a.l.clone(),
            low_ranks: a.k.clone(),
            batch: a.batch,
            max_bytes: a.max_bytes,
            protocol: a.protocol.protocol(),
        }),
        BenchCommand::Attention(a) => run_attention_bench(&AttentionGrid {
            d_model: a.dmodel.clone(),
            heads: a.heads.clone(),
            num_features: a.features.clone(),
            kernels: a.kernel.clone(),
            seq_lens: a.seqlen.clone(),
            mem_budget: a.mem_budget,
            protocol: a.protocol.protocol(),
        }),
        BenchCommand::Decomp(a) => run_decomp_bench(&DecompParams {
            kind: a.kind,
            rows: a.rows,
            cols: a.cols,
            rank: a.rank,
            oversample: a.oversample,
            power_iters: a.power_iters,
            gamma: a.gamma,
            rank_tol: a.rank_tol,
            protocol: a.protocol.protocol(),
        }),
    }
}

fn emit(records: &[BenchRecord], out: Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => write_csv(records, &path).map_err(|e| CliError::Runtime(e.into())),
        None => write_csv_to(records, io::stdout().lock()).map_err(|e| CliError::Runtime(e.into())),
    }
}

fn run_tune_cmd(args: TuneArgs) -> Result<(), CliError> {
    if args.threads == 0 {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    let constraint = match (args.threshold, args.tolerance) {
        (Some(t), _) => Constraint::Threshold(t),
        (None, Some(t)) => Constraint::Tolerance(t),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let job = TuneJob {
        model: args.model,
        data: args.data,
        selectors: args.select,
        params: args.params,
        constraint,
        metric: args.metric,
        higher_is_better: args.higher_is_better || args.metric.higher_is_better(),
        objective: args.objective,
        n_trials: args.n_trials,
        seed: args.seed,
        joint: args.joint,
        copy_weights: !args.fresh_init,
        threads: args.threads,
    };
    let outcome = run_tune(&job)?;
    let report = &outcome.report;
    if let Some(path) = &args.report {
        write_report(report, path)?;
    }
    let mut err = io::stderr().lock();
    for w in &report.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    for t in report.trials.iter().filter(|t| t.error.is_some()) {
        let _ = writeln!(err, "trial {} failed: {}", t.trial_index, t.error.as_deref().unwrap_or_default());
    }
    let best = report.best().map_err(|e| CliError::Runtime(e.into()))?;
    let dense = outcome.model.param_count().total_stored;
    let mut out = io::stdout().lock();
    let _ = writeln!(
        out,
        "{} trials; dense {} {:.6}, threshold {:.6}",
        report.trials.len(),
        job.metric,
        outcome.baseline,
        outcome.threshold
    );
    let _ = writeln!(
        out,
        "best trial {}: {} {:.6}, total_stored {} of {} ({:.1}% reduction)",
        best.trial_index,
        job.metric,
        best.accuracy.unwrap_or(f64::NAN),
        best.total_stored,
        dense,
        100.0 * (1.0 - best.total_stored as f64 / dense as f64)
    );
    for c in &best.assignment.choices {
        let _ = writeln!(out, "  {}: l={} k={}", c.layer, c.num_terms, c.low_rank);
    }
    if let Some(path) = &args.out_model {
        let tuned = rnla_core::tuner::apply_best_params(&outcome.model, &best.assignment, best.copy_weights)
            .map_err(|e| CliError::Runtime(e.into()))?;
        tuned.save(path).map_err(|e| CliError::Runtime(e.into()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn protocol_defaults() {
        let cli = Cli::try_parse_from(["rnla", "bench", "linear", "--din", "8", "--dout", "8", "--l", "1", "--k", "2"]).unwrap();
        let Command::Bench(BenchCommand::Linear(a)) = cli.command else { panic!() };
        assert_eq!((a.protocol.trials, a.protocol.warmup), (200, 10));
        let mut help = Vec::new();
        Cli::command()
            .find_subcommand_mut("bench")
            .unwrap()
            .find_subcommand_mut("linear")
            .unwrap()
            .write_long_help(&mut help)
            .unwrap();
        assert!(String::from_utf8(help).unwrap().contains("[default: 200]"));
    }

    #[test]
    fn list_flags() {
        let cli = Cli::try_parse_from([
            "rnla", "bench", "attention", "--dmodel", "64,128", "--heads", "8", "--features", "16", "--kernel",
            "softmax,relu", "--seqlen", "128,256",
        ])
        .unwrap();
        let Command::Bench(BenchCommand::Attention(a)) = cli.command else { panic!() };
        assert_eq!(a.dmodel, [64, 128]);
        assert_eq!(a.kernel, [AttentionKernel::Softmax, AttentionKernel::Relu]);
        assert_eq!(a.mem_budget, 2 << 30);
    }

    #[test]
    fn space_parsing() {
        assert_eq!(parse_space("auto").unwrap(), ParamSpace::Auto);
        assert_eq!(parse_space("1x8, 2x16").unwrap(), ParamSpace::Explicit(vec![(1, 8), (2, 16)]));
        assert!(parse_space("1by8").is_err());
    }

    #[test]
    fn tune_needs_a_constraint() {
        let base = ["rnla", "tune", "--model", "m.json", "--data", "d.csv", "--select", "type:Linear"];
        assert!(Cli::try_parse_from(base).is_err());
        assert!(Cli::try_parse_from(base.iter().chain(&["--threshold", "0.5", "--tolerance", "0.1"])).is_err());
        let cli = Cli::try_parse_from(base.iter().chain(&["--tolerance", "0.1"])).unwrap();
        let Command::Tune(a) = cli.command else { panic!() };
        assert_eq!(a.select, [LayerSelector::ByType(rnla_core::nn::LayerKind::DenseLinear)]);
        assert_eq!(a.metric, Metric::Loss);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["rnla", "bench", "linear"]), EXIT_USAGE);
        assert_eq!(main_with_args(["rnla", "bogus"]), EXIT_USAGE);
        assert_eq!(
            main_with_args(["rnla", "bench", "decomp", "--kind", "cqrrpt", "--rows", "4", "--cols", "8", "--trials", "1"]),
            EXIT_USAGE
        );
        assert_eq!(main_with_args(["rnla", "model", "inspect", "/nonexistent/model.json"]), EXIT_RUNTIME);
    }
}
