//! Held-out data, evaluation callbacks and report export for the `tune`
//! subcommand.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use rnla_core::nn::loss::{accuracy, softmax_cross_entropy};
use rnla_core::nn::{Model, Tensor};
use rnla_core::tuner::{self, BoxError, LayerConfig, LayerSelector, ParamSpace, SearchAlgorithm, TuneReport, TuneSettings};
use rnla_core::Matrix;

use crate::timing::time_op;

pub const REPORT_HEADER: [&str; 9] = [
    "trial_index",
    "layer",
    "l",
    "k",
    "accuracy",
    "objective",
    "satisfied",
    "total_stored",
    "wall_ms",
];

/// Labelled samples stored column-wise: `x` is `features × samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Reads a CSV with a header row, feature columns and a final integer
/// label column.
pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let width = rdr.headers()?.len();
    if width < 2 {
        bail!("{}: need at least one feature column and a label column", path.display());
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        let parse_err = || format!("{}: row {}: malformed value", path.display(), i + 1);
        for cell in row.iter().take(width - 1) {
            features.push(cell.trim().parse::<f64>().with_context(parse_err)?);
        }
        labels.push(row[width - 1].trim().parse::<usize>().with_context(parse_err)?);
    }
    if labels.is_empty() {
        bail!("{}: no samples", path.display());
    }
    let samples = Matrix::from_vec(labels.len(), width - 1, features)?;
    Ok(Dataset {
        x: samples.transpose(),
        labels,
    })
}

pub fn write_dataset(data: &Dataset, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header: Vec<String> = (0..data.x.rows()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (j, label) in data.labels.iter().enumerate() {
        let mut row: Vec<String> = data.x.col(j).iter().map(|v| v.to_string()).collect();
        row.push(label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Mean softmax cross-entropy.
    Loss,
    Accuracy,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }

    pub fn evaluate(self, model: &Model, data: &Dataset) -> Result<f64, BoxError> {
        let logits = model.forward(&Tensor::Matrix(data.x.clone()))?.into_matrix()?;
        Ok(match self {
            Metric::Loss => softmax_cross_entropy(&logits, &data.labels)?.0,
            Metric::Accuracy => accuracy(&logits, &data.labels)?,
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "loss" => Ok(Metric::Loss),
            "accuracy" => Ok(Metric::Accuracy),
            _ => Err(format!("unknown metric {s:?}; expected loss or accuracy")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Loss => "loss",
            Metric::Accuracy => "accuracy",
        })
    }
}

/// Quantity the tuner minimizes among configurations meeting the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Stored coefficients of the whole model.
    Params,
    /// Mean forward time over the data in milliseconds.
    Latency,
}

impl Objective {
    pub fn evaluate(self, model: &Model, data: &Dataset) -> Result<f64, BoxError> {
        match self {
            Objective::Params => Ok(model.param_count().total_stored as f64),
            Objective::Latency => {
                let input = Tensor::Matrix(data.x.clone());
                Ok(time_op(|| model.forward(&input), 5, 1)?.mean_ms)
            }
        }
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "params" => Ok(Objective::Params),
            "latency" => Ok(Objective::Latency),
            _ => Err(format!("unknown objective {s:?}; expected params or latency")),
        }
    }
}

/// Either a fixed threshold or a tolerance around the dense model's score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    Threshold(f64),
    Tolerance(f64),
}

#[derive(Clone, Debug)]
pub struct TuneJob {
    pub model: PathBuf,
    pub data: PathBuf,
    pub selectors: Vec<LayerSelector>,
    pub params: ParamSpace,
    pub constraint: Constraint,
    pub metric: Metric,
    pub higher_is_better: bool,
    pub objective: Objective,
    pub n_trials: Option<usize>,
    pub seed: u64,
    pub joint: bool,
    pub copy_weights: bool,
    pub threads: usize,
}

#[derive(Debug)]
pub struct TuneOutcome {
    pub report: TuneReport,
    pub model: Model,
    /// Dense model's score on the data.
    pub baseline: f64,
    pub threshold: f64,
}

pub fn run_tune(job: &TuneJob) -> anyhow::Result<TuneOutcome> {
    let model = Model::load(&job.model)?;
    let data = read_dataset(&job.data)?;
    let baseline = job.metric.evaluate(&model, &data).map_err(|e| anyhow::anyhow!("evaluating the input model: {e}"))?;
    let threshold = match job.constraint {
        Constraint::Threshold(t) => t,
        Constraint::Tolerance(t) if job.higher_is_better => baseline - t,
        Constraint::Tolerance(t) => baseline + t,
    };
    let configs: Vec<LayerConfig> = job
        .selectors
        .iter()
        .map(|s| LayerConfig {
            selector: s.clone(),
            params: job.params.clone(),
            separate: !job.joint,
            copy_weights: job.copy_weights,
        })
        .collect();
    let settings = TuneSettings {
        threshold,
        higher_is_better: job.higher_is_better,
        minimize_objective: true,
        algorithm: match job.n_trials {
            Some(n_trials) => SearchAlgorithm::Random { n_trials, seed: job.seed },
            None => SearchAlgorithm::Grid,
        },
        master_seed: job.seed,
    };
    let acc = |m: &Model| job.metric.evaluate(m, &data);
    let obj = |m: &Model| job.objective.evaluate(m, &data);
    let report = if job.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(job.threads)
            .build()?
            .install(|| tuner::tune_parallel(&model, &configs, &settings, acc, obj))?
    } else {
        tuner::tune(&model, &configs, &settings, acc, obj)?
    };
    Ok(TuneOutcome {
        report,
        model,
        baseline,
        threshold,
    })
}

/// One row per replaced layer of each trial.
pub fn write_report(report: &TuneReport, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(REPORT_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in &report.trials {
        let tail = [
            opt(t.accuracy),
            opt(t.objective),
            t.satisfied.to_string(),
            t.total_stored.to_string(),
            crate::record::significant(t.wall_ms, 6),
        ];
        let choices: Vec<[String; 3]> = if t.assignment.is_empty() {
            vec![Default::default()]
        } else {
            t.assignment
                .choices
                .iter()
                .map(|c| [c.layer.clone(), c.num_terms.to_string(), c.low_rank.to_string()])
                .collect()
        };
        for [layer, l, k] in choices {
            let mut row = vec![t.trial_index.to_string(), layer, l, k];
            row.extend(tail.iter().cloned());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
