use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;

use super::{auto_search_space, match_layers, sketch_layer, LayerConfig, ParamSpace, SearchAlgorithm};
use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::rng::{derive_seed, SeededRng};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Joint grids larger than this are sampled instead of enumerated.
pub const JOINT_GRID_LIMIT: usize = 10_000;
pub const JOINT_FALLBACK_SAMPLES: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TuneSettings {
    pub threshold: f64,
    pub higher_is_better: bool,
    pub minimize_objective: bool,
    pub algorithm: SearchAlgorithm,
    /// Source of every sketch seed drawn by the trials.
    pub master_seed: u64,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            higher_is_better: true,
            minimize_objective: true,
            algorithm: SearchAlgorithm::Grid,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerChoice {
    pub layer: String,
    pub num_terms: usize,
    pub low_rank: usize,
    pub seed: u64,
}

/// Layers to replace, in model order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pub choices: Vec<LayerChoice>,
}

impl Assignment {
    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub assignment: Assignment,
    pub copy_weights: bool,
    /// `None` when building or evaluating the candidate failed.
    pub accuracy: Option<f64>,
    pub objective: Option<f64>,
    pub satisfied: bool,
    /// Stored coefficients of the whole candidate model.
    pub total_stored: u64,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneReport {
    pub trials: Vec<TrialResult>,
    /// Layers skipped as unsketchable and similar notes.
    pub warnings: Vec<String>,
    pub minimize_objective: bool,
}

impl TuneReport {
    pub fn best(&self) -> Result<&TrialResult> {
        best_trial(&self.trials, self.minimize_objective)
    }

    pub fn best_params(&self) -> Result<Assignment> {
        best_params(&self.trials, self.minimize_objective)
    }
}

struct Plan {
    assignment: Assignment,
    copy_weights: bool,
}

struct LayerSpace {
    name: String,
    index: usize,
    points: Vec<(usize, usize)>,
}

fn layer_spaces(model: &Model, config: &LayerConfig, warnings: &mut Vec<String>) -> Result<Vec<LayerSpace>> {
    let mut out = Vec::new();
    for name in match_layers(model, &config.selector)? {
        let index = model.index_of(&name).expect("matched names exist");
        let layer = &model.layers()[index].layer;
        let Some((d_in, d_out)) = layer.sketch_dims() else {
            warnings.push(format!("{name}: {} layers cannot be sketched; skipped", layer.kind()));
            continue;
        };
        let points = match &config.params {
            ParamSpace::Auto => auto_search_space(d_in, d_out),
            ParamSpace::Explicit(p) => {
                if let Some(bad) = p.iter().find(|&&(l, k)| l == 0 || k == 0) {
                    return Err(Error::Parameter(format!("candidate {bad:?} needs l >= 1 and k >= 1")));
                }
                p.clone()
            }
        };
        if points.is_empty() {
            warnings.push(format!(
                "{name}: unsketchable, no candidate is smaller than the dense {d_in}x{d_out} layer; skipped"
            ));
            continue;
        }
        out.push(LayerSpace { name, index, points });
    }
    Ok(out)
}

fn choice(space: &LayerSpace, point: (usize, usize)) -> LayerChoice {
    LayerChoice {
        layer: space.name.clone(),
        num_terms: point.0,
        low_rank: point.1,
        seed: space.index as u64,
    }
}

fn sample_joint(spaces: &[LayerSpace], n: usize, rng: &mut SeededRng) -> Vec<Assignment> {
    (0..n)
        .map(|_| Assignment {
            choices: spaces.iter().map(|s| choice(s, s.points[rng.index(s.points.len())])).collect(),
        })
        .collect()
}

fn make_plans(model: &Model, configs: &[LayerConfig], settings: &TuneSettings) -> Result<(Vec<Plan>, Vec<String>)> {
    let mut warnings = Vec::new();
    // Resolve every selector up front so selection errors precede any trial.
    let spaces = configs
        .iter()
        .map(|c| layer_spaces(model, c, &mut warnings))
        .collect::<Result<Vec<_>>>()?;
    let mut random = match settings.algorithm {
        SearchAlgorithm::Random { seed, .. } => Some(SeededRng::new(seed)),
        SearchAlgorithm::Grid => None,
    };
    let mut plans = Vec::new();
    for (ci, (config, spaces)) in configs.iter().zip(&spaces).enumerate() {
        let mut push = |a: Assignment| {
            plans.push(Plan {
                assignment: a,
                copy_weights: config.copy_weights,
            })
        };
        if spaces.is_empty() {
            continue;
        }
        match (&settings.algorithm, config.separate) {
            (SearchAlgorithm::Grid, true) => {
                for s in spaces {
                    s.points.iter().for_each(|&p| push(Assignment { choices: vec![choice(s, p)] }));
                }
            }
            (SearchAlgorithm::Random { n_trials, .. }, true) => {
                let rng = random.as_mut().expect("random search has a generator");
                for s in spaces {
                    for _ in 0..*n_trials {
                        push(Assignment {
                            choices: vec![choice(s, s.points[rng.index(s.points.len())])],
                        });
                    }
                }
            }
            (SearchAlgorithm::Random { n_trials, .. }, false) => {
                let rng = random.as_mut().expect("random search has a generator");
                sample_joint(spaces, *n_trials, rng).into_iter().for_each(&mut push);
            }
            (SearchAlgorithm::Grid, false) => {
                let total = spaces
                    .iter()
                    .try_fold(1usize, |acc, s| acc.checked_mul(s.points.len()))
                    .unwrap_or(usize::MAX);
                if total > JOINT_GRID_LIMIT {
                    warnings.push(format!(
                        "joint grid for {} has {total} points; sampling {JOINT_FALLBACK_SAMPLES} at random",
                        config.selector
                    ));
                    let mut rng = SeededRng::new(derive_seed(settings.master_seed, ci as u64));
                    sample_joint(spaces, JOINT_FALLBACK_SAMPLES, &mut rng)
                        .into_iter()
                        .for_each(&mut push);
                } else {
                    let mut idx = vec![0usize; spaces.len()];
                    'grid: loop {
                        push(Assignment {
                            choices: spaces.iter().zip(&idx).map(|(s, &i)| choice(s, s.points[i])).collect(),
                        });
                        // Odometer increment, last layer fastest.
                        for d in (0..idx.len()).rev() {
                            idx[d] += 1;
                            if idx[d] < spaces[d].points.len() {
                                continue 'grid;
                            }
                            idx[d] = 0;
                        }
                        break;
                    }
                }
            }
        }
    }
    // Sketch seeds depend on (master seed, trial index, layer position) only.
    for (t, plan) in plans.iter_mut().enumerate() {
        let trial_seed = derive_seed(settings.master_seed, t as u64);
        for c in &mut plan.assignment.choices {
            c.seed = derive_seed(trial_seed, c.seed);
        }
    }
    Ok((plans, warnings))
}

fn run_trial<A, O>(model: &Model, plan: &Plan, index: usize, settings: &TuneSettings, accuracy_eval: &A, objective_eval: &O) -> TrialResult
where
    A: Fn(&Model) -> Result<f64, BoxError>,
    O: Fn(&Model) -> Result<f64, BoxError>,
{
    let start = Instant::now();
    let mut result = TrialResult {
        trial_index: index,
        assignment: plan.assignment.clone(),
        copy_weights: plan.copy_weights,
        accuracy: None,
        objective: None,
        satisfied: false,
        total_stored: 0,
        wall_ms: 0.0,
        error: None,
    };
    let outcome = apply_best_params(model, &plan.assignment, plan.copy_weights)
        .map_err(|e| e.to_string())
        .and_then(|candidate| {
            result.total_stored = candidate.param_count().total_stored;
            let acc = accuracy_eval(&candidate).map_err(|e| format!("accuracy evaluation failed: {e}"))?;
            let obj = objective_eval(&candidate).map_err(|e| format!("objective evaluation failed: {e}"))?;
            Ok((acc, obj))
        });
    match outcome {
        Ok((acc, obj)) => {
            result.accuracy = Some(acc);
            result.objective = Some(obj);
            result.satisfied = if settings.higher_is_better {
                acc >= settings.threshold
            } else {
                acc <= settings.threshold
            };
        }
        Err(e) => result.error = Some(e),
    }
    result.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    result
}

/// Runs every trial sequentially in trial order. The input model is never
/// modified; each trial evaluates a fresh candidate copy.
pub fn tune<A, O>(model: &Model, configs: &[LayerConfig], settings: &TuneSettings, accuracy_eval: A, objective_eval: O) -> Result<TuneReport>
where
    A: Fn(&Model) -> Result<f64, BoxError>,
    O: Fn(&Model) -> Result<f64, BoxError>,
{
    let (plans, warnings) = make_plans(model, configs, settings)?;
    let trials = plans
        .iter()
        .enumerate()
        .map(|(i, p)| run_trial(model, p, i, settings, &accuracy_eval, &objective_eval))
        .collect();
    Ok(TuneReport {
        trials,
        warnings,
        minimize_objective: settings.minimize_objective,
    })
}

/// [`tune`] with trials evaluated concurrently; requires thread-safe callbacks.
/// Results are identical to the sequential run apart from `wall_ms`.
pub fn tune_parallel<A, O>(
    model: &Model,
    configs: &[LayerConfig],
    settings: &TuneSettings,
    accuracy_eval: A,
    objective_eval: O,
) -> Result<TuneReport>
where
    A: Fn(&Model) -> Result<f64, BoxError> + Sync,
    O: Fn(&Model) -> Result<f64, BoxError> + Sync,
{
    let (plans, warnings) = make_plans(model, configs, settings)?;
    let trials = plans
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_trial(model, p, i, settings, &accuracy_eval, &objective_eval))
        .collect();
    Ok(TuneReport {
        trials,
        warnings,
        minimize_objective: settings.minimize_objective,
    })
}

/// Best satisfied trial: by objective, then fewer stored coefficients, then
/// earlier trial.
pub fn best_trial(results: &[TrialResult], minimize_objective: bool) -> Result<&TrialResult> {
    results
        .iter()
        .filter(|t| t.satisfied && t.objective.is_some_and(|o| !o.is_nan()))
        .min_by(|a, b| {
            let (oa, ob) = (a.objective.unwrap_or_default(), b.objective.unwrap_or_default());
            let by_obj = if minimize_objective { oa.total_cmp(&ob) } else { ob.total_cmp(&oa) };
            by_obj
                .then(a.total_stored.cmp(&b.total_stored))
                .then(a.trial_index.cmp(&b.trial_index))
        })
        .ok_or(Error::NoFeasibleConfig)
}

pub fn best_params(results: &[TrialResult], minimize_objective: bool) -> Result<Assignment> {
    best_trial(results, minimize_objective).map(|t| t.assignment.clone())
}

/// New model with each assigned layer replaced by its sketched equivalent,
/// built from the recorded seed. Fails without partial effect when a name
/// is missing or a layer is not a dense linear or convolution layer.
pub fn apply_best_params(model: &Model, assignment: &Assignment, copy_weights: bool) -> Result<Model> {
    let mut out = model.clone();
    for c in &assignment.choices {
        let layer = model
            .get(&c.layer)
            .ok_or_else(|| Error::Application(format!("no layer named {:?}", c.layer)))?;
        let sketched = sketch_layer(layer, c.num_terms, c.low_rank, c.seed, copy_weights)
            .map_err(|e| Error::Application(format!("{}: {e}", c.layer)))?;
        out.replace(&c.layer, sketched)?;
    }
    Ok(out)
}

/// Total order used by [`best_trial`], exposed for report sorting.
pub fn compare_trials(a: &TrialResult, b: &TrialResult, minimize_objective: bool) -> Ordering {
    let key = |t: &TrialResult| t.objective.unwrap_or(f64::NAN);
    let by_obj = if minimize_objective {
        key(a).total_cmp(&key(b))
    } else {
        key(b).total_cmp(&key(a))
    };
    by_obj.then(a.total_stored.cmp(&b.total_stored)).then(a.trial_index.cmp(&b.trial_index))
}
