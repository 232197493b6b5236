//! Epoch loops for metric-driven and cost-sensitive training.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PartitionedData;
use crate::error::{Error, Result};
use crate::listwise::{listwise_loss_and_grad, ListwiseLoss};
use crate::metrics::{MetricSpec, RankedJudgments};
use crate::model::{bce_loss_and_grad, FactorModel, Gradients, Optimizer, TrainConfig};
use crate::pairwise::{sigmoid, softplus, user_lambdas, NrbpDelta};
use crate::report::{evaluate, mean};
use crate::seed::{stage_rng, Stage};

/// What is minimized during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "paradigm", rename_all = "kebab-case")]
pub enum LossSpec {
    /// λ-gradients over every relevant/irrelevant training pair.
    Pairwise {
        metric: MetricSpec,
        #[serde(default)]
        nrbp_delta: NrbpDelta,
    },
    /// Smoothed-rank surrogate of a metric.
    Listwise {
        loss: ListwiseLoss,
        #[serde(default = "unit")]
        temperature: f64,
    },
    /// Per-user mean binary cross-entropy.
    Bce,
}

fn unit() -> f64 {
    1.0
}

const DEFAULT_PAIRWISE_PERSISTENCE: f64 = 0.9;

impl LossSpec {
    pub fn pairwise(metric: MetricSpec) -> Self {
        LossSpec::Pairwise {
            metric,
            nrbp_delta: NrbpDelta::default(),
        }
    }

    pub fn listwise(loss: ListwiseLoss) -> Self {
        LossSpec::Listwise {
            loss,
            temperature: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Pairwise { metric, .. } if !metric.is_ranking() => {
                Err(Error::Config(format!("{metric} cannot drive λ-gradients")))
            }
            LossSpec::Listwise { temperature, .. } if !(temperature.is_finite() && temperature > 0.0) => {
                Err(Error::Config(format!("temperature {temperature} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Pairwise { metric, .. } => write!(f, "{metric}-pairwise"),
            LossSpec::Listwise { loss, .. } => write!(f, "{loss}-listwise"),
            LossSpec::Bce => f.write_str("bce"),
        }
    }
}

/// Accepts `bce`, `<loss>-listwise` and `<metric>-pairwise`, where a
/// pairwise RBP metric without a persistence uses p = 0.9.
impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "bce" {
            return Ok(LossSpec::Bce);
        }
        let (head, paradigm) = s
            .rsplit_once('-')
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?}")))?;
        match paradigm {
            "listwise" => Ok(LossSpec::listwise(head.parse()?)),
            "pairwise" => {
                let metric = match head {
                    "nrbp" => MetricSpec::nrbp(DEFAULT_PAIRWISE_PERSISTENCE)?,
                    "rbp" => MetricSpec::rbp(DEFAULT_PAIRWISE_PERSISTENCE)?,
                    other => other.parse()?,
                };
                let spec = LossSpec::pairwise(metric);
                spec.validate()?;
                Ok(spec)
            }
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

/// Which held-out partition drives per-epoch tracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationSource {
    #[default]
    Validation,
    /// Tracks the test partition; only for replicating select-on-test runs.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    /// Metrics recorded after every epoch; each gets its own best snapshot.
    pub tracked: Vec<MetricSpec>,
    #[serde(default)]
    pub source: ValidationSource,
    /// Stop after this many epochs without improving the first tracked metric.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Compute per-user gradients of a batch on several threads.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            tracked: vec![MetricSpec::Ndcg],
            source: ValidationSource::Validation,
            patience: None,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub loss: f64,
    /// Mean per-user value of each tracked metric, in `TrainHistory::tracked` order.
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub tracked: Vec<MetricSpec>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn values(&self, target: MetricSpec) -> Option<Vec<f64>> {
        let k = self.tracked.iter().position(|&m| m == target)?;
        Some(self.epochs.iter().map(|e| e.metrics[k]).collect())
    }
}

/// Index of the best value; the earliest wins ties.
pub fn best_index(values: &[f64], higher_is_better: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in values.iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher_is_better {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

pub fn select_best_epoch(history: &TrainHistory, target: MetricSpec) -> Result<usize> {
    let values = history
        .values(target)
        .ok_or_else(|| Error::Config(format!("{target} was not tracked during training")))?;
    best_index(&values, target.higher_is_better())
        .ok_or_else(|| Error::InvalidInput("empty training history".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestEpoch {
    pub metric: MetricSpec,
    pub epoch: usize,
    pub value: f64,
    pub model: FactorModel,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch run.
    pub model: FactorModel,
    pub history: TrainHistory,
    /// One snapshot per tracked metric, in tracking order.
    pub best: Vec<BestEpoch>,
}

impl TrainOutcome {
    pub fn best_for(&self, metric: MetricSpec) -> Option<&BestEpoch> {
        self.best.iter().find(|b| b.metric == metric)
    }
}

struct UserData {
    user: usize,
    items: Vec<usize>,
    labels: Vec<u8>,
    weight: f64,
}

fn user_objective(loss: &LossSpec, model: &FactorModel, data: &UserData) -> Result<(f64, Vec<f64>)> {
    let scores = model.predict(data.user, &data.items)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore { user: data.user });
    }
    match *loss {
        LossSpec::Pairwise { metric, nrbp_delta } => {
            let l = user_lambdas(metric, &data.labels, &scores, nrbp_delta)?;
            Ok((l.weighted_cost, l.lambdas.into_iter().map(|v| -v).collect()))
        }
        LossSpec::Listwise { loss, temperature } => {
            let judged = RankedJudgments::new(&data.labels, &scores)?;
            listwise_loss_and_grad(loss, &judged, temperature)
        }
        LossSpec::Bce => bce_loss_and_grad(&scores, &data.labels),
    }
}

fn divergence(epoch: usize, err: Error) -> Error {
    match err {
        Error::Divergence { reason, .. } => Error::Divergence { epoch, reason },
        Error::NonFiniteScore { user } => Error::Divergence {
            epoch,
            reason: format!("non-finite score for user {user}"),
        },
        other => other,
    }
}

fn check_weights(weights: Option<&[f64]>, users: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != users {
            return Err(Error::Config(format!("{} weights for {users} users", w.len())));
        }
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!("invalid user weight {bad}")));
        }
    }
    Ok(())
}

struct Tracker {
    best: Vec<BestEpoch>,
    since_improvement: usize,
}

impl Tracker {
    fn observe(&mut self, epoch: usize, metrics: &[f64], model: &FactorModel) {
        for (k, b) in self.best.iter_mut().enumerate() {
            let v = metrics[k];
            let better = if b.metric.higher_is_better() {
                v > b.value
            } else {
                v < b.value
            };
            if epoch == 0 || better {
                b.epoch = epoch;
                b.value = v;
                b.model = model.clone();
                if k == 0 {
                    self.since_improvement = 0;
                }
            } else if k == 0 {
                self.since_improvement += 1;
            }
        }
    }
}

/// Trains `model` on the training partition. Per-user losses are scaled by
/// `weights[u]` when given (one weight per user, mean one by convention).
///
/// Ranking losses iterate users in a freshly shuffled order each epoch,
/// `config.batch_size` users per update. BCE iterates shuffled interactions
/// in batches of `config.batch_size`, each interaction weighted by
/// `ω(u) / n_u` so that every user's loss is a mean. Within a batch all
/// gradients are taken at the parameters from the start of the batch, so the
/// parallel mode produces the same result as the sequential one.
pub fn train_ranking(
    model: FactorModel,
    parts: &PartitionedData,
    loss: &LossSpec,
    config: &TrainConfig,
    weights: Option<&[f64]>,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    loss.validate()?;
    if !parts.negatives_sampled {
        return Err(Error::Config("negatives must be sampled before training".into()));
    }
    if model.num_users != parts.num_users() || model.num_items != parts.num_items() {
        return Err(Error::Config(format!(
            "model is {}x{} but data is {}x{}",
            model.num_users,
            model.num_items,
            parts.num_users(),
            parts.num_items()
        )));
    }
    check_weights(weights, parts.num_users())?;
    let held_out = match options.source {
        ValidationSource::Validation => &parts.validation,
        ValidationSource::Test => &parts.test,
    };
    if !options.tracked.is_empty() && held_out.is_empty() {
        return Err(Error::Config(
            "tracking needs a non-empty validation partition; carve one or track on test".into(),
        ));
    }

    let weight_of = |u: usize| weights.map_or(1.0, |w| w[u]);
    let users: Vec<UserData> = parts
        .train
        .active_users()
        .into_iter()
        .filter(|&u| parts.train.positives(u) > 0 || matches!(loss, LossSpec::Bce))
        .map(|u| {
            let (items, labels) = parts.train.candidates(u);
            UserData {
                user: u,
                items,
                labels,
                weight: weight_of(u),
            }
        })
        .collect();
    if users.is_empty() {
        return Err(Error::EmptyDataset("no training users"));
    }

    let started = Instant::now();
    let mut model = model;
    let mut optimizer = Optimizer::new(&model, config);
    let mut rng = stage_rng(config.seed, Stage::Shuffle);
    let mut history = TrainHistory {
        tracked: options.tracked.clone(),
        epochs: Vec::with_capacity(config.epochs),
    };
    let mut tracker = Tracker {
        best: options
            .tracked
            .iter()
            .map(|&metric| BestEpoch {
                metric,
                epoch: 0,
                value: f64::NAN,
                model: model.clone(),
            })
            .collect(),
        since_improvement: 0,
    };

    let mut order: Vec<usize> = (0..users.len()).collect();
    let mut rows: Vec<(usize, usize)> = users
        .iter()
        .enumerate()
        .flat_map(|(k, d)| (0..d.items.len()).map(move |pos| (k, pos)))
        .collect();

    for epoch in 0..config.epochs {
        let epoch_loss = match loss {
            LossSpec::Bce => {
                rows.shuffle(&mut rng);
                bce_epoch(&mut model, &mut optimizer, &users, &rows, config.batch_size)
            }
            _ => {
                order.shuffle(&mut rng);
                ranking_epoch(&mut model, &mut optimizer, loss, &users, &order, config.batch_size, options.parallel)
            }
        }
        .map_err(|e| divergence(epoch, e))?;
        if !epoch_loss.is_finite() || !model.all_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: format!("training loss is {epoch_loss} or a parameter is not finite"),
            });
        }

        let metrics = if options.tracked.is_empty() {
            Vec::new()
        } else {
            evaluate(&model, held_out, &options.tracked, options.parallel)
                .map_err(|e| divergence(epoch, e))?
                .iter()
                .map(|per_user| mean(per_user.values().copied()).unwrap_or(f64::NAN))
                .collect()
        };
        tracker.observe(epoch, &metrics, &model);
        log::debug!("epoch {epoch}: loss {epoch_loss:.6} {metrics:?}");
        history.epochs.push(EpochRecord {
            loss: epoch_loss,
            metrics,
        });
        if let Some(patience) = options.patience {
            if !options.tracked.is_empty() && tracker.since_improvement >= patience {
                log::info!("stopping after epoch {epoch}: no improvement for {patience} epochs");
                break;
            }
        }
    }
    log::info!(
        "{} epochs of {loss} in {:.1}s",
        history.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(TrainOutcome {
        model,
        history,
        best: tracker.best,
    })
}

fn ranking_epoch(
    model: &mut FactorModel,
    optimizer: &mut Optimizer,
    loss: &LossSpec,
    users: &[UserData],
    order: &[usize],
    batch_size: usize,
    parallel: bool,
) -> Result<f64> {
    let averaged = match loss {
        LossSpec::Listwise { loss, .. } => loss.averaged_over_users(),
        _ => true,
    };
    let mut total = 0.0;
    for batch in order.chunks(batch_size) {
        let scale = if averaged { 1.0 / batch.len() as f64 } else { 1.0 };
        let snapshot: &FactorModel = model;
        let one = |&k: &usize| -> Result<(f64, Gradients)> {
            let data = &users[k];
            let (value, grad) = user_objective(loss, snapshot, data)?;
            let mut g = Gradients::new();
            g.add_scores(snapshot, data.user, &data.items, &grad, data.weight * scale);
            Ok((data.weight * value, g))
        };
        let parts: Vec<(f64, Gradients)> = if parallel && batch.len() > 1 {
            batch.par_iter().map(one).collect::<Result<_>>()?
        } else {
            batch.iter().map(one).collect::<Result<_>>()?
        };
        let mut grads = Gradients::new();
        for (value, g) in parts {
            total += value;
            grads.merge(g);
        }
        optimizer.step(model, &grads)?;
    }
    Ok(total)
}

fn bce_epoch(
    model: &mut FactorModel,
    optimizer: &mut Optimizer,
    users: &[UserData],
    rows: &[(usize, usize)],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for batch in rows.chunks(batch_size) {
        let mut grads = Gradients::new();
        for &(k, pos) in batch {
            let data = &users[k];
            let item = data.items[pos];
            let y = data.labels[pos];
            let f = model.score(data.user, item);
            let share = data.weight / data.items.len() as f64;
            total += share * if y == 1 { softplus(-f) } else { softplus(f) };
            grads.add_scores(model, data.user, &[item], &[sigmoid(f) - f64::from(y)], share);
        }
        optimizer.step(model, &grads)?;
    }
    Ok(total)
}

/// Everything needed to replay a run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub loss: LossSpec,
    pub config: TrainConfig,
    pub options: TrainOptions,
    /// Contrast and mainstreamness definition when the run was weighted.
    pub weighting: Option<serde_json::Value>,
    pub wall_time_secs: f64,
    pub history: TrainHistory,
    pub best_epochs: Vec<(MetricSpec, usize, f64)>,
}

impl RunManifest {
    pub const VERSION: u32 = 1;

    pub fn new(
        loss: LossSpec,
        config: TrainConfig,
        options: TrainOptions,
        outcome: &TrainOutcome,
        wall_time_secs: f64,
    ) -> Self {
        RunManifest {
            format_version: Self::VERSION,
            loss,
            config,
            options,
            weighting: None,
            wall_time_secs,
            history: outcome.history.clone(),
            best_epochs: outcome
                .best
                .iter()
                .map(|b| (b.metric, b.epoch, b.value))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.format_version != Self::VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported run manifest version {}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}
