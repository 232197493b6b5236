use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use lambdarec::data::{read_partitions, PartitionedData};
use lambdarec::mainstream::{
    cost_weights, dis_scores, export_user_values, sim_scores, util_scores, CostProfile, Definition,
};
use lambdarec::metrics::MetricSpec;
use lambdarec::model::{init_model, FactorModel, OptimizerKind, TrainConfig, Variant};
use lambdarec::report::per_user_eval;
use lambdarec::trainer::{train_ranking, LossSpec, RunManifest, TrainOptions, TrainOutcome, ValidationSource};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Mf,
    Fm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsArg {
    Sim,
    Dis,
    Util,
}

impl From<WeightsArg> for Definition {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Sim => Definition::Sim,
            WeightsArg::Dis => Definition::Dis,
            WeightsArg::Util => Definition::Util,
        }
    }
}

/// Every training knob; the same keys are accepted in a JSON config file.
/// Flags given on the command line override the file.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    /// bce, <ndcg|ap|rr|nrbp>-listwise or <metric>-pairwise, e.g. nrbp@0.9-pairwise.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    #[serde(alias = "lr")]
    pub learning_rate: Option<f64>,
    /// Users per update for ranking losses, rows per update for bce.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long = "dim")]
    #[serde(alias = "dim")]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Weight users by the cost of their mainstreamness.
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    /// Ratio between the largest and smallest user cost.
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Metrics tracked on validation each epoch, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub track: Option<Vec<String>>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Track and select on the test partition instead of validation.
    #[arg(long)]
    #[serde(default)]
    pub select_on_test: bool,
    /// Compute per-user gradients on several threads; results are unchanged.
    #[arg(long)]
    #[serde(default)]
    pub parallel: bool,
}

impl Knobs {
    /// `self` over `base`: any value set here wins.
    fn over(self, base: Knobs) -> Knobs {
        Knobs {
            loss: self.loss.or(base.loss),
            epochs: self.epochs.or(base.epochs),
            learning_rate: self.learning_rate.or(base.learning_rate),
            batch_size: self.batch_size.or(base.batch_size),
            l2: self.l2.or(base.l2),
            latent_dim: self.latent_dim.or(base.latent_dim),
            seed: self.seed.or(base.seed),
            optimizer: self.optimizer.or(base.optimizer),
            variant: self.variant.or(base.variant),
            weights: self.weights.or(base.weights),
            contrast: self.contrast.or(base.contrast),
            track: self.track.or(base.track),
            patience: self.patience.or(base.patience),
            select_on_test: self.select_on_test || base.select_on_test,
            parallel: self.parallel || base.parallel,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint and run manifest.
    #[arg(long, short)]
    pub out: PathBuf,
    /// JSON file with any of the training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint of the unweighted baseline used for util weights. Trained
    /// here with the same settings when absent.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: Knobs,
}

/// Everything a run needs, resolved from file, flags and defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub loss: LossSpec,
    pub config: TrainConfig,
    pub options: TrainOptions,
    pub weighting: Option<(Definition, CostProfile)>,
}

pub fn resolve(knobs: Knobs) -> Result<Resolved> {
    let loss: LossSpec = knobs.loss.as_deref().unwrap_or("nrbp-listwise").parse()?;
    let mut config = match loss {
        LossSpec::Bce => TrainConfig::bce_defaults(),
        _ => TrainConfig::ranking_defaults(),
    };
    if let Some(v) = knobs.epochs {
        config.epochs = v;
    }
    if let Some(v) = knobs.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = knobs.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = knobs.l2 {
        config.l2 = v;
    }
    if let Some(v) = knobs.latent_dim {
        config.latent_dim = v;
    }
    if let Some(v) = knobs.seed {
        config.seed = v;
    }
    if let Some(v) = knobs.optimizer {
        config.optimizer = match v {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        };
    }
    if let Some(v) = knobs.variant {
        config.variant = match v {
            VariantArg::Mf => Variant::Mf,
            VariantArg::Fm => Variant::Fm,
        };
    }
    config.validate()?;

    let tracked = match knobs.track {
        Some(list) => list.iter().map(|s| s.parse::<MetricSpec>()).collect::<Result<Vec<_>, _>>()?,
        None => TrainOptions::default().tracked,
    };
    let options = TrainOptions {
        tracked,
        source: if knobs.select_on_test {
            ValidationSource::Test
        } else {
            ValidationSource::Validation
        },
        patience: knobs.patience,
        parallel: knobs.parallel,
    };
    let weighting = match (knobs.weights, knobs.contrast) {
        (Some(w), c) => Some((Definition::from(w), CostProfile::new(c.unwrap_or(10.0))?)),
        (None, Some(_)) => bail!("--contrast needs --weights"),
        (None, None) => None,
    };
    Ok(Resolved {
        loss,
        config,
        options,
        weighting,
    })
}

fn read_knobs(path: &Path) -> Result<Knobs> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn fit(parts: &PartitionedData, run: &Resolved, weights: Option<&[f64]>) -> Result<(TrainOutcome, f64)> {
    let start = Instant::now();
    let model = init_model(
        parts.num_users(),
        parts.num_items(),
        run.config.latent_dim,
        run.config.seed,
        run.config.variant,
    )?;
    let outcome = train_ranking(model, parts, &run.loss, &run.config, weights, &run.options)?;
    Ok((outcome, start.elapsed().as_secs_f64()))
}

/// The snapshot to keep: best epoch of the first tracked metric, else the final model.
fn selected(outcome: &TrainOutcome) -> (&FactorModel, Option<(MetricSpec, usize, f64)>) {
    match outcome.best.first() {
        Some(b) => (&b.model, Some((b.metric, b.epoch, b.value))),
        None => (&outcome.model, None),
    }
}

fn save_run(dir: &Path, name: &str, run: &Resolved, outcome: &TrainOutcome, secs: f64, weighting: Option<serde_json::Value>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (model, _) = selected(outcome);
    model.save(dir.join(format!("{name}.json")))?;
    let mut manifest = RunManifest::new(run.loss, run.config.clone(), run.options.clone(), outcome, secs);
    manifest.weighting = weighting;
    manifest.save(dir.join(format!("{name}.run.json")))?;
    Ok(())
}

pub fn run(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => read_knobs(path)?,
        None => Knobs::default(),
    };
    let run = resolve(args.knobs.clone().over(file))?;
    let parts = read_partitions(&args.data).with_context(|| format!("reading partitions in {}", args.data.display()))?;

    let mut weighting_record = None;
    let weights = match run.weighting {
        None => None,
        Some((definition, profile)) => {
            let scores = match definition {
                Definition::Sim => sim_scores(&parts.train)?,
                Definition::Dis => dis_scores(&parts.train)?,
                Definition::Util => {
                    let baseline = match &args.baseline {
                        Some(path) => FactorModel::load(path).with_context(|| format!("loading {}", path.display()))?,
                        None => {
                            log::info!("training the unweighted baseline for util weights");
                            let (outcome, secs) = fit(&parts, &run, None)?;
                            save_run(&args.out, "baseline", &run, &outcome, secs, None)?;
                            selected(&outcome).0.clone()
                        }
                    };
                    let util = per_user_eval(&baseline, &parts.validation, MetricSpec::Ndcg)?;
                    util_scores(&util, parts.num_users())?
                }
            };
            let w = cost_weights(&scores, &profile)?;
            std::fs::create_dir_all(&args.out)?;
            export_user_values(args.out.join("weights.csv"), parts.train.ids(), "weight", &w)?;
            weighting_record = Some(json!({
                "definition": format!("{definition:?}").to_lowercase(),
                "contrast": profile.contrast(),
                "baseline": args.baseline.as_ref().map(|p| p.display().to_string()),
            }));
            Some(w)
        }
    };

    let (outcome, secs) = fit(&parts, &run, weights.as_deref())?;
    save_run(&args.out, "model", &run, &outcome, secs, weighting_record)?;
    match selected(&outcome).1 {
        Some((metric, epoch, value)) => println!(
            "{}: {} epochs in {secs:.1}s, best {metric} {value:.5} at epoch {}",
            run.loss,
            outcome.history.len(),
            epoch + 1
        ),
        None => println!("{}: {} epochs in {secs:.1}s", run.loss, outcome.history.len()),
    }
    Ok(())
}
