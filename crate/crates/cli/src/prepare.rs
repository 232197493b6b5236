use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use lambdarec::data::{
    binarize, carve_validation, filter_min_relevant, load_interactions, sample_negatives, split, write_partitions,
    HeaderMode, Schema, SplitMode, SplitSpec,
};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// 80/20 train/test holdout with sampled negatives at a fixed ratio;
    /// validation is carved from training.
    #[value(alias = "holdout")]
    Ch2,
    /// Train/validation/test thirds with fixed-size evaluation lists.
    #[value(alias = "thirds")]
    Ch4,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Delimited interaction file: user, item, rating.
    pub input: PathBuf,
    /// Output directory for partition files and manifests.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "ch2")]
    pub mode: Protocol,
    /// Sampled negatives per positive (holdout mode).
    #[arg(long, default_value_t = 1.0)]
    pub nsr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ratings at or above this are relevant.
    #[arg(long, default_value_t = 4.0)]
    pub threshold: f64,
    /// Treat every row as a relevant interaction and ignore the rating column.
    #[arg(long)]
    pub unary: bool,
    /// Share of each user's training records moved to validation (holdout mode); 0 disables.
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Minimum relevant items per partition (thirds mode); partitions are sized in proportion.
    #[arg(long, default_value_t = 5)]
    pub min_per_partition: usize,
    /// Candidate list length of validation and test users (thirds mode).
    #[arg(long, default_value_t = 500)]
    pub eval_total: usize,
    /// Relevant items kept per user before splitting (thirds mode); 0 keeps all.
    #[arg(long, default_value_t = 200)]
    pub cap: usize,
    /// Training negatives per positive (thirds mode).
    #[arg(long, default_value_t = 4)]
    pub train_negatives: usize,
    /// Drop users with too few relevant items instead of failing.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub filter: bool,
}

impl PrepareArgs {
    fn spec(&self) -> SplitSpec {
        match self.mode {
            Protocol::Ch2 => SplitSpec::holdout(self.nsr, self.seed),
            Protocol::Ch4 => SplitSpec {
                mode: SplitMode::ThreeWay {
                    minimums: [self.min_per_partition; 3],
                    train_negatives_per_positive: self.train_negatives,
                    eval_candidate_total: self.eval_total,
                    relevant_cap: (self.cap > 0).then_some(self.cap),
                },
                seed: self.seed,
            },
        }
    }
}

pub fn run(args: PrepareArgs) -> Result<()> {
    let schema = Schema {
        header: HeaderMode::Auto,
        rating_column: if args.unary { None } else { Some(2) },
        ..Schema::default()
    };
    let raw = load_interactions(&args.input, &schema).with_context(|| format!("loading {}", args.input.display()))?;
    let spec = args.spec();
    spec.validate()?;
    let mut set = binarize(&raw, if args.unary { 1.0 } else { args.threshold });
    if args.filter {
        let before = set.num_users();
        set = filter_min_relevant(&set, spec.min_user_relevant())?;
        log::info!(
            "kept {} of {before} users with at least {} relevant items",
            set.num_users(),
            spec.min_user_relevant()
        );
    }
    let mut parts = sample_negatives(&split(&set, &spec)?, &spec)?;
    if args.mode == Protocol::Ch2 && args.validation_fraction > 0.0 {
        parts = carve_validation(&parts, args.validation_fraction, args.seed)?;
    }
    let manifest = write_partitions(&args.out, &parts)?;
    let params = args.out.join("prepare.json");
    std::fs::write(&params, serde_json::to_vec_pretty(&args)?).with_context(|| format!("writing {}", params.display()))?;
    println!(
        "{} users, {} items; train {}+/{}-, validation {}+/{}-, test {}+/{}-",
        manifest.num_users,
        manifest.num_items,
        manifest.train.positives,
        manifest.train.negatives,
        manifest.validation.positives,
        manifest.validation.negatives,
        manifest.test.positives,
        manifest.test.negatives,
    );
    Ok(())
}
