//! Seeded synthetic populations with known structure, for sanity runs and
//! directional experiments.

use std::ops::{Range, RangeInclusive};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, IdMap, InteractionSet, SplitMode, SplitSpec};
use crate::error::{Error, Result};
use crate::seed::{stage_rng, Stage};

/// A group of users sharing a preferred block of items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub users: usize,
    pub block: Range<usize>,
    /// Relevant items per user, drawn uniformly from this range.
    pub positives: RangeInclusive<usize>,
    /// Per-user probability that a relevant item comes from anywhere in the
    /// catalogue instead of the block, drawn uniformly from this range.
    pub off_block: RangeInclusive<f64>,
    /// Popularity exponent inside the block: item k of the block has weight
    /// `(k + 1)^-skew`. Zero means uniform.
    pub skew: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub num_items: usize,
    pub clusters: Vec<Cluster>,
}

impl Population {
    /// Two clusters of 20 users over 60 items, each user holding 20 relevant
    /// items inside its cluster's half of the catalogue.
    pub fn planted_blocks() -> Self {
        let half = |block| Cluster {
            users: 20,
            block,
            positives: 20..=20,
            off_block: 0.0..=0.0,
            skew: 0.0,
        };
        Population {
            num_items: 60,
            clusters: vec![half(0..30), half(30..60)],
        }
    }

    /// 80% of users in a mainstream cluster concentrated on popular items,
    /// 20% in a niche cluster with its own block, fewer and noisier
    /// interactions, and 60 items nobody prefers.
    pub fn bimodal(users: usize) -> Self {
        let niche = users / 5;
        Population {
            num_items: 240,
            clusters: vec![
                Cluster {
                    users: users - niche,
                    block: 0..120,
                    positives: 30..=45,
                    off_block: 0.0..=0.1,
                    skew: 0.8,
                },
                Cluster {
                    users: niche,
                    block: 120..180,
                    positives: 15..=20,
                    off_block: 0.0..=0.2,
                    skew: 0.0,
                },
            ],
        }
    }

    /// Four taste clusters whose users range widely in activity and in how
    /// consistent their taste is.
    pub fn varied_activity(users: usize) -> Self {
        let per = users / 4;
        let cluster = |k: usize| Cluster {
            users: if k == 3 { users - 3 * per } else { per },
            block: k * 50..(k + 1) * 50,
            positives: 3..=45,
            off_block: 0.0..=0.6,
            skew: 0.3,
        };
        Population {
            num_items: 200,
            clusters: (0..4).map(cluster).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for c in &self.clusters {
            let block = c.block.end.saturating_sub(c.block.start);
            if c.block.end > self.num_items || block == 0 {
                return Err(Error::Config(format!("block {:?} outside {} items", c.block, self.num_items)));
            }
            if *c.positives.end() > block || c.positives.is_empty() {
                return Err(Error::Config(format!(
                    "{:?} positives do not fit a block of {block}",
                    c.positives
                )));
            }
            let (lo, hi) = (*c.off_block.start(), *c.off_block.end());
            if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return Err(Error::Config(format!("off-block range {lo}..={hi}")));
            }
            if !(c.skew.is_finite() && c.skew >= 0.0) {
                return Err(Error::Config(format!("skew {}", c.skew)));
            }
        }
        if self.clusters.iter().all(|c| c.users == 0) {
            return Err(Error::EmptyDataset("synthetic population has no users"));
        }
        Ok(())
    }

    /// Draws the population under `seed`. Users are numbered cluster by
    /// cluster; every record is relevant with rating 1.
    pub fn generate(&self, seed: u64) -> Result<InteractionSet> {
        self.validate()?;
        let mut rng = stage_rng(seed, Stage::Synthetic);
        let mut records = Vec::new();
        let mut user = 0;
        for c in &self.clusters {
            let weights: Vec<f64> = (0..c.block.len())
                .map(|k| ((k + 1) as f64).powf(-c.skew))
                .collect();
            let block: Vec<usize> = c.block.clone().collect();
            for _ in 0..c.users {
                let m = rng.gen_range(c.positives.clone());
                let off = rng.gen_range(c.off_block.clone());
                let outside = (0..m).filter(|_| rng.gen_bool(off)).count();
                let mut chosen: Vec<usize> = block
                    .choose_multiple_weighted(&mut rng, m - outside, |&i| weights[i - c.block.start])
                    .map_err(|e| Error::Config(e.to_string()))?
                    .copied()
                    .collect();
                let mut rest: Vec<usize> = (0..self.num_items).filter(|i| !chosen.contains(i)).collect();
                rest.shuffle(&mut rng);
                chosen.extend(rest.into_iter().take(outside));
                records.extend(chosen.into_iter().map(|item| Interaction {
                    user,
                    item,
                    rating: 1.0,
                    relevance: 1,
                }));
                user += 1;
            }
        }
        let ids = IdMap {
            users: (0..user).map(|u| format!("u{u}")).collect(),
            items: (0..self.num_items).map(|i| format!("i{i}")).collect(),
        };
        InteractionSet::new(user, self.num_items, records, Arc::new(ids))
    }
}

/// The planted two-block dataset: 40 users, 60 items, 20 relevant each.
pub fn planted_blocks(seed: u64) -> InteractionSet {
    Population::planted_blocks()
        .generate(seed)
        .expect("preset population is valid")
}

/// 80/20 holdout sized for 20-positive users (16 train, 4 test).
pub fn planted_split(negative_ratio: f64, seed: u64) -> SplitSpec {
    SplitSpec {
        mode: SplitMode::Holdout {
            train_fraction: 0.8,
            min_relevant_per_partition: 4,
            negative_ratio,
        },
        seed,
    }
}
