use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{round_half_up, Interaction, InteractionSet};
use crate::error::{Error, Result};
use crate::seed::{stage_rng, Stage};

/// How each user's relevant items are partitioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitMode {
    /// Train/test holdout; validation stays empty. Negatives are sampled at
    /// `negative_ratio` times the positives of every partition.
    Holdout {
        train_fraction: f64,
        min_relevant_per_partition: usize,
        negative_ratio: f64,
    },
    /// Train/validation/test with sizes proportional to `minimums`, each of
    /// which must also be met. Equal minimums give an even three-way split.
    ThreeWay {
        minimums: [usize; 3],
        train_negatives_per_positive: usize,
        eval_candidate_total: usize,
        relevant_cap: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(flatten)]
    pub mode: SplitMode,
    pub seed: u64,
}

impl SplitSpec {
    /// 80/20 holdout with at least 5 test positives, negatives at `nsr` per positive.
    pub fn holdout(nsr: f64, seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::Holdout {
                train_fraction: 0.8,
                min_relevant_per_partition: 5,
                negative_ratio: nsr,
            },
            seed,
        }
    }

    /// Even thirds with at least 5 relevant per partition, 4 training negatives
    /// per positive, 500-item evaluation lists and a 200-item relevant cap.
    pub fn even_thirds(seed: u64) -> Self {
        Self::proportional([5, 5, 5], seed)
    }

    pub fn proportional(minimums: [usize; 3], seed: u64) -> Self {
        SplitSpec {
            mode: SplitMode::ThreeWay {
                minimums,
                train_negatives_per_positive: 4,
                eval_candidate_total: 500,
                relevant_cap: Some(200),
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mode {
            SplitMode::Holdout {
                train_fraction,
                min_relevant_per_partition,
                negative_ratio,
            } => {
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "train fraction {train_fraction} outside (0, 1)"
                    )));
                }
                if *min_relevant_per_partition == 0 {
                    return Err(Error::Config("partition minimum must be positive".into()));
                }
                if !(negative_ratio.is_finite() && *negative_ratio > 0.0) {
                    return Err(Error::Config(format!(
                        "negative sampling ratio {negative_ratio} must be positive"
                    )));
                }
            }
            SplitMode::ThreeWay {
                minimums,
                train_negatives_per_positive,
                eval_candidate_total,
                relevant_cap,
            } => {
                if minimums.contains(&0) {
                    return Err(Error::Config("partition minimums must be positive".into()));
                }
                if *train_negatives_per_positive == 0 || *eval_candidate_total == 0 {
                    return Err(Error::Config("negative counts must be positive".into()));
                }
                if let Some(cap) = relevant_cap {
                    if *cap < minimums.iter().sum::<usize>() {
                        return Err(Error::Config(format!(
                            "relevant cap {cap} is below the partition minimums"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest number of relevant items a user needs to be splittable.
    pub fn min_user_relevant(&self) -> usize {
        match &self.mode {
            SplitMode::Holdout {
                train_fraction,
                min_relevant_per_partition,
                ..
            } => {
                let test_share = 1.0 - train_fraction;
                let n = (*min_relevant_per_partition as f64 / test_share - 1e-9).ceil() as usize;
                n.max(min_relevant_per_partition + 1)
            }
            SplitMode::ThreeWay { minimums, .. } => minimums.iter().sum(),
        }
    }

    /// Per-partition sizes (train, validation, test) for `n` relevant items.
    pub fn partition_sizes(&self, n: usize) -> [usize; 3] {
        match &self.mode {
            SplitMode::Holdout { train_fraction, .. } => {
                let test = round_half_up(n as f64 * (1.0 - train_fraction)).min(n);
                [n - test, 0, test]
            }
            SplitMode::ThreeWay { minimums, .. } => {
                let total: usize = minimums.iter().sum();
                let mut sizes = minimums.map(|m| n * m / total);
                let mut rem = n - sizes.iter().sum::<usize>();
                // remainder goes train first, then validation
                for s in sizes.iter_mut() {
                    if rem == 0 {
                        break;
                    }
                    *s += 1;
                    rem -= 1;
                }
                sizes
            }
        }
    }

    fn partition_minimums(&self) -> [usize; 3] {
        match &self.mode {
            SplitMode::Holdout {
                min_relevant_per_partition,
                ..
            } => [*min_relevant_per_partition, 0, *min_relevant_per_partition],
            SplitMode::ThreeWay { minimums, .. } => *minimums,
        }
    }
}

/// Train/validation/test partitions sharing one id space.
#[derive(Debug, Clone)]
pub struct PartitionedData {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
    pub spec: SplitSpec,
    pub negatives_sampled: bool,
    /// Sorted items each user interacted with in the source data, relevant or
    /// not, including relevant items dropped by the cap. Never sampled as negatives.
    pub(crate) interacted: Vec<Vec<usize>>,
}

impl PartitionedData {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    pub fn partitions(&self) -> [(&'static str, &InteractionSet); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    /// Items that must never be sampled as negatives for `user`.
    pub fn excluded_items(&self, user: usize) -> Vec<usize> {
        let mut out = self.interacted.get(user).cloned().unwrap_or_default();
        for (_, part) in self.partitions() {
            out.extend(part.user_records(user).map(|r| r.item));
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Randomly partitions every user's relevant items according to `spec`.
///
/// Non-relevant records of the source set are not carried into any partition,
/// but they are remembered so that negative sampling never draws them.
pub fn split(set: &InteractionSet, spec: &SplitSpec) -> Result<PartitionedData> {
    spec.validate()?;
    let mut rng = stage_rng(spec.seed, Stage::Split);
    let minimums = spec.partition_minimums();
    let min_user = spec.min_user_relevant();
    let mut parts: [Vec<Interaction>; 3] = Default::default();
    let mut interacted = Vec::with_capacity(set.num_users());

    for user in 0..set.num_users() {
        let mut seen: Vec<usize> = set.user_records(user).map(|r| r.item).collect();
        seen.sort_unstable();
        interacted.push(seen);

        let mut relevant: Vec<(usize, f64)> = set
            .user_records(user)
            .filter(|r| r.is_relevant())
            .map(|r| (r.item, r.rating))
            .collect();
        if relevant.is_empty() && set.user_records(user).next().is_none() {
            continue;
        }
        if relevant.len() < min_user {
            return Err(Error::ProtocolViolation {
                user: set.ids().user(user).to_string(),
                reason: format!(
                    "{} relevant items, the split needs at least {min_user}",
                    relevant.len()
                ),
            });
        }
        if let SplitMode::ThreeWay {
            relevant_cap: Some(cap),
            ..
        } = spec.mode
        {
            if relevant.len() > cap {
                let mut keep = index::sample(&mut rng, relevant.len(), cap).into_vec();
                keep.sort_unstable();
                relevant = keep.into_iter().map(|k| relevant[k]).collect();
            }
        }
        relevant.shuffle(&mut rng);

        let sizes = spec.partition_sizes(relevant.len());
        for (k, (&size, &min)) in sizes.iter().zip(minimums.iter()).enumerate() {
            if size < min {
                return Err(Error::ProtocolViolation {
                    user: set.ids().user(user).to_string(),
                    reason: format!("partition {k} would hold {size} < {min} relevant items"),
                });
            }
        }
        let mut rest = relevant.as_slice();
        for (k, &size) in sizes.iter().enumerate() {
            let (chunk, tail) = rest.split_at(size);
            parts[k].extend(chunk.iter().map(|&(item, rating)| Interaction {
                user,
                item,
                rating,
                relevance: 1,
            }));
            rest = tail;
        }
    }

    let [train, validation, test] = parts;
    let make = |records| {
        InteractionSet::new(set.num_users(), set.num_items(), records, set.shared_ids())
    };
    Ok(PartitionedData {
        train: make(train)?,
        validation: make(validation)?,
        test: make(test)?,
        spec: spec.clone(),
        negatives_sampled: false,
        interacted,
    })
}

fn negative_targets(spec: &SplitSpec, positives: [usize; 3]) -> Result<[usize; 3]> {
    Ok(match &spec.mode {
        SplitMode::Holdout { negative_ratio, .. } => {
            positives.map(|p| round_half_up(negative_ratio * p as f64))
        }
        SplitMode::ThreeWay {
            train_negatives_per_positive,
            eval_candidate_total,
            ..
        } => {
            let mut out = [positives[0] * train_negatives_per_positive, 0, 0];
            for k in 1..3 {
                if positives[k] == 0 {
                    continue;
                }
                if positives[k] > *eval_candidate_total {
                    return Err(Error::Config(format!(
                        "{} relevant items exceed the {eval_candidate_total}-item evaluation list",
                        positives[k]
                    )));
                }
                out[k] = eval_candidate_total - positives[k];
            }
            out
        }
    })
}

/// Adds relevance-0 records drawn without replacement from items the user
/// never interacted with, independently for each partition.
pub fn sample_negatives(parts: &PartitionedData, spec: &SplitSpec) -> Result<PartitionedData> {
    spec.validate()?;
    if parts.negatives_sampled {
        return Err(Error::Config("negatives were already sampled".into()));
    }
    let mut rng = stage_rng(spec.seed, Stage::Negatives);
    let num_items = parts.num_items();
    let mut out: [Vec<Interaction>; 3] = [
        parts.train.records().to_vec(),
        parts.validation.records().to_vec(),
        parts.test.records().to_vec(),
    ];

    for user in 0..parts.num_users() {
        let positives = [
            parts.train.positives(user),
            parts.validation.positives(user),
            parts.test.positives(user),
        ];
        if positives.iter().all(|&p| p == 0) {
            continue;
        }
        let targets = negative_targets(spec, positives)?;
        let excluded = parts.excluded_items(user);
        let pool: Vec<usize> = (0..num_items)
            .filter(|i| excluded.binary_search(i).is_err())
            .collect();
        for (k, &needed) in targets.iter().enumerate() {
            if needed == 0 {
                continue;
            }
            if needed > pool.len() {
                return Err(Error::SamplingInfeasible {
                    user: parts.train.ids().user(user).to_string(),
                    needed,
                    available: pool.len(),
                });
            }
            for idx in index::sample(&mut rng, pool.len(), needed) {
                out[k].push(Interaction {
                    user,
                    item: pool[idx],
                    rating: 0.0,
                    relevance: 0,
                });
            }
        }
    }

    let [train, validation, test] = out;
    let ids = parts.train.shared_ids();
    let make = |records| InteractionSet::new(parts.num_users(), num_items, records, ids.clone());
    Ok(PartitionedData {
        train: make(train)?,
        validation: make(validation)?,
        test: make(test)?,
        spec: spec.clone(),
        negatives_sampled: true,
        interacted: parts.interacted.clone(),
    })
}

/// Keeps at most `k` relevant records per user in validation and test, so
/// that reliability can be compared across held-out sizes on one split.
/// Dropped items stay excluded from negative sampling.
pub fn limit_held_out(parts: &PartitionedData, k: usize) -> Result<PartitionedData> {
    if parts.negatives_sampled {
        return Err(Error::Config("limit held-out partitions before sampling negatives".into()));
    }
    if k == 0 {
        return Err(Error::Config("held-out limit must be positive".into()));
    }
    let limit = |set: &InteractionSet| {
        let records = (0..set.num_users())
            .flat_map(|u| set.user_records(u).filter(|r| r.is_relevant()).take(k).copied())
            .collect();
        InteractionSet::new(set.num_users(), set.num_items(), records, set.shared_ids())
    };
    let mut out = parts.clone();
    for (u, seen) in out.interacted.iter_mut().enumerate() {
        for (_, part) in [("validation", &parts.validation), ("test", &parts.test)] {
            seen.extend(part.user_records(u).map(|r| r.item));
        }
        seen.sort_unstable();
        seen.dedup();
    }
    out.validation = limit(&parts.validation)?;
    out.test = limit(&parts.test)?;
    Ok(out)
}

/// Moves a `fraction` of every user's training records into validation,
/// positives and negatives carved separately so both keep their ratio.
///
/// Intended for the holdout protocol, whose validation partition is empty.
pub fn carve_validation(parts: &PartitionedData, fraction: f64, seed: u64) -> Result<PartitionedData> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    if !parts.validation.is_empty() {
        return Err(Error::Config("validation partition is already populated".into()));
    }
    let mut rng = stage_rng(seed, Stage::Carve);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for user in 0..parts.num_users() {
        for relevance in [1u8, 0u8] {
            let mut group: Vec<Interaction> = parts
                .train
                .user_records(user)
                .filter(|r| r.relevance == relevance)
                .copied()
                .collect();
            let take = round_half_up(fraction * group.len() as f64).min(group.len());
            // keep at least one training positive
            let take = if relevance == 1 && take == group.len() && take > 0 {
                take - 1
            } else {
                take
            };
            group.shuffle(&mut rng);
            validation.extend_from_slice(&group[..take]);
            train.extend_from_slice(&group[take..]);
        }
    }
    let ids = parts.train.shared_ids();
    let make = |records| InteractionSet::new(parts.num_users(), parts.num_items(), records, ids.clone());
    Ok(PartitionedData {
        train: make(train)?,
        validation: make(validation)?,
        test: parts.test.clone(),
        spec: parts.spec.clone(),
        negatives_sampled: parts.negatives_sampled,
        interacted: parts.interacted.clone(),
    })
}
