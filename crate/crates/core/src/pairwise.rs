//! LambdaRank-style pairwise optimization of ranking metrics.
//!
//! A relevant/irrelevant pair contributes the RankNet cost gradient scaled by
//! how much the user's metric would change if the two items traded ranks.
//! Ranks come from one score snapshot per user.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{hard_ranks, ideal_dcg, relevant_ranks, value_from_relevant_ranks, MetricSpec};

/// `sign(y_i - y_j)` for a pair with different labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of_labels(y_i: u8, y_j: u8) -> Option<Sign> {
        match y_i.cmp(&y_j) {
            std::cmp::Ordering::Greater => Some(Sign::Plus),
            std::cmp::Ordering::Less => Some(Sign::Minus),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// How the nRBP swap change is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NrbpDelta {
    /// `Z(p, m)(1 - p)|y_i p^(R_i - 1) - y_j p^(R_j - 1)|`, the published
    /// closed form, which depends only on the relevant item's current rank.
    #[default]
    ClosedForm,
    /// The actual nRBP difference before and after exchanging the two ranks,
    /// `Z(p, m)(1 - p)|p^(R_j - 1) - p^(R_i - 1)|`.
    TrueSwap,
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// RankNet cost `-S o + ln(1 + e^(S o))` and its derivative `-S / (1 + e^(S o))`.
pub fn pair_cost(sign: Sign, o: f64) -> (f64, f64) {
    let s = sign.value();
    let so = s * o;
    // -so + ln(1 + e^so) == ln(1 + e^-so)
    (softplus(-so), -s * sigmoid(-so))
}

/// One user's ranking state at a score snapshot.
#[derive(Debug, Clone)]
pub struct UserRanking {
    labels: Vec<u8>,
    scores: Vec<f64>,
    ranks: Vec<usize>,
    relevant: Vec<usize>,
}

impl UserRanking {
    pub fn new(labels: &[u8], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels but {} scores",
                labels.len(),
                scores.len()
            )));
        }
        let ranks = hard_ranks(scores)?;
        let relevant = relevant_ranks(labels, &ranks);
        Ok(UserRanking {
            labels: labels.to_vec(),
            scores: scores.to_vec(),
            ranks,
            relevant,
        })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn positives(&self) -> usize {
        self.relevant.len()
    }

    /// Context for items `i` and `j`, or `None` when their labels agree.
    pub fn pair(&self, i: usize, j: usize) -> Option<PairContext<'_>> {
        let sign = Sign::of_labels(self.labels[i], self.labels[j])?;
        Some(PairContext {
            item_i: i,
            item_j: j,
            sign,
            score_diff: self.scores[i] - self.scores[j],
            rank_i: self.ranks[i],
            rank_j: self.ranks[j],
            positives: self.relevant.len(),
            relevant_ranks: &self.relevant,
        })
    }
}

/// A labelled item pair of one user.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub item_i: usize,
    pub item_j: usize,
    pub sign: Sign,
    /// `f_i - f_j`.
    pub score_diff: f64,
    pub rank_i: usize,
    pub rank_j: usize,
    pub positives: usize,
    /// Ascending ranks of all the user's relevant items.
    pub relevant_ranks: &'a [usize],
}

impl PairContext<'_> {
    /// Current rank of the relevant member, then of the irrelevant one.
    fn relevant_then_other(&self) -> (usize, usize) {
        match self.sign {
            Sign::Plus => (self.rank_i, self.rank_j),
            Sign::Minus => (self.rank_j, self.rank_i),
        }
    }
}

fn swapped_metric_change(spec: MetricSpec, ctx: &PairContext<'_>) -> f64 {
    let (rel_rank, other_rank) = ctx.relevant_then_other();
    let before = value_from_relevant_ranks(spec, ctx.relevant_ranks);
    let mut after = ctx.relevant_ranks.to_vec();
    if let Some(pos) = after.iter().position(|&r| r == rel_rank) {
        after.remove(pos);
    }
    let at = after.partition_point(|&r| r < other_rank);
    after.insert(at, other_rank);
    (value_from_relevant_ranks(spec, &after) - before).abs()
}

/// `|Δmetric|` from exchanging the ranks of the pair, all other items fixed.
pub fn swap_delta(spec: MetricSpec, ctx: &PairContext<'_>, nrbp: NrbpDelta) -> Result<f64> {
    if ctx.positives == 0 {
        return Err(Error::UndefinedMetric("pair of a user without relevant items".into()));
    }
    let (rel_rank, other_rank) = ctx.relevant_then_other();
    Ok(match spec {
        MetricSpec::Ndcg => {
            let gain = |r: usize| 1.0 / ((r + 1) as f64).log2();
            (gain(rel_rank) - gain(other_rank)).abs() / ideal_dcg(ctx.positives)
        }
        MetricSpec::Rbp(p) => (1.0 - p.get()) * (p.discount(rel_rank) - p.discount(other_rank)).abs(),
        MetricSpec::Nrbp(p) => {
            let scale = p.normalizer(ctx.positives) * (1.0 - p.get());
            match nrbp {
                NrbpDelta::ClosedForm => scale * p.discount(rel_rank),
                NrbpDelta::TrueSwap => scale * (p.discount(rel_rank) - p.discount(other_rank)).abs(),
            }
        }
        MetricSpec::Ap | MetricSpec::Rr => swapped_metric_change(spec, ctx),
        MetricSpec::Urmse => {
            return Err(Error::Config("uRMSE cannot drive λ-gradients".into()));
        }
    })
}

/// `λ = S |Δmetric · dC/do|`; positive values push item `i` up and `j` down.
pub fn lambda_gradient(spec: MetricSpec, ctx: &PairContext<'_>, nrbp: NrbpDelta) -> Result<f64> {
    let delta = swap_delta(spec, ctx, nrbp)?;
    let (_, d_cost) = pair_cost(ctx.sign, ctx.score_diff);
    Ok(ctx.sign.value() * (delta * d_cost).abs())
}

/// Accumulated λ over every relevant/irrelevant pair of one user.
#[derive(Debug, Clone)]
pub struct UserLambdas {
    /// Ascent direction on scores: `+λ` for the relevant member of each pair,
    /// `-λ` for the irrelevant one.
    pub lambdas: Vec<f64>,
    /// `Σ |Δ| C` over the pairs, the quantity the λ-step decreases.
    pub weighted_cost: f64,
    pub pairs: usize,
}

pub fn user_lambdas(
    spec: MetricSpec,
    labels: &[u8],
    scores: &[f64],
    nrbp: NrbpDelta,
) -> Result<UserLambdas> {
    let ranking = UserRanking::new(labels, scores)?;
    if ranking.positives() == 0 {
        return Err(Error::UndefinedMetric("user has no relevant training items".into()));
    }
    let mut lambdas = vec![0.0; labels.len()];
    let mut weighted_cost = 0.0;
    let mut pairs = 0;
    let negatives: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == 0).collect();
    for i in (0..labels.len()).filter(|&k| labels[k] == 1) {
        for &j in &negatives {
            let ctx = ranking.pair(i, j).expect("labels differ");
            let delta = swap_delta(spec, &ctx, nrbp)?;
            let (cost, d_cost) = pair_cost(ctx.sign, ctx.score_diff);
            let lambda = ctx.sign.value() * (delta * d_cost).abs();
            lambdas[i] += lambda;
            lambdas[j] -= lambda;
            weighted_cost += delta * cost;
            pairs += 1;
        }
    }
    Ok(UserLambdas {
        lambdas,
        weighted_cost,
        pairs,
    })
}
