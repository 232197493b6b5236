//! Exact ranks and the ranking metrics optimized and reported by the toolkit.
//!
//! Ranks follow the pairwise-comparison definition `R_i = 1 + #{j : f_j > f_i}`,
//! so tied scores share the best rank of their group. Metric values on tied
//! scores therefore take the optimistic reading; [`TiePolicy::ByIndex`] gives
//! the strict sorting-based alternative. The two agree whenever scores are
//! distinct.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// User persistence for RBP-family metrics, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Persistence(f64);

impl Persistence {
    pub fn new(p: f64) -> Result<Self> {
        if p > 0.0 && p < 1.0 {
            Ok(Persistence(p))
        } else {
            Err(Error::Config(format!("persistence {p} outside (0, 1)")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `p^(rank - 1)`, through logarithms only for astronomically deep ranks.
    pub fn discount(self, rank: usize) -> f64 {
        if rank <= 1_000_000 {
            self.0.powi(rank as i32 - 1)
        } else {
            ((rank - 1) as f64 * self.0.ln()).exp()
        }
    }

    /// Normalizer `Z(p, m) = 1 / (1 - p^m)`.
    pub fn normalizer(self, positives: usize) -> f64 {
        1.0 / (1.0 - self.discount(positives + 1))
    }
}

/// Which metric to evaluate or optimize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricSpec {
    Ndcg,
    Ap,
    Rr,
    Rbp(Persistence),
    Nrbp(Persistence),
    /// Per-user root-mean-square error between scores and labels.
    Urmse,
}

impl MetricSpec {
    pub fn nrbp(p: f64) -> Result<Self> {
        Ok(MetricSpec::Nrbp(Persistence::new(p)?))
    }

    pub fn rbp(p: f64) -> Result<Self> {
        Ok(MetricSpec::Rbp(Persistence::new(p)?))
    }

    pub fn persistence(&self) -> Option<Persistence> {
        match self {
            MetricSpec::Rbp(p) | MetricSpec::Nrbp(p) => Some(*p),
            _ => None,
        }
    }

    pub fn is_ranking(&self) -> bool {
        !matches!(self, MetricSpec::Urmse)
    }

    /// True when larger values are better.
    pub fn higher_is_better(&self) -> bool {
        self.is_ranking()
    }

    /// The reporting grid: RR, AP, nDCG and nRBP at p = 0.8, 0.9, 0.95.
    pub fn standard_grid() -> Vec<MetricSpec> {
        let mut grid = vec![MetricSpec::Rr, MetricSpec::Ap, MetricSpec::Ndcg];
        grid.extend([0.8, 0.9, 0.95].map(|p| MetricSpec::Nrbp(Persistence(p))));
        grid
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Ndcg => write!(f, "ndcg"),
            MetricSpec::Ap => write!(f, "ap"),
            MetricSpec::Rr => write!(f, "rr"),
            MetricSpec::Rbp(p) => write!(f, "rbp@{}", p.0),
            MetricSpec::Nrbp(p) => write!(f, "nrbp@{}", p.0),
            MetricSpec::Urmse => write!(f, "urmse"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, p) = match lower.split_once('@') {
            Some((n, p)) => (n, Some(p)),
            None => (lower.as_str(), None),
        };
        let persistence = || -> Result<Persistence> {
            let raw = p.ok_or_else(|| Error::Config(format!("metric {s:?} needs a persistence, e.g. {name}@0.9")))?;
            let v = raw
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad persistence in {s:?}")))?;
            Persistence::new(v)
        };
        let spec = match name {
            "ndcg" => MetricSpec::Ndcg,
            "ap" | "map" => MetricSpec::Ap,
            "rr" | "mrr" => MetricSpec::Rr,
            "rbp" => MetricSpec::Rbp(persistence()?),
            "nrbp" => MetricSpec::Nrbp(persistence()?),
            "urmse" | "rmse" => MetricSpec::Urmse,
            _ => return Err(Error::Config(format!("unknown metric {s:?}"))),
        };
        if p.is_some() && spec.persistence().is_none() {
            return Err(Error::Config(format!("metric {name} takes no persistence")));
        }
        Ok(spec)
    }
}

impl TryFrom<String> for MetricSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricSpec> for String {
    fn from(m: MetricSpec) -> String {
        m.to_string()
    }
}

/// Binary labels and predicted scores over one user's candidate items.
#[derive(Debug, Clone, Copy)]
pub struct RankedJudgments<'a> {
    labels: &'a [u8],
    scores: &'a [f64],
}

impl<'a> RankedJudgments<'a> {
    pub fn new(labels: &'a [u8], scores: &'a [f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels but {} scores",
                labels.len(),
                scores.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidInput(format!("label {bad} is not binary")));
        }
        Ok(RankedJudgments { labels, scores })
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    pub fn scores(&self) -> &'a [f64] {
        self.scores
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Tied scores share a rank.
    #[default]
    Shared,
    /// Ties broken by position, earlier items first.
    ByIndex,
}

fn check_finite(scores: &[f64]) -> Result<()> {
    match scores.iter().position(|f| !f.is_finite()) {
        Some(k) => Err(Error::InvalidInput(format!("score {k} is not finite: {}", scores[k]))),
        None => Ok(()),
    }
}

fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order
}

/// `R_i = 1 + #{j != i : f_j > f_i}`; tied scores share a rank.
pub fn hard_ranks(scores: &[f64]) -> Result<Vec<usize>> {
    check_finite(scores)?;
    let order = order_desc(scores);
    let mut ranks = vec![0; scores.len()];
    let mut group_rank = 1;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && scores[i] < scores[order[pos - 1]] {
            group_rank = pos + 1;
        }
        ranks[i] = group_rank;
    }
    Ok(ranks)
}

/// Sort positions with ties broken by item index; a permutation of `1..=N`.
pub fn strict_ranks(scores: &[f64]) -> Result<Vec<usize>> {
    check_finite(scores)?;
    let mut ranks = vec![0; scores.len()];
    for (pos, i) in order_desc(scores).into_iter().enumerate() {
        ranks[i] = pos + 1;
    }
    Ok(ranks)
}

/// Ideal DCG for `m` relevant items with binary gains.
pub fn ideal_dcg(m: usize) -> f64 {
    (1..=m).map(|k| 1.0 / ((k + 1) as f64).log2()).sum()
}

/// Evaluates a ranking metric from the ascending ranks of the relevant items.
pub(crate) fn value_from_relevant_ranks(spec: MetricSpec, rel: &[usize]) -> f64 {
    let m = rel.len();
    match spec {
        MetricSpec::Ndcg => {
            rel.iter().map(|&r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / ideal_dcg(m)
        }
        MetricSpec::Ap => {
            let mut total = 0.0;
            for &r in rel {
                let at_or_above = rel.partition_point(|&x| x <= r);
                total += at_or_above as f64 / r as f64;
            }
            total / m as f64
        }
        MetricSpec::Rr => {
            let best = rel[0];
            rel.iter().take_while(|&&r| r == best).count() as f64 / best as f64
        }
        MetricSpec::Rbp(p) => (1.0 - p.0) * rel.iter().map(|&r| p.discount(r)).sum::<f64>(),
        MetricSpec::Nrbp(p) => {
            p.normalizer(m) * (1.0 - p.0) * rel.iter().map(|&r| p.discount(r)).sum::<f64>()
        }
        MetricSpec::Urmse => unreachable!("urmse is not rank based"),
    }
}

/// Ascending ranks of the relevant items.
pub(crate) fn relevant_ranks(labels: &[u8], ranks: &[usize]) -> Vec<usize> {
    let mut rel: Vec<usize> = labels
        .iter()
        .zip(ranks)
        .filter(|(&y, _)| y == 1)
        .map(|(_, &r)| r)
        .collect();
    rel.sort_unstable();
    rel
}

/// Metric value for one user under the shared-rank tie policy.
pub fn eval_metric(spec: MetricSpec, judged: &RankedJudgments<'_>) -> Result<f64> {
    eval_metric_with(spec, judged, TiePolicy::Shared)
}

pub fn eval_metric_with(
    spec: MetricSpec,
    judged: &RankedJudgments<'_>,
    ties: TiePolicy,
) -> Result<f64> {
    if spec == MetricSpec::Urmse {
        let labels: Vec<f64> = judged.labels.iter().map(|&y| f64::from(y)).collect();
        return rmse(judged.scores, &labels);
    }
    if judged.positives() == 0 {
        return Err(Error::UndefinedMetric(format!("{spec} needs at least one relevant item")));
    }
    let ranks = match ties {
        TiePolicy::Shared => hard_ranks(judged.scores)?,
        TiePolicy::ByIndex => strict_ranks(judged.scores)?,
    };
    Ok(value_from_relevant_ranks(spec, &relevant_ranks(judged.labels, &ranks)))
}

/// Root-mean-square error; grouped per user it gives uRMSE, pooled it gives rRMSE.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidInput(format!(
            "rmse over {} predictions and {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidInput("rmse over zero items".into()));
    }
    let sq: f64 = predicted.iter().zip(actual).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

/// Empirical CDF evaluated at every input: `#{j : v_j <= v_i} / n`.
pub fn ecdf(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|v| sorted.partition_point(|x| x <= v) as f64 / n)
        .collect()
}
