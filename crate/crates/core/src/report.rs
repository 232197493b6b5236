//! Per-user evaluation, user groups and baseline comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{InteractionSet, PartitionedData};
use crate::error::{Error, Result};
use crate::metrics::{eval_metric, rmse, MetricSpec, RankedJudgments};
use crate::model::FactorModel;

pub type PerUser = BTreeMap<usize, f64>;

/// Scores every user of `set` once and evaluates each metric on the result.
/// Users without records are skipped; for ranking metrics so are users
/// without a relevant candidate.
pub fn evaluate(
    model: &FactorModel,
    set: &InteractionSet,
    specs: &[MetricSpec],
    parallel: bool,
) -> Result<Vec<PerUser>> {
    let users = set.active_users();
    let one = |&u: &usize| -> Result<Vec<Option<f64>>> {
        let (items, labels) = set.candidates(u);
        let scores = model.predict(u, &items)?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore { user: u });
        }
        let judged = RankedJudgments::new(&labels, &scores)?;
        specs
            .iter()
            .map(|&spec| {
                if spec.is_ranking() && judged.positives() == 0 {
                    Ok(None)
                } else {
                    eval_metric(spec, &judged).map(Some)
                }
            })
            .collect()
    };
    let rows: Vec<Vec<Option<f64>>> = if parallel {
        users.par_iter().map(one).collect::<Result<_>>()?
    } else {
        users.iter().map(one).collect::<Result<_>>()?
    };
    let mut out = vec![PerUser::new(); specs.len()];
    for (&u, row) in users.iter().zip(rows) {
        for (k, v) in row.into_iter().enumerate() {
            if let Some(v) = v {
                out[k].insert(u, v);
            }
        }
    }
    Ok(out)
}

/// One metric per user; users the metric is undefined for are left out
/// with a warning.
pub fn per_user_eval(model: &FactorModel, set: &InteractionSet, spec: MetricSpec) -> Result<PerUser> {
    let values = evaluate(model, set, &[spec], false)?.remove(0);
    let skipped = set.active_users().len() - values.len();
    if skipped > 0 {
        log::warn!("{spec}: {skipped} users without relevant candidates excluded");
    }
    Ok(values)
}

/// Drops users with fewer than `min_train` relevant training records.
pub fn filter_by_train_minimum(values: &PerUser, train: &InteractionSet, min_train: usize) -> PerUser {
    values
        .iter()
        .filter(|&(&u, _)| u < train.num_users() && train.positives(u) >= min_train)
        .map(|(&u, &v)| (u, v))
        .collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinScheme {
    /// Five equal shares, lowest values first.
    #[serde(rename = "quintiles")]
    Quintiles,
    /// Shares of 10/40/40/10 percent split at the 10th, 50th and 90th percentiles.
    #[serde(rename = "p10-50-90")]
    Percentiles10_50_90,
}

impl FromStr for BinScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quintiles" => Ok(BinScheme::Quintiles),
            "p10-50-90" => Ok(BinScheme::Percentiles10_50_90),
            other => Err(Error::Config(format!("unknown grouping {other:?}"))),
        }
    }
}

impl BinScheme {
    fn names(self) -> &'static [&'static str] {
        match self {
            BinScheme::Quintiles => &["low", "med-low", "med", "med-high", "high"],
            BinScheme::Percentiles10_50_90 => &["p0-10", "p10-50", "p50-90", "p90-100"],
        }
    }

    fn minimum_users(self) -> usize {
        match self {
            BinScheme::Quintiles => 5,
            BinScheme::Percentiles10_50_90 => 10,
        }
    }

    fn cuts(self, n: usize) -> Vec<usize> {
        match self {
            BinScheme::Quintiles => (0..=5).map(|k| k * n / 5).collect(),
            BinScheme::Percentiles10_50_90 => {
                let at = |q: f64| crate::data::round_half_up(q * n as f64).min(n);
                vec![0, at(0.1), at(0.5), at(0.9), n]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub members: Vec<usize>,
}

/// Bins users by value, ascending. Equal values keep user-id order, so a
/// tie straddling a boundary sends the lower id to the lower bin.
pub fn bin_users(values: &PerUser, scheme: BinScheme) -> Result<Vec<Group>> {
    if values.len() < scheme.minimum_users() {
        return Err(Error::InvalidInput(format!(
            "{} users cannot be binned into {:?}",
            values.len(),
            scheme
        )));
    }
    let mut order: Vec<(usize, f64)> = values.iter().map(|(&u, &v)| (u, v)).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let cuts = scheme.cuts(order.len());
    Ok(scheme
        .names()
        .iter()
        .zip(cuts.windows(2))
        .map(|(name, w)| Group {
            name: (*name).to_string(),
            members: order[w[0]..w[1]].iter().map(|p| p.0).collect(),
        })
        .collect())
}

/// Share-weighted gain over the four percentile bins.
pub fn gain_delta(bin_deltas: &[f64]) -> Result<f64> {
    let [d1, d2, d3, d4] = bin_deltas else {
        return Err(Error::InvalidInput(format!(
            "gain needs 4 bin deltas, got {}",
            bin_deltas.len()
        )));
    };
    Ok((d1 + 4.0 * d2 + 4.0 * d3 + d4) / 10.0)
}

/// Relative change in percent; undefined for a zero baseline.
pub fn improvement(baseline: f64, treated: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (treated - baseline) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub members: Vec<usize>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: MetricSpec,
    pub per_user: PerUser,
    pub overall: Option<f64>,
    pub groups: Vec<GroupSummary>,
}

impl EvalReport {
    pub fn new(metric: MetricSpec, per_user: PerUser) -> Self {
        let overall = mean(per_user.values().copied());
        EvalReport {
            metric,
            per_user,
            overall,
            groups: Vec::new(),
        }
    }

    pub fn with_groups(mut self, groups: &[Group]) -> Self {
        self.groups = groups
            .iter()
            .map(|g| GroupSummary {
                name: g.name.clone(),
                members: g.members.clone(),
                mean: self.group_mean(&g.members),
            })
            .collect();
        self
    }

    pub fn group_mean(&self, members: &[usize]) -> Option<f64> {
        mean(members.iter().filter_map(|u| self.per_user.get(u).copied()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.5}"));
        let _ = writeln!(out, "{:<10} {:>7} {:>10}", "group", "users", self.metric);
        for g in &self.groups {
            let _ = writeln!(out, "{:<10} {:>7} {:>10}", g.name, g.members.len(), fmt(g.mean));
        }
        let _ = writeln!(out, "{:<10} {:>7} {:>10}", "overall", self.per_user.len(), fmt(self.overall));
        out
    }
}

/// Two-sided p-value of a paired t-test on per-user differences.
pub fn paired_t_test(deltas: &[f64]) -> Option<f64> {
    let n = deltas.len();
    if n < 2 {
        return None;
    }
    let m = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Some(if m == 0.0 { 1.0 } else { 0.0 });
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub group: String,
    pub users: usize,
    pub baseline: Option<f64>,
    pub treated: Option<f64>,
    /// Percent; `None` when the baseline mean is zero or the group is empty.
    pub improvement: Option<f64>,
    /// Bonferroni-adjusted over the rows of the table.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementTable {
    pub metric: MetricSpec,
    pub rows: Vec<ImprovementRow>,
}

pub fn improvement_table(
    baseline: &EvalReport,
    treated: &EvalReport,
    groups: &[Group],
) -> Result<ImprovementTable> {
    if baseline.metric != treated.metric {
        return Err(Error::InvalidInput(format!(
            "comparing {} against {}",
            baseline.metric, treated.metric
        )));
    }
    if !baseline.per_user.keys().eq(treated.per_user.keys()) {
        return Err(Error::InvalidInput("reports cover different users".into()));
    }
    let everyone: Vec<usize> = baseline.per_user.keys().copied().collect();
    let named = groups
        .iter()
        .map(|g| (g.name.as_str(), g.members.as_slice()))
        .chain(std::iter::once(("overall", everyone.as_slice())));
    let tests = groups.len() + 1;
    let rows = named
        .map(|(name, members)| {
            let present: Vec<usize> = members
                .iter()
                .copied()
                .filter(|u| baseline.per_user.contains_key(u))
                .collect();
            let b = baseline.group_mean(&present);
            let t = treated.group_mean(&present);
            let deltas: Vec<f64> = present
                .iter()
                .map(|u| treated.per_user[u] - baseline.per_user[u])
                .collect();
            ImprovementRow {
                group: name.to_string(),
                users: present.len(),
                baseline: b,
                treated: t,
                improvement: b.zip(t).and_then(|(b, t)| improvement(b, t)),
                p_value: paired_t_test(&deltas).map(|p| (p * tests as f64).min(1.0)),
            }
        })
        .collect();
    Ok(ImprovementTable {
        metric: baseline.metric,
        rows,
    })
}

impl ImprovementTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>10} {:>10} {:>9} {:>9}",
            "group", "users", "baseline", "treated", "change%", "p(bonf)"
        );
        let num = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |v| format!("{v:.prec$}"));
        for r in &self.rows {
            let change = r.improvement.map_or("undefined".to_string(), |v| format!("{v:+.2}"));
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>10} {:>10} {:>9} {:>9}",
                r.group,
                r.users,
                num(r.baseline, 5),
                num(r.treated, 5),
                change,
                num(r.p_value, 4)
            );
        }
        out
    }
}

/// Ranks starting at 1, ties receiving the mean of the positions they span.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let shared = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = shared;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::UndefinedMetric(format!(
            "rank correlation over {} users",
            a.len()
        )));
    }
    let (ra, rb) = (fractional_ranks(a), fractional_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedMetric("rank correlation of a constant vector".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub users: usize,
    pub rmse: f64,
    pub spearman: f64,
}

/// Agreement between two per-user score maps over their common users.
pub fn correlation_of(validation: &PerUser, test: &PerUser) -> Result<Correlation> {
    let (v, t): (Vec<f64>, Vec<f64>) = validation
        .iter()
        .filter_map(|(u, &a)| test.get(u).map(|&b| (a, b)))
        .unzip();
    let spearman = spearman(&v, &t)?;
    Ok(Correlation {
        users: v.len(),
        rmse: rmse(&v, &t)?,
        spearman,
    })
}

/// Evaluates one trained model on both held-out partitions and compares the
/// per-user scores.
pub fn val_test_correlation(
    model: &FactorModel,
    parts: &PartitionedData,
    spec: MetricSpec,
) -> Result<Correlation> {
    let validation = per_user_eval(model, &parts.validation, spec)?;
    let test = per_user_eval(model, &parts.test, spec)?;
    correlation_of(&validation, &test)
}
