//! Listwise losses over smoothed ranks, with closed-form score gradients.
//!
//! Every loss depends on scores only through pairwise differences
//! `σ((f_j - f_i) / τ)`, so all gradients reduce to weighted sums of
//! `σ'` over item pairs and each component costs O(N).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ideal_dcg, MetricSpec, RankedJudgments};
use crate::pairwise::{sigmoid, softplus};

/// The four listwise objectives. The RBP objective carries no persistence:
/// its value is the same for every `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListwiseLoss {
    Ndcg,
    Ap,
    Rr,
    Nrbp,
}

impl ListwiseLoss {
    pub fn for_metric(spec: MetricSpec) -> Result<Self> {
        match spec {
            MetricSpec::Ndcg => Ok(ListwiseLoss::Ndcg),
            MetricSpec::Ap => Ok(ListwiseLoss::Ap),
            MetricSpec::Rr => Ok(ListwiseLoss::Rr),
            MetricSpec::Rbp(_) | MetricSpec::Nrbp(_) => Ok(ListwiseLoss::Nrbp),
            MetricSpec::Urmse => Err(Error::Config("uRMSE has no listwise loss".into())),
        }
    }

    /// Losses whose per-user magnitude is bounded and therefore averaged over
    /// a batch; the RBP objective is summed.
    pub fn averaged_over_users(self) -> bool {
        self != ListwiseLoss::Nrbp
    }
}

impl fmt::Display for ListwiseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ListwiseLoss::Ndcg => "ndcg",
            ListwiseLoss::Ap => "ap",
            ListwiseLoss::Rr => "rr",
            ListwiseLoss::Nrbp => "nrbp",
        })
    }
}

impl FromStr for ListwiseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ndcg" => Ok(ListwiseLoss::Ndcg),
            "ap" => Ok(ListwiseLoss::Ap),
            "rr" => Ok(ListwiseLoss::Rr),
            "nrbp" | "rbp" => Ok(ListwiseLoss::Nrbp),
            _ => Err(Error::Config(format!("unknown listwise loss {s:?}"))),
        }
    }
}

/// `R̃_i = 1 + Σ_{j≠i} σ(f_j - f_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedRanks(pub Vec<f64>);

pub fn smooth_ranks(scores: &[f64]) -> SmoothedRanks {
    smooth_ranks_with(scores, 1.0)
}

pub fn smooth_ranks_with(scores: &[f64], temperature: f64) -> SmoothedRanks {
    let z: Vec<f64> = scores.iter().map(|f| f / temperature).collect();
    SmoothedRanks(
        (0..z.len())
            .map(|i| {
                1.0 + (0..z.len())
                    .filter(|&j| j != i)
                    .map(|j| sigmoid(z[j] - z[i]))
                    .sum::<f64>()
            })
            .collect(),
    )
}

/// Pairwise sigmoids of one list: `beats[i][j] = σ(z_j - z_i)`.
struct PairTable {
    n: usize,
    beats: Vec<f64>,
}

impl PairTable {
    fn new(z: &[f64]) -> Self {
        let n = z.len();
        let mut beats = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s = sigmoid(z[j] - z[i]);
                beats[i * n + j] = s;
                beats[j * n + i] = 1.0 - s;
            }
        }
        PairTable { n, beats }
    }

    fn beats(&self, i: usize, j: usize) -> f64 {
        self.beats[i * self.n + j]
    }

    /// σ'(z_i - z_j), symmetric in the pair.
    fn slope(&self, i: usize, j: usize) -> f64 {
        let s = self.beats(i, j);
        s * (1.0 - s)
    }

    fn smoothed_ranks(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| 1.0 + (0..self.n).filter(|&j| j != i).map(|j| self.beats(i, j)).sum::<f64>())
            .collect()
    }

    /// Gradient of `Σ_i coef_i · C_i` where `C_i = Σ_{j≠i} w_j σ(z_j - z_i)`.
    fn accumulate(&self, coef: &[f64], weight: &[f64], grad: &mut [f64]) {
        for k in 0..self.n {
            let mut g = 0.0;
            for i in (0..self.n).filter(|&i| i != k) {
                let c = coef[i] * weight[k] - coef[k] * weight[i];
                if c != 0.0 {
                    g += self.slope(k, i) * c;
                }
            }
            grad[k] += g;
        }
    }
}

fn checked<'a>(judged: &RankedJudgments<'a>) -> Result<usize> {
    let m = judged.positives();
    if m == 0 {
        return Err(Error::UndefinedMetric("listwise loss needs at least one relevant item".into()));
    }
    if let Some(bad) = judged.scores().iter().find(|f| !f.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {bad}")));
    }
    Ok(m)
}

/// Loss value and its gradient with respect to the raw scores.
pub fn listwise_loss_and_grad(
    loss: ListwiseLoss,
    judged: &RankedJudgments<'_>,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let m = checked(judged)?;
    let n = judged.len();
    let y: Vec<f64> = judged.labels().iter().map(|&v| f64::from(v)).collect();
    let z: Vec<f64> = judged.scores().iter().map(|f| f / temperature).collect();
    let table = PairTable::new(&z);
    let ranks = table.smoothed_ranks();
    let ones = vec![1.0; n];
    let mut grad = vec![0.0; n];
    let mf = m as f64;

    let value = match loss {
        ListwiseLoss::Nrbp => {
            table.accumulate(&y, &ones, &mut grad);
            let placed: f64 = (0..n).map(|i| y[i] * (ranks[i] - 1.0)).sum();
            placed - mf * (mf - 1.0) / 2.0
        }
        ListwiseLoss::Ndcg => {
            let idcg = ideal_dcg(m);
            let mut dcg = 0.0;
            let mut d_rank = vec![0.0; n];
            for i in (0..n).filter(|&i| y[i] == 1.0) {
                let l = (ranks[i] + 1.0).log2();
                dcg += 1.0 / l;
                d_rank[i] = 1.0 / (idcg * std::f64::consts::LN_2 * (ranks[i] + 1.0) * l * l);
            }
            table.accumulate(&d_rank, &ones, &mut grad);
            -dcg / idcg
        }
        ListwiseLoss::Ap => {
            let mut total = 0.0;
            let mut d_rank = vec![0.0; n];
            let mut d_above = vec![0.0; n];
            for i in (0..n).filter(|&i| y[i] == 1.0) {
                let above: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| y[j] * table.beats(i, j))
                    .sum();
                total += (1.0 + above) / ranks[i];
                d_rank[i] = (1.0 + above) / (mf * ranks[i] * ranks[i]);
                d_above[i] = -1.0 / (mf * ranks[i]);
            }
            table.accumulate(&d_rank, &ones, &mut grad);
            table.accumulate(&d_above, &y, &mut grad);
            -total / mf
        }
        ListwiseLoss::Rr => {
            let mut total = 0.0;
            let mut d_rank = vec![0.0; n];
            for i in (0..n).filter(|&i| y[i] == 1.0) {
                // ln Π_j (1 - σ(z_j - z_i)) = -Σ_j softplus(z_j - z_i) over relevant j
                let log_q: f64 = (0..n)
                    .filter(|&j| j != i && y[j] == 1.0)
                    .map(|j| -softplus(z[j] - z[i]))
                    .sum();
                let q = log_q.exp();
                total += q / ranks[i];
                d_rank[i] = q / (ranks[i] * ranks[i]);
                let d_log_q = -q / ranks[i];
                for j in (0..n).filter(|&j| j != i && y[j] == 1.0) {
                    let s = table.beats(i, j);
                    grad[i] += d_log_q * s;
                    grad[j] -= d_log_q * s;
                }
            }
            table.accumulate(&d_rank, &ones, &mut grad);
            -total
        }
    };
    for g in grad.iter_mut() {
        *g /= temperature;
    }
    Ok((value, grad))
}

/// Listwise loss of one user at unit temperature.
pub fn listwise_loss(spec: MetricSpec, judged: &RankedJudgments<'_>) -> Result<f64> {
    Ok(listwise_loss_and_grad(ListwiseLoss::for_metric(spec)?, judged, 1.0)?.0)
}

/// `∂loss/∂f_i` for every candidate of one user at unit temperature.
pub fn listwise_grad(spec: MetricSpec, judged: &RankedJudgments<'_>) -> Result<Vec<f64>> {
    Ok(listwise_loss_and_grad(ListwiseLoss::for_metric(spec)?, judged, 1.0)?.1)
}
