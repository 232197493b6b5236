//! How typical each user is, and the per-user weights derived from it.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::data::{IdMap, InteractionSet};
use crate::error::{Error, Result};
use crate::metrics::ecdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Definition {
    /// Mean Jaccard similarity to every other user.
    Sim,
    /// Cosine similarity to the average user.
    Dis,
    /// Baseline model utility on held-out data.
    Util,
}

impl std::str::FromStr for Definition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sim" => Ok(Definition::Sim),
            "dis" => Ok(Definition::Dis),
            "util" => Ok(Definition::Util),
            other => Err(Error::Config(format!("unknown mainstreamness definition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainstreamnessScores {
    pub definition: Definition,
    /// Indexed by compact user id.
    pub values: Vec<f64>,
}

fn relevant_sets(train: &InteractionSet) -> Result<Vec<Vec<usize>>> {
    if train.num_users() < 2 {
        return Err(Error::InvalidInput(
            "mainstreamness needs at least two users".into(),
        ));
    }
    (0..train.num_users())
        .map(|u| {
            let mut items = train.relevant_items(u);
            if items.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "user {} has no relevant training items",
                    train.ids().user(u)
                )));
            }
            items.sort_unstable();
            Ok(items)
        })
        .collect()
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn sim_scores(train: &InteractionSet) -> Result<MainstreamnessScores> {
    let sets = relevant_sets(train)?;
    let others = (sets.len() - 1) as f64;
    let values = (0..sets.len())
        .into_par_iter()
        .map(|u| {
            let total: f64 = sets
                .iter()
                .enumerate()
                .filter(|&(v, _)| v != u)
                .map(|(_, other)| {
                    let common = intersection_size(&sets[u], other);
                    common as f64 / (sets[u].len() + other.len() - common) as f64
                })
                .sum();
            total / others
        })
        .collect();
    Ok(MainstreamnessScores {
        definition: Definition::Sim,
        values,
    })
}

pub fn dis_scores(train: &InteractionSet) -> Result<MainstreamnessScores> {
    let sets = relevant_sets(train)?;
    let users = sets.len() as f64;
    let mut mean = vec![0.0; train.num_items()];
    for set in &sets {
        for &i in set {
            mean[i] += 1.0 / users;
        }
    }
    let mean_norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let values = sets
        .iter()
        .map(|set| {
            let dot: f64 = set.iter().map(|&i| mean[i]).sum();
            (dot / ((set.len() as f64).sqrt() * mean_norm)).min(1.0)
        })
        .collect();
    Ok(MainstreamnessScores {
        definition: Definition::Dis,
        values,
    })
}

/// Wraps a baseline model's per-user validation utility.
pub fn util_scores(per_user: &BTreeMap<usize, f64>, num_users: usize) -> Result<MainstreamnessScores> {
    let values = (0..num_users)
        .map(|u| match per_user.get(&u) {
            Some(v) if v.is_finite() => Ok(*v),
            Some(v) => Err(Error::InvalidInput(format!("user {u} has non-finite utility {v}"))),
            None => Err(Error::InvalidInput(format!("no utility score for user {u}"))),
        })
        .collect::<Result<_>>()?;
    Ok(MainstreamnessScores {
        definition: Definition::Util,
        values,
    })
}

/// A Normal density with zero mean truncated to [0, 1], with its width set
/// so that `density(0) / density(1)` equals the contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CostProfile {
    contrast: f64,
    sigma: f64,
}

impl CostProfile {
    /// The contrasts used in the bias-mitigation experiments.
    pub const STUDIED_CONTRASTS: [f64; 5] = [5.0, 10.0, 20.0, 50.0, 80.0];

    pub fn new(contrast: f64) -> Result<Self> {
        if !(contrast.is_finite() && contrast >= 1.0) {
            return Err(Error::Config(format!("contrast {contrast} must be at least 1")));
        }
        let sigma = if contrast == 1.0 {
            f64::INFINITY
        } else {
            1.0 / (2.0 * contrast.ln()).sqrt()
        };
        Ok(CostProfile { contrast, sigma })
    }

    pub fn flat() -> Self {
        CostProfile::new(1.0).expect("unit contrast is valid")
    }

    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Truncated-Normal density at `x` in [0, 1].
    pub fn density(&self, x: f64) -> f64 {
        if self.sigma.is_infinite() {
            return 1.0;
        }
        let s = self.sigma;
        let mass = 0.5 * erf(1.0 / (s * std::f64::consts::SQRT_2));
        let phi = (-0.5 * (x / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        phi / mass
    }
}

impl TryFrom<f64> for CostProfile {
    type Error = Error;

    fn try_from(c: f64) -> Result<Self> {
        CostProfile::new(c)
    }
}

impl From<CostProfile> for f64 {
    fn from(p: CostProfile) -> f64 {
        p.contrast
    }
}

/// `ω(u) = cost(ecdf(m_u))`, rescaled so the weights average to one.
pub fn cost_weights(scores: &MainstreamnessScores, profile: &CostProfile) -> Result<Vec<f64>> {
    if scores.values.is_empty() {
        return Err(Error::InvalidInput("no mainstreamness scores".into()));
    }
    if let Some(v) = scores.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite mainstreamness {v}")));
    }
    let raw: Vec<f64> = ecdf(&scores.values)
        .into_iter()
        .map(|e| profile.density(e))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Writes `user,value` rows keyed by original user ids.
pub fn export_user_values(
    path: impl AsRef<Path>,
    ids: &IdMap,
    column: &str,
    values: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::InvalidInput(format!("{}: {e}", path.display()));
    let mut out = csv::Writer::from_path(path).map_err(to_err)?;
    out.write_record(["user", column]).map_err(to_err)?;
    for (u, v) in values.iter().enumerate() {
        out.write_record([ids.user(u), &v.to_string()]).map_err(to_err)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
