//! Interaction data: ingestion, binarization, filtering, per-user splitting and
//! negative sampling.

mod io;
mod split;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_interactions, load_interactions_with_ids, read_partitions, write_partitions, HeaderMode,
    PartitionCounts, PartitionManifest, Schema,
};
pub use split::{carve_validation, limit_held_out, sample_negatives, split, PartitionedData, SplitMode, SplitSpec};

/// A single user-item observation with compacted identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Graded score on the dataset scale, `1.0` for unary data, `0.0` for sampled negatives.
    pub rating: f64,
    /// Binary relevance, always 0 or 1.
    pub relevance: u8,
}

impl Interaction {
    pub fn is_relevant(&self) -> bool {
        self.relevance == 1
    }
}

/// Original identifiers, indexed by compacted id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMap {
    pub fn user(&self, u: usize) -> &str {
        self.users.get(u).map(String::as_str).unwrap_or("?")
    }

    pub fn item(&self, i: usize) -> &str {
        self.items.get(i).map(String::as_str).unwrap_or("?")
    }
}

/// Sparse user-item relevance matrix with a per-user record index.
#[derive(Debug, Clone)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    records: Vec<Interaction>,
    per_user: Vec<Vec<usize>>,
    ids: Arc<IdMap>,
}

impl InteractionSet {
    /// Builds a set, checking id ranges, relevance values and pair uniqueness.
    pub fn new(
        num_users: usize,
        num_items: usize,
        records: Vec<Interaction>,
        ids: Arc<IdMap>,
    ) -> Result<Self> {
        let mut per_user = vec![Vec::new(); num_users];
        let mut seen = HashSet::with_capacity(records.len());
        for (pos, r) in records.iter().enumerate() {
            if r.user >= num_users || r.item >= num_items {
                return Err(Error::InvalidInput(format!(
                    "record ({}, {}) outside a {num_users}x{num_items} matrix",
                    r.user, r.item
                )));
            }
            if r.relevance > 1 {
                return Err(Error::InvalidInput(format!(
                    "relevance {} is not binary",
                    r.relevance
                )));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Duplicate {
                    user: ids.user(r.user).to_string(),
                    item: ids.item(r.item).to_string(),
                    line: 0,
                });
            }
            per_user[r.user].push(pos);
        }
        Ok(InteractionSet {
            num_users,
            num_items,
            records,
            per_user,
            ids,
        })
    }

    /// An empty set sharing the id space of `self`.
    pub fn empty_like(&self) -> Self {
        InteractionSet {
            num_users: self.num_users,
            num_items: self.num_items,
            records: Vec::new(),
            per_user: vec![Vec::new(); self.num_users],
            ids: Arc::clone(&self.ids),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> &IdMap {
        &self.ids
    }

    pub(crate) fn shared_ids(&self) -> Arc<IdMap> {
        Arc::clone(&self.ids)
    }

    pub fn user_records(&self, user: usize) -> impl Iterator<Item = &Interaction> + '_ {
        self.per_user[user].iter().map(move |&p| &self.records[p])
    }

    /// Relevant items of `user` in record order.
    pub fn relevant_items(&self, user: usize) -> Vec<usize> {
        self.user_records(user)
            .filter(|r| r.is_relevant())
            .map(|r| r.item)
            .collect()
    }

    pub fn positives(&self, user: usize) -> usize {
        self.user_records(user).filter(|r| r.is_relevant()).count()
    }

    pub fn negatives(&self, user: usize) -> usize {
        self.user_records(user).filter(|r| !r.is_relevant()).count()
    }

    /// The user's candidate list: item ids and binary labels in record order.
    pub fn candidates(&self, user: usize) -> (Vec<usize>, Vec<u8>) {
        self.user_records(user).map(|r| (r.item, r.relevance)).unzip()
    }

    /// Users holding at least one record.
    pub fn active_users(&self) -> Vec<usize> {
        (0..self.num_users)
            .filter(|&u| !self.per_user[u].is_empty())
            .collect()
    }
}

/// Marks records relevant iff `rating >= positive_threshold`.
pub fn binarize(set: &InteractionSet, positive_threshold: f64) -> InteractionSet {
    let records = set
        .records
        .iter()
        .map(|r| Interaction {
            relevance: u8::from(r.rating >= positive_threshold),
            ..*r
        })
        .collect();
    InteractionSet {
        records,
        ..set.clone()
    }
}

/// Drops users with fewer than `k` relevant records and recompacts both id
/// spaces, preserving the existing relative order.
pub fn filter_min_relevant(set: &InteractionSet, k: usize) -> Result<InteractionSet> {
    if k == 0 {
        return Err(Error::Config("minimum relevant count must be at least 1".into()));
    }
    let keep_user: Vec<bool> = (0..set.num_users).map(|u| set.positives(u) >= k).collect();

    let mut user_map = vec![usize::MAX; set.num_users];
    let mut users = Vec::new();
    for u in (0..set.num_users).filter(|&u| keep_user[u]) {
        user_map[u] = users.len();
        users.push(set.ids.user(u).to_string());
    }
    if users.is_empty() {
        return Err(Error::EmptyDataset("filtering by minimum relevant count"));
    }

    let mut item_used = vec![false; set.num_items];
    for r in set.records.iter().filter(|r| keep_user[r.user]) {
        item_used[r.item] = true;
    }
    let mut item_map = vec![usize::MAX; set.num_items];
    let mut items = Vec::new();
    for i in (0..set.num_items).filter(|&i| item_used[i]) {
        item_map[i] = items.len();
        items.push(set.ids.item(i).to_string());
    }

    let records = set
        .records
        .iter()
        .filter(|r| keep_user[r.user])
        .map(|r| Interaction {
            user: user_map[r.user],
            item: item_map[r.item],
            ..*r
        })
        .collect();
    let (nu, ni) = (users.len(), items.len());
    InteractionSet::new(nu, ni, records, Arc::new(IdMap { users, items }))
}

/// Round half up, tolerant of representation error just below the half.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}
