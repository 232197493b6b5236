//! Latent-factor scorers, their optimizers and checkpoints.
//!
//! With only user and item identifiers as input features, a factorization
//! machine's second-order term collapses to the single user-item cross term,
//! so the FM variant here is biased matrix factorization:
//! `f_ui = a0 + b_u + b_i + <U_u, V_i>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairwise::{sigmoid, softplus};
use crate::seed::{stage_rng, Stage};

const INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `f_ui = <U_u, V_i>`.
    Mf,
    /// `f_ui = a0 + b_u + b_i + <U_u, V_i>`.
    Fm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub variant: Variant,
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub seed: u64,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    global_bias: f64,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
}

/// Factors drawn from Uniform(-0.01, 0.01) under `seed`; biases start at zero.
pub fn init_model(
    num_users: usize,
    num_items: usize,
    dim: usize,
    seed: u64,
    variant: Variant,
) -> Result<FactorModel> {
    if num_users == 0 || num_items == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "model dimensions must be positive, got {num_users}x{num_items}x{dim}"
        )));
    }
    let mut rng = stage_rng(seed, Stage::Init);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect()
    };
    let user_factors = draw(num_users * dim);
    let item_factors = draw(num_items * dim);
    let (user_bias, item_bias) = match variant {
        Variant::Mf => (Vec::new(), Vec::new()),
        Variant::Fm => (vec![0.0; num_users], vec![0.0; num_items]),
    };
    Ok(FactorModel {
        variant,
        num_users,
        num_items,
        dim,
        seed,
        user_factors,
        item_factors,
        global_bias: 0.0,
        user_bias,
        item_bias,
    })
}

impl FactorModel {
    pub fn user_factors(&self, user: usize) -> &[f64] {
        &self.user_factors[user * self.dim..(user + 1) * self.dim]
    }

    pub fn item_factors(&self, item: usize) -> &[f64] {
        &self.item_factors[item * self.dim..(item + 1) * self.dim]
    }

    pub fn user_factors_mut(&mut self, user: usize) -> &mut [f64] {
        &mut self.user_factors[user * self.dim..(user + 1) * self.dim]
    }

    pub fn item_factors_mut(&mut self, item: usize) -> &mut [f64] {
        &mut self.item_factors[item * self.dim..(item + 1) * self.dim]
    }

    pub fn global_bias(&self) -> f64 {
        self.global_bias
    }

    pub fn has_biases(&self) -> bool {
        self.variant == Variant::Fm
    }

    /// Sets the bias terms of an FM model; ignored for MF.
    pub fn set_biases(&mut self, global: f64, user: Option<(usize, f64)>, item: Option<(usize, f64)>) {
        if !self.has_biases() {
            return;
        }
        self.global_bias = global;
        if let Some((u, b)) = user {
            self.user_bias[u] = b;
        }
        if let Some((i, b)) = item {
            self.item_bias[i] = b;
        }
    }

    /// Score of one pair; indices must be in range.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let dot: f64 = self
            .user_factors(user)
            .iter()
            .zip(self.item_factors(item))
            .map(|(a, b)| a * b)
            .sum();
        match self.variant {
            Variant::Mf => dot,
            Variant::Fm => self.global_bias + self.user_bias[user] + self.item_bias[item] + dot,
        }
    }

    pub fn predict(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        if user >= self.num_users {
            return Err(Error::InvalidInput(format!(
                "user {user} out of range for {} users",
                self.num_users
            )));
        }
        if let Some(bad) = items.iter().find(|&&i| i >= self.num_items) {
            return Err(Error::InvalidInput(format!(
                "item {bad} out of range for {} items",
                self.num_items
            )));
        }
        Ok(items.iter().map(|&i| self.score(user, i)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .chain(&self.user_bias)
            .chain(&self.item_bias)
            .all(|v| v.is_finite())
            && self.global_bias.is_finite()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&doc)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        if doc.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint version {}",
                doc.format_version
            )));
        }
        let m = doc.model;
        let (ub, ib) = match m.variant {
            Variant::Mf => (0, 0),
            Variant::Fm => (m.num_users, m.num_items),
        };
        if m.user_factors.len() != m.num_users * m.dim
            || m.item_factors.len() != m.num_items * m.dim
            || m.user_bias.len() != ub
            || m.item_bias.len() != ib
            || !m.all_finite()
        {
            return Err(Error::InvalidInput("checkpoint dimensions are inconsistent".into()));
        }
        Ok(m)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    model: FactorModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Users per update for ranking losses, interactions per update for BCE.
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub latent_dim: usize,
    pub variant: Variant,
}

impl TrainConfig {
    /// Plain SGD on MF with 32 factors for 3000 epochs, one user per update.
    pub fn ranking_defaults() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 3000,
            batch_size: 1,
            l2: 0.0,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            latent_dim: 32,
            variant: Variant::Mf,
        }
    }

    /// Adam on FM with 32 factors, lr 1e-4, L2 1e-3, batches of 512, 300 epochs.
    pub fn bce_defaults() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 512,
            l2: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            latent_dim: 32,
            variant: Variant::Fm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return Err(Error::Config("epochs, batch size and latent dimension must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 {} must be non-negative", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct RowGrad {
    factors: Vec<f64>,
    bias: f64,
}

/// Sparse parameter gradient accumulated over one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    users: BTreeMap<usize, RowGrad>,
    items: BTreeMap<usize, RowGrad>,
    global: f64,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.items.is_empty()
    }

    /// Chains score-space gradients `∂L/∂f_ui` (times `scale`) to parameters.
    pub fn add_scores(
        &mut self,
        model: &FactorModel,
        user: usize,
        items: &[usize],
        score_grads: &[f64],
        scale: f64,
    ) {
        let dim = model.dim;
        let blank = || RowGrad {
            factors: vec![0.0; dim],
            bias: 0.0,
        };
        let u_row = model.user_factors(user);
        let mut u_acc = vec![0.0; dim];
        let mut u_bias = 0.0;
        for (&item, &g) in items.iter().zip(score_grads) {
            let g = g * scale;
            let v_row = model.item_factors(item);
            let entry = self.items.entry(item).or_insert_with(blank);
            for d in 0..dim {
                u_acc[d] += g * v_row[d];
                entry.factors[d] += g * u_row[d];
            }
            entry.bias += g;
            u_bias += g;
        }
        let entry = self.users.entry(user).or_insert_with(blank);
        for (f, a) in entry.factors.iter_mut().zip(&u_acc) {
            *f += a;
        }
        entry.bias += u_bias;
        self.global += u_bias;
    }

    /// Adds another accumulator into this one.
    pub fn merge(&mut self, other: Gradients) {
        fn merge_rows(into: &mut BTreeMap<usize, RowGrad>, from: BTreeMap<usize, RowGrad>) {
            for (k, row) in from {
                match into.get_mut(&k) {
                    Some(acc) => {
                        for (a, b) in acc.factors.iter_mut().zip(&row.factors) {
                            *a += b;
                        }
                        acc.bias += row.bias;
                    }
                    None => {
                        into.insert(k, row);
                    }
                }
            }
        }
        merge_rows(&mut self.users, other.users);
        merge_rows(&mut self.items, other.items);
        self.global += other.global;
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn sized(len: usize) -> Self {
        Moments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

/// SGD or Adam over sparse updates. Only rows present in a gradient are
/// touched, including by L2 decay. Adam keeps one global step counter for
/// bias correction.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    l2: f64,
    step: u64,
    user_factors: Moments,
    item_factors: Moments,
    user_bias: Moments,
    item_bias: Moments,
    global: Moments,
}

impl Optimizer {
    pub fn new(model: &FactorModel, config: &TrainConfig) -> Self {
        let sized = |len| match config.optimizer {
            OptimizerKind::Sgd => Moments::default(),
            OptimizerKind::Adam => Moments::sized(len),
        };
        Optimizer {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            l2: config.l2,
            step: 0,
            user_factors: sized(model.user_factors.len()),
            item_factors: sized(model.item_factors.len()),
            user_bias: sized(model.user_bias.len()),
            item_bias: sized(model.item_bias.len()),
            global: sized(1),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update. A non-finite parameter afterwards is reported as
    /// divergence with epoch 0; callers substitute the real epoch.
    pub fn step(&mut self, model: &mut FactorModel, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let dim = model.dim;
        let mut update = Update {
            kind: self.kind,
            lr: self.learning_rate,
            l2: self.l2,
            correction: (
                1.0 - BETA1.powi(self.step.min(i32::MAX as u64) as i32),
                1.0 - BETA2.powi(self.step.min(i32::MAX as u64) as i32),
            ),
        };
        let fm = model.has_biases();
        for (&u, row) in &grads.users {
            let range = u * dim..(u + 1) * dim;
            update.apply(&mut model.user_factors[range.clone()], &row.factors, &mut self.user_factors, range.start);
            if fm {
                update.apply(&mut model.user_bias[u..u + 1], &[row.bias], &mut self.user_bias, u);
            }
        }
        for (&i, row) in &grads.items {
            let range = i * dim..(i + 1) * dim;
            update.apply(&mut model.item_factors[range.clone()], &row.factors, &mut self.item_factors, range.start);
            if fm {
                update.apply(&mut model.item_bias[i..i + 1], &[row.bias], &mut self.item_bias, i);
            }
        }
        if fm && !grads.is_empty() {
            update.l2 = 0.0;
            let mut g = [model.global_bias];
            update.apply(&mut g, &[grads.global], &mut self.global, 0);
            model.global_bias = g[0];
        }

        let touched_finite = grads
            .users
            .keys()
            .all(|&u| model.user_factors(u).iter().all(|v| v.is_finite()))
            && grads
                .items
                .keys()
                .all(|&i| model.item_factors(i).iter().all(|v| v.is_finite()))
            && model.global_bias.is_finite();
        if !touched_finite {
            return Err(Error::Divergence {
                epoch: 0,
                reason: format!("non-finite parameter after update {}", self.step),
            });
        }
        Ok(())
    }
}

struct Update {
    kind: OptimizerKind,
    lr: f64,
    l2: f64,
    correction: (f64, f64),
}

impl Update {
    fn apply(&self, params: &mut [f64], grads: &[f64], moments: &mut Moments, offset: usize) {
        for (k, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g + self.l2 * *p;
            match self.kind {
                OptimizerKind::Sgd => *p -= self.lr * g,
                OptimizerKind::Adam => {
                    let m = &mut moments.first[offset + k];
                    let v = &mut moments.second[offset + k];
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / self.correction.0;
                    let v_hat = *v / self.correction.1;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
                }
            }
        }
    }
}

/// Chains `(item, ∂L/∂f_ui)` pairs for one user into a single optimizer step.
pub fn apply_gradients(
    model: &mut FactorModel,
    optimizer: &mut Optimizer,
    user: usize,
    item_grads: &[(usize, f64)],
) -> Result<()> {
    if let Some(&(_, g)) = item_grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            reason: format!("non-finite score gradient {g}"),
        });
    }
    let (items, score_grads): (Vec<usize>, Vec<f64>) = item_grads.iter().copied().unzip();
    model.predict(user, &items)?;
    let mut grads = Gradients::new();
    grads.add_scores(model, user, &items, &score_grads, 1.0);
    optimizer.step(model, &grads)
}

/// Mean binary cross-entropy over one user's items, with its score gradient.
pub fn bce_loss_and_grad(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("bce over zero items".into()));
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&f, &y) in scores.iter().zip(labels) {
        // -ln σ(f) = softplus(-f), -ln(1 - σ(f)) = softplus(f)
        loss += if y == 1 { softplus(-f) } else { softplus(f) };
        grad.push((sigmoid(f) - f64::from(y)) / n);
    }
    Ok((loss / n, grad))
}

pub fn bce_loss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(bce_loss_and_grad(scores, labels)?.0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sgd(lr: f64, l2: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            l2,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::ranking_defaults()
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_model(5, 7, 32, 9, Variant::Mf).unwrap();
        let b = init_model(5, 7, 32, 9, Variant::Mf).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(5, 7, 32, 10, Variant::Mf).unwrap());
        assert!(a.user_factors.iter().chain(&a.item_factors).all(|v| v.abs() <= 0.01));
        assert_eq!(TrainConfig::ranking_defaults().latent_dim, 32);
        assert!(init_model(0, 1, 1, 0, Variant::Mf).is_err());
    }

    #[test]
    fn predictions() {
        let mut m = init_model(1, 2, 2, 0, Variant::Mf).unwrap();
        m.user_factors_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.item_factors_mut(1).copy_from_slice(&[0.5, 2.0]);
        assert_eq!(m.predict(0, &[1]).unwrap(), vec![0.5]);
        assert!(m.predict(0, &[2]).is_err());
        assert!(m.predict(1, &[0]).is_err());

        let mut fm = init_model(1, 1, 2, 0, Variant::Fm).unwrap();
        fm.user_factors_mut(0).fill(0.0);
        assert_eq!(fm.predict(0, &[0]).unwrap(), vec![0.0]);
        fm.user_factors_mut(0).copy_from_slice(&[1.0, 0.0]);
        fm.item_factors_mut(0).copy_from_slice(&[0.5, 2.0]);
        fm.set_biases(0.0, Some((0, 0.1)), Some((0, -0.2)));
        assert!((fm.predict(0, &[0]).unwrap()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn sgd_examples() {
        let mut m = init_model(1, 1, 1, 0, Variant::Fm).unwrap();
        m.user_factors_mut(0)[0] = 0.0;
        m.item_factors_mut(0)[0] = 0.0;
        let before = m.clone();
        let mut opt = Optimizer::new(&m, &sgd(0.1, 0.0));
        apply_gradients(&mut m, &mut opt, 0, &[(0, 0.0)]).unwrap();
        assert_eq!(m, before);

        apply_gradients(&mut m, &mut opt, 0, &[(0, 1.0)]).unwrap();
        assert!((m.global_bias() + 0.1).abs() < 1e-15);

        let mut m = init_model(1, 1, 1, 0, Variant::Mf).unwrap();
        m.user_factors_mut(0)[0] = 1.0;
        m.item_factors_mut(0)[0] = 0.0;
        let mut opt = Optimizer::new(&m, &sgd(0.1, 0.001));
        apply_gradients(&mut m, &mut opt, 0, &[(0, 0.0)]).unwrap();
        assert!((m.user_factors(0)[0] - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut m = init_model(1, 1, 1, 0, Variant::Mf).unwrap();
        m.user_factors_mut(0)[0] = 0.0;
        m.item_factors_mut(0)[0] = 1.0;
        let config = TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            l2: 0.0,
            ..TrainConfig::ranking_defaults()
        };
        let mut opt = Optimizer::new(&m, &config);
        apply_gradients(&mut m, &mut opt, 0, &[(0, 3.0)]).unwrap();
        // bias-corrected first step is lr * sign(g)
        assert!((m.user_factors(0)[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut m = init_model(1, 1, 1, 0, Variant::Mf).unwrap();
        let mut opt = Optimizer::new(&m, &sgd(0.1, 0.0));
        assert!(matches!(
            apply_gradients(&mut m, &mut opt, 0, &[(0, f64::NAN)]),
            Err(Error::Divergence { .. })
        ));
        let mut m = init_model(1, 1, 1, 0, Variant::Mf).unwrap();
        m.item_factors_mut(0)[0] = 1e300;
        let mut opt = Optimizer::new(&m, &sgd(1e10, 0.0));
        assert!(apply_gradients(&mut m, &mut opt, 0, &[(0, 1e300)]).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.0, 0.0], &[1, 0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.0], &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[50.0], &[1]).unwrap() < 1e-20);
        let v = bce_loss(&[2.0, -2.0], &[1, 0]).unwrap();
        let expect = -(1.0 / (1.0 + (-2f64).exp())).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.1269).abs() < 1e-4);
        assert!(bce_loss(&[1.0], &[1, 0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut m = init_model(3, 4, 5, 42, Variant::Fm).unwrap();
        m.set_biases(0.1 + 0.2, Some((1, 1.0 / 3.0)), Some((2, -std::f64::consts::PI)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(FactorModel::load(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn mf_is_bilinear(c in -4.0f64..4.0, seed in any::<u64>()) {
            let mut m = init_model(1, 1, 8, seed, Variant::Mf).unwrap();
            let base = m.score(0, 0);
            for v in m.user_factors_mut(0) {
                *v *= c;
            }
            prop_assert!((m.score(0, 0) - c * base).abs() < 1e-15);
        }

        #[test]
        fn bce_gradient_matches_differences(scores in prop::collection::vec(-4.0f64..4.0, 1..10), seed in any::<u64>()) {
            let labels: Vec<u8> = (0..scores.len()).map(|k| ((seed >> (k % 64)) & 1) as u8).collect();
            let (_, g) = bce_loss_and_grad(&scores, &labels).unwrap();
            let h = 1e-6;
            for k in 0..scores.len() {
                let mut up = scores.clone();
                up[k] += h;
                let mut down = scores.clone();
                down[k] -= h;
                let fd = (bce_loss(&up, &labels).unwrap() - bce_loss(&down, &labels).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-8);
            }
        }
    }
}
