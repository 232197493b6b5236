//! Brute-force references for tests. Nothing here calls into the crate's
//! metric, rank or loss code; only its plain data types are shared.

#![allow(dead_code)]

use lambdarec::metrics::MetricSpec;

/// `1 + #{j : f_j > f_i}`, by direct counting.
pub fn naive_ranks(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .map(|fi| 1 + scores.iter().filter(|fj| *fj > fi).count())
        .collect()
}

fn persistence(spec: MetricSpec) -> Option<f64> {
    // Only the metric's textual form is read from it.
    let text = spec.to_string();
    text.split_once('@').map(|(_, p)| p.parse().expect("persistence"))
}

/// Termwise transcription of each metric over binary labels. `None` when
/// the user has no relevant item.
pub fn naive_metric(spec: MetricSpec, labels: &[u8], scores: &[f64]) -> Option<f64> {
    let n = labels.len();
    let ranks = naive_ranks(scores);
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let m: f64 = y.iter().sum();
    let name = spec.to_string();
    let kind = name.split('@').next().unwrap().to_string();
    if kind == "urmse" {
        let sq: f64 = (0..n).map(|i| (scores[i] - y[i]).powi(2)).sum();
        return Some((sq / n as f64).sqrt());
    }
    if m == 0.0 {
        return None;
    }
    let value = match kind.as_str() {
        "ndcg" => {
            let mut dcg = 0.0;
            for i in 0..n {
                dcg += y[i] / ((ranks[i] + 1) as f64).log2();
            }
            let mut ideal = 0.0;
            for k in 1..=(m as usize) {
                ideal += 1.0 / ((k + 1) as f64).log2();
            }
            dcg / ideal
        }
        "ap" => {
            let mut total = 0.0;
            for i in 0..n {
                let mut above = 0.0;
                for j in 0..n {
                    if ranks[j] <= ranks[i] {
                        above += y[j];
                    }
                }
                total += y[i] / ranks[i] as f64 * above;
            }
            total / m
        }
        "rr" => {
            let mut total = 0.0;
            for i in 0..n {
                let mut product = 1.0;
                for j in 0..n {
                    if ranks[j] < ranks[i] {
                        product *= 1.0 - y[j];
                    }
                }
                total += y[i] / ranks[i] as f64 * product;
            }
            total
        }
        "rbp" | "nrbp" => {
            let p = persistence(spec).expect("rbp needs p");
            let mut rbp = 0.0;
            for i in 0..n {
                rbp += y[i] * p.powi(ranks[i] as i32 - 1);
            }
            rbp *= 1.0 - p;
            if kind == "nrbp" {
                rbp / (1.0 - p.powi(m as i32))
            } else {
                rbp
            }
        }
        other => panic!("no oracle for {other}"),
    };
    Some(value)
}

/// Metric change from physically exchanging the scores of items i and j.
pub fn exhaustive_swap_delta(spec: MetricSpec, labels: &[u8], scores: &[f64], i: usize, j: usize) -> f64 {
    let before = naive_metric(spec, labels, scores).expect("relevant item");
    let mut swapped = scores.to_vec();
    swapped.swap(i, j);
    let after = naive_metric(spec, labels, &swapped).expect("relevant item");
    (after - before).abs()
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Tiny xorshift generator so oracle inputs do not depend on the crate's RNG plumbing.
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> Self {
        XorShift(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Labels with at least one relevant item.
    pub fn labels(&mut self, n: usize) -> Vec<u8> {
        let mut y: Vec<u8> = (0..n).map(|_| (self.next_u64() & 1) as u8).collect();
        let k = self.below(n);
        y[k] = 1;
        y
    }

    /// Scores in [lo, hi); with `ties` some values are repeated.
    pub fn scores(&mut self, n: usize, lo: f64, hi: f64, ties: bool) -> Vec<f64> {
        let mut s: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * self.uniform()).collect();
        if ties && n > 1 {
            let a = self.below(n);
            let b = self.below(n);
            s[a] = s[b];
        }
        s
    }

    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for k in (1..v.len()).rev() {
            let j = self.below(k + 1);
            v.swap(k, j);
        }
    }
}

/// Every permutation of `0..n`, by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Monte-Carlo mean reciprocal rank of one relevant item among `k`
/// candidates under uniformly random scores.
pub fn monte_carlo_rr(k: usize, trials: usize, rng: &mut XorShift) -> f64 {
    let mut total = 0.0;
    for _ in 0..trials {
        let scores: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        let rank = 1 + scores.iter().filter(|&&s| s > scores[0]).count();
        total += 1.0 / rank as f64;
    }
    total / trials as f64
}

pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smoothed-rank losses written out term by term. `kind` is one of
/// `ndcg`, `ap`, `rr`, `nrbp`.
pub fn naive_listwise_loss(kind: &str, labels: &[u8], scores: &[f64]) -> f64 {
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let m: f64 = y.iter().sum();
    let mut ranks = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if j != i {
                ranks[i] += logistic(scores[j] - scores[i]);
            }
        }
    }
    match kind {
        "nrbp" => (0..n).map(|i| y[i] * (ranks[i] - 1.0)).sum::<f64>() - m * (m - 1.0) / 2.0,
        "ndcg" => {
            let dcg: f64 = (0..n).map(|i| y[i] / (ranks[i] + 1.0).log2()).sum();
            let ideal: f64 = (1..=m as usize).map(|k| 1.0 / ((k + 1) as f64).log2()).sum();
            -dcg / ideal
        }
        "ap" => {
            let mut total = 0.0;
            for i in 0..n {
                let mut above = 1.0;
                for j in 0..n {
                    if j != i {
                        above += y[j] * logistic(scores[j] - scores[i]);
                    }
                }
                total += y[i] * above / ranks[i];
            }
            -total / m
        }
        "rr" => {
            let mut total = 0.0;
            for i in 0..n {
                let mut product = 1.0;
                for j in 0..n {
                    if j != i {
                        product *= 1.0 - y[j] * logistic(scores[j] - scores[i]);
                    }
                }
                total += y[i] / ranks[i] * product;
            }
            -total
        }
        other => panic!("no listwise oracle for {other}"),
    }
}
