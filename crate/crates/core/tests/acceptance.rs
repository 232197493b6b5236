//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{fd_gradient, naive_listwise_loss, naive_metric, permutations, XorShift};
use lambdarec::data::{limit_held_out, sample_negatives, split, PartitionedData, SplitMode, SplitSpec};
use lambdarec::listwise::{listwise_grad, listwise_loss, ListwiseLoss};
use lambdarec::mainstream::{cost_weights, util_scores, CostProfile, Definition, MainstreamnessScores};
use lambdarec::metrics::{ecdf, eval_metric, hard_ranks, MetricSpec, RankedJudgments};
use lambdarec::model::{init_model, OptimizerKind, TrainConfig, Variant};
use lambdarec::pairwise::{lambda_gradient, pair_cost, NrbpDelta, Sign, UserRanking};
use lambdarec::report::{
    bin_users, correlation_of, gain_delta, improvement, improvement_table, mean, per_user_eval, BinScheme,
    EvalReport,
};
use lambdarec::synthetic::{planted_blocks, planted_split, Population};
use lambdarec::trainer::{train_ranking, LossSpec, TrainOptions};

const PERSISTENCES: [f64; 3] = [0.8, 0.9, 0.95];

type Outcome = (bool, String);

fn ranking_specs() -> Vec<MetricSpec> {
    let mut specs = vec![MetricSpec::Ndcg, MetricSpec::Ap, MetricSpec::Rr];
    for p in PERSISTENCES {
        specs.push(MetricSpec::rbp(p).unwrap());
        specs.push(MetricSpec::nrbp(p).unwrap());
    }
    specs
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = XorShift::new(1);
    let mut specs = ranking_specs();
    specs.push(MetricSpec::Urmse);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for &spec in &specs {
        for k in 0..1000 {
            let n = 1 + rng.below(8);
            let labels = rng.labels(n);
            // every other instance on a coarse grid so ties are common
            let scores: Vec<f64> = if k % 2 == 0 {
                (0..n).map(|_| rng.below(4) as f64 * 0.25).collect()
            } else {
                rng.scores(n, -2.0, 2.0, true)
            };
            let expected = naive_metric(spec, &labels, &scores).expect("labels hold a relevant item");
            let judged = RankedJudgments::new(&labels, &scores).unwrap();
            let got = eval_metric(spec, &judged).unwrap();
            worst = worst.max((got - expected).abs());
            compared += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-12 && secs < 10.0,
        format!("{compared} instances over {} metrics, max abs error {worst:.2e}, {secs:.2}s", specs.len()),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = XorShift::new(2);
    let losses = [
        ("ndcg", MetricSpec::Ndcg),
        ("ap", MetricSpec::Ap),
        ("rr", MetricSpec::Rr),
        ("nrbp", MetricSpec::nrbp(0.9).unwrap()),
    ];
    let mut worst = 0.0f64;
    let mut worst_value = 0.0f64;
    let (mut tiny, mut worst_tiny) = (0usize, 0.0f64);
    for (kind, spec) in losses {
        for _ in 0..200 {
            let n = 1 + rng.below(20);
            let labels = rng.labels(n);
            let scores = rng.scores(n, -3.0, 3.0, false);
            let judged = RankedJudgments::new(&labels, &scores).unwrap();
            let analytic = listwise_grad(spec, &judged).unwrap();
            let value = listwise_loss(spec, &judged).unwrap();
            worst_value = worst_value.max((value - naive_listwise_loss(kind, &labels, &scores)).abs());
            let numeric = fd_gradient(|f| naive_listwise_loss(kind, &labels, f), &scores, 1e-5);
            for (a, b) in analytic.iter().zip(&numeric) {
                let scale = a.abs().max(b.abs());
                // central differences carry ~1e-9 of roundoff, so vanishing
                // components are compared absolutely
                if scale > 1e-8 {
                    worst = worst.max((a - b).abs() / scale);
                } else {
                    tiny += 1;
                    worst_tiny = worst_tiny.max((a - b).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-4 && worst_tiny < 1e-8 && worst_value < 1e-12 && secs < 30.0,
        format!(
            "800 instances, max relative gradient error {worst:.2e}, {tiny} near-zero components within {worst_tiny:.1e}, \
             max loss mismatch {worst_value:.2e}, {secs:.2}s"
        ),
    )
}

fn pairwise_improvement() -> Outcome {
    let rate = 1e-3;
    let spacing = 1e-4;
    let mut specs: Vec<(MetricSpec, NrbpDelta)> = ranking_specs().into_iter().map(|s| (s, NrbpDelta::ClosedForm)).collect();
    for p in PERSISTENCES {
        specs.push((MetricSpec::nrbp(p).unwrap(), NrbpDelta::TrueSwap));
    }
    let mut checked = 0usize;
    let mut violations = 0usize;
    for n in 2..=6 {
        // every strict ordering; shared-rank ties are left out because breaking
        // a tie between two relevant items lowers the metric by itself
        let score_sets: Vec<Vec<f64>> = permutations(n)
            .into_iter()
            .map(|perm| perm.into_iter().map(|r| r as f64 * spacing).collect())
            .collect();
        for mask in 1..(1u32 << n) - 1 {
            let labels: Vec<u8> = (0..n).map(|k| ((mask >> k) & 1) as u8).collect();
            for scores in &score_sets {
                let ranking = UserRanking::new(&labels, scores).unwrap();
                let ranks = ranking.ranks();
                for i in (0..n).filter(|&k| labels[k] == 1) {
                    for j in (0..n).filter(|&k| labels[k] == 0 && ranks[i] > ranks[k]) {
                        let ctx = ranking.pair(i, j).unwrap();
                        for &(spec, mode) in &specs {
                            let lambda = lambda_gradient(spec, &ctx, mode).unwrap();
                            let mut stepped = scores.clone();
                            stepped[i] += rate * lambda;
                            stepped[j] -= rate * lambda;
                            let before = naive_metric(spec, &labels, scores).unwrap();
                            let after = naive_metric(spec, &labels, &stepped).unwrap();
                            checked += 1;
                            if after < before - 1e-12 {
                                violations += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        violations == 0 && checked > 0,
        format!(
            "{checked} mis-ordered pair steps over all orderings of N <= 6 and {} metric variants, {violations} violations",
            specs.len()
        ),
    )
}

fn nrbp_lower_bound() -> Outcome {
    let mut rng = XorShift::new(4);
    let spec = MetricSpec::nrbp(0.9).unwrap();
    let mut worst = f64::MIN;
    for _ in 0..200 {
        let n = 1 + rng.below(20);
        let labels = rng.labels(n);
        let base = rng.scores(n, -1.0, 1.0, false);
        let top = base.iter().cloned().fold(f64::MIN, f64::max);
        let scores: Vec<f64> = (0..n)
            .map(|k| if labels[k] == 1 { top + 20.0 + base[k] + 1.0 } else { base[k] })
            .collect();
        let judged = RankedJudgments::new(&labels, &scores).unwrap();
        worst = worst.max(listwise_loss(spec, &judged).unwrap());
    }
    (worst < 1e-6, format!("200 instances, largest loss {worst:.3e}"))
}

fn cost_calibration() -> Outcome {
    let mut rng = XorShift::new(5);
    let values: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
    let scores = MainstreamnessScores {
        definition: Definition::Util,
        values,
    };
    let mut worst_ratio = 0.0f64;
    let mut worst_mean = 0.0f64;
    for c in CostProfile::STUDIED_CONTRASTS {
        let profile = CostProfile::new(c).unwrap();
        worst_ratio = worst_ratio.max((profile.density(0.0) / profile.density(1.0) - c).abs());
        let w = cost_weights(&scores, &profile).unwrap();
        let m = w.iter().sum::<f64>() / w.len() as f64;
        worst_mean = worst_mean.max((m - 1.0).abs());
    }
    (
        worst_ratio < 1e-9 && worst_mean < 1e-12,
        format!("contrasts 5..80, max ratio error {worst_ratio:.2e}, max mean error {worst_mean:.2e}"),
    )
}

struct PlantedRun {
    loss: LossSpec,
    ndcg: f64,
    rr: f64,
}

fn planted_runs() -> Result<(Vec<PlantedRun>, f64), String> {
    let start = Instant::now();
    let mut losses: Vec<LossSpec> = [ListwiseLoss::Ndcg, ListwiseLoss::Ap, ListwiseLoss::Rr, ListwiseLoss::Nrbp]
        .into_iter()
        .map(LossSpec::listwise)
        .collect();
    for spec in [MetricSpec::Ndcg, MetricSpec::Ap, MetricSpec::Rr, MetricSpec::nrbp(0.9).unwrap()] {
        losses.push(LossSpec::pairwise(spec));
    }
    losses.push(LossSpec::Bce);
    let mut runs = Vec::new();
    for loss in losses {
        let (mut ndcg, mut rr) = (Vec::new(), Vec::new());
        for seed in 0..5u64 {
            let spec = planted_split(1.0, seed);
            let parts = split(&planted_blocks(seed), &spec)
                .and_then(|p| sample_negatives(&p, &spec))
                .map_err(|e| e.to_string())?;
            let bce = matches!(loss, LossSpec::Bce);
            let config = TrainConfig {
                epochs: 500,
                learning_rate: 0.1,
                seed,
                optimizer: if bce { OptimizerKind::Adam } else { OptimizerKind::Sgd },
                batch_size: if bce { 64 } else { 1 },
                l2: 0.0,
                variant: if bce { Variant::Fm } else { Variant::Mf },
                ..TrainConfig::ranking_defaults()
            };
            let model = init_model(parts.num_users(), parts.num_items(), config.latent_dim, seed, config.variant)
                .map_err(|e| e.to_string())?;
            let options = TrainOptions {
                tracked: vec![],
                ..TrainOptions::default()
            };
            let out = train_ranking(model, &parts, &loss, &config, None, &options).map_err(|e| format!("{loss}: {e}"))?;
            let test_mean = |m| {
                per_user_eval(&out.model, &parts.test, m)
                    .ok()
                    .and_then(|v| mean(v.values().copied()))
                    .unwrap_or(f64::NAN)
            };
            ndcg.push(test_mean(MetricSpec::Ndcg));
            rr.push(test_mean(MetricSpec::Rr));
        }
        runs.push(PlantedRun {
            loss,
            ndcg: mean(ndcg).unwrap(),
            rr: mean(rr).unwrap(),
        });
    }
    Ok((runs, start.elapsed().as_secs_f64()))
}

fn planted_learning(runs: &[PlantedRun], secs: f64) -> Outcome {
    let lagging = |l: &LossSpec| match l {
        LossSpec::Listwise { loss, .. } => *loss == ListwiseLoss::Rr,
        LossSpec::Pairwise { metric, .. } => *metric == MetricSpec::Rr,
        LossSpec::Bce => false,
    };
    let mut ok = secs < 300.0;
    let mut parts = Vec::new();
    for r in runs {
        if !lagging(&r.loss) && (r.ndcg.is_nan() || r.ndcg < 0.8) {
            ok = false;
        }
        parts.push(format!("{} {:.3}", r.loss, r.ndcg));
    }
    (ok, format!("mean test nDCG: {}; {secs:.1}s", parts.join(", ")))
}

fn rr_direction(runs: &[PlantedRun]) -> Outcome {
    let find = |pred: &dyn Fn(&LossSpec) -> bool| runs.iter().find(|r| pred(&r.loss)).map(|r| r.rr).unwrap_or(f64::NAN);
    let list_rr = find(&|l| matches!(l, LossSpec::Listwise { loss: ListwiseLoss::Rr, .. }));
    let list_nrbp = find(&|l| matches!(l, LossSpec::Listwise { loss: ListwiseLoss::Nrbp, .. }));
    let pair_rr = find(&|l| matches!(l, LossSpec::Pairwise { metric: MetricSpec::Rr, .. }));
    let pair_nrbp = find(&|l| matches!(l, LossSpec::Pairwise { metric: MetricSpec::Nrbp(_), .. }));
    (
        list_rr <= list_nrbp && pair_rr <= pair_nrbp,
        format!(
            "mean test RR listwise rr {list_rr:.3} vs nrbp {list_nrbp:.3}; pairwise rr {pair_rr:.3} vs nrbp {pair_nrbp:.3}"
        ),
    )
}

fn three_way(seed: u64, eval_total: usize) -> SplitSpec {
    SplitSpec {
        mode: SplitMode::ThreeWay {
            minimums: [5, 5, 5],
            train_negatives_per_positive: 4,
            eval_candidate_total: eval_total,
            relevant_cap: Some(200),
        },
        seed,
    }
}

fn bias_mitigation() -> Result<Outcome, String> {
    let err = |e: lambdarec::Error| e.to_string();
    let (mut low, mut all) = (Vec::new(), Vec::new());
    for seed in 0..3u64 {
        let set = Population::bimodal(200).generate(seed).map_err(err)?;
        let spec = three_way(seed, 100);
        let parts = sample_negatives(&split(&set, &spec).map_err(err)?, &spec).map_err(err)?;
        let config = TrainConfig {
            learning_rate: 0.003,
            epochs: 150,
            l2: 0.0068,
            seed,
            ..TrainConfig::bce_defaults()
        };
        let init = init_model(parts.num_users(), parts.num_items(), config.latent_dim, seed, config.variant).map_err(err)?;
        let options = TrainOptions::default();
        let base = train_ranking(init.clone(), &parts, &LossSpec::Bce, &config, None, &options).map_err(err)?;
        let base = base.best_for(MetricSpec::Ndcg).ok_or("baseline has no best epoch")?;
        let util = per_user_eval(&base.model, &parts.validation, MetricSpec::Ndcg).map_err(err)?;
        let weights = cost_weights(&util_scores(&util, parts.num_users()).map_err(err)?, &CostProfile::new(10.0).map_err(err)?)
            .map_err(err)?;
        let treated = train_ranking(init, &parts, &LossSpec::Bce, &config, Some(&weights), &options).map_err(err)?;
        let treated = treated.best_for(MetricSpec::Ndcg).ok_or("weighted run has no best epoch")?;
        let report = |model| per_user_eval(model, &parts.test, MetricSpec::Ndcg).map(|v| EvalReport::new(MetricSpec::Ndcg, v));
        let groups = bin_users(&util, BinScheme::Quintiles).map_err(err)?;
        let table = improvement_table(&report(&base.model).map_err(err)?, &report(&treated.model).map_err(err)?, &groups)
            .map_err(err)?;
        let row = |name: &str| table.rows.iter().find(|r| r.group == name).cloned().ok_or(format!("no {name} row"));
        let (l, o) = (row("low")?, row("overall")?);
        low.push((l.baseline.unwrap_or(f64::NAN), l.treated.unwrap_or(f64::NAN)));
        all.push((o.baseline.unwrap_or(f64::NAN), o.treated.unwrap_or(f64::NAN)));
    }
    let change = |v: &[(f64, f64)]| {
        let b = mean(v.iter().map(|x| x.0)).unwrap();
        let t = mean(v.iter().map(|x| x.1)).unwrap();
        improvement(b, t).unwrap_or(f64::NAN)
    };
    let (dl, da) = (change(&low), change(&all));
    Ok((
        dl >= 2.0 && da.abs() <= 2.0,
        format!("bottom quintile {dl:+.2}%, overall {da:+.2}% (3 seeds, contrast 10)"),
    ))
}

fn reliability() -> Result<Outcome, String> {
    let err = |e: lambdarec::Error| e.to_string();
    let (mut one, mut five) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let mut spec = three_way(seed, 50);
        if let SplitMode::ThreeWay { relevant_cap, .. } = &mut spec.mode {
            *relevant_cap = None;
        }
        let set = Population::varied_activity(400).generate(seed).map_err(err)?;
        let set = lambdarec::data::filter_min_relevant(&set, spec.min_user_relevant()).map_err(err)?;
        let raw = split(&set, &spec).map_err(err)?;
        let full = sample_negatives(&raw, &spec).map_err(err)?;
        let config = TrainConfig {
            learning_rate: 0.003,
            epochs: 100,
            latent_dim: 16,
            seed,
            ..TrainConfig::bce_defaults()
        };
        let init = init_model(full.num_users(), full.num_items(), config.latent_dim, seed, config.variant).map_err(err)?;
        let options = TrainOptions {
            tracked: vec![],
            ..TrainOptions::default()
        };
        let model = train_ranking(init, &full, &LossSpec::Bce, &config, None, &options).map_err(err)?.model;
        for (k, out) in [(1usize, &mut one), (5, &mut five)] {
            let limited: PartitionedData = sample_negatives(&limit_held_out(&raw, k).map_err(err)?, &spec).map_err(err)?;
            let v = per_user_eval(&model, &limited.validation, MetricSpec::Ndcg).map_err(err)?;
            let t = per_user_eval(&model, &limited.test, MetricSpec::Ndcg).map_err(err)?;
            out.push(correlation_of(&v, &t).map_err(err)?.spearman);
        }
    }
    let (r1, r5) = (mean(one.iter().copied()).unwrap(), mean(five.iter().copied()).unwrap());
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    Ok((
        r5 > r1,
        format!("mean Spearman {r1:.3} with 1 item vs {r5:.3} with 5 (per seed {} vs {})", fmt(&one), fmt(&five)),
    ))
}

fn fixtures() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    expect("gain_delta", gain_delta(&[0.1, 0.2, 0.3, -0.1]).ok() == Some(0.2));
    let imp = improvement(0.3284, 0.34117).unwrap_or(f64::NAN);
    expect("improvement", (imp - 3.89).abs() <= 0.01);
    expect("hard_ranks strict", hard_ranks(&[0.9, 0.1, 0.5]).ok() == Some(vec![1, 3, 2]));
    expect("hard_ranks tie", hard_ranks(&[0.5, 0.5]).ok() == Some(vec![1, 1]));
    expect("hard_ranks single", hard_ranks(&[7.0]).ok() == Some(vec![1]));
    expect("ecdf", ecdf(&[3.0, 1.0, 2.0]) == vec![1.0, 1.0 / 3.0, 2.0 / 3.0]);
    expect("ecdf ties", ecdf(&[4.0; 4]) == vec![1.0; 4]);
    expect("ecdf single", ecdf(&[5.0]) == vec![1.0]);
    let ln2 = std::f64::consts::LN_2;
    let (c, d) = pair_cost(Sign::Plus, 0.0);
    expect("pair_cost +", (c - ln2).abs() < 1e-15 && d == -0.5);
    let (c, d) = pair_cost(Sign::Plus, 40.0);
    expect("pair_cost saturated", c < 1e-15 && d.abs() < 1e-15);
    let (c, d) = pair_cost(Sign::Minus, 0.0);
    expect("pair_cost -", (c - ln2).abs() < 1e-15 && d == 0.5);
    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("11 fixtures hold, improvement {imp:.4}%")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let mut all_ok = true;
    let mut report = |n: usize, name: &str, (ok, detail): Outcome| {
        all_ok &= ok;
        println!("AC{n} [PRIMARY] {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    };
    report(1, "metric oracle equivalence", metric_oracle());
    report(2, "listwise gradient correctness", gradient_check());
    report(3, "pairwise improvement property", pairwise_improvement());
    report(4, "nRBP listwise lower bound", nrbp_lower_bound());
    report(5, "cost calibration", cost_calibration());
    match planted_runs() {
        Ok((runs, secs)) => {
            report(6, "planted-structure learning", planted_learning(&runs, secs));
            report(7, "RR-loss direction", rr_direction(&runs));
        }
        Err(e) => {
            report(6, "planted-structure learning", (false, e.clone()));
            report(7, "RR-loss direction", (false, e));
        }
    }
    report(8, "directional bias mitigation", bias_mitigation().unwrap_or_else(|e| (false, e)));
    report(9, "validation-test reliability", reliability().unwrap_or_else(|e| (false, e)));
    report(10, "arithmetic fixtures", fixtures());
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
