use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use lambdarec::data::{read_partitions, PartitionedData};
use lambdarec::mainstream::{dis_scores, sim_scores};
use lambdarec::metrics::MetricSpec;
use lambdarec::model::FactorModel;
use lambdarec::report::{
    bin_users, gain_delta, improvement_table, per_user_eval, val_test_correlation, BinScheme, EvalReport, PerUser,
};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinBy {
    /// Per-user validation nDCG of the baseline (or the model itself).
    Util,
    /// Mean Jaccard similarity of training sets.
    Sim,
    /// Cosine to the average training profile.
    Dis,
    /// Per-user uRMSE of the baseline (or the model) on the evaluated partition;
    /// higher error sorts last.
    Urmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    /// Agreement between per-user validation and test scores.
    ValTestCorr,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub model: PathBuf,
    /// ndcg, ap, rr, rbp, nrbp or urmse; rbp@0.8 style names are accepted too.
    #[arg(long, default_value = "ndcg")]
    pub metric: String,
    /// Persistence for rbp and nrbp given without one.
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    #[arg(long, value_enum, default_value = "test")]
    pub partition: Partition,
    /// Group users and report per-group means.
    #[arg(long, value_parser = parse_scheme)]
    pub groups: Option<BinScheme>,
    #[arg(long, value_enum, default_value = "util")]
    pub bin_by: BinBy,
    /// Unweighted checkpoint to compare against; adds an improvement table.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub study: Option<Study>,
    /// Directory for per-user scores and a JSON copy of the report.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<BinScheme, lambdarec::Error> {
    s.parse()
}

fn metric_spec(name: &str, p: f64) -> Result<MetricSpec> {
    let lower = name.to_ascii_lowercase();
    let full = if !lower.contains('@') && (lower == "rbp" || lower == "nrbp") {
        format!("{lower}@{p}")
    } else {
        lower
    };
    Ok(full.parse()?)
}

fn load_model(path: &PathBuf) -> Result<FactorModel> {
    FactorModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn binning_values(args: &ReportArgs, parts: &PartitionedData, reference: &FactorModel, partition: Partition) -> Result<PerUser> {
    let to_map = |v: Vec<f64>| -> PerUser { v.into_iter().enumerate().collect() };
    Ok(match args.bin_by {
        BinBy::Util => {
            if parts.validation.is_empty() {
                bail!("util grouping needs a validation partition");
            }
            per_user_eval(reference, &parts.validation, MetricSpec::Ndcg)?
        }
        BinBy::Sim => to_map(sim_scores(&parts.train)?.values),
        BinBy::Dis => to_map(dis_scores(&parts.train)?.values),
        BinBy::Urmse => {
            let set = match partition {
                Partition::Validation => &parts.validation,
                Partition::Test => &parts.test,
            };
            per_user_eval(reference, set, MetricSpec::Urmse)?
        }
    })
}

pub fn run(args: ReportArgs) -> Result<()> {
    let parts = read_partitions(&args.data).with_context(|| format!("reading partitions in {}", args.data.display()))?;
    let model = load_model(&args.model)?;
    let metric = metric_spec(&args.metric, args.p)?;

    if let Some(Study::ValTestCorr) = args.study {
        let c = val_test_correlation(&model, &parts, metric)?;
        println!("{metric} validation vs test over {} users: spearman {:.4}, rmse {:.4}", c.users, c.spearman, c.rmse);
        if let Some(dir) = &args.out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("val_test_corr.json"), serde_json::to_vec_pretty(&json!({
                "metric": metric.to_string(),
                "users": c.users,
                "spearman": c.spearman,
                "rmse": c.rmse,
            }))?)?;
        }
        return Ok(());
    }

    let set = match args.partition {
        Partition::Validation => &parts.validation,
        Partition::Test => &parts.test,
    };
    let baseline = args.baseline.as_ref().map(load_model).transpose()?;
    let reference = baseline.as_ref().unwrap_or(&model);
    let groups = match args.groups {
        Some(scheme) => Some(bin_users(&binning_values(&args, &parts, reference, args.partition)?, scheme)?),
        None => None,
    };

    let mut report = EvalReport::new(metric, per_user_eval(&model, set, metric)?);
    if let Some(g) = &groups {
        report = report.with_groups(g);
    }
    print!("{}", report.to_text());

    let mut table_json = None;
    if let Some(base_model) = &baseline {
        let base = EvalReport::new(metric, per_user_eval(base_model, set, metric)?);
        let table = improvement_table(&base, &report, groups.as_deref().unwrap_or(&[]))?;
        println!();
        print!("{}", table.to_text());
        if args.groups == Some(BinScheme::Percentiles10_50_90) {
            let deltas: Option<Vec<f64>> = table
                .rows
                .iter()
                .filter(|r| r.group != "overall")
                .map(|r| Some(r.treated? - r.baseline?))
                .collect();
            if let Some(d) = deltas {
                println!("gain delta {:+.5}", gain_delta(&d)?);
            }
        }
        table_json = Some(serde_json::to_value(&table)?);
    }

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let ids = parts.train.ids();
        let mut csv = String::from("user,value\n");
        for (&u, v) in &report.per_user {
            csv.push_str(&format!("{},{v}\n", ids.user(u)));
        }
        std::fs::write(dir.join("per_user.csv"), csv)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_vec_pretty(&json!({ "report": report, "improvement": table_json }))?,
        )?;
    }
    Ok(())
}
