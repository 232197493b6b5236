use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lambdarec::data::read_partitions;
use lambdarec::mainstream::{cost_weights, dis_scores, export_user_values, sim_scores, util_scores, CostProfile, Definition};
use lambdarec::metrics::MetricSpec;
use lambdarec::model::FactorModel;
use lambdarec::report::per_user_eval;

#[derive(Debug, Args)]
pub struct MainstreamArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// sim, dis or util.
    #[arg(long, value_parser = parse_definition, default_value = "sim")]
    pub definition: Definition,
    /// Baseline checkpoint; required for util.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV of per-user mainstreamness.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write cost weights at this contrast.
    #[arg(long, requires = "weights_out")]
    pub contrast: Option<f64>,
    #[arg(long, requires = "contrast")]
    pub weights_out: Option<PathBuf>,
}

fn parse_definition(s: &str) -> Result<Definition, lambdarec::Error> {
    s.parse()
}

pub fn run(args: MainstreamArgs) -> Result<()> {
    let parts = read_partitions(&args.data).with_context(|| format!("reading partitions in {}", args.data.display()))?;
    let scores = match args.definition {
        Definition::Sim => sim_scores(&parts.train)?,
        Definition::Dis => dis_scores(&parts.train)?,
        Definition::Util => {
            let Some(path) = &args.model else {
                bail!("util mainstreamness needs --model");
            };
            let model = FactorModel::load(path).with_context(|| format!("loading {}", path.display()))?;
            util_scores(&per_user_eval(&model, &parts.validation, MetricSpec::Ndcg)?, parts.num_users())?
        }
    };
    let ids = parts.train.ids();
    export_user_values(&args.out, ids, "mainstreamness", &scores.values)?;
    if let (Some(c), Some(path)) = (args.contrast, &args.weights_out) {
        let weights = cost_weights(&scores, &CostProfile::new(c)?)?;
        export_user_values(path, ids, "weight", &weights)?;
    }
    let mut sorted = scores.values.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN);
    println!(
        "{} users; min {:.4}, median {median:.4}, max {:.4}",
        sorted.len(),
        sorted.first().copied().unwrap_or(f64::NAN),
        sorted.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
