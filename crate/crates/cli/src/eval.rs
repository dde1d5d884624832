use std::path::PathBuf;

use anyhow::Result;
use clap::ValueEnum;
use ladg::data::{load_tabular, Split, TabularSchema};
use ladg::losses::TaskKind;
use ladg::trainer::{evaluate, load_inference};

use crate::output::emit_json;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Ood,
}

#[derive(clap::Args)]
pub struct Args {
    /// Checkpoint directory holding manifest.json.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ood")]
    split: SplitArg,
    /// Neighborhood size for the mixing entropy and V_k.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Also write the JSON summary here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value = "domain")]
    domain_column: String,
}

pub fn run(a: Args) -> Result<()> {
    let models = load_inference(&a.checkpoint)?;
    let mut schema = TabularSchema {
        task: None,
        label_column: Some(a.label_column.clone()),
        domain_column: Some(a.domain_column.clone()),
    };
    let mut ds = load_tabular(&a.data, &schema)?;
    // integer targets are valid regression targets too
    if ds.task_kind() == TaskKind::Classification && models.task_kind == TaskKind::Regression {
        schema.task = Some(TaskKind::Regression);
        ds = load_tabular(&a.data, &schema)?;
    }
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Ood => Split::Ood,
    };
    let report = evaluate(&models, &ds, split, a.k, a.epsilon)?;
    emit_json(&report, a.out.as_deref())
}
