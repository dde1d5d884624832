use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use ladg::data::read_feature_table;
use ladg::graph::{build_affinity, knn_neighbors, GraphMode};
use ladg::labelprop::{one_hot, propagate_closed_form, propagate_iterative, SeedMode};

use crate::output::{ensure_parent, print_json, usage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Symmetric,
    RowStochastic,
}

#[derive(clap::Args)]
pub struct Args {
    /// CSV with f0.. columns and a domain column.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "domain")]
    domain_column: String,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value = "symmetric")]
    graph_mode: ModeArg,
    /// Zero each sample's own seed row.
    #[arg(long)]
    leave_one_out: bool,
    /// Also run the fixed-point iteration and report its gap to the closed form.
    #[arg(long)]
    iterative: bool,
    #[arg(long, default_value_t = 10_000_000)]
    max_steps: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// CSV of per-sample domain probabilities, one `p<domain>` column each.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<()> {
    if a.iterative && a.leave_one_out {
        return Err(usage("--iterative cross-checks the literal seed mode only; drop --leave-one-out"));
    }
    let table = read_feature_table(&a.features, "label", &a.domain_column)?;
    let ids = table
        .domains
        .with_context(|| format!("{}: no {:?} column", a.features.display(), a.domain_column))?;
    let mut present = ids.clone();
    present.sort_unstable();
    present.dedup();
    let local: Vec<usize> = ids.iter().map(|d| present.binary_search(d).expect("present")).collect();
    let e = one_hot(&local, present.len())?;

    let mode = match a.graph_mode {
        ModeArg::Symmetric => GraphMode::Symmetric,
        ModeArg::RowStochastic => GraphMode::RowStochastic,
    };
    let seed_mode = if a.leave_one_out { SeedMode::LeaveOneOut } else { SeedMode::Literal };
    let neighbors = knn_neighbors(&table.features, a.k)?;
    let graph = build_affinity(&table.features, &neighbors, a.tau, mode)?;
    let closed = propagate_closed_form(&graph, &e, a.alpha, seed_mode)?;

    let iterative = if a.iterative {
        let it = propagate_iterative(&graph, &e, a.alpha, a.max_steps, a.tol)?;
        Some(serde_json::json!({
            "steps": it.steps,
            "max_abs_gap": closed.r_star.max_abs_diff(&it.r_star)?,
            "tol": a.tol,
        }))
    } else {
        None
    };

    if let Some(path) = &a.out {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        let mut header: Vec<String> = present.iter().map(|d| format!("p{d}")).collect();
        header.push("domain".into());
        w.write_record(&header)?;
        for (i, d) in ids.iter().enumerate() {
            let mut rec: Vec<String> = closed.probs.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(d.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }

    let summary = serde_json::json!({
        "n": ids.len(),
        "domains": present,
        "alpha": a.alpha,
        "tau": a.tau,
        "k": a.k,
        "graph_mode": mode,
        "seed_mode": seed_mode,
        "iterative": iterative,
        "out": a.out,
    });
    print_json(&summary)?;
    Ok(())
}
