use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ladg::compactness::report;
use ladg::data::read_feature_table;
use ladg::trainer::mixing_entropy;

use crate::output::{emit_json, ensure_parent};

#[derive(clap::Args)]
pub struct Args {
    /// One feature CSV; prints a JSON report.
    #[arg(long, conflicts_with = "series", required_unless_present = "series")]
    features: Option<PathBuf>,
    /// Directory of `step_NNNNNN.csv` dumps; writes a tidy `step,metric,value`
    /// series.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Column with integer class ids, for the class-wise rate.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "domain")]
    domain_column: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct FileMetrics {
    n: usize,
    dim: usize,
    report: ladg::compactness::CompactnessReport,
    mixing_entropy: Option<f64>,
}

fn analyze(path: &Path, a: &Args) -> Result<FileMetrics> {
    let label_col = a.labels.as_deref().unwrap_or("label");
    let table = read_feature_table(path, label_col, &a.domain_column)?;
    let labels: Option<Vec<usize>> = match (&a.labels, &table.labels) {
        (None, _) => None,
        (Some(col), None) => bail!("{}: no label column {col:?}", path.display()),
        (Some(col), Some(raw)) => Some(
            raw.iter()
                .map(|l| l.parse().with_context(|| format!("{}: {col}: {l:?} is not a class id", path.display())))
                .collect::<Result<_>>()?,
        ),
    };
    let report = report(&table.features, labels.as_deref(), a.epsilon, a.k)?;
    let mixing_entropy = table
        .domains
        .as_ref()
        .map(|d| mixing_entropy(&table.features, d, a.k))
        .transpose()?;
    Ok(FileMetrics {
        n: table.features.rows(),
        dim: table.features.cols(),
        report,
        mixing_entropy,
    })
}

/// `(step, path)` of every `step_<n>.csv` in `dir`, by step.
fn dumps(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse().ok());
        if let Some(step) = step {
            out.push((step, path));
        }
    }
    if out.is_empty() {
        bail!("{}: no step_<n>.csv files", dir.display());
    }
    out.sort();
    Ok(out)
}

pub fn run(a: Args) -> Result<()> {
    if let Some(path) = &a.features {
        let m = analyze(path, &a)?;
        let summary = serde_json::json!({
            "n": m.n,
            "dim": m.dim,
            "v_k": m.report.v_k,
            "coding_rate": m.report.coding_rate,
            "classwise_rate": m.report.classwise_rate,
            "classwise_omitted": m.report.classwise_rate.is_none().then_some("no label column given"),
            "mixing_entropy": m.mixing_entropy,
            "epsilon": a.epsilon,
            "k": a.k,
        });
        return emit_json(&summary, a.out.as_deref());
    }

    let dir = a.series.as_ref().expect("clap requires one input");
    let mut rows: Vec<(usize, &'static str, f64)> = Vec::new();
    for (step, path) in dumps(dir)? {
        let m = analyze(&path, &a)?;
        rows.push((step, "coding_rate", m.report.coding_rate));
        if let Some(rc) = m.report.classwise_rate {
            rows.push((step, "classwise_rate", rc));
        }
        rows.push((step, "v_k", m.report.v_k));
        if let Some(mix) = m.mixing_entropy {
            rows.push((step, "mixing_entropy", mix));
        }
    }
    let sink: Box<dyn std::io::Write> = match &a.out {
        Some(path) => {
            ensure_parent(path)?;
            Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)
        }
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["step", "metric", "value"])?;
    for (step, metric, value) in rows {
        w.write_record([step.to_string(), metric.to_string(), value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
