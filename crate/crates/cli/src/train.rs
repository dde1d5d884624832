use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use ladg::data::{load_tabular, write_feature_table, FeatureTable, TabularSchema};
use ladg::losses::{TaskKind, Targets};
use ladg::trainer::{train_with, Event, TrainConfig};
use ladg::Error;
use serde::Serialize;

use crate::output::{print_json, usage, write_json};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Erm,
    Dann,
    Ladg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(clap::Args)]
pub struct Args {
    /// TOML file with any subset of the training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Run directory.
    #[arg(long, env = "LADG_OUT_DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k_nn: Option<usize>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    dump_features_every: Option<usize>,
    #[arg(long)]
    leave_one_out: bool,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Any other training key, as KEY=VALUE with a TOML value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value = "domain")]
    domain_column: String,
}

#[derive(Serialize)]
struct Override {
    key: String,
    value: toml::Value,
    /// Value the config file gave, if any.
    config_value: Option<toml::Value>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    version: &'static str,
    data: &'a Path,
    config_file: Option<&'a Path>,
    config: &'a TrainConfig,
    /// Keys absent from the config file and flags, so at their defaults.
    defaulted: Vec<String>,
    overrides: Vec<Override>,
    metrics: &'static str,
    checkpoint: &'static str,
    features: Option<&'static str>,
}

fn flag_overrides(a: &Args) -> Result<Vec<(String, toml::Value)>> {
    use toml::Value;
    let mut out: Vec<(String, Value)> = Vec::new();
    let mut push = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    let int = |v: Option<usize>| v.map(|v| Value::Integer(v as i64));
    push("method", a.method.map(|m| Value::String(format!("{m:?}").to_lowercase())));
    push("seed", a.seed.map(|v| Value::Integer(v as i64)));
    push("lambda", a.lambda.map(Value::Float));
    push("gamma", a.gamma.map(Value::Float));
    push("alpha", a.alpha.map(Value::Float));
    push("tau", a.tau.map(Value::Float));
    push("k_nn", int(a.k_nn));
    push("pretrain_steps", int(a.pretrain_steps));
    push("total_steps", int(a.total_steps));
    push("lr", a.lr.map(Value::Float));
    push("log_every", int(a.log_every));
    push("dump_features_every", int(a.dump_features_every));
    push("leave_one_out", a.leave_one_out.then_some(Value::Boolean(true)));
    push("task_kind", a.task.map(|t| Value::String(format!("{t:?}").to_lowercase())));
    for item in &a.set {
        let (k, raw) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        // bare words are taken as strings
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        out.push((k.trim().to_string(), value));
    }
    Ok(out)
}

/// Effective config, the defaulted keys and the applied overrides.
fn resolve_config(a: &Args) -> Result<(TrainConfig, Vec<String>, Vec<Override>)> {
    let mut table = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            // checks unknown keys and types before anything else
            TrainConfig::from_toml_str(&text).with_context(|| format!("{}", path.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("{}", path.display()))?
        }
        None => toml::Table::new(),
    };
    let mut overrides = Vec::new();
    for (key, value) in flag_overrides(a)? {
        let config_value = table.insert(key.clone(), value.clone());
        overrides.push(Override {
            key,
            value,
            config_value,
        });
    }
    let config = TrainConfig::from_toml_str(&toml::to_string(&table)?)?;
    let all_keys = toml::Table::try_from(TrainConfig::default())?;
    let mut defaulted: Vec<String> = all_keys.keys().filter(|k| !table.contains_key(*k)).cloned().collect();
    // optional keys that are unset by default never serialize
    for k in ["domains_per_batch", "task_kind", "dump_features_every"] {
        if !table.contains_key(k) && !defaulted.iter().any(|d| d == k) {
            defaulted.push(k.to_string());
        }
    }
    defaulted.sort();
    Ok((config, defaulted, overrides))
}

pub fn run(a: Args) -> Result<()> {
    let (config, defaulted, overrides) = resolve_config(&a)?;
    let schema = TabularSchema {
        task: config.task_kind,
        label_column: Some(a.label_column.clone()),
        domain_column: Some(a.domain_column.clone()),
    };
    let ds = load_tabular(&a.data, &schema)?;

    // report every violation at once, dataset-dependent ones included
    let mut errs = Vec::new();
    for check in [config.validate(), config.validate_for(ds.train_domains().len())] {
        if let Err(Error::Config(e)) = check {
            errs.extend(e);
        }
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs).into());
    }

    let out = &a.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let features_dir = config.dump_features_every.map(|_| out.join("features"));
    if let Some(dir) = &features_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let manifest = RunManifest {
        command: "train",
        version: env!("CARGO_PKG_VERSION"),
        data: &a.data,
        config_file: a.config.as_deref(),
        config: &config,
        defaulted,
        overrides,
        metrics: "metrics.jsonl",
        checkpoint: "checkpoint",
        features: features_dir.as_ref().map(|_| "features"),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    std::fs::write(out.join("config.toml"), config.to_toml_string())?;

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?);
    let io = |e: std::io::Error| Error::Io {
        path: metrics_path.clone(),
        source: e,
    };
    let result = train_with(&ds, &config, |ev| match ev {
        Event::Metrics(rec) => {
            let line = serde_json::to_string(rec).expect("metrics serialize");
            writeln!(metrics, "{line}").map_err(io)?;
            metrics.flush().map_err(io)?;
            eprintln!(
                "step {:>6}  L_t {:.4}  R {:.3}  {} {:.4}",
                rec.step, rec.l_t, rec.r, rec.score, rec.train_score
            );
            Ok(())
        }
        Event::Features { step, features, batch } => {
            let dir = features_dir.as_ref().expect("dumps imply a features directory");
            let labels = match &batch.targets {
                Targets::Classes(c) => c.iter().map(|v| v.to_string()).collect(),
                Targets::Values(v) => v.iter().map(|v| v.to_string()).collect(),
            };
            let table = FeatureTable {
                features: features.clone(),
                labels: Some(labels),
                domains: Some(batch.indices.iter().map(|&i| ds.domains[i]).collect()),
                splits: None,
            };
            write_feature_table(&dir.join(format!("step_{step:06}.csv")), &table)
        }
    })?;
    result.models.save(&out.join("checkpoint"))?;

    let last = result.history.last().expect("at least one record");
    let summary = serde_json::json!({
        "out": out,
        "method": config.method,
        "task_kind": match ds.task_kind() { TaskKind::Classification => "classification", TaskKind::Regression => "regression" },
        "final": last,
    });
    print_json(&summary)?;
    Ok(())
}
