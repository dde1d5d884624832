//! Multi-domain datasets: synthetic generators and CSV ingestion.
//!
//! CSV layout: a header `f0,...,f{p-1},label,domain[,split]` followed by one
//! row per sample. `label` is a class id for classification or a real
//! value for regression, `domain` a non-negative integer, and `split` one
//! of `train`, `val`, `ood` (all rows are `train` when the column is
//! absent).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{TaskKind, Targets};
use crate::numerics::Matrix;
use crate::rng::{streams, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Ood,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Ood => "ood",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "ood" => Some(Split::Ood),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which generator produced a dataset, with what parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDescriptor {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub inputs: Matrix,
    pub targets: Targets,
    pub domains: Vec<usize>,
    pub splits: Vec<Split>,
    pub descriptor: Option<GeneratorDescriptor>,
}

/// Rows of one split, gathered.
#[derive(Clone, Debug)]
pub struct SplitView {
    pub indices: Vec<usize>,
    pub inputs: Matrix,
    pub targets: Targets,
    pub domains: Vec<usize>,
}

impl DomainDataset {
    pub fn new(
        inputs: Matrix,
        targets: Targets,
        domains: Vec<usize>,
        splits: Vec<Split>,
        descriptor: Option<GeneratorDescriptor>,
    ) -> Result<Self> {
        let n = inputs.rows();
        if targets.len() != n || domains.len() != n || splits.len() != n {
            return Err(Error::shape(
                "DomainDataset",
                format!(
                    "{n} inputs, {} targets, {} domains, {} splits",
                    targets.len(),
                    domains.len(),
                    splits.len()
                ),
            ));
        }
        let ds = DomainDataset {
            inputs,
            targets,
            domains,
            splits,
            descriptor,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// OOD domains must never appear in train or val rows, and at least one
    /// training domain must exist.
    pub fn validate(&self) -> Result<()> {
        let seen = self.domains_in(&[Split::Train, Split::Val]);
        let ood = self.domains_in(&[Split::Ood]);
        if let Some(d) = seen.intersection(&ood).next() {
            return Err(Error::Schema(format!("domain {d} appears in both training and OOD rows")));
        }
        if self.domains_in(&[Split::Train]).is_empty() {
            return Err(Error::Schema("dataset has no training rows".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        self.inputs.cols()
    }

    pub fn task_kind(&self) -> TaskKind {
        self.targets.kind()
    }

    /// Number of classes (max id + 1); 1 for regression.
    pub fn n_classes(&self) -> usize {
        match &self.targets {
            Targets::Classes(c) => c.iter().max().map_or(0, |m| m + 1),
            Targets::Values(_) => 1,
        }
    }

    fn domains_in(&self, splits: &[Split]) -> BTreeSet<usize> {
        self.domains
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| splits.contains(s))
            .map(|(d, _)| *d)
            .collect()
    }

    /// Sorted ids of domains with training rows.
    pub fn train_domains(&self) -> Vec<usize> {
        self.domains_in(&[Split::Train]).into_iter().collect()
    }

    pub fn ood_domains(&self) -> Vec<usize> {
        self.domains_in(&[Split::Ood]).into_iter().collect()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn view(&self, split: Split) -> Result<SplitView> {
        let indices = self.indices(split);
        if indices.is_empty() {
            return Err(Error::Degenerate(format!("split {split} is empty")));
        }
        self.rows(indices)
    }

    pub fn rows(&self, indices: Vec<usize>) -> Result<SplitView> {
        Ok(SplitView {
            inputs: self.inputs.select_rows(&indices)?,
            targets: self.targets.select(&indices),
            domains: indices.iter().map(|&i| self.domains[i]).collect(),
            indices,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (0..self.input_width()).map(|j| format!("f{j}")).collect();
        header.extend(["label", "domain", "split"].map(String::from));
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.inputs.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(match &self.targets {
                Targets::Classes(c) => c[i].to_string(),
                Targets::Values(v) => v[i].to_string(),
            });
            rec.push(self.domains[i].to_string());
            rec.push(self.splits[i].to_string());
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.into(),
        line,
        message: e.to_string(),
    }
}

/// Assigns `val_fraction` of each training domain's rows to validation.
fn assign_val(domains: &[usize], ood: &BTreeSet<usize>, val_fraction: f64, rng: &mut Rng) -> Vec<Split> {
    let mut splits: Vec<Split> = domains
        .iter()
        .map(|d| if ood.contains(d) { Split::Ood } else { Split::Train })
        .collect();
    let all: BTreeSet<usize> = domains.iter().copied().collect();
    for d in all.difference(ood) {
        let mut rows: Vec<usize> = (0..domains.len()).filter(|&i| domains[i] == *d).collect();
        rng.shuffle(&mut rows);
        let n_val = (rows.len() as f64 * val_fraction).round() as usize;
        for &i in rows.iter().take(n_val.min(rows.len() - 1)) {
            splits[i] = Split::Val;
        }
    }
    splits
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoonsParams {
    pub n_per_domain: usize,
    /// Rotation per domain, in degrees. The last `ood_domains` are held out.
    pub angles: Vec<f64>,
    pub noise_sd: f64,
    pub ood_domains: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MoonsParams {
    fn default() -> Self {
        MoonsParams {
            n_per_domain: 200,
            angles: vec![0.0, 20.0, 40.0, 60.0, 90.0],
            noise_sd: 0.1,
            ood_domains: 1,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Two interleaved half circles per domain, rotated by the domain angle
/// about the pair's center. Half the points of each domain are class 0
/// (upper arc), half class 1 (lower arc), at evenly spaced arc positions.
pub fn gen_rotated_moons(p: &MoonsParams) -> Result<DomainDataset> {
    let mut errors = Vec::new();
    if p.angles.len() < p.ood_domains + 2 {
        errors.push(format!(
            "need at least 2 training angles plus {} held-out, got {} angles",
            p.ood_domains,
            p.angles.len()
        ));
    }
    if p.ood_domains == 0 {
        errors.push("at least one held-out angle is required".into());
    }
    if p.angles.iter().any(|a| !a.is_finite()) {
        errors.push("angles must be finite".into());
    }
    if p.n_per_domain < 2 {
        errors.push("n_per_domain must be at least 2".into());
    }
    if !(p.noise_sd >= 0.0) {
        errors.push("noise_sd must be non-negative".into());
    }
    if !(0.0..1.0).contains(&p.val_fraction) {
        errors.push("val_fraction must lie in [0, 1)".into());
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }

    let mut rng = Rng::with_stream(p.seed, streams::DATA);
    let n = p.n_per_domain;
    let upper = n.div_ceil(2);
    let lower = n - upper;
    let mut rows = Vec::with_capacity(n * p.angles.len());
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    for (d, angle) in p.angles.iter().enumerate() {
        let (s, c) = angle.to_radians().sin_cos();
        for i in 0..n {
            let (class, x, y) = if i < upper {
                let t = std::f64::consts::PI * i as f64 / (upper.max(2) - 1) as f64;
                (0, t.cos(), t.sin())
            } else {
                let j = i - upper;
                let t = std::f64::consts::PI * j as f64 / (lower.max(2) - 1) as f64;
                (1, 1.0 - t.cos(), 0.5 - t.sin())
            };
            // center on (0.5, 0.25), add noise, rotate
            let x = x - 0.5 + p.noise_sd * rng.normal();
            let y = y - 0.25 + p.noise_sd * rng.normal();
            rows.push(vec![c * x - s * y, s * x + c * y]);
            labels.push(class);
            domains.push(d);
        }
    }
    let ood: BTreeSet<usize> = (p.angles.len() - p.ood_domains..p.angles.len()).collect();
    let splits = assign_val(&domains, &ood, p.val_fraction, &mut rng);
    let mut params = BTreeMap::new();
    params.insert("n_per_domain".into(), n.to_string());
    params.insert(
        "angles".into(),
        p.angles.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
    );
    params.insert("noise_sd".into(), p.noise_sd.to_string());
    params.insert("ood_domains".into(), p.ood_domains.to_string());
    params.insert("val_fraction".into(), p.val_fraction.to_string());
    DomainDataset::new(
        Matrix::from_rows(&rows)?,
        Targets::Classes(labels),
        domains,
        splits,
        Some(GeneratorDescriptor {
            name: "moons".into(),
            params,
            seed: p.seed,
        }),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianParams {
    pub n_per_domain: usize,
    pub n_classes: usize,
    pub n_domains: usize,
    pub input_dim: usize,
    /// Distance between any two class means.
    pub class_sep: f64,
    /// Norm of each per-(domain, class) offset.
    pub domain_shift_scale: f64,
    pub noise_sd: f64,
    pub ood_domains: usize,
    /// Domains `2k` and `2k+1` share their offsets.
    pub collapsed_pairs: bool,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        GaussianParams {
            n_per_domain: 200,
            n_classes: 3,
            n_domains: 5,
            input_dim: 10,
            class_sep: 4.0,
            domain_shift_scale: 2.0,
            noise_sd: 1.0,
            ood_domains: 1,
            collapsed_pairs: false,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Class mean `y`: scaled simplex vertex `(sep/√2)(e_y − 1/C)`, padded with
/// zeros to the input dimension.
pub fn gaussian_class_mean(y: usize, n_classes: usize, input_dim: usize, class_sep: f64) -> Vec<f64> {
    let s = class_sep / std::f64::consts::SQRT_2;
    (0..input_dim)
        .map(|j| {
            if j >= n_classes {
                0.0
            } else {
                s * ((j == y) as u8 as f64 - 1.0 / n_classes as f64)
            }
        })
        .collect()
}

/// Gaussian class clusters with a random per-(domain, class) offset, so
/// each domain forms its own sub-cluster inside every class. Samples are
/// class-balanced within each domain (round-robin labels).
pub fn gen_shifted_gaussians(p: &GaussianParams) -> Result<DomainDataset> {
    let mut errors = Vec::new();
    if p.n_per_domain == 0 {
        errors.push("n_per_domain must be positive".into());
    }
    if p.n_classes < 2 {
        errors.push("n_classes must be at least 2".into());
    }
    if p.input_dim < p.n_classes {
        errors.push(format!("input_dim {} must be at least n_classes {}", p.input_dim, p.n_classes));
    }
    if p.n_domains < p.ood_domains + 2 {
        errors.push(format!(
            "need at least 2 training domains plus {} held-out, got {}",
            p.ood_domains, p.n_domains
        ));
    }
    if p.ood_domains == 0 {
        errors.push("at least one held-out domain is required".into());
    }
    for (name, v) in [
        ("class_sep", p.class_sep),
        ("domain_shift_scale", p.domain_shift_scale),
        ("noise_sd", p.noise_sd),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            errors.push(format!("{name} must be a non-negative number"));
        }
    }
    if !(0.0..1.0).contains(&p.val_fraction) {
        errors.push("val_fraction must lie in [0, 1)".into());
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }

    let mut rng = Rng::with_stream(p.seed, streams::DATA);
    let dim = p.input_dim;
    let means: Vec<Vec<f64>> = (0..p.n_classes)
        .map(|y| gaussian_class_mean(y, p.n_classes, dim, p.class_sep))
        .collect();
    let mut offsets = vec![vec![vec![0.0; dim]; p.n_classes]; p.n_domains];
    for d in 0..p.n_domains {
        for offset in offsets[d].iter_mut() {
            let dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            *offset = dir.iter().map(|v| v / norm * p.domain_shift_scale).collect();
        }
    }
    if p.collapsed_pairs {
        for d in (1..p.n_domains).step_by(2) {
            offsets[d] = offsets[d - 1].clone();
        }
    }

    let mut rows = Vec::with_capacity(p.n_per_domain * p.n_domains);
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    for d in 0..p.n_domains {
        for i in 0..p.n_per_domain {
            let y = i % p.n_classes;
            let x: Vec<f64> = (0..dim)
                .map(|j| means[y][j] + offsets[d][y][j] + p.noise_sd * rng.normal())
                .collect();
            rows.push(x);
            labels.push(y);
            domains.push(d);
        }
    }
    let ood: BTreeSet<usize> = (p.n_domains - p.ood_domains..p.n_domains).collect();
    let splits = assign_val(&domains, &ood, p.val_fraction, &mut rng);
    let mut params = BTreeMap::new();
    for (k, v) in [
        ("n_per_domain", p.n_per_domain.to_string()),
        ("n_classes", p.n_classes.to_string()),
        ("n_domains", p.n_domains.to_string()),
        ("input_dim", p.input_dim.to_string()),
        ("class_sep", p.class_sep.to_string()),
        ("domain_shift_scale", p.domain_shift_scale.to_string()),
        ("noise_sd", p.noise_sd.to_string()),
        ("ood_domains", p.ood_domains.to_string()),
        ("collapsed_pairs", p.collapsed_pairs.to_string()),
        ("val_fraction", p.val_fraction.to_string()),
    ] {
        params.insert(k.to_string(), v);
    }
    DomainDataset::new(
        Matrix::from_rows(&rows)?,
        Targets::Classes(labels),
        domains,
        splits,
        Some(GeneratorDescriptor {
            name: "gaussians".into(),
            params,
            seed: p.seed,
        }),
    )
}

/// Options for [`load_tabular`].
#[derive(Clone, Debug, Default)]
pub struct TabularSchema {
    /// `None` infers classification when every label is a non-negative
    /// integer literal, regression otherwise.
    pub task: Option<TaskKind>,
    /// Domain column name; `domain` by default.
    pub domain_column: Option<String>,
    /// Label column name; `label` by default.
    pub label_column: Option<String>,
}

/// Features plus optional label/domain columns, as used by feature dumps
/// and the standalone propagation and compactness commands.
#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub features: Matrix,
    pub labels: Option<Vec<String>>,
    pub domains: Option<Vec<usize>>,
    pub splits: Option<Vec<Split>>,
}

/// Reads `f0..f{p-1}` plus whatever of the named label/domain/split columns
/// are present.
pub fn read_feature_table(path: &Path, label_column: &str, domain_column: &str) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut feature_cols = Vec::new();
    while let Some(c) = col(&format!("f{}", feature_cols.len())) {
        feature_cols.push(c);
    }
    if feature_cols.is_empty() {
        return Err(Error::Schema(format!("{}: no feature columns f0, f1, ...", path.display())));
    }
    let label_col = col(label_column);
    let domain_col = col(domain_column);
    let split_col = col("split");

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    let mut splits = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| record.get(c).unwrap_or("");
        for (j, &c) in feature_cols.iter().enumerate() {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| parse_err(line, format!("f{j}: {:?} is not a number", field(c))))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("f{j}: non-finite value {v}")));
            }
            data.push(v);
        }
        if let Some(c) = label_col {
            labels.push(field(c).to_string());
        }
        if let Some(c) = domain_col {
            let d: usize = field(c)
                .parse()
                .map_err(|_| parse_err(line, format!("{domain_column}: {:?} is not a domain id", field(c))))?;
            domains.push(d);
        }
        if let Some(c) = split_col {
            let s = Split::parse(field(c))
                .ok_or_else(|| parse_err(line, format!("unknown split tag {:?}", field(c))))?;
            splits.push(s);
        }
    }
    let n = data.len() / feature_cols.len();
    if n == 0 {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    Ok(FeatureTable {
        features: Matrix::new(n, feature_cols.len(), data)?,
        labels: label_col.map(|_| labels),
        domains: domain_col.map(|_| domains),
        splits: split_col.map(|_| splits),
    })
}

/// Writes `f0..f{p-1}` then whichever of `label`, `domain` and `split`
/// the table carries. [`read_feature_table`] reads it back exactly.
pub fn write_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let n = table.features.rows();
    let lens = [
        table.labels.as_ref().map(Vec::len),
        table.domains.as_ref().map(Vec::len),
        table.splits.as_ref().map(Vec::len),
    ];
    if lens.iter().flatten().any(|&l| l != n) {
        return Err(Error::shape("write_feature_table", format!("{n} rows, column lengths {lens:?}")));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (0..table.features.cols()).map(|j| format!("f{j}")).collect();
    for (name, present) in [
        ("label", table.labels.is_some()),
        ("domain", table.domains.is_some()),
        ("split", table.splits.is_some()),
    ] {
        if present {
            header.push(name.into());
        }
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..n {
        let mut rec: Vec<String> = table.features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = &table.labels {
            rec.push(l[i].clone());
        }
        if let Some(d) = &table.domains {
            rec.push(d[i].to_string());
        }
        if let Some(s) = &table.splits {
            rec.push(s[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a dataset written in the CSV layout described at module level.
pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<DomainDataset> {
    let label_column = schema.label_column.as_deref().unwrap_or("label");
    let domain_column = schema.domain_column.as_deref().unwrap_or("domain");
    let table = read_feature_table(path, label_column, domain_column)?;
    let labels = table
        .labels
        .ok_or_else(|| Error::Schema(format!("{}: missing column {label_column:?}", path.display())))?;
    let domains = table
        .domains
        .ok_or_else(|| Error::Schema(format!("{}: missing column {domain_column:?}", path.display())))?;
    let n = labels.len();
    let splits = table.splits.unwrap_or_else(|| vec![Split::Train; n]);

    let all_integer = labels.iter().all(|l| l.parse::<usize>().is_ok());
    let task = schema.task.unwrap_or(if all_integer {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    });
    let targets = match task {
        TaskKind::Classification => Targets::Classes(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    l.parse().map_err(|_| Error::Parse {
                        path: path.into(),
                        line: i + 2,
                        message: format!("label {l:?} is not a class id"),
                    })
                })
                .collect::<Result<_>>()?,
        ),
        TaskKind::Regression => Targets::Values(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| match l.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse {
                        path: path.into(),
                        line: i + 2,
                        message: format!("label {l:?} is not a finite number"),
                    }),
                })
                .collect::<Result<_>>()?,
        ),
    };
    DomainDataset::new(table.features, targets, domains, splits, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_are_balanced_and_reproducible() {
        let p = MoonsParams {
            n_per_domain: 100,
            seed: 4,
            ..Default::default()
        };
        let a = gen_rotated_moons(&p).unwrap();
        assert_eq!(a, gen_rotated_moons(&p).unwrap());
        let Targets::Classes(labels) = &a.targets else { panic!() };
        for d in 0..5 {
            let ones = (0..a.len()).filter(|&i| a.domains[i] == d && labels[i] == 1).count();
            assert_eq!(ones, 50);
        }
        assert_eq!(a.train_domains(), vec![0, 1, 2, 3]);
        assert_eq!(a.ood_domains(), vec![4]);
        assert!(a.indices(Split::Val).len() == 80);
    }

    #[test]
    fn half_turn_rotation_negates_points() {
        let p = MoonsParams {
            n_per_domain: 40,
            angles: vec![0.0, 0.0, 180.0],
            noise_sd: 0.0,
            ..Default::default()
        };
        let ds = gen_rotated_moons(&p).unwrap();
        let base: Vec<usize> = (0..ds.len()).filter(|&i| ds.domains[i] == 0).collect();
        let dup: Vec<usize> = (0..ds.len()).filter(|&i| ds.domains[i] == 1).collect();
        let ood = ds.indices(Split::Ood);
        assert_eq!(ood.len(), 40);
        for ((&b, &o), &d) in base.iter().zip(&ood).zip(&dup) {
            for j in 0..2 {
                assert!((ds.inputs.get(o, j) + ds.inputs.get(b, j)).abs() < 1e-12);
                // same angle twice gives identical domains
                assert_eq!(ds.inputs.get(d, j), ds.inputs.get(b, j));
            }
        }
    }

    #[test]
    fn moons_rejects_bad_angles() {
        let p = MoonsParams {
            angles: vec![0.0, 10.0],
            ..Default::default()
        };
        assert!(matches!(gen_rotated_moons(&p), Err(Error::Config(_))));
        let p = MoonsParams {
            angles: vec![0.0, f64::NAN, 3.0],
            ..Default::default()
        };
        assert!(gen_rotated_moons(&p).is_err());
    }

    #[test]
    fn gaussians_structure() {
        let p = GaussianParams {
            n_per_domain: 60,
            n_domains: 5,
            collapsed_pairs: true,
            noise_sd: 0.0,
            ..Default::default()
        };
        let ds = gen_shifted_gaussians(&p).unwrap();
        assert_eq!(ds.len(), 300);
        assert_eq!(ds.train_domains(), vec![0, 1, 2, 3]);
        // zero noise + collapsed pairs: domains 0 and 1 coincide exactly
        for i in 0..60 {
            assert_eq!(ds.inputs.row(i), ds.inputs.row(60 + i));
            assert_ne!(ds.inputs.row(i), ds.inputs.row(120 + i));
        }
        let bad = GaussianParams {
            n_classes: 1,
            n_domains: 2,
            ..Default::default()
        };
        match gen_shifted_gaussians(&bad) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn class_means_are_equidistant() {
        let m: Vec<Vec<f64>> = (0..4).map(|y| gaussian_class_mean(y, 4, 6, 3.0)).collect();
        for a in 0..4 {
            for b in 0..a {
                let d: f64 = m[a].iter().zip(&m[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!((d - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = gen_shifted_gaussians(&GaussianParams {
            n_per_domain: 30,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        ds.write_csv(&path).unwrap();
        let back = load_tabular(&path, &TabularSchema::default()).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.domains, ds.domains);
        assert_eq!(back.splits, ds.splits);
    }

    #[test]
    fn nan_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f0,f1,label,domain\n1,2,0,0\n3,NaN,1,0\n").unwrap();
        match load_tabular(&path, &TabularSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_only_and_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f0,label,domain\n").unwrap();
        assert!(matches!(load_tabular(&path, &TabularSchema::default()), Err(Error::Schema(_))));
        std::fs::write(&path, "f0,label\n1,0\n").unwrap();
        assert!(matches!(load_tabular(&path, &TabularSchema::default()), Err(Error::Schema(_))));
        std::fs::write(&path, "f0,label,domain,split\n1,0,0,test\n").unwrap();
        assert!(matches!(
            load_tabular(&path, &TabularSchema::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn ood_overlap_is_rejected() {
        let ds = DomainDataset::new(
            Matrix::ones(2, 1),
            Targets::Classes(vec![0, 1]),
            vec![0, 0],
            vec![Split::Train, Split::Ood],
            None,
        );
        assert!(matches!(ds, Err(Error::Schema(_))));
    }

    #[test]
    fn regression_labels_are_inferred() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "f0,label,domain\n1,0.5,0\n2,1.25,1\n").unwrap();
        let ds = load_tabular(&path, &TabularSchema::default()).unwrap();
        assert_eq!(ds.task_kind(), TaskKind::Regression);
    }

    #[test]
    fn feature_table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let table = FeatureTable {
            features: Matrix::from_rows(&[[0.1, -2.5e-17], [3.0, 1.0 / 3.0]]).unwrap(),
            labels: Some(vec!["1".into(), "0".into()]),
            domains: Some(vec![4, 2]),
            splits: None,
        };
        write_feature_table(&path, &table).unwrap();
        let back = read_feature_table(&path, "label", "domain").unwrap();
        assert_eq!(back.features, table.features);
        assert_eq!(back.labels, table.labels);
        assert_eq!(back.domains, table.domains);
        assert!(back.splits.is_none());
    }
}
