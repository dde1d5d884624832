use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compactness::{self, CompactnessReport};
use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::losses::{TaskKind, Targets};
use crate::model::{Featurizer, LinearPredictor, Mlp, MlpCheckpoint};
use crate::numerics::Matrix;

use super::config::Method;
use super::metrics::{accuracy, mixing_entropy, pearson_r};

/// What evaluation needs: the featurizer and predictor only.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceModels {
    pub featurizer: Featurizer,
    pub predictor: LinearPredictor,
    pub task_kind: TaskKind,
}

/// All networks of a finished run. `discriminator` is the propagation
/// projection for LADG, the softmax domain head for DANN, absent for ERM.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModels {
    pub featurizer: Featurizer,
    pub predictor: LinearPredictor,
    pub discriminator: Option<Mlp>,
    pub task_kind: TaskKind,
    pub method: Method,
}

impl TrainedModels {
    pub fn inference(&self) -> InferenceModels {
        InferenceModels {
            featurizer: self.featurizer.clone(),
            predictor: self.predictor.clone(),
            task_kind: self.task_kind,
        }
    }
}

pub const MANIFEST_FORMAT: &str = "ladg-checkpoint/1";

/// `manifest.json` of a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub method: Method,
    pub task_kind: TaskKind,
    pub input_width: usize,
    pub outputs: usize,
    /// Role name to file name, relative to the directory.
    pub files: Vec<(String, String)>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

impl TrainedModels {
    /// Writes `manifest.json` plus one JSON file per network into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut nets: Vec<(&str, &Mlp)> = vec![("featurizer", &self.featurizer.0), ("predictor", &self.predictor.0)];
        if let Some(d) = &self.discriminator {
            nets.push(("discriminator", d));
        }
        let mut files = Vec::new();
        for (role, mlp) in nets {
            let file = format!("{role}.json");
            MlpCheckpoint::from_mlp(role, mlp).save(&dir.join(&file))?;
            files.push((role.to_string(), file));
        }
        let manifest = CheckpointManifest {
            format: MANIFEST_FORMAT.into(),
            method: self.method,
            task_kind: self.task_kind,
            input_width: self.featurizer.0.input_width(),
            outputs: self.predictor.0.output_width(),
            files,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }
}

/// Loads the featurizer and predictor of a checkpoint directory. Any
/// discriminator file is ignored.
pub fn load_inference(dir: &Path) -> Result<InferenceModels> {
    let manifest: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Schema(format!(
            "{}: unsupported checkpoint format {:?}",
            dir.display(),
            manifest.format
        )));
    }
    let file_of = |role: &str| -> Result<PathBuf> {
        manifest
            .files
            .iter()
            .find(|(r, _)| r == role)
            .map(|(_, f)| dir.join(f))
            .ok_or_else(|| Error::Schema(format!("{}: checkpoint has no {role}", dir.display())))
    };
    let featurizer = Featurizer(MlpCheckpoint::load(&file_of("featurizer")?)?.to_mlp()?);
    let predictor = LinearPredictor::from_mlp(MlpCheckpoint::load(&file_of("predictor")?)?.to_mlp()?)?;
    if featurizer.feature_width() != predictor.0.input_width() {
        return Err(Error::Schema(format!(
            "{}: featurizer emits {} features, predictor expects {}",
            dir.display(),
            featurizer.feature_width(),
            predictor.0.input_width()
        )));
    }
    Ok(InferenceModels {
        featurizer,
        predictor,
        task_kind: manifest.task_kind,
    })
}

/// Summary of one evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub n: usize,
    pub task_kind: TaskKind,
    /// `accuracy` or `pearson_r`.
    pub score_name: String,
    pub score: f64,
    pub mixing_entropy: f64,
    pub compactness: CompactnessReport,
}

pub fn score_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Classification => "accuracy",
        TaskKind::Regression => "pearson_r",
    }
}

/// Task score of predictions against targets.
pub fn score(outputs: &Matrix, targets: &Targets) -> Result<f64> {
    match targets {
        Targets::Classes(c) => accuracy(outputs, c),
        Targets::Values(v) => pearson_r(&outputs.col_values(0), v),
    }
}

/// Evaluates rows of `dataset` with features from `models`. `k` sets the
/// neighborhood size of both the mixing entropy and `V_k`.
pub fn evaluate_rows(
    models: &InferenceModels,
    dataset: &DomainDataset,
    indices: Vec<usize>,
    split: Split,
    k: usize,
    epsilon: f64,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Degenerate(format!("split {split} is empty")));
    }
    if dataset.task_kind() != models.task_kind {
        return Err(Error::Schema(format!(
            "task kind mismatch: checkpoint is {}, dataset is {}",
            models.task_kind,
            dataset.task_kind()
        )));
    }
    if dataset.input_width() != models.featurizer.0.input_width() {
        return Err(Error::Schema(format!(
            "dataset has {} input columns, checkpoint expects {}",
            dataset.input_width(),
            models.featurizer.0.input_width()
        )));
    }
    if let Targets::Classes(c) = &dataset.targets {
        let outputs = models.predictor.0.output_width();
        if let Some(&bad) = indices.iter().map(|&i| &c[i]).find(|&&y| y >= outputs) {
            return Err(Error::Schema(format!("class id {bad} exceeds the checkpoint's {outputs} outputs")));
        }
    }
    let view = dataset.rows(indices)?;
    let features = models.featurizer.0.forward(&view.inputs)?;
    let outputs = models.predictor.0.forward(&features)?;
    let n = view.indices.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("split {split} has a single row")));
    }
    let labels = match &view.targets {
        Targets::Classes(c) => Some(c.as_slice()),
        Targets::Values(_) => None,
    };
    let mixing = mixing_entropy(&features, &view.domains, k)?;
    let compact = compactness::report(&features, labels, epsilon, k)?;
    Ok(EvalReport {
        split,
        n,
        task_kind: models.task_kind,
        score_name: score_name(models.task_kind).into(),
        score: score(&outputs, &view.targets)?,
        mixing_entropy: mixing,
        compactness: compact,
    })
}

pub fn evaluate(models: &InferenceModels, dataset: &DomainDataset, split: Split, k: usize, epsilon: f64) -> Result<EvalReport> {
    evaluate_rows(models, dataset, dataset.indices(split), split, k, epsilon)
}
