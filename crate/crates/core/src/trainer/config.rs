use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compactness::{DEFAULT_EPSILON, DEFAULT_RHO, DEFAULT_XI};
use crate::error::{Error, Result};
use crate::graph::GraphMode;
use crate::labelprop::DEFAULT_ALPHA;
use crate::losses::TaskKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Dann,
    #[default]
    Ladg,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "dann" => Ok(Method::Dann),
            "ladg" => Ok(Method::Ladg),
            other => Err(Error::Config(vec![format!("unknown method {other:?} (expected erm, dann or ladg)")])),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Erm => "erm",
            Method::Dann => "dann",
            Method::Ladg => "ladg",
        })
    }
}

/// Every hyperparameter of a training run. Missing keys in a config file
/// take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// Propagation restart weight.
    pub alpha: f64,
    /// Log-cosh sharpness of the rate loss.
    pub rho: f64,
    /// Decay of the moving average `R̄`.
    pub xi: f64,
    /// Affinity scale.
    pub tau: f64,
    /// Coding-rate precision.
    pub epsilon: f64,
    /// Weight of the adversarial term (`L_prior` for LADG, reversed domain
    /// cross-entropy for DANN).
    pub lambda: f64,
    /// Weight of the rate-maintenance loss.
    pub gamma: f64,
    pub k_nn: usize,
    /// Domains drawn per minibatch; all training domains when absent.
    pub domains_per_batch: Option<usize>,
    pub samples_per_domain: usize,
    /// ERM warm-up steps, counted within `total_steps`.
    pub pretrain_steps: usize,
    pub total_steps: usize,
    /// Learning rate for the featurizer and predictor.
    pub lr: f64,
    /// Learning rate for the discriminator.
    pub lr_disc: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip for both optimizers; 0 disables it.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub leave_one_out: bool,
    pub graph_mode: GraphMode,
    /// Must agree with the dataset when given.
    pub task_kind: Option<TaskKind>,
    pub featurizer_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub disc_hidden: Vec<usize>,
    /// Width `d_g` of the discriminator projection.
    pub disc_dim: usize,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    pub log_every: usize,
    /// Training rows used for the logged compactness metrics.
    pub probe_size: usize,
    /// Feature dump interval in steps; no dumps when absent.
    pub dump_features_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Ladg,
            alpha: DEFAULT_ALPHA,
            rho: DEFAULT_RHO,
            xi: DEFAULT_XI,
            tau: 2.0,
            epsilon: DEFAULT_EPSILON,
            lambda: 1.0,
            gamma: 0.1,
            k_nn: 10,
            domains_per_batch: None,
            samples_per_domain: 16,
            pretrain_steps: 600,
            total_steps: 1600,
            lr: 0.02,
            lr_disc: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip: Some(1.0),
            seed: 0,
            leave_one_out: false,
            graph_mode: GraphMode::Symmetric,
            task_kind: None,
            featurizer_hidden: vec![64],
            feature_dim: 64,
            disc_hidden: vec![64],
            disc_dim: 32,
            disc_steps: 1,
            log_every: 50,
            probe_size: 256,
            dump_features_every: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Batch size `K × samples_per_domain` for a dataset with
    /// `train_domains` training domains.
    /// The clip norm handed to the optimizers.
    pub fn clip_norm(&self) -> Option<f64> {
        self.grad_clip.filter(|&c| c > 0.0)
    }

    pub fn batch_size(&self, train_domains: usize) -> usize {
        self.domains_per_batch.unwrap_or(train_domains) * self.samples_per_domain
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut open = |name: &str, v: f64, lo: f64, hi: f64| {
            if !(v > lo && v < hi) {
                errs.push(format!("{name} must lie in ({lo}, {hi}), got {v}"));
            }
        };
        open("alpha", self.alpha, 0.0, 1.0);
        open("xi", self.xi, 0.0, 1.0);
        open("rho", self.rho, 0.0, f64::INFINITY);
        open("tau", self.tau, 0.0, f64::INFINITY);
        open("epsilon", self.epsilon, 0.0, f64::INFINITY);
        open("lr", self.lr, 0.0, f64::INFINITY);
        open("lr_disc", self.lr_disc, 0.0, f64::INFINITY);
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            errs.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for (name, v) in [
            ("k_nn", self.k_nn),
            ("samples_per_domain", self.samples_per_domain),
            ("total_steps", self.total_steps),
            ("feature_dim", self.feature_dim),
            ("disc_dim", self.disc_dim),
            ("disc_steps", self.disc_steps),
            ("log_every", self.log_every),
            ("probe_size", self.probe_size),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if self.featurizer_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            errs.push("hidden widths must be positive".into());
        }
        if self.pretrain_steps > self.total_steps {
            errs.push(format!(
                "pretrain_steps {} exceeds total_steps {}",
                self.pretrain_steps, self.total_steps
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c >= 0.0 && c.is_finite()) {
                errs.push(format!("grad_clip must be a non-negative number, got {c}"));
            }
        }
        if self.dump_features_every == Some(0) {
            errs.push("dump_features_every must be positive".into());
        }
        match self.domains_per_batch {
            Some(0) => errs.push("domains_per_batch must be positive".into()),
            Some(1) if self.method != Method::Erm => {
                errs.push("adversarial methods need domains_per_batch of at least 2".into())
            }
            Some(k) if k * self.samples_per_domain < self.k_nn + 1 => errs.push(format!(
                "batch size {} must be at least k_nn + 1 = {}",
                k * self.samples_per_domain,
                self.k_nn + 1
            )),
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Checks that depend on the dataset: domain counts and batch size.
    pub fn validate_for(&self, train_domains: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.method != Method::Erm && train_domains < 2 {
            errs.push(format!("{} needs at least 2 training domains, dataset has {train_domains}", self.method));
        }
        if let Some(k) = self.domains_per_batch {
            if k > train_domains {
                errs.push(format!("domains_per_batch {k} exceeds the {train_domains} training domains"));
            }
        }
        let n = self.batch_size(train_domains);
        if n < self.k_nn + 1 {
            errs.push(format!("batch size {n} must be at least k_nn + 1 = {}", self.k_nn + 1));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let back = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.batch_size(4), 64);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let c = TrainConfig::from_toml_str("method = \"dann\"\nlambda = 0.5\n").unwrap();
        assert_eq!(c.method, Method::Dann);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.alpha, 0.8);
        assert_eq!(c.pretrain_steps, 600);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(TrainConfig::from_toml_str("alpah = 0.5"), Err(Error::Config(_))));
    }

    #[test]
    fn all_violations_are_listed() {
        let c = TrainConfig {
            alpha: 1.0,
            xi: 0.0,
            rho: -1.0,
            k_nn: 0,
            pretrain_steps: 10,
            total_steps: 5,
            ..Default::default()
        };
        match c.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 5, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_checks() {
        let c = TrainConfig::default();
        assert!(c.validate_for(1).is_err());
        let erm = TrainConfig {
            method: Method::Erm,
            ..Default::default()
        };
        erm.validate_for(1).unwrap();
        let c = TrainConfig {
            domains_per_batch: Some(5),
            ..Default::default()
        };
        assert!(c.validate_for(4).is_err());
        let c = TrainConfig {
            samples_per_domain: 2,
            ..Default::default()
        };
        // 2 domains x 2 samples < k_nn + 1
        assert!(c.validate_for(2).is_err());
    }
}
