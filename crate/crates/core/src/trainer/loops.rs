use crate::compactness::{coding_rate, coding_rate_loss_var, rate_loss_value, RateTracker};
use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::graph::{build_affinity_var, knn_neighbors};
use crate::labelprop::{propagate_closed_form_var, SeedMode};
use crate::losses::{dann_adversarial_loss, domain_disc_loss, prior_matching_loss, task_loss, TaskKind};
use crate::model::{Featurizer, LinearPredictor, Mlp, Sgd};
use crate::numerics::{Matrix, Tape, Var};
use crate::rng::{streams, Rng};

use super::config::{Method, TrainConfig};
use super::eval::{evaluate_rows, score_name, InferenceModels, TrainedModels};
use super::metrics::{MetricsRecord, Phase};
use super::sampler::{DomainSampler, Minibatch};

/// Emitted while training runs.
#[derive(Debug)]
pub enum Event<'a> {
    Metrics(&'a MetricsRecord),
    /// Minibatch features of a step, as fed to the generator losses.
    Features {
        step: usize,
        features: &'a Matrix,
        batch: &'a Minibatch,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub models: TrainedModels,
    pub history: Vec<MetricsRecord>,
}

/// Losses of the last completed step.
#[derive(Clone, Debug, Default)]
pub struct StepLosses {
    pub l_t: f64,
    pub l_dom: Option<f64>,
    pub l_prior: Option<f64>,
    pub l_cr: Option<f64>,
    pub batch_r: f64,
    pub r_bar: Option<f64>,
}

/// Training state for one run. [`Trainer::step`] performs one update of
/// the configured method; the half-steps are public for inspection.
pub struct Trainer<'d> {
    dataset: &'d DomainDataset,
    config: TrainConfig,
    task: TaskKind,
    sampler: DomainSampler,
    rng: Rng,
    featurizer: Mlp,
    predictor: Mlp,
    discriminator: Option<Mlp>,
    opt_gen: Sgd,
    opt_disc: Sgd,
    tracker: RateTracker,
    pretrain_rates: Vec<f64>,
    probe: Vec<usize>,
    step: usize,
}

fn seed_mode(leave_one_out: bool) -> SeedMode {
    if leave_one_out {
        SeedMode::LeaveOneOut
    } else {
        SeedMode::Literal
    }
}

impl<'d> Trainer<'d> {
    pub fn new(dataset: &'d DomainDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let task = dataset.task_kind();
        if let Some(k) = config.task_kind {
            if k != task {
                return Err(Error::Config(vec![format!("task_kind is {k} but the dataset is {task}")]));
            }
        }
        let train_domains = dataset.train_domains();
        config.validate_for(train_domains.len())?;
        let sampler = DomainSampler::new(dataset, config.domains_per_batch, config.samples_per_domain)?;

        let outputs = match task {
            TaskKind::Classification => dataset.n_classes(),
            TaskKind::Regression => 1,
        };
        let mut widths = vec![dataset.input_width()];
        widths.extend(&config.featurizer_hidden);
        widths.push(config.feature_dim);
        let featurizer = Mlp::new(&widths, &mut Rng::with_stream(config.seed, streams::FEATURIZER_INIT))?;
        let predictor = Mlp::new(
            &[config.feature_dim, outputs],
            &mut Rng::with_stream(config.seed, streams::PREDICTOR_INIT),
        )?;
        let disc_out = match config.method {
            Method::Erm => None,
            Method::Ladg => Some(config.disc_dim),
            Method::Dann => Some(train_domains.len()),
        };
        let discriminator = disc_out
            .map(|out| {
                let mut w = vec![config.feature_dim];
                w.extend(&config.disc_hidden);
                w.push(out);
                Mlp::new(&w, &mut Rng::with_stream(config.seed, streams::DISCRIMINATOR_INIT))
            })
            .transpose()?;

        let mut probe = dataset.indices(Split::Train);
        if probe.len() > config.probe_size {
            let mut rng = Rng::with_stream(config.seed, streams::PROBE);
            let mut pick = rng.choose_distinct(probe.len(), config.probe_size);
            pick.sort_unstable();
            probe = pick.into_iter().map(|j| probe[j]).collect();
        }
        if probe.len() < 2 {
            return Err(Error::Degenerate("need at least two training rows".into()));
        }

        Ok(Trainer {
            dataset,
            task,
            sampler,
            rng: Rng::with_stream(config.seed, streams::SAMPLER),
            featurizer,
            predictor,
            discriminator,
            opt_gen: Sgd::new(config.lr, config.momentum, config.weight_decay).with_clip_norm(config.clip_norm()),
            opt_disc: Sgd::new(config.lr_disc, config.momentum, config.weight_decay).with_clip_norm(config.clip_norm()),
            tracker: RateTracker::new(config.xi),
            pretrain_rates: Vec::new(),
            probe,
            step: 0,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn featurizer(&self) -> &Mlp {
        &self.featurizer
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor
    }

    pub fn discriminator(&self) -> Option<&Mlp> {
        self.discriminator.as_ref()
    }

    pub fn tracker(&self) -> &RateTracker {
        &self.tracker
    }

    pub fn phase(&self) -> Phase {
        if self.config.method == Method::Erm || self.step < self.config.pretrain_steps {
            Phase::Pretrain
        } else {
            Phase::Adversarial
        }
    }

    pub fn models(&self) -> Result<TrainedModels> {
        Ok(TrainedModels {
            featurizer: Featurizer(self.featurizer.clone()),
            predictor: LinearPredictor::from_mlp(self.predictor.clone())?,
            discriminator: self.discriminator.clone(),
            task_kind: self.task,
            method: self.config.method,
        })
    }

    pub fn sample_batch(&mut self) -> Result<Minibatch> {
        self.sampler.sample(self.dataset, &mut self.rng)
    }

    /// One full update: sample, then the half-steps of the current phase.
    /// Returns the batch, its features before the generator update, and
    /// the step's losses.
    pub fn step(&mut self) -> Result<(Minibatch, Matrix, StepLosses)> {
        let step = self.step;
        let out = self.step_inner().map_err(|e| e.at_step(step))?;
        self.step += 1;
        Ok(out)
    }

    fn step_inner(&mut self) -> Result<(Minibatch, Matrix, StepLosses)> {
        let batch = self.sample_batch()?;
        let phase = self.phase();
        let mut losses = StepLosses::default();
        if phase == Phase::Adversarial {
            if !self.tracker.is_initialized() {
                self.init_tracker(&batch)?;
            }
            losses.r_bar = Some(self.tracker.r_bar()?);
            for _ in 0..self.config.disc_steps {
                losses.l_dom = Some(self.discriminator_update(&batch)?);
            }
        }
        let (features, gen) = self.generator_update(&batch, phase)?;
        losses.l_t = gen.l_t;
        losses.l_prior = gen.l_prior;
        losses.l_cr = gen.l_cr;
        losses.batch_r = coding_rate(&features, self.config.epsilon)?;
        match phase {
            Phase::Pretrain => self.pretrain_rates.push(losses.batch_r),
            Phase::Adversarial => self.tracker.update(losses.batch_r)?,
        }
        Ok((batch, features, losses))
    }

    /// `R̄` starts at the mean batch rate over the final 20% of pretraining,
    /// or at the current batch's rate when there was no pretraining.
    fn init_tracker(&mut self, batch: &Minibatch) -> Result<()> {
        let r0 = if self.pretrain_rates.is_empty() {
            coding_rate(&self.featurizer.forward(&batch.inputs)?, self.config.epsilon)?
        } else {
            let window = self.pretrain_rates.len().div_ceil(5).max(1);
            let tail = &self.pretrain_rates[self.pretrain_rates.len() - window..];
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        self.tracker.initialize(r0);
        Ok(())
    }

    /// Discriminator half-step on detached features. LADG minimizes the
    /// propagated domain cross-entropy; DANN its global head's
    /// cross-entropy. Returns the loss before the update.
    pub fn discriminator_update(&mut self, batch: &Minibatch) -> Result<f64> {
        let disc = self
            .discriminator
            .as_mut()
            .ok_or_else(|| Error::State("ERM has no discriminator".into()))?;
        let features = self.featurizer.forward(&batch.inputs)?;
        let tape = Tape::new();
        let bound = disc.bind(&tape, true);
        let out = bound.forward(tape.constant(features))?;
        let loss = match self.config.method {
            Method::Ladg => {
                let probs = propagated_probs(out, &batch.local_domains, &self.config)?;
                domain_disc_loss(probs, &batch.local_domains)?
            }
            Method::Dann => dann_adversarial_loss(out, &batch.global_domains)?,
            Method::Erm => unreachable!("checked above"),
        };
        let value = loss.scalar()?;
        let grads = bound.gradients(&tape.backward(loss)?);
        self.opt_disc.step(disc.params_mut(), &grads)?;
        Ok(value)
    }

    /// Featurizer and predictor half-step. In the pretraining phase this is
    /// plain ERM. Zero-weighted terms are left off the tape entirely.
    pub fn generator_update(&mut self, batch: &Minibatch, phase: Phase) -> Result<(Matrix, StepLosses)> {
        let cfg = &self.config;
        let tape = Tape::new();
        let f = self.featurizer.bind(&tape, true);
        let p = self.predictor.bind(&tape, true);
        let h = f.forward(tape.constant(batch.inputs.clone()))?;
        let lt = task_loss(p.forward(h)?, &batch.targets, self.task)?;
        let mut losses = StepLosses {
            l_t: lt.scalar()?,
            ..Default::default()
        };
        let mut total = lt;
        if phase == Phase::Adversarial {
            let disc = self.discriminator.as_ref().expect("adversarial phase has a discriminator");
            let frozen = disc.bind(&tape, false);
            if cfg.lambda > 0.0 {
                let out = frozen.forward(h)?;
                let adv = match cfg.method {
                    Method::Ladg => {
                        let probs = propagated_probs(out, &batch.local_domains, cfg)?;
                        let lp = prior_matching_loss(probs, &batch.prior())?;
                        losses.l_prior = Some(lp.scalar()?);
                        lp.scale(cfg.lambda)
                    }
                    // gradient reversal: the featurizer ascends the head's loss
                    _ => dann_adversarial_loss(out, &batch.global_domains)?.scale(-cfg.lambda),
                };
                total = total.add(adv)?;
            }
            if cfg.gamma > 0.0 {
                let lcr = coding_rate_loss_var(h, &self.tracker, cfg.rho, cfg.epsilon)?;
                losses.l_cr = Some(lcr.scalar()?);
                total = total.add(lcr.scale(cfg.gamma))?;
            }
        }
        let features = h.value();
        let grads = tape.backward(total)?;
        let mut all = f.gradients(&grads);
        all.extend(p.gradients(&grads));
        let mut params = self.featurizer.params_mut();
        params.extend(self.predictor.params_mut());
        self.opt_gen.step(params, &all)?;
        Ok((features, losses))
    }

    /// Fills in `L_prior`/`L_cr` that were skipped by a zero weight, using
    /// the batch features of the step. Consumes no randomness.
    fn complete_losses(&self, batch: &Minibatch, features: &Matrix, losses: &mut StepLosses) -> Result<()> {
        if self.config.method == Method::Ladg && losses.l_prior.is_none() {
            if let (Some(disc), Some(_)) = (&self.discriminator, losses.r_bar) {
                let tape = Tape::new();
                let out = disc.bind(&tape, false).forward(tape.constant(features.clone()))?;
                let probs = propagated_probs(out, &batch.local_domains, &self.config)?;
                losses.l_prior = Some(prior_matching_loss(probs, &batch.prior())?.scalar()?);
            }
        }
        if losses.l_cr.is_none() {
            if let Some(r_bar) = losses.r_bar {
                losses.l_cr = Some(rate_loss_value(losses.batch_r, r_bar, self.config.rho));
            }
        }
        Ok(())
    }

    /// Metrics record for the state after the last step.
    fn record(&self, batch: &Minibatch, features: &Matrix, mut losses: StepLosses) -> Result<MetricsRecord> {
        self.complete_losses(batch, features, &mut losses)?;
        let cfg = &self.config;
        let models = InferenceModels {
            featurizer: Featurizer(self.featurizer.clone()),
            predictor: LinearPredictor::from_mlp(self.predictor.clone())?,
            task_kind: self.task,
        };
        let probe = evaluate_rows(&models, self.dataset, self.probe.clone(), Split::Train, cfg.k_nn, cfg.epsilon)?;
        let eval = |split: Split| -> Result<Option<f64>> {
            let idx = self.dataset.indices(split);
            if idx.len() < 2 {
                return Ok(None);
            }
            Ok(Some(evaluate_rows(&models, self.dataset, idx, split, cfg.k_nn, cfg.epsilon)?.score))
        };
        let val_idx = self.dataset.indices(Split::Val);
        let mixing = if val_idx.len() >= 2 {
            evaluate_rows(&models, self.dataset, val_idx, Split::Val, cfg.k_nn, cfg.epsilon)?.mixing_entropy
        } else {
            probe.mixing_entropy
        };
        Ok(MetricsRecord {
            step: self.step,
            phase: if self.config.method != Method::Erm && self.step > self.config.pretrain_steps {
                Phase::Adversarial
            } else {
                Phase::Pretrain
            },
            l_t: losses.l_t,
            l_dom: losses.l_dom,
            l_prior: losses.l_prior,
            l_cr: losses.l_cr,
            batch_r: losses.batch_r,
            r_bar: losses.r_bar,
            r: probe.compactness.coding_rate,
            r_c: probe.compactness.classwise_rate,
            v_k: probe.compactness.v_k,
            mixing_entropy: mixing,
            score: score_name(self.task).into(),
            train_score: probe.score,
            val_score: eval(Split::Val)?,
            ood_score: eval(Split::Ood)?,
        })
    }

    /// Runs to `total_steps`, logging every `log_every` steps and at the
    /// end, and dumping features every `dump_features_every` steps.
    pub fn run(mut self, mut observer: impl FnMut(Event<'_>) -> Result<()>) -> Result<TrainOutput> {
        let mut history = Vec::new();
        while !self.is_finished() {
            let (batch, features, losses) = self.step()?;
            let done = self.step;
            let dump = self.config.dump_features_every.is_some_and(|every| done % every == 0);
            if dump {
                observer(Event::Features {
                    step: done,
                    features: &features,
                    batch: &batch,
                })?;
            }
            if dump || done % self.config.log_every == 0 || self.is_finished() {
                let rec = self.record(&batch, &features, losses).map_err(|e| e.at_step(done - 1))?;
                observer(Event::Metrics(&rec))?;
                history.push(rec);
            }
        }
        Ok(TrainOutput {
            models: self.models()?,
            history,
        })
    }
}

/// Domain pseudo-probabilities of a minibatch from projected features:
/// K-NN mask on the projections, affinity, closed-form propagation.
fn propagated_probs<'t>(projected: Var<'t>, domains: &Matrix, cfg: &TrainConfig) -> Result<Var<'t>> {
    let neighbors = knn_neighbors(&projected.value(), cfg.k_nn)?;
    let graph = build_affinity_var(projected, &neighbors, cfg.tau, cfg.graph_mode)?;
    Ok(propagate_closed_form_var(graph.normalized, domains, cfg.alpha, seed_mode(cfg.leave_one_out))?.probs)
}

pub fn train(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainOutput> {
    Trainer::new(dataset, config)?.run(|_| Ok(()))
}

pub fn train_with(
    dataset: &DomainDataset,
    config: &TrainConfig,
    observer: impl FnMut(Event<'_>) -> Result<()>,
) -> Result<TrainOutput> {
    Trainer::new(dataset, config)?.run(observer)
}

fn with_method(config: &TrainConfig, method: Method) -> TrainConfig {
    TrainConfig {
        method,
        ..config.clone()
    }
}

pub fn train_erm(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainOutput> {
    train(dataset, &with_method(config, Method::Erm))
}

pub fn train_dann(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainOutput> {
    train(dataset, &with_method(config, Method::Dann))
}

pub fn train_ladg(dataset: &DomainDataset, config: &TrainConfig) -> Result<TrainOutput> {
    train(dataset, &with_method(config, Method::Ladg))
}
