//! Scalar training objectives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelprop::one_hot;
use crate::numerics::{Matrix, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Classification,
    Regression,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(TaskKind::Classification),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Config(vec![format!("unknown task kind {other:?}")])),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        })
    }
}

/// Per-sample supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Classes(_) => TaskKind::Classification,
            Targets::Values(_) => TaskKind::Regression,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Mean cross-entropy on logits, or mean squared error on an n x 1 output.
pub fn task_loss<'t>(predictions: Var<'t>, targets: &Targets, kind: TaskKind) -> Result<Var<'t>> {
    let tape = predictions.tape();
    let (n, c) = predictions.shape();
    if targets.len() != n {
        return Err(Error::shape("task_loss", format!("{n} predictions, {} targets", targets.len())));
    }
    match (kind, targets) {
        (TaskKind::Classification, Targets::Classes(ids)) => {
            let y = tape.constant(one_hot(ids, c)?);
            Ok(predictions.row_log_softmax().mul(y)?.sum().scale(-1.0 / n as f64))
        }
        (TaskKind::Regression, Targets::Values(values)) => {
            if c != 1 {
                return Err(Error::shape("task_loss", format!("regression needs one output column, got {c}")));
            }
            let diff = predictions.sub(tape.constant(Matrix::column(values)?))?;
            Ok(diff.mul(diff)?.mean())
        }
        (kind, targets) => Err(Error::Config(vec![format!(
            "task kind {kind} does not match {} targets",
            targets.kind()
        )])),
    }
}

/// Minibatch domain prior `q_j = (1/n) Σ_i e_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorDistribution {
    q: Vec<f64>,
}

impl PriorDistribution {
    pub fn from_domains(domains: &Matrix) -> Self {
        let n = domains.rows() as f64;
        let q = (0..domains.cols()).map(|j| domains.col_values(j).iter().sum::<f64>() / n).collect();
        PriorDistribution { q }
    }

    pub fn new(q: Vec<f64>) -> Result<Self> {
        let total: f64 = q.iter().sum();
        if q.is_empty() || q.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Degenerate(format!("{q:?} is not a probability vector")));
        }
        Ok(PriorDistribution { q })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    /// Shannon entropy in nats; the lower bound of the prior-matching loss.
    pub fn entropy(&self) -> f64 {
        -self.q.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
    }
}

/// `−(1/n) Σ_i log p_i[y_i]` on propagated pseudo-probabilities.
pub fn domain_disc_loss<'t>(probs: Var<'t>, domains: &Matrix) -> Result<Var<'t>> {
    let n = probs.rows();
    if probs.shape() != domains.shape() {
        return Err(Error::shape("domain_disc_loss", format!("{:?} vs {:?}", probs.shape(), domains.shape())));
    }
    let e = probs.tape().constant(domains.clone());
    Ok(probs.ln()?.mul(e)?.sum().scale(-1.0 / n as f64))
}

/// `−(1/n) Σ_i Σ_j q_j log p_ij`.
pub fn prior_matching_loss<'t>(probs: Var<'t>, prior: &PriorDistribution) -> Result<Var<'t>> {
    let (n, s) = probs.shape();
    if prior.q.len() != s {
        return Err(Error::shape("prior_matching_loss", format!("{s} columns, prior over {}", prior.q.len())));
    }
    let weights = Matrix::from_fn(n, s, |_, j| prior.q[j])?;
    let w = probs.tape().constant(weights);
    Ok(probs.ln()?.mul(w)?.sum().scale(-1.0 / n as f64))
}

/// Cross-entropy of a global softmax domain head, taken on its logits so
/// the log stays finite when the featurizer drives the head to extremes.
/// The discriminator minimizes this; the DANN featurizer maximizes it.
pub fn dann_adversarial_loss<'t>(logits: Var<'t>, domains: &Matrix) -> Result<Var<'t>> {
    let n = logits.rows();
    if logits.shape() != domains.shape() {
        return Err(Error::shape("dann_adversarial_loss", format!("{:?} vs {:?}", logits.shape(), domains.shape())));
    }
    let e = logits.tape().constant(domains.clone());
    Ok(logits.row_log_softmax().mul(e)?.sum().scale(-1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradient;
    use crate::numerics::Tape;
    use crate::rng::Rng;

    fn value(f: impl for<'t> Fn(&'t Tape) -> Result<Var<'t>>) -> f64 {
        let tape = Tape::new();
        f(&tape).unwrap().scalar().unwrap()
    }

    fn random_probs(rng: &mut Rng, n: usize, s: usize) -> Matrix {
        crate::labelprop::domain_probabilities(&rng.normal_matrix(n, s).scale(2.0))
    }

    #[test]
    fn task_loss_examples() {
        let big = Matrix::from_rows(&[[50.0, 0.0, 0.0], [0.0, 50.0, 0.0]]).unwrap();
        let t = Targets::Classes(vec![0, 1]);
        assert!(value(|tp| task_loss(tp.constant(big.clone()), &t, TaskKind::Classification)) < 1e-20);
        let uniform = Matrix::zeros(4, 5);
        let t = Targets::Classes(vec![0, 1, 4, 2]);
        let l = value(|tp| task_loss(tp.constant(uniform.clone()), &t, TaskKind::Classification));
        assert!((l - 5f64.ln()).abs() < 1e-15);
        let y = Targets::Values(vec![1.0, -2.0]);
        let pred = Matrix::column(&[1.0, -2.0]).unwrap();
        assert_eq!(value(|tp| task_loss(tp.constant(pred.clone()), &y, TaskKind::Regression)), 0.0);
    }

    #[test]
    fn task_kind_errors() {
        assert!("ranking".parse::<TaskKind>().is_err());
        assert_eq!("regression".parse::<TaskKind>().unwrap(), TaskKind::Regression);
        let tape = Tape::new();
        let p = tape.constant(Matrix::zeros(2, 1));
        assert!(task_loss(p, &Targets::Classes(vec![0, 0]), TaskKind::Regression).is_err());
        assert!(task_loss(p, &Targets::Values(vec![0.0]), TaskKind::Regression).is_err());
    }

    #[test]
    fn disc_loss_examples() {
        let p = Matrix::from_rows(&[[0.9, 0.1], [0.05, 0.9 + 0.05]]).unwrap();
        let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let l = value(|t| domain_disc_loss(t.constant(p.clone()), &e));
        assert!((l - (-(0.9f64.ln()) - 0.95f64.ln()) / 2.0).abs() < 1e-15);
        let single = Matrix::from_rows(&[[0.9, 0.1]]).unwrap();
        let e1 = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!((value(|t| domain_disc_loss(t.constant(single.clone()), &e1)) - 0.1054).abs() < 1e-4);
        let uniform = Matrix::filled(6, 3, 1.0 / 3.0);
        let e = one_hot(&[0, 1, 2, 0, 1, 2], 3).unwrap();
        assert!((value(|t| domain_disc_loss(t.constant(uniform.clone()), &e)) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn disc_loss_matches_naive_loop() {
        let mut rng = Rng::new(2);
        let p = random_probs(&mut rng, 25, 4);
        let ids: Vec<usize> = (0..25).map(|_| rng.below(4)).collect();
        let e = one_hot(&ids, 4).unwrap();
        let mut naive = 0.0;
        for (i, &d) in ids.iter().enumerate() {
            naive -= p.get(i, d).ln();
        }
        naive /= 25.0;
        assert!((value(|t| domain_disc_loss(t.constant(p.clone()), &e)) - naive).abs() < 1e-12);
        let logits = rng.normal_matrix(25, 4);
        let probs = crate::labelprop::domain_probabilities(&logits);
        let mut naive = 0.0;
        for (i, &d) in ids.iter().enumerate() {
            naive -= probs.get(i, d).ln();
        }
        naive /= 25.0;
        assert!((value(|t| dann_adversarial_loss(t.constant(logits.clone()), &e)) - naive).abs() < 1e-12);
    }

    #[test]
    fn disc_loss_is_monotone_in_true_mass() {
        let e = one_hot(&[0], 3).unwrap();
        let mut last = f64::INFINITY;
        for p0 in [0.2, 0.4, 0.6, 0.8, 0.95] {
            let p = Matrix::from_rows(&[[p0, (1.0 - p0) / 2.0, (1.0 - p0) / 2.0]]).unwrap();
            let l = value(|t| domain_disc_loss(t.constant(p.clone()), &e));
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn dann_loss_uniform_and_confident() {
        let e = one_hot(&[0, 1, 1], 2).unwrap();
        let l = value(|t| dann_adversarial_loss(t.constant(Matrix::zeros(3, 2)), &e));
        assert!((l - 2f64.ln()).abs() < 1e-15);
        // far past where softmax probabilities underflow
        let wrong = Matrix::from_rows(&[[-900.0, 900.0], [900.0, -900.0], [900.0, -900.0]]).unwrap();
        let l = value(|t| dann_adversarial_loss(t.constant(wrong.clone()), &e));
        assert!((l - 1800.0).abs() < 1e-9);
    }

    #[test]
    fn prior_examples() {
        let q = PriorDistribution::new(vec![0.25; 4]).unwrap();
        let rows = Matrix::filled(3, 4, 0.25);
        let l = value(|t| prior_matching_loss(t.constant(rows.clone()), &q));
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((l - 1.3863).abs() < 1e-4);
        let eps = 0.01;
        let skew = Matrix::from_rows(&[[1.0 - 3.0 * eps, eps, eps, eps]]).unwrap();
        assert!(value(|t| prior_matching_loss(t.constant(skew.clone()), &q)) > 4f64.ln());
    }

    #[test]
    fn prior_from_domains() {
        let e = one_hot(&[0, 0, 1, 2], 3).unwrap();
        let q = PriorDistribution::from_domains(&e);
        assert_eq!(q.as_slice(), &[0.5, 0.25, 0.25]);
        assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(PriorDistribution::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn prior_minimizer_is_q() {
        // minimize each row's cross-entropy over softmax logits by gradient
        // descent; the optimum must land on q
        let q = PriorDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let mut logits = Matrix::from_rows(&[[2.0, -1.0, 0.0], [0.0, 0.0, 3.0]]).unwrap();
        for _ in 0..5000 {
            let tape = Tape::new();
            let z = tape.var(logits.clone());
            let l = prior_matching_loss(z.row_softmax(), &q).unwrap();
            let g = tape.backward(l).unwrap().wrt(z);
            logits.axpy(-1.0, &g);
        }
        let p = crate::labelprop::domain_probabilities(&logits);
        for i in 0..2 {
            for j in 0..3 {
                assert!((p.get(i, j) - q.as_slice()[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let logits = rng.normal_matrix(7, 3);
            let ids: Vec<usize> = (0..7).map(|_| rng.below(3)).collect();
            let e = one_hot(&ids, 3).unwrap();
            let q = PriorDistribution::from_domains(&e);
            let t = Targets::Classes(ids.clone());
            for (name, r) in [
                ("task", check_gradient(&logits, 1e-5, |_, v| task_loss(v, &t, TaskKind::Classification))),
                ("disc", check_gradient(&logits, 1e-5, |_, v| domain_disc_loss(v.row_softmax(), &e))),
                ("prior", check_gradient(&logits, 1e-5, |_, v| prior_matching_loss(v.row_softmax(), &q))),
                ("dann", check_gradient(&logits, 1e-5, |_, v| dann_adversarial_loss(v, &e))),
            ] {
                assert!(r.passed(1e-4), "{name}: {}", r.relative_error);
            }
            let y = Targets::Values((0..7).map(|_| rng.normal()).collect());
            let col = rng.normal_matrix(7, 1);
            let r = check_gradient(&col, 1e-5, |_, v| task_loss(v, &y, TaskKind::Regression));
            assert!(r.passed(1e-4));
        }
    }
}
