//! Feature-space compactness: average K-NN cosine degree, coding rate,
//! class-wise coding rate, and the log-cosh rate-maintenance loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cosine_similarity, neighbors_from_similarity};
use crate::numerics::{log_cosh, Matrix, Tape, Var};

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_RHO: f64 = 0.2;
pub const DEFAULT_XI: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub v_k: f64,
    pub coding_rate: f64,
    /// Absent when no class labels were supplied.
    pub classwise_rate: Option<f64>,
    pub epsilon: f64,
    pub k: usize,
}

/// `V_k(H)`: mean over samples of the summed cosine similarity to the `k`
/// nearest other samples.
pub fn avg_knn_degree(features: &Matrix, k: usize) -> Result<f64> {
    if features.rows() < 2 {
        return Err(Error::Degenerate("V_k needs at least two samples".into()));
    }
    if k == 0 {
        return Err(Error::Degenerate("k must be at least 1".into()));
    }
    let sim = cosine_similarity(features)?;
    let nb = neighbors_from_similarity(&sim, k);
    let total: f64 = nb
        .iter()
        .enumerate()
        .map(|(i, list)| list.iter().map(|&j| sim.get(i, j)).sum::<f64>())
        .sum();
    Ok(total / features.rows() as f64)
}

/// `R(H) = ½ log det(I + d/(n ε²) HᵀH)` on row-normalized `H`, on a tape.
pub fn coding_rate_var<'t>(features: Var<'t>, epsilon: f64) -> Result<Var<'t>> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(vec![format!("epsilon must be positive, got {epsilon}")]));
    }
    let tape = features.tape();
    let (n, d) = features.shape();
    let unit = features.row_normalize()?;
    let gram = unit.transpose().matmul(unit)?;
    let c = d as f64 / (n as f64 * epsilon * epsilon);
    let m = tape.constant(Matrix::identity(d)).add(gram.scale(c))?;
    Ok(m.logdet()?.scale(0.5))
}

pub fn coding_rate(features: &Matrix, epsilon: f64) -> Result<f64> {
    let tape = Tape::new();
    coding_rate_var(tape.constant(features.clone()), epsilon)?.scalar()
}

/// `R_C(H) = Σ_y (N_y / N) R(H^y)`.
pub fn classwise_coding_rate(features: &Matrix, class_labels: &[usize], epsilon: f64) -> Result<f64> {
    let n = features.rows();
    if class_labels.len() != n {
        return Err(Error::shape(
            "classwise_coding_rate",
            format!("{n} samples, {} labels", class_labels.len()),
        ));
    }
    let classes = class_labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for y in 0..classes {
        let rows: Vec<usize> = (0..n).filter(|&i| class_labels[i] == y).collect();
        if rows.is_empty() {
            continue;
        }
        let weight = rows.len() as f64 / n as f64;
        total += weight * coding_rate(&features.select_rows(&rows)?, epsilon)?;
    }
    Ok(total)
}

pub fn report(features: &Matrix, class_labels: Option<&[usize]>, epsilon: f64, k: usize) -> Result<CompactnessReport> {
    Ok(CompactnessReport {
        v_k: avg_knn_degree(features, k)?,
        coding_rate: coding_rate(features, epsilon)?,
        classwise_rate: class_labels
            .map(|l| classwise_coding_rate(features, l, epsilon))
            .transpose()?,
        epsilon,
        k,
    })
}

/// Exponential moving average `R̄` of the coding rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTracker {
    r_bar: f64,
    xi: f64,
    initialized: bool,
}

impl RateTracker {
    pub fn new(xi: f64) -> Self {
        RateTracker {
            r_bar: 0.0,
            xi,
            initialized: false,
        }
    }

    pub fn with_value(xi: f64, r_bar: f64) -> Self {
        RateTracker {
            r_bar,
            xi,
            initialized: true,
        }
    }

    pub fn initialize(&mut self, r_bar: f64) {
        self.r_bar = r_bar;
        self.initialized = true;
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn r_bar(&self) -> Result<f64> {
        if !self.initialized {
            return Err(Error::State("rate tracker used before initialization".into()));
        }
        Ok(self.r_bar)
    }

    /// `R̄ ← ξ R̄ + (1 − ξ) r`.
    pub fn update(&mut self, observed: f64) -> Result<()> {
        let r_bar = self.r_bar()?;
        self.r_bar = self.xi * r_bar + (1.0 - self.xi) * observed;
        Ok(())
    }
}

/// Value-level `(1/ρ) log cosh(ρ (R − R̄))`.
pub fn rate_loss_value(rate: f64, r_bar: f64, rho: f64) -> f64 {
    log_cosh(rho * (rate - r_bar)) / rho
}

/// `(1/ρ) log cosh(ρ (R(H) − R̄))` with `R̄` held constant.
pub fn coding_rate_loss_var<'t>(features: Var<'t>, tracker: &RateTracker, rho: f64, epsilon: f64) -> Result<Var<'t>> {
    let r_bar = tracker.r_bar()?;
    if !(rho > 0.0) {
        return Err(Error::Config(vec![format!("rho must be positive, got {rho}")]));
    }
    let rate = coding_rate_var(features, epsilon)?;
    Ok(rate.add_scalar(-r_bar).scale(rho).log_cosh().scale(1.0 / rho))
}

pub fn coding_rate_loss(features: &Matrix, tracker: &RateTracker, rho: f64, epsilon: f64) -> Result<f64> {
    let tape = Tape::new();
    coding_rate_loss_var(tape.constant(features.clone()), tracker, rho, epsilon)?.scalar()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradient;
    use crate::rng::Rng;

    fn orthogonal(rng: &mut Rng, d: usize) -> Matrix {
        // Gram-Schmidt on a Gaussian matrix
        let a = rng.normal_matrix(d, d);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for i in 0..d {
            let mut v = a.row(i).to_vec();
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
        Matrix::from_rows(&q).unwrap()
    }

    #[test]
    fn v_k_examples() {
        let same = Matrix::from_fn(5, 3, |_, j| [0.0, 0.6, 0.8][j]).unwrap();
        assert_eq!(avg_knn_degree(&same, 3).unwrap(), 3.0);
        assert_eq!(avg_knn_degree(&Matrix::identity(2), 1).unwrap(), 0.0);
        assert!(avg_knn_degree(&Matrix::ones(1, 3), 1).is_err());
    }

    #[test]
    fn v_k_matches_naive_recompute() {
        let mut rng = Rng::new(4);
        let h = rng.normal_matrix(30, 6);
        let k = 5;
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut total = 0.0;
        for i in 0..30 {
            let mut sims: Vec<f64> = (0..30).filter(|&j| j != i).map(|j| cos(h.row(i), h.row(j))).collect();
            sims.sort_by(|a, b| b.total_cmp(a));
            total += sims[..k].iter().sum::<f64>();
        }
        assert!((avg_knn_degree(&h, k).unwrap() - total / 30.0).abs() < 1e-10);
    }

    #[test]
    fn rank_one_closed_form() {
        let v = [0.5, -0.5, 0.5, 0.5];
        let h = Matrix::from_fn(7, 4, |_, j| v[j] * 3.0).unwrap();
        let expected = 0.5 * (1.0 + 4.0 / 0.25f64).ln();
        assert!((coding_rate(&h, 0.5).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 1.4166).abs() < 1e-4);
    }

    #[test]
    fn orthonormal_rows() {
        let mut rng = Rng::new(6);
        let q = orthogonal(&mut rng, 5);
        let expected = 2.5 * 5f64.ln();
        assert!((coding_rate(&q, 0.5).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn rotation_and_permutation_invariance() {
        let mut rng = Rng::new(7);
        for _ in 0..10 {
            let h = rng.normal_matrix(12, 5);
            let q = orthogonal(&mut rng, 5);
            let base = coding_rate(&h, 0.5).unwrap();
            assert!(base >= 0.0);
            assert!((coding_rate(&h.matmul(&q).unwrap(), 0.5).unwrap() - base).abs() < 1e-9);
            let perm = rng.choose_distinct(12, 12);
            assert!((coding_rate(&h.select_rows(&perm).unwrap(), 0.5).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_rows_lower_the_rate() {
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let full = rng.normal_matrix(16, 8);
            let dup = full.select_rows(&(0..16).map(|i| i % 4).collect::<Vec<_>>()).unwrap();
            assert!(coding_rate(&dup, 0.5).unwrap() < coding_rate(&full, 0.5).unwrap());
        }
    }

    #[test]
    fn classwise_examples() {
        let mut rng = Rng::new(9);
        let h = rng.normal_matrix(10, 4);
        let single = classwise_coding_rate(&h, &[0; 10], 0.5).unwrap();
        assert!((single - coding_rate(&h, 0.5).unwrap()).abs() < 1e-12);

        let both = Matrix::from_fn(10, 4, |i, j| h.get(i % 5, j)).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i / 5).collect();
        let shared = coding_rate(&h.select_rows(&[0, 1, 2, 3, 4]).unwrap(), 0.5).unwrap();
        assert!((classwise_coding_rate(&both, &labels, 0.5).unwrap() - shared).abs() < 1e-12);

        let h = rng.normal_matrix(30, 4);
        let labels: Vec<usize> = (0..30).map(|_| rng.below(3)).collect();
        let mut direct = 0.0;
        for y in 0..3 {
            let rows: Vec<usize> = (0..30).filter(|&i| labels[i] == y).collect();
            let sub = Matrix::from_rows(&rows.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            direct += rows.len() as f64 / 30.0 * coding_rate(&sub, 0.5).unwrap();
        }
        assert!((classwise_coding_rate(&h, &labels, 0.5).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn tracker_updates() {
        let mut t = RateTracker::with_value(0.99, 5.0);
        t.update(5.0).unwrap();
        assert_eq!(t.r_bar().unwrap(), 5.0);
        let mut t = RateTracker::with_value(0.99, 0.0);
        t.update(1.0).unwrap();
        assert!((t.r_bar().unwrap() - 0.01).abs() < 1e-17);
        let mut t = RateTracker::with_value(0.9, 0.0);
        for _ in 0..400 {
            t.update(3.0).unwrap();
        }
        assert!((t.r_bar().unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(RateTracker::new(0.99).update(1.0), Err(Error::State(_))));
    }

    #[test]
    fn rate_loss_values() {
        assert_eq!(rate_loss_value(3.0, 3.0, 0.2), 0.0);
        let l = rate_loss_value(10.0, 0.0, 0.2);
        assert!((l - 5.0 * 2f64.cosh().ln()).abs() < 1e-12);
        assert!((l - 6.625).abs() < 1e-3);
        // asymptote |Δ| − ln2/ρ plus the (1/ρ) log1p(e^{-2ρ|Δ|}) remainder
        let asym = 10.0 - std::f64::consts::LN_2 / 0.2;
        assert!((l - asym - 5.0 * (-4f64).exp().ln_1p()).abs() < 1e-12);
        for delta in [-7.0, -0.3, 0.3, 7.0] {
            assert_eq!(rate_loss_value(delta, 0.0, 0.2), rate_loss_value(-delta, 0.0, 0.2));
        }
    }

    #[test]
    fn rate_loss_needs_initialized_tracker() {
        let h = Matrix::identity(3);
        assert!(matches!(coding_rate_loss(&h, &RateTracker::new(0.99), 0.2, 0.5), Err(Error::State(_))));
    }

    #[test]
    fn rate_loss_gradient() {
        let mut rng = Rng::new(11);
        for _ in 0..10 {
            let h = rng.normal_matrix(8, 5);
            let tracker = RateTracker::with_value(0.99, coding_rate(&h, 0.5).unwrap() + rng.normal());
            let r = check_gradient(&h, 1e-5, |_, v| coding_rate_loss_var(v, &tracker, 0.2, 0.5));
            assert!(r.passed(1e-4), "{}", r.relative_error);
        }
    }

    #[test]
    fn rate_loss_derivative_is_tanh() {
        // d/dR of the loss is tanh(ρ(R − R̄)); probe via R = value + t
        let tape = Tape::new();
        let r = tape.var(Matrix::scalar(4.0).unwrap());
        let loss = r.add_scalar(-1.0).scale(0.2).log_cosh().scale(5.0);
        let g = tape.backward(loss).unwrap().wrt(r).get(0, 0);
        assert!((g - (0.2f64 * 3.0).tanh()).abs() < 1e-15);
        assert!(g.abs() <= 1.0);
    }
}
