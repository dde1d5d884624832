//! Label propagation of one-hot domain labels over a minibatch graph.
//!
//! The recurrence `R ← α S R + (1 − α) E` started at `R = E` has the fixed
//! point `R* = (1 − α)(I − α S)⁻¹ E`, which the closed form computes with a
//! differentiable solve. Rows of `R*` are turned into domain
//! pseudo-probabilities with a temperature-1 softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::numerics::{softmax_in_place, Matrix, Tape, Var};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_STEPS: usize = 1000;

/// Whether a sample's own label seeds its own score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// `E` is used as is, so sample `i` receives `(1 − α) e_i` from itself.
    #[default]
    Literal,
    /// Row `i` of `R*` is computed with row `i` of `E` zeroed.
    LeaveOneOut,
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub r_star: Matrix,
    pub probs: Matrix,
    pub alpha: f64,
    /// Iterations used by [`propagate_iterative`]; `None` for the closed form.
    pub steps: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct PropagationVars<'t> {
    pub r_star: Var<'t>,
    pub probs: Var<'t>,
}

/// One-hot rows for the given class/domain ids.
pub fn one_hot(ids: &[usize], width: usize) -> Result<Matrix> {
    if let Some(&bad) = ids.iter().find(|&&d| d >= width) {
        return Err(Error::shape("one_hot", format!("id {bad} out of range for width {width}")));
    }
    Matrix::from_fn(ids.len(), width, |i, j| if ids[i] == j { 1.0 } else { 0.0 })
}

fn validate(n: usize, domains: &Matrix, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(vec![format!("alpha must lie in (0, 1), got {alpha}")]));
    }
    if domains.rows() != n {
        return Err(Error::shape(
            "propagate",
            format!("graph has {n} nodes, domain matrix has {} rows", domains.rows()),
        ));
    }
    Ok(())
}

/// Differentiable closed form on a tape; gradients flow into `normalized`.
pub fn propagate_closed_form_var<'t>(
    normalized: Var<'t>,
    domains: &Matrix,
    alpha: f64,
    mode: SeedMode,
) -> Result<PropagationVars<'t>> {
    let tape = normalized.tape();
    let n = normalized.rows();
    validate(n, domains, alpha)?;
    let system = tape.constant(Matrix::identity(n)).sub(normalized.scale(alpha))?;
    let r_star = match mode {
        SeedMode::Literal => system.solve(tape.constant(domains.scale(1.0 - alpha)))?,
        SeedMode::LeaveOneOut => {
            // R_loo = (M - diag(M)) E with M = (1 - α)(I - αS)⁻¹
            let m = system.solve(tape.constant(Matrix::identity(n).scale(1.0 - alpha)))?;
            let off_diag = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })?;
            m.mul(tape.constant(off_diag))?.matmul(tape.constant(domains.clone()))?
        }
    };
    Ok(PropagationVars {
        r_star,
        probs: r_star.row_softmax(),
    })
}

pub fn propagate_closed_form(
    graph: &AffinityGraph,
    domains: &Matrix,
    alpha: f64,
    mode: SeedMode,
) -> Result<PropagationResult> {
    let tape = Tape::new();
    let s = tape.constant(graph.normalized.clone());
    let vars = propagate_closed_form_var(s, domains, alpha, mode)?;
    Ok(PropagationResult {
        r_star: vars.r_star.value(),
        probs: vars.probs.value(),
        alpha,
        steps: None,
    })
}

/// Runs the recurrence from `R⁰ = E` until an update changes no entry by
/// `tol` or more. `steps` counts the updates that produced the returned
/// iterate. Not differentiable.
pub fn propagate_iterative(
    graph: &AffinityGraph,
    domains: &Matrix,
    alpha: f64,
    max_steps: usize,
    tol: f64,
) -> Result<PropagationResult> {
    let s = &graph.normalized;
    validate(s.rows(), domains, alpha)?;
    if max_steps == 0 {
        return Err(Error::Config(vec!["max_steps must be at least 1".into()]));
    }
    let seed = domains.scale(1.0 - alpha);
    let update = |r: &Matrix| -> Result<Matrix> { s.matmul(r)?.scale(alpha).add(&seed) };

    let mut current = domains.clone();
    let mut change = f64::INFINITY;
    for steps in 0..=max_steps {
        let next = update(&current)?;
        change = next.max_abs_diff(&current)?;
        if change < tol {
            return Ok(PropagationResult {
                probs: domain_probabilities(&current),
                r_star: current,
                alpha,
                steps: Some(steps),
            });
        }
        current = next;
    }
    Err(Error::Convergence {
        steps: max_steps,
        residual: change,
    })
}

/// Row softmax of the propagated scores.
pub fn domain_probabilities(r_star: &Matrix) -> Matrix {
    let mut p = r_star.clone();
    for i in 0..p.rows() {
        softmax_in_place(p.row_mut(i));
    }
    p
}

/// Max-abs of `α S R + (1 − α) E − R`.
pub fn fixed_point_residual(graph: &AffinityGraph, domains: &Matrix, r_star: &Matrix, alpha: f64) -> Result<f64> {
    let next = graph.normalized.matmul(r_star)?.scale(alpha).add(&domains.scale(1.0 - alpha))?;
    next.max_abs_diff(r_star)
}
