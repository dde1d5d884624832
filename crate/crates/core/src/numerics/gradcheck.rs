//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it checks.

use super::{Matrix, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Matrix,
    pub numeric: Matrix,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or the absolute
    /// difference norm when both gradients are (near) zero.
    pub relative_error: f64,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.relative_error <= tol
    }
}

/// Compares the tape gradient of `f` at `x` with central differences of
/// step `h`. `f` must build a 1x1 output from the supplied variable.
pub fn check_gradient<F>(x: &Matrix, h: f64, f: F) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let eval = |m: &Matrix| -> f64 {
        let tape = Tape::new();
        let v = tape.var(m.clone());
        f(&tape, v).and_then(|o| o.scalar()).expect("forward evaluation failed")
    };

    let analytic = {
        let tape = Tape::new();
        let v = tape.var(x.clone());
        let out = f(&tape, v).expect("forward evaluation failed");
        tape.backward(out).expect("backward failed").wrt(v)
    };

    let mut numeric = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = eval(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = eval(&probe);
        probe.as_mut_slice()[k] = orig;
        numeric.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }

    let diff = analytic.sub(&numeric).expect("same shape").frobenius_norm();
    let scale = analytic.frobenius_norm().max(numeric.frobenius_norm());
    let relative_error = if scale < 1e-10 { diff } else { diff / scale };
    GradCheck {
        analytic,
        numeric,
        relative_error,
    }
}
