//! Cholesky and LU factorizations used by the differentiable log-det and
//! linear-solve nodes.

use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `m = L Lᵀ`. Reads only the lower
/// triangle of `m`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(m: &Matrix) -> Result<Self> {
        let n = square(m, "cholesky")?;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d.is_nan() || d <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l.set(j, j, ljj);
            for i in j + 1..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.l.rows()).map(|i| self.l.get(i, i).ln()).sum::<f64>()
    }

    /// Solves `m x = b` by forward then backward substitution.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.l.rows();
        if b.rows() != n {
            return Err(Error::shape("cholesky solve", format!("{n}x{n} system, rhs has {} rows", b.rows())));
        }
        let mut x = b.clone();
        for c in 0..b.cols() {
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in i + 1..n {
                    s -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.solve(&Matrix::identity(self.l.rows()))
    }
}

/// `P a = L U` with partial pivoting; `L` has a unit diagonal and is stored
/// below the diagonal of `lu`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

/// Pivots smaller than this, relative to the largest entry of the input,
/// are treated as exact zeros.
const SINGULAR_RTOL: f64 = 1e-13;

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = square(a, "lu")?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu.get(i, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pv > SINGULAR_RTOL * scale) {
                return Err(Error::Singular { pivot: k, value: lu.get(p, k) });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, t);
                }
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / pivot;
                lu.set(i, k, f);
                if f != 0.0 {
                    for j in k + 1..n {
                        let v = lu.get(i, j) - f * lu.get(k, j);
                        lu.set(i, j, v);
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `a x = b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::shape("solve", format!("{n}x{n} system, rhs has {} rows", b.rows())));
        }
        let m = b.cols();
        let mut x = Matrix::zeros(n, m);
        for i in 0..n {
            x.row_mut(i).copy_from_slice(b.row(self.perm[i]));
        }
        for c in 0..m {
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.lu.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s);
            }
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in i + 1..n {
                    s -= self.lu.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.lu.get(i, i));
            }
        }
        Ok(x)
    }

    /// Solves `aᵀ x = b`.
    pub fn solve_transposed(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::shape("solve_transposed", format!("{n}x{n} system, rhs has {} rows", b.rows())));
        }
        // aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ z = y, then x = Pᵀ z.
        let m = b.cols();
        let mut z = b.clone();
        for c in 0..m {
            for i in 0..n {
                let mut s = z.get(i, c);
                for k in 0..i {
                    s -= self.lu.get(k, i) * z.get(k, c);
                }
                z.set(i, c, s / self.lu.get(i, i));
            }
            for i in (0..n).rev() {
                let mut s = z.get(i, c);
                for k in i + 1..n {
                    s -= self.lu.get(k, i) * z.get(k, c);
                }
                z.set(i, c, s);
            }
        }
        let mut x = Matrix::zeros(n, m);
        for i in 0..n {
            x.row_mut(self.perm[i]).copy_from_slice(z.row(i));
        }
        Ok(x)
    }
}

/// Plain (non-differentiable) solve of `a x = b`.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Lu::factor(a)?.solve(b)
}

/// Plain log-determinant of a symmetric positive definite matrix.
pub fn cholesky_logdet(m: &Matrix) -> Result<f64> {
    Ok(Cholesky::factor(m)?.logdet())
}

fn square(m: &Matrix, op: &'static str) -> Result<usize> {
    if m.rows() != m.cols() {
        return Err(Error::shape(op, format!("expected square, got {}x{}", m.rows(), m.cols())));
    }
    Ok(m.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn spd(rng: &mut Rng, n: usize) -> Matrix {
        let b = rng.normal_matrix(n, n);
        b.matmul(&b.transpose()).unwrap().add(&Matrix::identity(n)).unwrap()
    }

    #[test]
    fn logdet_trivial_cases() {
        assert_eq!(cholesky_logdet(&Matrix::identity(4)).unwrap(), 0.0);
        let d = Matrix::diag(&[2.0, 3.0]).unwrap();
        assert!((cholesky_logdet(&d).unwrap() - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn non_spd_names_pivot() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        match cholesky_logdet(&m) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("{other:?}"),
        }
        let neg = Matrix::diag(&[-1.0, 1.0]).unwrap();
        assert!(matches!(cholesky_logdet(&neg), Err(Error::NotPositiveDefinite { pivot: 0, .. })));
    }

    #[test]
    fn solve_trivial_cases() {
        let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(solve(&Matrix::identity(3), &e).unwrap(), e);
        let b = Matrix::column(&[2.0, -4.0, 6.0]).unwrap();
        let x = solve(&Matrix::identity(3).scale(2.0), &b).unwrap();
        assert_eq!(x, b.scale(0.5));
    }

    #[test]
    fn solve_residual_small() {
        let mut rng = Rng::new(1);
        let a = rng.normal_matrix(8, 8).add(&Matrix::identity(8).scale(4.0)).unwrap();
        let b = rng.normal_matrix(8, 3);
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(&b).unwrap();
        assert!(a.matmul(&x).unwrap().max_abs_diff(&b).unwrap() <= 1e-10);
        let xt = lu.solve_transposed(&b).unwrap();
        assert!(a.transpose().matmul(&xt).unwrap().max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn singular_is_reported() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(solve(&a, &Matrix::identity(2)), Err(Error::Singular { .. })));
    }

    #[test]
    fn cholesky_inverse_roundtrip() {
        let mut rng = Rng::new(2);
        let m = spd(&mut rng, 6);
        let inv = Cholesky::factor(&m).unwrap().inverse().unwrap();
        let prod = m.matmul(&inv).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(6)).unwrap() < 1e-10);
    }
}
