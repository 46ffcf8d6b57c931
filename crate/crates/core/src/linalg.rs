//! Small dense symmetric linear algebra.
//!
//! Local polynomial systems are at most a few dozen unknowns, so everything
//! here is written for small row-major matrices and favors determinism over
//! asymptotic cleverness.

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factor `a` (row-major n x n, symmetric). Returns `None` when a pivot
    /// is not strictly positive, i.e. the matrix is not numerically PD.
    pub fn factor(a: &[f64], n: usize) -> Option<Cholesky> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solve A x = b given the factorization.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[i * n + k] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[k * n + i] * x[k];
            }
            x[i] /= self.l[i * n + i];
        }
        x
    }

    /// det(A) = prod(diag(L))^2.
    pub fn det(&self) -> f64 {
        let mut d = 1.0;
        for i in 0..self.n {
            let v = self.l[i * self.n + i];
            d *= v * v;
        }
        d
    }

    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    /// Solve L y = b (forward substitution only).
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix via cyclic Jacobi
/// sweeps. Converges quadratically; plenty for condition-number checks.
pub fn sym_eigen_extremes(a: &[f64], n: usize) -> (f64, f64) {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return (a[0], a[0]);
    }
    let mut m = a.to_vec();
    for _sweep in 0..30 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 * frob_norm(&m, n).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lo = m[0];
    let mut hi = m[0];
    for i in 1..n {
        let v = m[i * n + i];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn frob_norm(a: &[f64], n: usize) -> f64 {
    a.iter().take(n * n).map(|v| v * v).sum::<f64>().sqrt()
}

/// 2-norm condition number of a symmetric PD matrix; +inf when the smallest
/// eigenvalue is not strictly positive.
pub fn sym_condition(a: &[f64], n: usize) -> f64 {
    let (lo, hi) = sym_eigen_extremes(a, n);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// 2-norm condition number of a factored SPD matrix by power iteration on A
/// (largest eigenvalue) and inverse iteration through the Cholesky factor
/// (smallest). Deterministic start vector; converges to the Jacobi value as
/// the tolerance tightens.
pub fn sym_condition_from_chol(a: &[f64], chol: &Cholesky, n: usize) -> f64 {
    if n == 1 {
        return 1.0;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // largest eigenvalue
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut hi = 0.0;
    for _ in 0..64 {
        let mut av = vec![0.0; n];
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            av[i] = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let lam = norm(&av);
        if lam == 0.0 {
            return f64::INFINITY;
        }
        for (x, y) in v.iter_mut().zip(&av) {
            *x = y / lam;
        }
        if (lam - hi).abs() <= 1e-4 * lam {
            hi = lam;
            break;
        }
        hi = lam;
    }
    // smallest eigenvalue via A^{-1} power iteration
    let mut w = vec![1.0 / (n as f64).sqrt(); n];
    let mut inv_lam = 0.0;
    for _ in 0..64 {
        let aw = chol.solve(&w);
        let lam = norm(&aw);
        if !lam.is_finite() || lam == 0.0 {
            return f64::INFINITY;
        }
        for (x, y) in w.iter_mut().zip(&aw) {
            *x = y / lam;
        }
        if (lam - inv_lam).abs() <= 1e-4 * lam {
            inv_lam = lam;
            break;
        }
        inv_lam = lam;
    }
    hi * inv_lam
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        // A = B B' with B lower unit-ish; hand-checked 3x3.
        let a = [4.0, 2.0, 2.0, 2.0, 5.0, 3.0, 2.0, 3.0, 6.0];
        let ch = Cholesky::factor(&a, 3).unwrap();
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        // residual check
        for i in 0..3 {
            let mut r = 0.0;
            for j in 0..3 {
                r += a[i * 3 + j] * x[j];
            }
            assert!((r - (i as f64 + 1.0)).abs() < 1e-12);
        }
        let det = ch.det();
        // det by cofactor expansion: 4*(30-9) - 2*(12-6) + 2*(6-10) = 64
        assert!((det - 64.0).abs() < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(Cholesky::factor(&a, 2).is_none());
    }

    #[test]
    fn condition_estimate_matches_jacobi() {
        // a well-separated SPD spectrum from a small Gram matrix
        let mut a = vec![0.0; 16];
        let b = [
            2.0, 0.3, -0.1, 0.0, 0.3, 1.0, 0.2, 0.1, -0.1, 0.2, 0.5, 0.05, 0.0, 0.1, 0.05, 0.08,
        ];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    a[i * 4 + j] += b[i * 4 + k] * b[j * 4 + k];
                }
            }
        }
        let exact = sym_condition(&a, 4);
        let ch = Cholesky::factor(&a, 4).unwrap();
        let est = sym_condition_from_chol(&a, &ch, 4);
        assert!(
            (est - exact).abs() <= 2e-3 * exact,
            "estimate {est} vs exact {exact}"
        );
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonalizable_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = [2.0, 1.0, 1.0, 2.0];
        let (lo, hi) = sym_eigen_extremes(&a, 2);
        assert!((lo - 1.0).abs() < 1e-12);
        assert!((hi - 3.0).abs() < 1e-12);
        assert!((sym_condition(&a, 2) - 3.0).abs() < 1e-12);
    }
}
