//! Kernels and the polynomial basis for the local regression step.
//!
//! Two kernels are shipped: a compactly supported Gaussian (Gaussian body on
//! |u| <= 5, quintic taper to zero on 5 < |u| <= 6) used by all density and
//! local-polynomial work, and a fourth-order smoothed indicator used by the
//! smoothed maximum score estimator.

use crate::linalg::Cholesky;
use crate::quad;

const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Truncated-tapered Gaussian kernel. Zero outside [-6, 6].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TaperedGaussianKernel;

impl TaperedGaussianKernel {
    pub const SUPPORT: f64 = 6.0;

    /// Scalar kernel value.
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        kernel_eval(u)
    }

    /// Product kernel over a (1+d_V)-dimensional point.
    pub fn eval_product(self, z: &[f64]) -> f64 {
        product_kernel(z)
    }
}

/// Scalar kernel: Gaussian density for |u| <= 5, a quintic taper carrying it
/// to zero at |u| = 6, and exactly zero beyond.
#[inline]
pub fn kernel_eval(u: f64) -> f64 {
    let a = u.abs();
    if a <= 5.0 {
        INV_SQRT_2PI * (-0.5 * u * u).exp()
    } else if a <= 6.0 {
        let w = 6.0 - a;
        let w3 = w * w * w;
        INV_SQRT_2PI * (-12.5f64).exp() * (4.0 * w3 * w * w - 6.0 * w3 * w + 3.0 * w3)
    } else {
        0.0
    }
}

/// Product of scalar kernels; zero as soon as one coordinate leaves [-6, 6].
pub fn product_kernel(z: &[f64]) -> f64 {
    let mut p = 1.0;
    for &c in z {
        if c.abs() > TaperedGaussianKernel::SUPPORT {
            return 0.0;
        }
        p *= kernel_eval(c);
    }
    p
}

/// Fourth-order CDF kernel for the smoothed maximum score objective.
///
/// The derivative is the polynomial kernel (105/64)(1 - 5u^2 + 7u^4 - 3u^6)
/// on [-1, 1], whose first three moments vanish; the CDF is its closed-form
/// integral with value 0 at -1 and 1 at +1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SmoothedIndicator;

impl SmoothedIndicator {
    /// CDF-type value: 0 below -1, 1 above +1, smooth seventh-degree
    /// polynomial in between with value 1/2 at the origin.
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        if u <= -1.0 {
            0.0
        } else if u >= 1.0 {
            1.0
        } else {
            let u2 = u * u;
            0.5 + (105.0 / 64.0)
                * u
                * (1.0 + u2 * (-5.0 / 3.0 + u2 * (7.0 / 5.0 - (3.0 / 7.0) * u2)))
        }
    }

    /// Underlying fourth-order kernel (the derivative of `eval`).
    #[inline]
    pub fn density(self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            0.0
        } else {
            let u2 = u * u;
            (105.0 / 64.0) * (1.0 + u2 * (-5.0 + u2 * (7.0 - 3.0 * u2)))
        }
    }
}

/// Convenience free function mirroring `kernel_eval`.
#[inline]
pub fn smoothed_indicator(u: f64) -> f64 {
    SmoothedIndicator.eval(u)
}

/// Lexicographic multi-index basis for a local polynomial of order
/// `poly_order` in `dim = 1 + d_V` variables.
///
/// Within each total degree s the exponent tuples are ordered with highest
/// priority on the last coordinate: (0,...,0,s) first, (s,0,...,0) last.
/// Consequently position 1 is the constant and position 2 + d_V carries the
/// first-coordinate derivative (1,0,...,0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexBasis {
    poly_order: usize,
    dim: usize,
    indices: Vec<Vec<u32>>,
}

impl MultiIndexBasis {
    pub fn new(poly_order: usize, d_v: usize) -> Self {
        let dim = 1 + d_v;
        let mut indices = Vec::new();
        for s in 0..=poly_order {
            let mut block = tuples_of_degree(dim, s as u32);
            // highest priority to the last coordinate, descending
            block.sort_by(|a, b| {
                for k in (0..dim).rev() {
                    match b[k].cmp(&a[k]) {
                        std::cmp::Ordering::Equal => continue,
                        other => return other,
                    }
                }
                std::cmp::Ordering::Equal
            });
            indices.extend(block);
        }
        let basis = MultiIndexBasis {
            poly_order,
            dim,
            indices,
        };
        debug_assert_eq!(basis.indices[0], vec![0u32; dim]);
        if poly_order >= 1 {
            let mut first_deriv = vec![0u32; dim];
            first_deriv[0] = 1;
            debug_assert_eq!(basis.indices[basis.deriv_slot()], first_deriv);
        }
        basis
    }

    pub fn poly_order(&self) -> usize {
        self.poly_order
    }

    /// Number of variables, i.e. 1 + d_V.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total basis length N-bar = C(poly_order + dim, dim).
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Zero-based position of the (1,0,...,0) multi-index, i.e. position
    /// 2 + d_V in one-based counting. Requires poly_order >= 1.
    pub fn deriv_slot(&self) -> usize {
        self.dim
    }

    pub fn multi_index(&self, pos: usize) -> &[u32] {
        &self.indices[pos]
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Evaluate the monomial vector xi(a) into `out`.
    pub fn eval_into(&self, a: &[f64], out: &mut [f64]) {
        debug_assert_eq!(a.len(), self.dim);
        debug_assert_eq!(out.len(), self.indices.len());
        for (o, r) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (k, &e) in r.iter().enumerate() {
                for _ in 0..e {
                    v *= a[k];
                }
            }
            *o = v;
        }
    }

    pub fn eval(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.indices.len()];
        self.eval_into(a, &mut out);
        out
    }
}

/// Monomial vector xi(a) in the basis ordering.
pub fn basis_vector(a: &[f64], basis: &MultiIndexBasis) -> Vec<f64> {
    basis.eval(a)
}

fn tuples_of_degree(dim: usize, s: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    fn rec(cur: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if pos == cur.len() - 1 {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(cur, pos + 1, left - v, out);
        }
        cur[pos] = 0;
    }
    rec(&mut cur, 0, s, &mut out);
    out
}

/// Kernel moment constants entering the asymptotic variance expressions.
///
/// `m[j]` is the j-th moment of the scalar kernel and `q2[j]` the j-th moment
/// of its square, both integrated over the compact support. The matrices
/// M = int xi xi' K(z) dz and Q = int (int K xi dv)(int K xi dv)' du factor
/// over coordinates because the joint kernel is a product, so each entry is a
/// product of these one-dimensional moments.
#[derive(Clone, Debug)]
pub struct KernelMoments {
    m: Vec<f64>,
    q2: Vec<f64>,
}

impl KernelMoments {
    pub fn compute(max_degree: usize) -> Self {
        // K is smooth on each of [-6,-5], [-5,5], [5,6]; 80-point
        // Gauss-Legendre per piece is far below 1e-12 error.
        let pieces = [(-6.0, -5.0), (-5.0, 5.0), (5.0, 6.0)];
        let mut m = Vec::with_capacity(max_degree + 1);
        let mut q2 = Vec::with_capacity(max_degree + 1);
        for j in 0..=max_degree {
            let mj: f64 = pieces
                .iter()
                .map(|&(a, b)| quad::integrate(|u| u.powi(j as i32) * kernel_eval(u), a, b, 80))
                .sum();
            let qj: f64 = pieces
                .iter()
                .map(|&(a, b)| {
                    quad::integrate(
                        |u| {
                            let k = kernel_eval(u);
                            u.powi(j as i32) * k * k
                        },
                        a,
                        b,
                        80,
                    )
                })
                .sum();
            m.push(mj);
            q2.push(qj);
        }
        KernelMoments { m, q2 }
    }

    pub fn moment(&self, j: usize) -> f64 {
        self.m[j]
    }

    pub fn square_moment(&self, j: usize) -> f64 {
        self.q2[j]
    }

    /// M = int xi(z) xi(z)' K(z) dz for the given basis.
    pub fn moment_matrix(&self, basis: &MultiIndexBasis) -> Vec<f64> {
        let n = basis.len();
        let dim = basis.dim();
        let mut out = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                let rp = basis.multi_index(p);
                let rq = basis.multi_index(q);
                let mut v = 1.0;
                for k in 0..dim {
                    v *= self.m[(rp[k] + rq[k]) as usize];
                }
                out[p * n + q] = v;
            }
        }
        out
    }

    /// Q = int_u g(u) g(u)' du with g(u) = int_v K(z) xi(z) dv.
    pub fn middle_matrix(&self, basis: &MultiIndexBasis) -> Vec<f64> {
        let n = basis.len();
        let dim = basis.dim();
        let mut out = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                let rp = basis.multi_index(p);
                let rq = basis.multi_index(q);
                // first coordinate stays under the square, the rest factor
                let mut v = self.q2[(rp[0] + rq[0]) as usize];
                for k in 1..dim {
                    v *= self.m[rp[k] as usize] * self.m[rq[k] as usize];
                }
                out[p * n + q] = v;
            }
        }
        out
    }

    /// e_slot' M^{-1} Q M^{-1} e_slot, the scalar kernel constant in the
    /// asymptotic variance of the slot-th local coefficient.
    pub fn sandwich_constant(&self, basis: &MultiIndexBasis, slot: usize) -> Option<f64> {
        let n = basis.len();
        let m = self.moment_matrix(basis);
        let q = self.middle_matrix(basis);
        let ch = Cholesky::factor(&m, n)?;
        let mut e = vec![0.0; n];
        e[slot] = 1.0;
        let w = ch.solve(&e); // M^{-1} e
        let mut acc = 0.0;
        for p in 0..n {
            for r in 0..n {
                acc += w[p] * q[p * n + r] * w[r];
            }
        }
        Some(acc)
    }
}
