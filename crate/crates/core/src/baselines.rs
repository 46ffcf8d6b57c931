//! Random effects (RE) and correlated random effects (CRE) logit maximum
//! likelihood baselines with Gaussian heterogeneity, plus their implied
//! ASF/APE predictions.

use serde::{Deserialize, Serialize};

use crate::effects::{EffectEstimate, EffectKind, Period};
use crate::error::{Error, Result};
use crate::optim::bfgs;
use crate::panel::IndexedPanel;
use crate::quad::gauss_hermite;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum BaselineMode {
    Re,
    Cre,
}

/// Maximum likelihood fit of the Gaussian-heterogeneity logit model. In CRE
/// mode the conditional mean of the heterogeneity is linear in the index
/// regressors (continuous components plus cell contrasts); RE restricts that
/// slope to zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReCreFit {
    pub mode: BaselineMode,
    pub beta: Vec<f64>,
    pub mu_c0: f64,
    /// Slope of the heterogeneity mean in the index regressors; empty in RE
    /// mode.
    pub mu_c1: Vec<f64>,
    pub sigma_c: f64,
    pub loglik: f64,
    pub converged: bool,
    /// Set when sigma_c hit its floor during optimization.
    pub sigma_floored: bool,
    pub quad_nodes: usize,
}

#[inline]
fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn logistic_density(v: f64) -> f64 {
    let l = logistic(v);
    l * (1.0 - l)
}

const SIGMA_FLOOR: f64 = 1e-4;

/// Index regressors entering the heterogeneity mean in CRE mode: the
/// continuous components of V followed by cell-indicator contrasts (cells
/// 1.. relative to cell 0).
fn cre_regressors(panel: &IndexedPanel, i: usize) -> Vec<f64> {
    let mut w = panel.v_row(i).to_vec();
    for c in 1..panel.n_cells() {
        w.push((panel.cell(i) == c) as u8 as f64);
    }
    w
}

fn cre_dim(panel: &IndexedPanel) -> usize {
    panel.d_v() + panel.n_cells().saturating_sub(1)
}

struct Objective<'a> {
    panel: &'a IndexedPanel,
    mode: BaselineMode,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    d_w: usize,
}

impl<'a> Objective<'a> {
    /// Negative mean log-likelihood and its gradient in the parameter vector
    /// (beta, mu_c0, mu_c1, log sigma_c).
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let panel = self.panel;
        let n = panel.base.n_units();
        let t = panel.base.n_periods();
        let d_x = panel.base.d_x();
        let d_w = self.d_w;
        let dim = d_x + 1 + d_w + 1;
        debug_assert_eq!(theta.len(), dim);
        let beta = &theta[..d_x];
        let mu0 = theta[d_x];
        let mu1 = &theta[d_x + 1..d_x + 1 + d_w];
        let sigma = theta[dim - 1].exp().max(SIGMA_FLOOR);

        use rayon::prelude::*;
        let sqrt2 = std::f64::consts::SQRT_2;
        let (neg_ll, grad) = (0..n)
            .into_par_iter()
            .map(|i| {
                let w_i = match self.mode {
                    BaselineMode::Re => Vec::new(),
                    BaselineMode::Cre => cre_regressors(panel, i),
                };
                let mu_i = mu0
                    + w_i
                        .iter()
                        .zip(mu1)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                let eta_base: Vec<f64> = (0..t)
                    .map(|s| crate::linalg::dot(beta, panel.base.x_row(i, s)))
                    .collect();

                // log-sum over quadrature nodes, stabilized by the max exponent
                let mut logp = Vec::with_capacity(self.nodes.len());
                for &s_q in &self.nodes {
                    let c = mu_i + sqrt2 * sigma * s_q;
                    let mut lp = 0.0;
                    for (s, &eta0) in eta_base.iter().enumerate() {
                        let eta = eta0 + c;
                        // log Lambda(eta) / log(1 - Lambda(eta)), overflow-safe
                        lp += if panel.base.y(i, s) == 1 {
                            if eta >= 0.0 {
                                -(-eta).exp().ln_1p()
                            } else {
                                eta - eta.exp().ln_1p()
                            }
                        } else if eta >= 0.0 {
                            -eta - (-eta).exp().ln_1p()
                        } else {
                            -eta.exp().ln_1p()
                        };
                    }
                    logp.push(lp);
                }
                let m = logp
                    .iter()
                    .zip(&self.weights)
                    .map(|(lp, w)| lp + w.ln())
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                let mut g = vec![0.0; dim];
                for (q, &s_q) in self.nodes.iter().enumerate() {
                    let c = mu_i + sqrt2 * sigma * s_q;
                    let wq = (logp[q] + self.weights[q].ln() - m).exp();
                    total += wq;
                    // score of the inner likelihood wrt the linear index
                    let mut score_c = 0.0;
                    for (s, &eta0) in eta_base.iter().enumerate() {
                        let eta = eta0 + c;
                        let resid = panel.base.y(i, s) as f64 - logistic(eta);
                        score_c += resid;
                        let row = panel.base.x_row(i, s);
                        for k in 0..d_x {
                            g[k] += wq * resid * row[k];
                        }
                    }
                    g[d_x] += wq * score_c;
                    for k in 0..d_w {
                        g[d_x + 1 + k] += wq * score_c * w_i[k];
                    }
                    g[dim - 1] += wq * score_c * sqrt2 * sigma * s_q;
                }
                let ll_i = m + total.ln();
                for v in g.iter_mut() {
                    *v /= total;
                }
                (ll_i, g)
            })
            .reduce(
                || (0.0, vec![0.0; dim]),
                |(la, mut ga), (lb, gb)| {
                    for (a, b) in ga.iter_mut().zip(&gb) {
                        *a += b;
                    }
                    (la + lb, ga)
                },
            );
        let scale = -1.0 / n as f64;
        (
            scale * neg_ll,
            grad.iter().map(|g| scale * g).collect(),
        )
    }
}

/// Fit the RE or CRE logit baseline by quasi-Newton on (beta, mu, log sigma)
/// with the Gauss-Hermite rule integrating out the heterogeneity.
pub fn re_cre_fit(
    panel: &IndexedPanel,
    mode: BaselineMode,
    quad_nodes: usize,
) -> Result<ReCreFit> {
    if quad_nodes < 8 {
        return Err(Error::Invalid("need at least 8 quadrature nodes".into()));
    }
    let (nodes, weights) = gauss_hermite(quad_nodes);
    // fold the 1/sqrt(pi) mixture normalization into the weights
    let weights: Vec<f64> = weights
        .iter()
        .map(|w| w / std::f64::consts::PI.sqrt())
        .collect();
    let d_w = match mode {
        BaselineMode::Re => 0,
        BaselineMode::Cre => cre_dim(panel),
    };
    let obj = Objective {
        panel,
        mode,
        nodes,
        weights,
        d_w,
    };

    // pooled logit start for (beta, intercept)
    let start = pooled_logit_start(panel)?;
    let d_x = panel.base.d_x();
    let dim = d_x + 1 + d_w + 1;
    let mut theta0 = vec![0.0; dim];
    theta0[..d_x].copy_from_slice(&start.0);
    theta0[d_x] = start.1;
    theta0[dim - 1] = 0.0; // log sigma = 0

    let n = panel.base.n_units() as f64;
    let r = bfgs(|th| obj.eval(th), &theta0, 1e-7 / n.sqrt(), 400);
    let mut sigma_floored = false;
    let mut sigma = r.x[dim - 1].exp();
    if sigma < SIGMA_FLOOR {
        sigma = SIGMA_FLOOR;
        sigma_floored = true;
    }
    if !r.converged && r.grad_norm > 1e-4 {
        return Err(Error::NonConvergence(format!(
            "baseline gradient norm {:.3e} after {} iterations",
            r.grad_norm, r.iterations
        )));
    }
    Ok(ReCreFit {
        mode,
        beta: r.x[..d_x].to_vec(),
        mu_c0: r.x[d_x],
        mu_c1: r.x[d_x + 1..d_x + 1 + d_w].to_vec(),
        sigma_c: sigma,
        loglik: -r.value * n,
        converged: r.converged,
        sigma_floored,
        quad_nodes,
    })
}

fn pooled_logit_start(panel: &IndexedPanel) -> Result<(Vec<f64>, f64)> {
    let n = panel.base.n_units();
    let t = panel.base.n_periods();
    let d = panel.base.d_x();
    let fg = |th: &[f64]| -> (f64, Vec<f64>) {
        let beta = &th[..d];
        let a = th[d];
        let mut ll = 0.0;
        let mut g = vec![0.0; d + 1];
        for i in 0..n {
            for s in 0..t {
                let eta = crate::linalg::dot(beta, panel.base.x_row(i, s)) + a;
                let y = panel.base.y(i, s) as f64;
                ll += if eta >= 0.0 {
                    y * eta - eta - (-eta).exp().ln_1p()
                } else {
                    y * eta - eta.exp().ln_1p()
                };
                let resid = y - logistic(eta);
                let row = panel.base.x_row(i, s);
                for k in 0..d {
                    g[k] += resid * row[k];
                }
                g[d] += resid;
            }
        }
        let scale = -1.0 / (n * t) as f64;
        (scale * ll, g.iter().map(|v| scale * v).collect())
    };
    let r = bfgs(fg, &vec![0.0; d + 1], 1e-8, 200);
    Ok((r.x[..d].to_vec(), r.x[d]))
}

impl ReCreFit {
    /// Per-unit conditional mean of the heterogeneity.
    fn mu_i(&self, panel: &IndexedPanel, i: usize) -> f64 {
        match self.mode {
            BaselineMode::Re => self.mu_c0,
            BaselineMode::Cre => {
                self.mu_c0
                    + cre_regressors(panel, i)
                        .iter()
                        .zip(&self.mu_c1)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            }
        }
    }
}

/// Model-implied ASF and APE at x_bar: the logistic response (or its
/// density) integrated over the fitted heterogeneity distribution, averaged
/// over units.
pub fn baseline_asf_ape(
    fit: &ReCreFit,
    panel: &IndexedPanel,
    x_bar: &[f64],
    k: usize,
) -> Result<(EffectEstimate, EffectEstimate)> {
    if !fit.converged && fit.loglik.is_nan() {
        return Err(Error::NonConvergence("baseline fit unusable".into()));
    }
    if x_bar.len() != panel.base.d_x() {
        return Err(Error::Invalid("evaluation point dimension mismatch".into()));
    }
    let (nodes, weights) = gauss_hermite(fit.quad_nodes);
    let norm = std::f64::consts::PI.sqrt();
    let u0 = crate::linalg::dot(&fit.beta, x_bar);
    let n = panel.base.n_units();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut asf = 0.0;
    let mut ape = 0.0;
    for i in 0..n {
        let mu = fit.mu_i(panel, i);
        let mut p = 0.0;
        let mut dp = 0.0;
        for (q, &s_q) in nodes.iter().enumerate() {
            let c = mu + sqrt2 * fit.sigma_c * s_q;
            p += weights[q] * logistic(u0 + c);
            dp += weights[q] * logistic_density(u0 + c);
        }
        asf += p / norm;
        ape += dp / norm;
    }
    let asf_est = EffectEstimate {
        kind: EffectKind::Asf,
        x_bar: x_bar.to_vec(),
        value: asf / n as f64,
        trim_share: 0.0,
        analytic_se: None,
        ci: None,
        bounds: None,
        period: Period::Averaged,
    };
    let ape_est = EffectEstimate {
        kind: EffectKind::ApeContinuous,
        x_bar: x_bar.to_vec(),
        value: fit.beta[k] * ape / n as f64,
        trim_share: 0.0,
        analytic_se: None,
        ci: None,
        bounds: None,
        period: Period::Averaged,
    };
    Ok((asf_est, ape_est))
}
