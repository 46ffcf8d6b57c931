//! Weighted local polynomial regression of the outcome on the generated
//! index and the sufficiency index: moment assembly, trimmed local fits,
//! bandwidth rate checks, leave-one-out cross-validation, and the local
//! logit variant.

use serde::{Deserialize, Serialize};

use crate::beta::BetaEstimate;
use crate::error::{Error, Result};
use crate::kernels::{kernel_eval, MultiIndexBasis, TaperedGaussianKernel};
use crate::linalg::Cholesky;
use crate::panel::IndexedPanel;

const SUPPORT: f64 = TaperedGaussianKernel::SUPPORT;

/// Bandwidth rule b_N = kappa * N^(-delta).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BandwidthSpec {
    pub kappa: f64,
    pub delta: f64,
}

impl BandwidthSpec {
    pub fn new(kappa: f64, delta: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(delta > 0.0) {
            return Err(Error::Invalid("bandwidth constants must be positive".into()));
        }
        Ok(BandwidthSpec { kappa, delta })
    }

    pub fn resolve(&self, n: usize) -> f64 {
        self.kappa * (n as f64).powf(-self.delta)
    }

    pub fn with_kappa(self, kappa: f64) -> Self {
        BandwidthSpec { kappa, ..self }
    }
}

/// Configuration of the local polynomial step.
#[derive(Clone, Debug)]
pub struct LocalPolyConfig {
    pub poly_order: usize,
    pub bandwidth: BandwidthSpec,
    pub basis: MultiIndexBasis,
    pub kernel: TaperedGaussianKernel,
}

impl LocalPolyConfig {
    pub fn new(poly_order: usize, d_v: usize, bandwidth: BandwidthSpec) -> Self {
        LocalPolyConfig {
            poly_order,
            bandwidth,
            basis: MultiIndexBasis::new(poly_order, d_v),
            kernel: TaperedGaussianKernel,
        }
    }

    /// Number of regression variables, 1 + d_V.
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn d_v(&self) -> usize {
        self.basis.dim() - 1
    }

    pub fn n_bar(&self) -> usize {
        self.basis.len()
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        LocalPolyConfig {
            bandwidth: self.bandwidth.with_kappa(kappa),
            ..self.clone()
        }
    }
}

/// Resolved trimming thresholds: a point is kept when the local density
/// estimate is at least `density_floor`, cond(S_N) is at most `cond_cap`,
/// and det(S_N) is at least `det_floor`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrimmingSpec {
    pub density_floor: f64,
    pub cond_cap: f64,
    pub det_floor: f64,
}

impl TrimmingSpec {
    pub fn new(density_floor: f64, cond_cap: f64, det_floor: f64) -> Result<Self> {
        if !(density_floor > 0.0) || !(cond_cap > 0.0) || !(det_floor > 0.0) {
            return Err(Error::Invalid("trimming thresholds must be positive".into()));
        }
        Ok(TrimmingSpec {
            density_floor,
            cond_cap,
            det_floor,
        })
    }
}

/// Trimming policy with a density floor expressed relative to the largest
/// density seen on a coarse grid; resolved per sample and bandwidth.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrimmingPolicy {
    /// Density floor as a fraction of the coarse-grid maximum of f-hat.
    pub density_frac: f64,
    pub cond_cap: f64,
    pub det_floor: f64,
}

impl Default for TrimmingPolicy {
    fn default() -> Self {
        // det(S_N) scales like the local density to the N-bar power, so any
        // sizeable determinant floor acts as a second (much harsher) density
        // floor; by default it only catches outright singularity and the
        // density floor plus condition cap do the work.
        TrimmingPolicy {
            density_frac: 0.01,
            cond_cap: 1e6,
            det_floor: 1e-300,
        }
    }
}

impl TrimmingPolicy {
    /// Resolve against the data: the floor is `density_frac` times the
    /// maximum density estimate over a coarse grid of sample points.
    pub fn resolve(&self, view: &PeriodView, cfg: &LocalPolyConfig) -> TrimmingSpec {
        let n = view.n();
        let b = cfg.bandwidth.resolve(n);
        let stride = (n / 48).max(1);
        let mut max_f = 0.0f64;
        let mut z = vec![0.0; cfg.dim()];
        for i in (0..n).step_by(stride) {
            z[0] = view.u[i];
            z[1..].copy_from_slice(view.v_row(i));
            let f = density_at(&z, view, cfg, b);
            if f > max_f {
                max_f = f;
            }
        }
        TrimmingSpec {
            density_floor: (self.density_frac * max_f).max(f64::MIN_POSITIVE),
            cond_cap: self.cond_cap,
            det_floor: self.det_floor,
        }
    }
}

/// One period of data seen through a coefficient estimate: the generated
/// index u = X't beta standardized to mean zero and unit variance within the
/// view, the (standardized) index rows V, and the outcomes.
///
/// Standardizing the index alongside V keeps the coordinates on comparable
/// scales under the shared scalar bandwidth; evaluation points map through
/// [`PeriodView::standardize_u`] and derivative estimates scale back by
/// [`PeriodView::u_scale`].
#[derive(Clone, Debug)]
pub struct PeriodView {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    d_v: usize,
    u_loc: f64,
    u_scale: f64,
}

impl PeriodView {
    /// View of one period, optionally restricted to a single discrete cell.
    pub fn new(
        panel: &IndexedPanel,
        beta: &BetaEstimate,
        t: usize,
        cell: Option<usize>,
    ) -> Result<Self> {
        if !panel.is_transformed() && panel.d_v() > 0 {
            return Err(Error::Invalid(
                "panel must be standardized before local regression".into(),
            ));
        }
        if t >= panel.base.n_periods() {
            return Err(Error::Invalid(format!("period {t} out of range")));
        }
        let d_v = panel.d_v();
        let n = panel.base.n_units();
        let mut u = Vec::new();
        let mut v = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            if let Some(c) = cell {
                if panel.cell(i) != c {
                    continue;
                }
            }
            u.push(beta.index(panel.base.x_row(i, t)));
            v.extend_from_slice(panel.v_row(i));
            y.push(panel.base.y(i, t) as f64);
        }
        let m = u.len().max(1) as f64;
        let u_loc = u.iter().sum::<f64>() / m;
        let var = u.iter().map(|x| (x - u_loc) * (x - u_loc)).sum::<f64>() / m;
        let u_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for x in u.iter_mut() {
            *x = (*x - u_loc) / u_scale;
        }
        Ok(PeriodView {
            u,
            v,
            y,
            d_v,
            u_loc,
            u_scale,
        })
    }

    /// Assemble a view from raw arrays (tests and synthetic pipelines); the
    /// index coordinate is taken as-is.
    pub fn from_raw(u: Vec<f64>, v: Vec<f64>, y: Vec<f64>, d_v: usize) -> Self {
        debug_assert_eq!(u.len() * d_v, v.len());
        debug_assert_eq!(u.len(), y.len());
        PeriodView {
            u,
            v,
            y,
            d_v,
            u_loc: 0.0,
            u_scale: 1.0,
        }
    }

    /// Map a raw index value into the view's standardized coordinate.
    pub fn standardize_u(&self, u: f64) -> f64 {
        (u - self.u_loc) / self.u_scale
    }

    /// Scale of the raw index per standardized unit.
    pub fn u_scale(&self) -> f64 {
        self.u_scale
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    #[inline]
    pub fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.d_v..(i + 1) * self.d_v]
    }

    pub fn z_row(&self, i: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(1 + self.d_v);
        z.push(self.u[i]);
        z.extend_from_slice(self.v_row(i));
        z
    }
}

/// Kernel density estimate of f_{Z_t} at z.
pub fn density_at(z: &[f64], view: &PeriodView, cfg: &LocalPolyConfig, b: f64) -> f64 {
    let n = view.n();
    let dim = cfg.dim();
    let norm = b.powi(-(dim as i32));
    let mut acc = 0.0;
    'obs: for j in 0..n {
        let mut k = kernel_eval((view.u[j] - z[0]) / b);
        if k == 0.0 {
            continue;
        }
        for (c, &vj) in view.v_row(j).iter().enumerate() {
            let a = (vj - z[1 + c]) / b;
            if a.abs() > SUPPORT {
                continue 'obs;
            }
            k *= kernel_eval(a);
        }
        acc += k;
    }
    acc * norm / n as f64
}

/// Local moment matrices at evaluation point z:
/// S = (1/n) sum_j xi(a_j) xi(a_j)' K_b(a_j) and
/// T = (1/n) sum_j xi(a_j) y_j K_b(a_j), a_j = (Z_j - z)/b.
pub fn assemble(z: &[f64], view: &PeriodView, cfg: &LocalPolyConfig) -> (Vec<f64>, Vec<f64>) {
    let b = cfg.bandwidth.resolve(view.n());
    let bs = vec![b; cfg.dim()];
    assemble_with_bandwidths(z, view, cfg, &bs)
}

/// Per-coordinate bandwidth variant; the scalar entry point passes the same
/// b in every slot. Weight normalization is the product of inverse
/// bandwidths.
pub fn assemble_with_bandwidths(
    z: &[f64],
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    b: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let dim = cfg.dim();
    debug_assert_eq!(z.len(), dim);
    debug_assert_eq!(b.len(), dim);
    let n = view.n();
    let n_bar = cfg.n_bar();
    let norm: f64 = b.iter().map(|bi| 1.0 / bi).product::<f64>() / n as f64;

    let mut s = vec![0.0; n_bar * n_bar];
    let mut t = vec![0.0; n_bar];
    let mut a = vec![0.0; dim];
    let mut xi = vec![0.0; n_bar];
    'obs: for j in 0..n {
        a[0] = (view.u[j] - z[0]) / b[0];
        if a[0].abs() > SUPPORT {
            continue;
        }
        let mut w = kernel_eval(a[0]);
        for (c, &vj) in view.v_row(j).iter().enumerate() {
            a[1 + c] = (vj - z[1 + c]) / b[1 + c];
            if a[1 + c].abs() > SUPPORT {
                continue 'obs;
            }
            w *= kernel_eval(a[1 + c]);
        }
        if w == 0.0 {
            continue;
        }
        w *= norm;
        cfg.basis.eval_into(&a, &mut xi);
        let wy = w * view.y[j];
        for p in 0..n_bar {
            let wxp = w * xi[p];
            t[p] += wy * xi[p];
            let row = p * n_bar;
            for q in p..n_bar {
                s[row + q] += wxp * xi[q];
            }
        }
    }
    for p in 0..n_bar {
        for q in 0..p {
            s[p * n_bar + q] = s[q * n_bar + p];
        }
    }
    (s, t)
}

/// Result of one trimmed local fit.
#[derive(Clone, Debug)]
pub struct LocalPolyFit {
    /// Local coefficients; `None` when the point was trimmed.
    pub h: Option<Vec<f64>>,
    /// The S_N matrix, row-major.
    pub s: Vec<f64>,
    pub trimmed: bool,
    pub b_n: f64,
    /// Density estimate at the evaluation point (the (1,1) entry of S_N).
    pub f_hat: f64,
    pub cond: f64,
    pub det: f64,
    dim: usize,
}

impl LocalPolyFit {
    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// First local coefficient: the conditional-mean estimate at z.
pub fn extract_h1(fit: &LocalPolyFit) -> Result<f64> {
    fit.h.as_ref().map(|h| h[0]).ok_or(Error::Trimmed)
}

/// Bandwidth-rescaled (2 + d_V)-th coefficient: the derivative of the
/// conditional mean in the index direction.
pub fn extract_h2(fit: &LocalPolyFit) -> Result<f64> {
    let h = fit.h.as_ref().ok_or(Error::Trimmed)?;
    let slot = fit.dim; // zero-based position of (1,0,...,0)
    if h.len() <= slot {
        return Err(Error::OrderTooLow {
            need: 1,
            found: 0,
        });
    }
    Ok(h[slot] / fit.b_n)
}

/// Trimmed local least-squares fit at z. Degeneracy (density below the
/// floor, overly large condition number, small determinant, or a failed
/// factorization) marks the point trimmed rather than erroring.
pub fn local_fit(
    z: &[f64],
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    trim: &TrimmingSpec,
) -> LocalPolyFit {
    let b = cfg.bandwidth.resolve(view.n());
    let (s, t) = assemble(z, view, cfg);
    finish_fit(s, &t, b, cfg, trim)
}

fn finish_fit(
    s: Vec<f64>,
    t: &[f64],
    b: f64,
    cfg: &LocalPolyConfig,
    trim: &TrimmingSpec,
) -> LocalPolyFit {
    let n_bar = cfg.n_bar();
    let f_hat = s[0];
    let mut fit = LocalPolyFit {
        h: None,
        s,
        trimmed: true,
        b_n: b,
        f_hat,
        cond: f64::INFINITY,
        det: 0.0,
        dim: cfg.dim(),
    };
    if !(f_hat >= trim.density_floor) {
        return fit;
    }
    let ch = match Cholesky::factor(&fit.s, n_bar) {
        Some(c) => c,
        None => return fit,
    };
    fit.det = ch.det();
    fit.cond = crate::linalg::sym_condition_from_chol(&fit.s, &ch, n_bar);
    if fit.det < trim.det_floor || fit.cond > trim.cond_cap {
        return fit;
    }
    fit.h = Some(ch.solve(t));
    fit.trimmed = false;
    fit
}

/// The trimming indicator: 1 iff the density floor, condition cap, and
/// determinant floor all hold at z.
pub fn build_trimming_indicator(
    z: &[f64],
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    trim: &TrimmingSpec,
) -> bool {
    !local_fit(z, view, cfg, trim).trimmed
}

/// Feasibility report for the bandwidth exponent delta given the polynomial
/// order, the first-step rate epsilon, and the index dimension.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateReport {
    pub ell: usize,
    pub d_v: usize,
    pub epsilon: f64,
    /// Admissible open interval for delta.
    pub delta_lower: f64,
    pub delta_upper: f64,
    pub feasible: bool,
    /// Minimal first-step rate (3 + 2 d_V) / (8 + 4 d_V) implied by the
    /// bandwidth window.
    pub epsilon_floor: f64,
    pub epsilon_ok: bool,
    /// The configured delta and whether it falls inside the window.
    pub delta: f64,
    pub delta_in_range: bool,
    pub b_n: f64,
    /// Attainable rate exponents N^r for the two estimands.
    pub asf_rate_interval: (f64, f64),
    pub ape_rate_interval: (f64, f64),
}

/// Admissible delta window: the lower end is 1/(2 ell + 3) for odd ell and
/// 1/(2 ell + 5) for even ell (or 1 - 2 epsilon when binding); the upper end
/// is min(2 epsilon / (3 + 2 d_V), 1 / (1 + 2 d_V)).
pub fn delta_window(ell: usize, epsilon: f64, d_v: usize) -> (f64, f64) {
    let bias_bound = if ell % 2 == 1 {
        1.0 / (2.0 * ell as f64 + 3.0)
    } else {
        1.0 / (2.0 * ell as f64 + 5.0)
    };
    let lower = bias_bound.max(1.0 - 2.0 * epsilon);
    let upper = (2.0 * epsilon / (3.0 + 2.0 * d_v as f64)).min(1.0 / (1.0 + 2.0 * d_v as f64));
    (lower, upper)
}

/// Midpoint of the admissible window, when one exists.
pub fn default_delta(ell: usize, epsilon: f64, d_v: usize) -> Option<f64> {
    let (lo, hi) = delta_window(ell, epsilon, d_v);
    (lo < hi).then(|| 0.5 * (lo + hi))
}

pub fn check_rates(cfg: &LocalPolyConfig, epsilon: f64, d_v: usize, n: usize) -> RateReport {
    let ell = cfg.poly_order;
    let (lo, hi) = delta_window(ell, epsilon, d_v);
    let eps_floor = (3.0 + 2.0 * d_v as f64) / (8.0 + 4.0 * d_v as f64);
    let delta = cfg.bandwidth.delta;
    let ellf = ell as f64;
    let dvf = d_v as f64;
    RateReport {
        ell,
        d_v,
        epsilon,
        delta_lower: lo,
        delta_upper: hi,
        feasible: lo < hi,
        epsilon_floor: eps_floor,
        epsilon_ok: epsilon > eps_floor,
        delta,
        delta_in_range: lo < delta && delta < hi,
        b_n: cfg.bandwidth.resolve(n),
        asf_rate_interval: ((1.0 + dvf) / (3.0 + 2.0 * dvf), (1.0 + ellf) / (3.0 + 2.0 * ellf)),
        ape_rate_interval: (dvf / (3.0 + 2.0 * dvf), ellf / (3.0 + 2.0 * ellf)),
    }
}

/// Leave-one-out cross-validation of the bandwidth constant kappa.
///
/// For each kappa the score is the sum of squared leave-one-out residuals of
/// the conditional-mean estimate at the sample points, restricted to points
/// the trimming rule keeps; a kappa that trims everything scores infinity.
/// Ties go to the smaller kappa.
pub fn cross_validate_kappa(
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    grid: &[f64],
    policy: &TrimmingPolicy,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Invalid("cross-validation grid is empty".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = view.n();
    let dim = cfg.dim();
    let k0 = kernel_eval(0.0).powi(dim as i32);

    let mut scores = Vec::with_capacity(sorted.len());
    for &kappa in &sorted {
        let cfg_k = cfg.with_kappa(kappa);
        let b = cfg_k.bandwidth.resolve(n);
        let trim = policy.resolve(view, &cfg_k);
        let w0 = k0 * b.powi(-(dim as i32)) / n as f64;

        use rayon::prelude::*;
        let pieces: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let z = view.z_row(i);
                let (s, mut t) = assemble(&z, view, &cfg_k);
                let fit = finish_fit(s, &t, b, &cfg_k, &trim);
                if fit.trimmed {
                    return None;
                }
                // downdate: remove observation i, whose basis row at its own
                // location is e_1 with weight w0
                let n_bar = cfg_k.n_bar();
                let mut s = fit.s;
                s[0] -= w0;
                t[0] -= w0 * view.y[i];
                let ch = Cholesky::factor(&s, n_bar)?;
                let h = ch.solve(&t);
                let r = view.y[i] - h[0];
                Some(r * r)
            })
            .collect();
        let kept: Vec<f64> = pieces.into_iter().flatten().collect();
        if kept.is_empty() {
            scores.push(f64::INFINITY);
        } else {
            scores.push(kept.iter().sum());
        }
    }
    let mut best = None;
    for (idx, &sc) in scores.iter().enumerate() {
        if sc.is_finite() {
            match best {
                None => best = Some(idx),
                Some(b) if sc < scores[b] => best = Some(idx),
                _ => {}
            }
        }
    }
    match best {
        Some(idx) => Ok((sorted[idx], scores)),
        None => Err(Error::AllTrimmed),
    }
}

/// Outcome of one evaluation in a batched partial-mean pass.
#[derive(Clone, Copy, Debug)]
pub struct PointFit {
    /// Conditional-mean estimate; `None` when trimmed.
    pub h1: Option<f64>,
    /// Bandwidth-rescaled derivative estimate; `None` when trimmed or when
    /// the polynomial order is zero.
    pub h2: Option<f64>,
    /// Density estimate at the evaluation point.
    pub f_hat: f64,
}

/// Pairwise index-coordinate kernel products and scaled differences.
///
/// These depend only on the V rows and the bandwidth, not on the evaluation
/// index or the period, so one table serves every (x_bar, t) pass over a
/// cell.
pub struct NeighborTables {
    n: usize,
    d_v: usize,
    pub b: f64,
    /// prod_c K((V_jc - V_ic)/b), row-major over (i, j).
    kv: Vec<f64>,
    /// (V_jc - V_ic)/b, layout ((i * n + j) * d_v + c).
    dv: Vec<f64>,
}

impl NeighborTables {
    pub fn build(view: &PeriodView, b: f64) -> Self {
        let n = view.n();
        let d_v = view.d_v();
        if d_v == 0 {
            // no index coordinates: every pair carries unit weight
            return NeighborTables {
                n,
                d_v,
                b,
                kv: vec![1.0; n * n],
                dv: Vec::new(),
            };
        }
        let mut kv = vec![0.0; n * n];
        let mut dv = vec![0.0; n * n * d_v];
        use rayon::prelude::*;
        kv.par_chunks_mut(n)
            .zip(dv.par_chunks_mut(n * d_v))
            .enumerate()
            .for_each(|(i, (kv_row, dv_row))| {
                let vi = view.v_row(i);
                for j in 0..n {
                    let vj = view.v_row(j);
                    let mut w = 1.0;
                    for c in 0..d_v {
                        let d = (vj[c] - vi[c]) / b;
                        dv_row[j * d_v + c] = d;
                        if d.abs() > SUPPORT {
                            w = 0.0;
                        } else if w != 0.0 {
                            w *= kernel_eval(d);
                        }
                    }
                    kv_row[j] = w;
                }
            });
        NeighborTables { n, d_v, b, kv, dv }
    }
}

/// Table-backed variant of [`fit_at_unit_points`]; bit-identical results.
pub fn fit_at_unit_points_with_tables(
    u0: f64,
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    trim: &TrimmingSpec,
    tables: &NeighborTables,
) -> Vec<PointFit> {
    let n = view.n();
    let d_v = view.d_v();
    debug_assert_eq!(tables.n, n);
    debug_assert_eq!(tables.d_v, d_v);
    let dim = cfg.dim();
    let n_bar = cfg.n_bar();
    let ell = cfg.poly_order;
    let b = tables.b;
    let norm = b.powi(-(dim as i32)) / n as f64;

    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut ku: Vec<f64> = Vec::with_capacity(n);
    let mut du_pows: Vec<f64> = Vec::with_capacity(n * (ell + 1));
    for j in 0..n {
        let du = (view.u[j] - u0) / b;
        if du.abs() > SUPPORT {
            continue;
        }
        active.push(j);
        ku.push(kernel_eval(du));
        let mut p = 1.0;
        for _ in 0..=ell {
            du_pows.push(p);
            p *= du;
        }
    }
    let r_u: Vec<usize> = (0..n_bar)
        .map(|p| cfg.basis.multi_index(p)[0] as usize)
        .collect();
    let r_v: Vec<usize> = (0..n_bar)
        .flat_map(|p| (0..d_v).map(move |c| cfg.basis.multi_index(p)[1 + c] as usize))
        .collect();

    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let kv_row = &tables.kv[i * n..(i + 1) * n];
            let dv_row = &tables.dv[i * n * d_v..(i + 1) * n * d_v];
            let mut s = vec![0.0; n_bar * n_bar];
            let mut t = vec![0.0; n_bar];
            let mut xi = vec![0.0; n_bar];
            let mut vp = vec![0.0; d_v * (ell + 1)];
            for (jj, &j) in active.iter().enumerate() {
                let kv = kv_row[j];
                if kv == 0.0 {
                    continue;
                }
                let w = ku[jj] * kv * norm;
                if w == 0.0 {
                    continue;
                }
                for c in 0..d_v {
                    let d = dv_row[j * d_v + c];
                    let mut p = 1.0;
                    for q in 0..=ell {
                        vp[c * (ell + 1) + q] = p;
                        p *= d;
                    }
                }
                let dp = &du_pows[jj * (ell + 1)..(jj + 1) * (ell + 1)];
                for p in 0..n_bar {
                    let mut v = dp[r_u[p]];
                    for c in 0..d_v {
                        v *= vp[c * (ell + 1) + r_v[p * d_v + c]];
                    }
                    xi[p] = v;
                }
                let wy = w * view.y[j];
                for p in 0..n_bar {
                    let wxp = w * xi[p];
                    t[p] += wy * xi[p];
                    let row = p * n_bar;
                    for q in p..n_bar {
                        s[row + q] += wxp * xi[q];
                    }
                }
            }
            for p in 0..n_bar {
                for q in 0..p {
                    s[p * n_bar + q] = s[q * n_bar + p];
                }
            }
            let fit = finish_fit(s, &t, b, cfg, trim);
            PointFit {
                h1: fit.h.as_ref().map(|h| h[0]),
                h2: if ell >= 1 {
                    fit.h.as_ref().map(|h| h[cfg.basis.deriv_slot()] / b)
                } else {
                    None
                },
                f_hat: fit.f_hat,
            }
        })
        .collect()
}

/// Trimmed local fits at (u0, V_i) for every observation in the view.
///
/// All evaluation points share the same first coordinate, so the kernel
/// weights and monomial powers in that coordinate are computed once and the
/// per-point loop touches only the index coordinates. Results are identical
/// to calling [`local_fit`] point by point.
pub fn fit_at_unit_points(
    u0: f64,
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    trim: &TrimmingSpec,
) -> Vec<PointFit> {
    let n = view.n();
    let d_v = view.d_v();
    let dim = cfg.dim();
    let n_bar = cfg.n_bar();
    let ell = cfg.poly_order;
    let b = cfg.bandwidth.resolve(n);
    let norm = b.powi(-(dim as i32)) / n as f64;

    // u-coordinate parts shared by every evaluation point
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut ku: Vec<f64> = Vec::with_capacity(n);
    let mut du_pows: Vec<f64> = Vec::with_capacity(n * (ell + 1));
    for j in 0..n {
        let du = (view.u[j] - u0) / b;
        if du.abs() > SUPPORT {
            continue;
        }
        active.push(j);
        ku.push(kernel_eval(du));
        let mut p = 1.0;
        for _ in 0..=ell {
            du_pows.push(p);
            p *= du;
        }
    }

    // flattened basis exponents: u-exponent and per-coordinate v-exponents
    let r_u: Vec<usize> = (0..n_bar)
        .map(|p| cfg.basis.multi_index(p)[0] as usize)
        .collect();
    let r_v: Vec<usize> = (0..n_bar)
        .flat_map(|p| {
            (0..d_v).map(move |c| cfg.basis.multi_index(p)[1 + c] as usize)
        })
        .collect();

    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let vi = view.v_row(i);
            let mut s = vec![0.0; n_bar * n_bar];
            let mut t = vec![0.0; n_bar];
            let mut xi = vec![0.0; n_bar];
            let mut vp = vec![0.0; d_v * (ell + 1)];
            'obs: for (jj, &j) in active.iter().enumerate() {
                let vj = view.v_row(j);
                let mut kv = 1.0;
                for c in 0..d_v {
                    let dv = (vj[c] - vi[c]) / b;
                    if dv.abs() > SUPPORT {
                        continue 'obs;
                    }
                    kv *= kernel_eval(dv);
                    let mut p = 1.0;
                    for q in 0..=ell {
                        vp[c * (ell + 1) + q] = p;
                        p *= dv;
                    }
                }
                let w = ku[jj] * kv * norm;
                if w == 0.0 {
                    continue;
                }
                let dp = &du_pows[jj * (ell + 1)..(jj + 1) * (ell + 1)];
                for p in 0..n_bar {
                    let mut v = dp[r_u[p]];
                    for c in 0..d_v {
                        v *= vp[c * (ell + 1) + r_v[p * d_v + c]];
                    }
                    xi[p] = v;
                }
                let wy = w * view.y[j];
                for p in 0..n_bar {
                    let wxp = w * xi[p];
                    t[p] += wy * xi[p];
                    let row = p * n_bar;
                    for q in p..n_bar {
                        s[row + q] += wxp * xi[q];
                    }
                }
            }
            for p in 0..n_bar {
                for q in 0..p {
                    s[p * n_bar + q] = s[q * n_bar + p];
                }
            }
            let fit = finish_fit(s, &t, b, cfg, trim);
            PointFit {
                h1: fit.h.as_ref().map(|h| h[0]),
                h2: if ell >= 1 {
                    fit.h.as_ref().map(|h| h[cfg.basis.deriv_slot()] / b)
                } else {
                    None
                },
                f_hat: fit.f_hat,
            }
        })
        .collect()
}

/// Local logit fit: maximize the kernel-weighted logit likelihood in the
/// polynomial coefficients, starting from the least-squares solution mapped
/// through the inverse link.
pub fn local_logit_fit(
    z: &[f64],
    view: &PeriodView,
    cfg: &LocalPolyConfig,
    trim: &TrimmingSpec,
) -> Result<LocalPolyFit> {
    let ls = local_fit(z, view, cfg, trim);
    if ls.trimmed {
        return Ok(ls);
    }
    let b = ls.b_n;
    let dim = cfg.dim();
    let n_bar = cfg.n_bar();
    let n = view.n();

    // collect active observations once
    let norm = b.powi(-(dim as i32)) / n as f64;
    let mut weights = Vec::new();
    let mut xis: Vec<f64> = Vec::new();
    let mut ys = Vec::new();
    let mut a = vec![0.0; dim];
    let mut xi = vec![0.0; n_bar];
    'obs: for j in 0..n {
        a[0] = (view.u[j] - z[0]) / b;
        if a[0].abs() > SUPPORT {
            continue;
        }
        let mut w = kernel_eval(a[0]);
        for (c, &vj) in view.v_row(j).iter().enumerate() {
            a[1 + c] = (vj - z[1 + c]) / b;
            if a[1 + c].abs() > SUPPORT {
                continue 'obs;
            }
            w *= kernel_eval(a[1 + c]);
        }
        if w == 0.0 {
            continue;
        }
        cfg.basis.eval_into(&a, &mut xi);
        weights.push(w * norm);
        xis.extend_from_slice(&xi);
        ys.push(view.y[j]);
    }
    let w_total: f64 = weights.iter().sum();
    let wy_total: f64 = weights.iter().zip(&ys).map(|(w, y)| w * y).sum();
    if wy_total <= 1e-12 * w_total || wy_total >= (1.0 - 1e-12) * w_total {
        return Err(Error::PerfectLocalSeparation);
    }

    // start from the LS fit mapped through the inverse link
    let ls_h = ls.h.as_ref().unwrap();
    let p0 = ls_h[0].clamp(1e-3, 1.0 - 1e-3);
    let mut h = vec![0.0; n_bar];
    h[0] = (p0 / (1.0 - p0)).ln();
    for p in 1..n_bar {
        h[p] = ls_h[p] / (p0 * (1.0 - p0));
    }

    let lambda = |v: f64| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    };
    let objective = |h: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let eta: f64 = (0..n_bar).map(|p| xis[j * n_bar + p] * h[p]).sum();
            // log-likelihood written to avoid overflow for large |eta|
            let ll = if eta >= 0.0 {
                ys[j] * eta - eta - (-eta).exp().ln_1p()
            } else {
                ys[j] * eta - eta.exp().ln_1p()
            };
            acc += w * ll;
        }
        acc
    };

    let mut fval = objective(&h);
    for _ in 0..80 {
        let mut grad = vec![0.0; n_bar];
        let mut hess = vec![0.0; n_bar * n_bar];
        for (j, w) in weights.iter().enumerate() {
            let row = &xis[j * n_bar..(j + 1) * n_bar];
            let eta: f64 = (0..n_bar).map(|p| row[p] * h[p]).sum();
            let mu = lambda(eta);
            let resid = w * (ys[j] - mu);
            let curve = w * mu * (1.0 - mu);
            for p in 0..n_bar {
                grad[p] += resid * row[p];
                for q in p..n_bar {
                    hess[p * n_bar + q] += curve * row[p] * row[q];
                }
            }
        }
        for p in 0..n_bar {
            for q in 0..p {
                hess[p * n_bar + q] = hess[q * n_bar + p];
            }
        }
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-10 * w_total.max(1e-300) {
            break;
        }
        let ch = match Cholesky::factor(&hess, n_bar) {
            Some(c) => c,
            None => return Err(Error::PerfectLocalSeparation),
        };
        let step = ch.solve(&grad);
        let mut alpha = 1.0;
        let mut advanced = false;
        for _ in 0..40 {
            let cand: Vec<f64> = h.iter().zip(&step).map(|(a, s)| a + alpha * s).collect();
            let fc = objective(&cand);
            if fc > fval {
                h = cand;
                fval = fc;
                advanced = true;
                break;
            }
            alpha *= 0.5;
        }
        if !advanced {
            break;
        }
        if h[0].abs() > 60.0 {
            return Err(Error::PerfectLocalSeparation);
        }
    }

    Ok(LocalPolyFit {
        h: Some(h),
        ..ls
    })
}
