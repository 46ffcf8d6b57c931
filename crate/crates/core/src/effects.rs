//! Third step: partial-mean estimators of the ASF and APE, time averaging,
//! support diagnostics and identification bounds, analytic variance
//! plug-ins, and local average response estimation.

use serde::{Deserialize, Serialize};

use crate::beta::BetaEstimate;
use crate::error::{Error, Result};
use crate::kernels::{kernel_eval, KernelMoments};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::localpoly::{
    cross_validate_kappa, fit_at_unit_points_with_tables, local_logit_fit, LocalPolyConfig,
    NeighborTables, PeriodView, PointFit, TrimmingPolicy,
};
use crate::panel::IndexedPanel;

/// Covariate evaluation point, with the target coordinate for partial
/// effects and an optional alternative value for discrete effects.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvaluationPoint {
    pub x_bar: Vec<f64>,
    /// Zero-based target coordinate.
    pub target_coordinate: usize,
    pub alt_value: Option<f64>,
}

impl EvaluationPoint {
    pub fn new(x_bar: Vec<f64>, target_coordinate: usize) -> Result<Self> {
        if target_coordinate >= x_bar.len() {
            return Err(Error::Invalid(format!(
                "target coordinate {target_coordinate} out of range for d_X = {}",
                x_bar.len()
            )));
        }
        Ok(EvaluationPoint {
            x_bar,
            target_coordinate,
            alt_value: None,
        })
    }

    pub fn with_alt(mut self, alt: f64) -> Result<Self> {
        if alt == self.x_bar[self.target_coordinate] {
            return Err(Error::Invalid(
                "alternative value must differ from the base value".into(),
            ));
        }
        self.alt_value = Some(alt);
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum EffectKind {
    Asf,
    ApeContinuous,
    ApeDiscrete,
    Lar,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Period {
    At(usize),
    Averaged,
}

/// Point estimate of an ASF/APE-type effect with its diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub x_bar: Vec<f64>,
    pub value: f64,
    /// Fraction of units whose evaluation point was trimmed.
    pub trim_share: f64,
    pub analytic_se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub bounds: Option<(f64, f64)>,
    pub period: Period,
}

/// Which local smoother backs the conditional-mean estimates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Smoother {
    LeastSquares,
    LocalLogit,
}

/// Support diagnostic at one evaluation point: which units' index values lie
/// inside the estimated conditional support of V given the index value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportReport {
    /// Fraction of units outside the estimated conditional support.
    pub p_out: f64,
    /// (cell, members, outside) per discrete cell.
    pub per_cell: Vec<(usize, usize, usize)>,
}

/// Identification bounds for one effect under support failure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lo: f64,
    pub hi: f64,
    /// Estimated probability mass excluded by the support restriction.
    pub p_out: f64,
    /// The point estimate restricted to the kept set.
    pub point: f64,
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

/// Partial-mean estimation engine bound to one panel and first-step fit.
pub struct EffectsEngine<'a> {
    panel: &'a IndexedPanel,
    beta: &'a BetaEstimate,
    cfg: LocalPolyConfig,
    policy: TrimmingPolicy,
    smoother: Smoother,
    /// Floor each derivative summand at zero (monotone index restriction).
    pub monotone_ape: bool,
    /// Density cap used in APE identification bounds. The logistic density
    /// peaks at 1/4; see the module docs for the configurable cap.
    pub ape_density_cap: f64,
    /// Per-cell neighbor tables, shared across evaluation points and
    /// periods; rebuilt when the bandwidth changes.
    tables: RefCell<HashMap<usize, Rc<NeighborTables>>>,
}

impl<'a> EffectsEngine<'a> {
    pub fn new(
        panel: &'a IndexedPanel,
        beta: &'a BetaEstimate,
        cfg: LocalPolyConfig,
        policy: TrimmingPolicy,
    ) -> Result<Self> {
        if panel.d_v() > 0 && !panel.is_transformed() {
            return Err(Error::Invalid(
                "panel must be standardized before effect estimation".into(),
            ));
        }
        if cfg.d_v() != panel.d_v() {
            return Err(Error::Invalid(format!(
                "config built for d_V = {}, panel has d_V = {}",
                cfg.d_v(),
                panel.d_v()
            )));
        }
        if beta.beta.len() != panel.base.d_x() {
            return Err(Error::Invalid("coefficient length mismatch".into()));
        }
        Ok(EffectsEngine {
            panel,
            beta,
            cfg,
            policy,
            smoother: Smoother::LeastSquares,
            monotone_ape: false,
            ape_density_cap: 0.25,
            tables: RefCell::new(HashMap::new()),
        })
    }

    pub fn with_smoother(mut self, smoother: Smoother) -> Self {
        self.smoother = smoother;
        self
    }

    pub fn with_monotone_ape(mut self, on: bool) -> Self {
        self.monotone_ape = on;
        self
    }

    pub fn config(&self) -> &LocalPolyConfig {
        &self.cfg
    }

    pub fn set_kappa(&mut self, kappa: f64) {
        self.cfg = self.cfg.with_kappa(kappa);
        self.tables.borrow_mut().clear();
    }

    /// Neighbor tables for one cell, built on first use. The table depends
    /// on the index rows and the resolved bandwidth only, so it is shared by
    /// every evaluation point and period.
    fn cell_tables(&self, cell: usize, view: &PeriodView) -> Rc<NeighborTables> {
        if let Some(t) = self.tables.borrow().get(&cell) {
            return Rc::clone(t);
        }
        let b = self.cfg.bandwidth.resolve(view.n());
        let built = Rc::new(NeighborTables::build(view, b));
        self.tables
            .borrow_mut()
            .insert(cell, Rc::clone(&built));
        built
    }

    fn u0(&self, x_bar: &[f64]) -> Result<f64> {
        if x_bar.len() != self.panel.base.d_x() {
            return Err(Error::Invalid(format!(
                "evaluation point has {} coordinates, panel d_X = {}",
                x_bar.len(),
                self.panel.base.d_x()
            )));
        }
        Ok(self.beta.index(x_bar))
    }

    /// Local fits at (x' beta, V_i) for every unit, grouped by cell.
    fn cell_fits(&self, u0: f64, t: usize) -> Result<Vec<CellFits>> {
        let mut out = Vec::with_capacity(self.panel.n_cells());
        for cell in 0..self.panel.n_cells() {
            let members = self.panel.cell_members(cell);
            if members.is_empty() {
                continue;
            }
            let view = PeriodView::new(self.panel, self.beta, t, Some(cell))?;
            let trim = self.policy.resolve(&view, &self.cfg);
            let u0_std = view.standardize_u(u0);
            let mut fits = match self.smoother {
                Smoother::LeastSquares if view.d_v() > 0 => {
                    let tables = self.cell_tables(cell, &view);
                    fit_at_unit_points_with_tables(u0_std, &view, &self.cfg, &trim, &tables)
                }
                Smoother::LeastSquares => {
                    crate::localpoly::fit_at_unit_points(u0_std, &view, &self.cfg, &trim)
                }
                Smoother::LocalLogit => (0..view.n())
                    .map(|i| {
                        let mut z = vec![u0_std];
                        z.extend_from_slice(view.v_row(i));
                        match local_logit_fit(&z, &view, &self.cfg, &trim) {
                            Ok(fit) if !fit.trimmed => {
                                let h = fit.h.as_ref().unwrap();
                                let link = h[0];
                                let p = logistic(link);
                                let h2 = (self.cfg.poly_order >= 1).then(|| {
                                    // chain rule through the link
                                    p * (1.0 - p) * h[self.cfg.basis.deriv_slot()] / fit.b_n
                                });
                                PointFit {
                                    h1: Some(p),
                                    h2,
                                    f_hat: fit.f_hat,
                                }
                            }
                            Ok(fit) => PointFit {
                                h1: None,
                                h2: None,
                                f_hat: fit.f_hat,
                            },
                            // separation at a point is reported as trimmed
                            Err(_) => PointFit {
                                h1: None,
                                h2: None,
                                f_hat: 0.0,
                            },
                        }
                    })
                    .collect(),
            };
            // derivative estimates back on the raw index scale
            let s = view.u_scale();
            if s != 1.0 {
                for f in fits.iter_mut() {
                    if let Some(h2) = f.h2.as_mut() {
                        *h2 /= s;
                    }
                }
            }
            out.push(CellFits {
                cell,
                members,
                fits,
                view,
                density_floor: trim.density_floor,
            });
        }
        Ok(out)
    }

    /// Trimmed ASF estimate at x_bar for period t: the average of the
    /// conditional-mean estimates at (x_bar' beta, V_i), trimmed terms
    /// contributing zero.
    pub fn asf(&self, x_bar: &[f64], t: usize) -> Result<EffectEstimate> {
        let u0 = self.u0(x_bar)?;
        let cells = self.cell_fits(u0, t)?;
        let n = self.panel.base.n_units() as f64;
        let mut total = 0.0;
        let mut kept = 0usize;
        for c in &cells {
            for f in &c.fits {
                if let Some(h1) = f.h1 {
                    total += h1;
                    kept += 1;
                }
            }
        }
        if kept == 0 {
            return Err(Error::AllTrimmed);
        }
        Ok(EffectEstimate {
            kind: EffectKind::Asf,
            x_bar: x_bar.to_vec(),
            value: total / n,
            trim_share: 1.0 - kept as f64 / n,
            analytic_se: None,
            ci: None,
            bounds: None,
            period: Period::At(t),
        })
    }

    /// Trimmed APE estimate for a continuous covariate k: the coefficient
    /// times the average derivative estimate over the kept units. With
    /// `monotone_ape` each derivative summand is floored at zero.
    pub fn ape(&self, x_bar: &[f64], k: usize, t: usize) -> Result<EffectEstimate> {
        if self.cfg.poly_order < 1 {
            return Err(Error::OrderTooLow {
                need: 1,
                found: self.cfg.poly_order,
            });
        }
        if k >= self.panel.base.d_x() {
            return Err(Error::Invalid(format!("coordinate {k} out of range")));
        }
        let u0 = self.u0(x_bar)?;
        let cells = self.cell_fits(u0, t)?;
        let n = self.panel.base.n_units() as f64;
        let mut total = 0.0;
        let mut kept = 0usize;
        for c in &cells {
            for f in &c.fits {
                if let Some(h2) = f.h2 {
                    total += if self.monotone_ape { h2.max(0.0) } else { h2 };
                    kept += 1;
                }
            }
        }
        if kept == 0 {
            return Err(Error::AllTrimmed);
        }
        Ok(EffectEstimate {
            kind: EffectKind::ApeContinuous,
            x_bar: x_bar.to_vec(),
            value: self.beta.beta[k] * total / n,
            trim_share: 1.0 - kept as f64 / n,
            analytic_se: None,
            ci: None,
            bounds: None,
            period: Period::At(t),
        })
    }

    /// ASF and APE from a single pass of local fits (each fit carries both
    /// the level and the derivative).
    pub fn asf_ape(
        &self,
        x_bar: &[f64],
        k: usize,
        t: usize,
    ) -> Result<(EffectEstimate, EffectEstimate)> {
        if self.cfg.poly_order < 1 {
            return Err(Error::OrderTooLow {
                need: 1,
                found: self.cfg.poly_order,
            });
        }
        let u0 = self.u0(x_bar)?;
        let cells = self.cell_fits(u0, t)?;
        let n = self.panel.base.n_units() as f64;
        let mut h1_total = 0.0;
        let mut h2_total = 0.0;
        let mut kept = 0usize;
        for c in &cells {
            for f in &c.fits {
                if let (Some(h1), Some(h2)) = (f.h1, f.h2) {
                    h1_total += h1;
                    h2_total += if self.monotone_ape { h2.max(0.0) } else { h2 };
                    kept += 1;
                }
            }
        }
        if kept == 0 {
            return Err(Error::AllTrimmed);
        }
        let trim_share = 1.0 - kept as f64 / n;
        let asf = EffectEstimate {
            kind: EffectKind::Asf,
            x_bar: x_bar.to_vec(),
            value: h1_total / n,
            trim_share,
            analytic_se: None,
            ci: None,
            bounds: None,
            period: Period::At(t),
        };
        let ape = EffectEstimate {
            kind: EffectKind::ApeContinuous,
            x_bar: x_bar.to_vec(),
            value: self.beta.beta[k] * h2_total / n,
            trim_share,
            analytic_se: None,
            ci: None,
            bounds: None,
            period: Period::At(t),
        };
        Ok((asf, ape))
    }

    /// Discrete APE: the difference of the ASF at the alternative and base
    /// values of coordinate k.
    pub fn ape_discrete(&self, point: &EvaluationPoint, t: usize) -> Result<EffectEstimate> {
        let alt = point
            .alt_value
            .ok_or_else(|| Error::Invalid("discrete APE needs an alternative value".into()))?;
        let base = self.asf(&point.x_bar, t)?;
        let mut x_alt = point.x_bar.clone();
        x_alt[point.target_coordinate] = alt;
        let shifted = self.asf(&x_alt, t)?;
        Ok(EffectEstimate {
            kind: EffectKind::ApeDiscrete,
            x_bar: point.x_bar.clone(),
            value: shifted.value - base.value,
            trim_share: 0.5 * (base.trim_share + shifted.trim_share),
            analytic_se: None,
            ci: None,
            bounds: None,
            period: Period::At(t),
        })
    }

    /// Local average response: derivative estimates averaged under kernel
    /// weights centered at x_bar in covariate space, so the averaging runs
    /// over the conditional rather than marginal index distribution. Point
    /// estimate only.
    pub fn lar(&self, x_bar: &[f64], k: usize, t: usize) -> Result<EffectEstimate> {
        if self.cfg.poly_order < 1 {
            return Err(Error::OrderTooLow {
                need: 1,
                found: self.cfg.poly_order,
            });
        }
        let u0 = self.u0(x_bar)?;
        let d_x = self.panel.base.d_x();
        let n = self.panel.base.n_units();
        // rule-of-thumb per-coordinate bandwidth in covariate space
        let mut b_x = vec![0.0; d_x];
        for c in 0..d_x {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for i in 0..n {
                let v = self.panel.base.x(i, t, c);
                s1 += v;
                s2 += v * v;
            }
            let mean = s1 / n as f64;
            let sd = (s2 / n as f64 - mean * mean).max(0.0).sqrt();
            b_x[c] = (sd * (n as f64).powf(-1.0 / (4.0 + d_x as f64))).max(1e-12);
        }
        let cells = self.cell_fits(u0, t)?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut kept = 0usize;
        let mut total_units = 0usize;
        for c in &cells {
            for (pos, &i) in c.members.iter().enumerate() {
                total_units += 1;
                let mut w = 1.0;
                for cdx in 0..d_x {
                    w *= kernel_eval((self.panel.base.x(i, t, cdx) - x_bar[cdx]) / b_x[cdx]);
                }
                if w == 0.0 {
                    continue;
                }
                if let Some(h2) = c.fits[pos].h2 {
                    num += w * h2;
                    den += w;
                    kept += 1;
                }
            }
        }
        if den <= 0.0 {
            return Err(Error::NoLocalMass);
        }
        Ok(EffectEstimate {
            kind: EffectKind::Lar,
            x_bar: x_bar.to_vec(),
            value: self.beta.beta[k] * num / den,
            trim_share: 1.0 - kept as f64 / total_units as f64,
            analytic_se: None,
            ci: None,
            bounds: None,
            period: Period::At(t),
        })
    }

    /// Support diagnostic at x_bar: a unit is inside the estimated
    /// conditional support when the joint density estimate at
    /// (x_bar' beta, V_i) clears the trimming density floor.
    pub fn support_diagnostic(&self, x_bar: &[f64], t: usize) -> Result<SupportReport> {
        let u0 = self.u0(x_bar)?;
        let cells = self.cell_fits(u0, t)?;
        let mut per_cell = Vec::new();
        let mut out_total = 0usize;
        let mut n_total = 0usize;
        for c in &cells {
            let n_out = c
                .fits
                .iter()
                .filter(|f| f.f_hat < c.density_floor)
                .count();
            per_cell.push((c.cell, c.members.len(), n_out));
            out_total += n_out;
            n_total += c.members.len();
        }
        Ok(SupportReport {
            p_out: out_total as f64 / n_total as f64,
            per_cell,
        })
    }

    /// Identification bounds for the ASF when the conditional support of V
    /// does not cover its full support: the kept-set estimate, plus the
    /// excluded mass on the upper side (the excluded conditional probability
    /// lies in [0, 1]). With no excluded mass the bounds collapse to the
    /// point estimate.
    pub fn asf_bounds(&self, x_bar: &[f64], t: usize) -> Result<BoundsReport> {
        let est = self.asf(x_bar, t)?;
        let p_out = est.trim_share;
        Ok(BoundsReport {
            lo: est.value,
            hi: est.value + p_out,
            p_out,
            point: est.value,
        })
    }

    /// Identification bounds for a continuous APE: the excluded mass times
    /// the coefficient and a cap on the error density.
    pub fn ape_bounds(&self, x_bar: &[f64], k: usize, t: usize) -> Result<BoundsReport> {
        let est = self.ape(x_bar, k, t)?;
        let p_out = est.trim_share;
        let width = self.beta.beta[k] * self.ape_density_cap * p_out;
        Ok(BoundsReport {
            lo: est.value + width.min(0.0),
            hi: est.value + width.max(0.0),
            p_out,
            point: est.value,
        })
    }

    /// Plug-in analytic standard error from the asymptotic variance of the
    /// partial mean: conditional variance h1 (1 - h1), density ratio
    /// f_V / f_Z, and the kernel constant sandwich, scaled by the N b (ASF)
    /// or N b^3 (APE) rate.
    pub fn analytic_se(
        &self,
        kind: EffectKind,
        x_bar: &[f64],
        k: usize,
        t: usize,
    ) -> Result<f64> {
        let slot = match kind {
            EffectKind::Asf => 0,
            EffectKind::ApeContinuous => {
                if self.cfg.poly_order < 1 {
                    return Err(Error::OrderTooLow {
                        need: 1,
                        found: self.cfg.poly_order,
                    });
                }
                self.cfg.basis.deriv_slot()
            }
            _ => {
                return Err(Error::Invalid(
                    "analytic variance covers the ASF and continuous APE".into(),
                ))
            }
        };
        let moments = KernelMoments::compute(2 * self.cfg.poly_order);
        let constant = moments
            .sandwich_constant(&self.cfg.basis, slot)
            .ok_or(Error::Singular)?;

        let u0 = self.u0(x_bar)?;
        let cells = self.cell_fits(u0, t)?;
        let n = self.panel.base.n_units() as f64;
        let d_v = self.panel.d_v();
        let mut var_total = 0.0;
        let mut any_kept = false;
        for c in &cells {
            let n_c = c.members.len() as f64;
            let b = self.cfg.bandwidth.resolve(c.members.len());
            let mut acc = 0.0;
            for (pos, f) in c.fits.iter().enumerate() {
                let h1 = match f.h1 {
                    Some(h) => h,
                    None => continue,
                };
                any_kept = true;
                let cond_var = (h1 * (1.0 - h1)).clamp(0.0, 0.25);
                let f_z = f.f_hat.max(1e-300);
                let f_v = if d_v == 0 {
                    1.0
                } else {
                    // kernel density of V within the cell
                    let vi = c.view.v_row(pos);
                    let mut dens = 0.0;
                    'dens: for j in 0..c.view.n() {
                        let vj = c.view.v_row(j);
                        let mut w = 1.0;
                        for cd in 0..d_v {
                            let a = (vj[cd] - vi[cd]) / b;
                            if a.abs() > 6.0 {
                                continue 'dens;
                            }
                            w *= kernel_eval(a);
                        }
                        dens += w;
                    }
                    dens * b.powi(-(d_v as i32)) / n_c
                };
                acc += cond_var * f_v / f_z;
            }
            let sigma2_cell = acc / n_c * constant;
            let rate = match kind {
                EffectKind::Asf => n_c * b,
                // derivative reported on the raw index scale
                _ => n_c * b * b * b * c.view.u_scale() * c.view.u_scale(),
            };
            var_total += (n_c / n) * (n_c / n) * sigma2_cell / rate;
        }
        if !any_kept {
            return Err(Error::AllTrimmed);
        }
        let se = var_total.sqrt();
        Ok(match kind {
            EffectKind::Asf => se,
            _ => self.beta.beta[k].abs() * se,
        })
    }

    /// Leave-one-out bandwidth selection on the largest cell of period t.
    pub fn select_kappa(&self, t: usize, grid: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut best_cell = 0;
        let mut best_size = 0;
        for cell in 0..self.panel.n_cells() {
            let size = self.panel.cell_members(cell).len();
            if size > best_size {
                best_size = size;
                best_cell = cell;
            }
        }
        let view = PeriodView::new(self.panel, self.beta, t, Some(best_cell))?;
        cross_validate_kappa(&view, &self.cfg, grid, &self.policy)
    }
}

struct CellFits {
    cell: usize,
    members: Vec<usize>,
    fits: Vec<PointFit>,
    view: PeriodView,
    density_floor: f64,
}

/// Equal-weight average of per-period estimates of the same effect at the
/// same evaluation point.
pub fn average_over_time(estimates: &[EffectEstimate]) -> Result<EffectEstimate> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::MixedConfigs("no estimates to average".into()))?;
    let mut seen = Vec::new();
    for e in estimates {
        if e.kind != first.kind {
            return Err(Error::MixedConfigs("mixed effect kinds".into()));
        }
        if e.x_bar != first.x_bar {
            return Err(Error::MixedConfigs("mixed evaluation points".into()));
        }
        match e.period {
            Period::At(t) => {
                if seen.contains(&t) {
                    return Err(Error::MixedConfigs(format!("period {t} appears twice")));
                }
                seen.push(t);
            }
            Period::Averaged => {
                return Err(Error::MixedConfigs(
                    "cannot average an already-averaged estimate".into(),
                ))
            }
        }
    }
    let m = estimates.len() as f64;
    let bounds = if estimates.iter().all(|e| e.bounds.is_some()) {
        let lo = estimates.iter().map(|e| e.bounds.unwrap().0).sum::<f64>() / m;
        let hi = estimates.iter().map(|e| e.bounds.unwrap().1).sum::<f64>() / m;
        Some((lo, hi))
    } else {
        None
    };
    Ok(EffectEstimate {
        kind: first.kind,
        x_bar: first.x_bar.clone(),
        value: estimates.iter().map(|e| e.value).sum::<f64>() / m,
        trim_share: estimates.iter().map(|e| e.trim_share).sum::<f64>() / m,
        analytic_se: None,
        ci: None,
        bounds,
        period: Period::Averaged,
    })
}
