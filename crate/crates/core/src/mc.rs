//! Simulation harness: data-generating processes for the logit and general
//! designs, ground-truth ASF/APE oracles, a replication driver comparing
//! semiparametric and parametric estimators, and performance statistics.

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_asf_ape, re_cre_fit, BaselineMode};
use crate::beta::{cmle_fit, smoothed_max_score_fit, CmleOptions, SmsOptions};
use crate::effects::{average_over_time, EffectsEngine, Smoother};
use crate::error::{Error, Result};
use crate::localpoly::{default_delta, BandwidthSpec, LocalPolyConfig, TrimmingPolicy};
use crate::panel::{apply_transform, build_index, IndexSpec, PanelDataset};
use crate::rng::CounterRng;

/// Conditional law of the heterogeneity given the index.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum HeterogeneityLaw {
    /// (|v|^2 + 1) times a skew normal with the given shape.
    ScaledSkewNormal { alpha: f64 },
    /// Equal mixture of N(|v|^2 + offset, sd^2) and N(-|v|^2 - offset, sd^2).
    SymmetricBimodal { offset: f64, sd: f64 },
    /// Degenerate at zero.
    None,
}

/// Marginal law of the idiosyncratic error, normalized to unit variance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum ErrorLaw {
    /// sqrt(3)/pi times a standard logistic.
    ScaledLogistic,
    /// (1/9) N(2, 1/2) + (8/9) N(-1/4, 1/2); second arguments are variances.
    SkewedMixture,
    /// (1/5) N(0, 4) + (4/5) N(0, 1/4).
    FatTailedMixture,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum DgpFamily {
    L1,
    L2,
    G11,
    G12,
    G21,
    G22,
    Custom,
}

impl DgpFamily {
    pub fn parse(name: &str) -> Option<DgpFamily> {
        match name.to_ascii_uppercase().replace('.', "").as_str() {
            "L1" => Some(DgpFamily::L1),
            "L2" => Some(DgpFamily::L2),
            "G11" => Some(DgpFamily::G11),
            "G12" => Some(DgpFamily::G12),
            "G21" => Some(DgpFamily::G21),
            "G22" => Some(DgpFamily::G22),
            _ => None,
        }
    }

    fn tag(self) -> u64 {
        match self {
            DgpFamily::L1 => 1,
            DgpFamily::L2 => 2,
            DgpFamily::G11 => 11,
            DgpFamily::G12 => 12,
            DgpFamily::G21 => 21,
            DgpFamily::G22 => 22,
            DgpFamily::Custom => 99,
        }
    }
}

/// Full simulation design: sample sizes, true coefficients, and the laws of
/// the heterogeneity and the error term.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DgpSpec {
    pub family: DgpFamily,
    pub n_units: usize,
    pub n_periods: usize,
    pub beta0: Vec<f64>,
    pub heterogeneity: HeterogeneityLaw,
    pub error: ErrorLaw,
    pub n_reps: usize,
    pub seed: u64,
}

impl DgpSpec {
    /// Family presets: N = 1500, T = 10, with the per-family coefficient
    /// and law locks.
    pub fn preset(family: DgpFamily, n_reps: usize, seed: u64) -> Result<Self> {
        let (beta0, het, err): (Vec<f64>, HeterogeneityLaw, ErrorLaw) = match family {
            DgpFamily::L1 => (
                vec![1.0],
                HeterogeneityLaw::ScaledSkewNormal { alpha: 10.0 },
                ErrorLaw::ScaledLogistic,
            ),
            DgpFamily::L2 => (
                vec![2.0],
                HeterogeneityLaw::SymmetricBimodal {
                    offset: 2.0,
                    sd: 0.25,
                },
                ErrorLaw::ScaledLogistic,
            ),
            DgpFamily::G11 => (
                vec![1.0, 1.0],
                HeterogeneityLaw::ScaledSkewNormal { alpha: 10.0 },
                ErrorLaw::SkewedMixture,
            ),
            DgpFamily::G12 => (
                vec![1.0, 1.0],
                HeterogeneityLaw::ScaledSkewNormal { alpha: 10.0 },
                ErrorLaw::FatTailedMixture,
            ),
            DgpFamily::G21 => (
                vec![1.0, 2.0],
                HeterogeneityLaw::SymmetricBimodal {
                    offset: 2.0,
                    sd: 1.0,
                },
                ErrorLaw::SkewedMixture,
            ),
            DgpFamily::G22 => (
                vec![1.0, 2.0],
                HeterogeneityLaw::SymmetricBimodal {
                    offset: 2.0,
                    sd: 1.0,
                },
                ErrorLaw::FatTailedMixture,
            ),
            DgpFamily::Custom => {
                return Err(Error::Invalid(
                    "custom designs need explicit laws; use DgpSpec directly".into(),
                ))
            }
        };
        Ok(DgpSpec {
            family,
            n_units: 1500,
            n_periods: 10,
            beta0,
            heterogeneity: het,
            error: err,
            n_reps,
            seed,
        })
    }

    pub fn d_x(&self) -> usize {
        self.beta0.len()
    }

    pub fn is_logit(&self) -> bool {
        self.error == ErrorLaw::ScaledLogistic
    }
}

/// Latent draws retained for oracle checks.
#[derive(Clone, Debug)]
pub struct LatentRecord {
    pub c: Vec<f64>,
    pub u: Vec<f64>,
}

fn draw_skew_normal(rng: &mut CounterRng, alpha: f64) -> f64 {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let z1 = rng.normal();
    let z2 = rng.normal();
    delta * z1.abs() + (1.0 - delta * delta).sqrt() * z2
}

fn draw_heterogeneity(rng: &mut CounterRng, law: HeterogeneityLaw, v: &[f64]) -> f64 {
    let v2: f64 = v.iter().map(|x| x * x).sum();
    match law {
        HeterogeneityLaw::ScaledSkewNormal { alpha } => {
            (v2 + 1.0) * draw_skew_normal(rng, alpha)
        }
        HeterogeneityLaw::SymmetricBimodal { offset, sd } => {
            let sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            sign * (v2 + offset) + sd * rng.normal()
        }
        HeterogeneityLaw::None => 0.0,
    }
}

const SQRT3_OVER_PI: f64 = 0.5513288954217921; // sqrt(3)/pi

fn draw_error(rng: &mut CounterRng, law: ErrorLaw) -> f64 {
    match law {
        ErrorLaw::ScaledLogistic => SQRT3_OVER_PI * rng.logistic(),
        ErrorLaw::SkewedMixture => {
            if rng.uniform() < 1.0 / 9.0 {
                2.0 + (0.5f64).sqrt() * rng.normal()
            } else {
                -0.25 + (0.5f64).sqrt() * rng.normal()
            }
        }
        ErrorLaw::FatTailedMixture => {
            if rng.uniform() < 0.2 {
                2.0 * rng.normal()
            } else {
                0.5 * rng.normal()
            }
        }
    }
}

/// Error CDF, exact up to machine precision.
pub fn error_cdf(law: ErrorLaw, x: f64) -> f64 {
    match law {
        ErrorLaw::ScaledLogistic => {
            let z = x / SQRT3_OVER_PI;
            if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            }
        }
        ErrorLaw::SkewedMixture => {
            (1.0 / 9.0) * normal_cdf((x - 2.0) / (0.5f64).sqrt())
                + (8.0 / 9.0) * normal_cdf((x + 0.25) / (0.5f64).sqrt())
        }
        ErrorLaw::FatTailedMixture => {
            0.2 * normal_cdf(x / 2.0) + 0.8 * normal_cdf(x / 0.5)
        }
    }
}

/// Error density.
pub fn error_pdf(law: ErrorLaw, x: f64) -> f64 {
    match law {
        ErrorLaw::ScaledLogistic => {
            let z = x / SQRT3_OVER_PI;
            let l = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            l * (1.0 - l) / SQRT3_OVER_PI
        }
        ErrorLaw::SkewedMixture => {
            let s = (0.5f64).sqrt();
            (1.0 / 9.0) * normal_pdf((x - 2.0) / s) / s
                + (8.0 / 9.0) * normal_pdf((x + 0.25) / s) / s
        }
        ErrorLaw::FatTailedMixture => {
            0.2 * normal_pdf(x / 2.0) / 2.0 + 0.8 * normal_pdf(x / 0.5) / 0.5
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Simulate one replication. The stream is keyed by (seed, family, rep), so
/// panels are bit-identical across runs and platforms for a given spec.
pub fn generate(spec: &DgpSpec, rep: usize) -> (PanelDataset, LatentRecord) {
    let n = spec.n_units;
    let t = spec.n_periods;
    let d = spec.d_x();
    let mut rng = CounterRng::from_tags(spec.seed, &[spec.family.tag(), rep as u64]);
    let mut covs = Vec::with_capacity(n * t * d);
    let mut outcomes = Vec::with_capacity(n * t);
    let mut cs = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n * t);
    for _ in 0..n {
        let base = covs.len();
        let mut v = vec![0.0; d];
        for _ in 0..t {
            for vk in v.iter_mut().take(d) {
                let x = rng.normal();
                covs.push(x);
                *vk += x / t as f64;
            }
        }
        let c = draw_heterogeneity(&mut rng, spec.heterogeneity, &v);
        cs.push(c);
        for s in 0..t {
            let u = draw_error(&mut rng, spec.error);
            us.push(u);
            let xb: f64 = (0..d)
                .map(|k| covs[base + s * d + k] * spec.beta0[k])
                .sum();
            outcomes.push(((xb + c - u) >= 0.0) as u8);
        }
    }
    let names: Vec<String> = (0..d).map(|k| format!("x{}", k + 1)).collect();
    let panel = PanelDataset::from_parts(n, t, outcomes, covs, names, None)
        .expect("generated panel is balanced by construction");
    (panel, LatentRecord { c: cs, u: us })
}

/// True ASF and APE at one evaluation point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrueEffect {
    pub asf: f64,
    pub ape: f64,
}

/// Ground truth by Monte Carlo integration over (V, C) with the closed-form
/// error CDF/density. Draws are shared across grid points; the stream is
/// fixed by the family alone so truths are stable across runs. Draw count
/// doubles until the largest standard error falls below 1e-4.
pub fn true_effects(spec: &DgpSpec, x_grid: &[Vec<f64>], k: usize) -> Vec<TrueEffect> {
    let d = spec.d_x();
    let t = spec.n_periods;
    let m = x_grid.len();
    let u0: Vec<f64> = x_grid
        .iter()
        .map(|x| (0..d).map(|j| x[j] * spec.beta0[j]).sum())
        .collect();

    // fixed stream: truths do not depend on the study seed
    let mut rng = CounterRng::from_tags(0x0a_c1e5, &[spec.family.tag(), 0x7275]);
    let mut n_draws = 0usize;
    let mut asf_sum = vec![0.0; m];
    let mut asf_sq = vec![0.0; m];
    let mut ape_sum = vec![0.0; m];
    let mut ape_sq = vec![0.0; m];
    let target = 1_000_000usize;
    let chunk = 250_000usize;
    loop {
        for _ in 0..chunk {
            let v: Vec<f64> = (0..d)
                .map(|_| rng.normal() / (t as f64).sqrt())
                .collect();
            let c = draw_heterogeneity(&mut rng, spec.heterogeneity, &v);
            for g in 0..m {
                let f = error_cdf(spec.error, u0[g] + c);
                let fd = error_pdf(spec.error, u0[g] + c);
                asf_sum[g] += f;
                asf_sq[g] += f * f;
                ape_sum[g] += fd;
                ape_sq[g] += fd * fd;
            }
        }
        n_draws += chunk;
        if n_draws >= target {
            let nf = n_draws as f64;
            let worst = (0..m)
                .map(|g| {
                    let va = asf_sq[g] / nf - (asf_sum[g] / nf).powi(2);
                    let vp = ape_sq[g] / nf - (ape_sum[g] / nf).powi(2);
                    (va.max(0.0) / nf).sqrt().max(
                        spec.beta0[k].abs() * (vp.max(0.0) / nf).sqrt(),
                    )
                })
                .fold(0.0f64, f64::max);
            if worst < 1e-4 || n_draws >= 16 * target {
                break;
            }
        }
    }
    let nf = n_draws as f64;
    (0..m)
        .map(|g| TrueEffect {
            asf: asf_sum[g] / nf,
            ape: spec.beta0[k] * ape_sum[g] / nf,
        })
        .collect()
}

/// Per-evaluation-point accuracy of one estimator across replications.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointStats {
    pub x: f64,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

/// Aggregated accuracy: density-weighted averages over the evaluation grid
/// and the spread of RMSE-to-truth ratios.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerfStats {
    pub per_point: Vec<PointStats>,
    pub weighted_abs_bias: f64,
    pub weighted_sd: f64,
    pub weighted_rmse: f64,
    pub ratio_min: Option<f64>,
    pub ratio_median: Option<f64>,
    pub ratio_max: Option<f64>,
}

/// Bias/SD/RMSE per grid point plus weighted aggregates. `estimates[r][g]`
/// is replication r at grid point g; weights are renormalized internally.
/// SD uses the population divisor so RMSE^2 = bias^2 + SD^2 holds exactly.
pub fn perf_stats(
    estimates: &[Vec<f64>],
    truth: &[f64],
    xs: &[f64],
    weights: &[f64],
) -> Result<PerfStats> {
    let reps = estimates.len();
    if reps < 2 {
        return Err(Error::Invalid("need at least two replications".into()));
    }
    let m = truth.len();
    let wsum: f64 = weights.iter().sum();
    let mut per_point = Vec::with_capacity(m);
    let (mut wb, mut ws, mut wr) = (0.0, 0.0, 0.0);
    let mut ratios = Vec::new();
    for g in 0..m {
        let vals: Vec<f64> = estimates.iter().map(|r| r[g]).collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64;
        let bias = mean - truth[g];
        let sd = var.sqrt();
        // defined through sd so rmse^2 = bias^2 + sd^2 holds to one rounding
        let rmse = (bias * bias + sd * sd).sqrt();
        let w = weights[g] / wsum;
        wb += w * bias.abs();
        ws += w * sd;
        wr += w * rmse;
        if truth[g].abs() > 0.0 {
            ratios.push(rmse / truth[g].abs());
        }
        per_point.push(PointStats {
            x: xs[g],
            truth: truth[g],
            bias,
            sd,
            rmse,
        });
    }
    if ratios.is_empty() {
        return Err(Error::DegenerateTruth);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    Ok(PerfStats {
        per_point,
        weighted_abs_bias: wb,
        weighted_sd: ws,
        weighted_rmse: wr,
        ratio_min: Some(ratios[0]),
        ratio_median: Some(median),
        ratio_max: Some(*ratios.last().unwrap()),
    })
}

/// Estimators the study driver can run head to head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum EstimatorKind {
    Semiparametric {
        ell: usize,
        smoother: Smoother,
        /// Average the per-period estimates (stationary designs).
        time_average: bool,
        /// CV grid for the bandwidth constant; skipped when kappa is fixed.
        cv_grid: Vec<f64>,
        kappa: Option<f64>,
        monotone: bool,
    },
    Re {
        quad_nodes: usize,
    },
    Cre {
        quad_nodes: usize,
    },
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Semiparametric { .. } => "semiparametric",
            EstimatorKind::Re { .. } => "re",
            EstimatorKind::Cre { .. } => "cre",
        }
    }

    pub fn default_semiparametric(ell: usize) -> Self {
        EstimatorKind::Semiparametric {
            ell,
            smoother: Smoother::LeastSquares,
            time_average: true,
            cv_grid: vec![0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
            kappa: None,
            monotone: false,
        }
    }
}

/// One replication's results for one estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    /// Comparable coefficient: rescaled by sqrt(3)/pi in the logit designs,
    /// normalized by |beta_1| in the general designs.
    pub beta: f64,
    pub kappa: Option<f64>,
    pub asf: Vec<f64>,
    pub ape: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalarStats {
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyResult {
    pub estimator: String,
    pub beta: ScalarStats,
    pub asf: PerfStats,
    pub ape: PerfStats,
    pub records: Vec<RepRecord>,
    pub failed_reps: Vec<usize>,
}

/// Grid of evaluation points: the varying coordinate takes the given values
/// while every other coordinate is fixed at zero (the population mean).
pub fn evaluation_grid(d_x: usize, vary: usize, values: &[f64]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|&v| {
            let mut x = vec![0.0; d_x];
            x[vary] = v;
            x
        })
        .collect()
}

/// Default grid: 21 equispaced points on [-1, 1].
pub fn default_grid_values() -> Vec<f64> {
    (0..21).map(|i| -1.0 + 0.1 * i as f64).collect()
}

/// The varying coordinate in each design: the single covariate in the logit
/// designs, the second covariate in the general ones.
pub fn vary_coordinate(spec: &DgpSpec) -> usize {
    spec.d_x() - 1
}

fn fit_one_rep(
    spec: &DgpSpec,
    kind: &EstimatorKind,
    rep: usize,
    x_grid: &[Vec<f64>],
    k: usize,
) -> Result<RepRecord> {
    let (panel, _) = generate(spec, rep);
    let names: Vec<&str> = (0..spec.d_x())
        .map(|j| if j == 0 { "x1" } else { "x2" })
        .collect();
    let indexed = apply_transform(&build_index(&panel, &IndexSpec::continuous(&names))?)?;

    match kind {
        EstimatorKind::Re { quad_nodes } | EstimatorKind::Cre { quad_nodes } => {
            let mode = if matches!(kind, EstimatorKind::Re { .. }) {
                BaselineMode::Re
            } else {
                BaselineMode::Cre
            };
            let fit = re_cre_fit(&indexed, mode, *quad_nodes)?;
            let beta_cmp = if spec.is_logit() {
                SQRT3_OVER_PI * fit.beta[k]
            } else {
                fit.beta[k] / fit.beta[0].abs()
            };
            let mut asf = Vec::with_capacity(x_grid.len());
            let mut ape = Vec::with_capacity(x_grid.len());
            for x in x_grid {
                let (a, p) = baseline_asf_ape(&fit, &indexed, x, k)?;
                asf.push(a.value);
                ape.push(p.value);
            }
            Ok(RepRecord {
                rep,
                beta: beta_cmp,
                kappa: None,
                asf,
                ape,
            })
        }
        EstimatorKind::Semiparametric {
            ell,
            smoother,
            time_average,
            cv_grid,
            kappa,
            monotone,
        } => {
            let beta_est = if spec.is_logit() {
                cmle_fit(&panel, CmleOptions::default())?
            } else {
                smoothed_max_score_fit(
                    &panel,
                    &SmsOptions {
                        bandwidth: None,
                        starts: 16,
                        seed: spec.seed ^ (rep as u64).wrapping_mul(0x9e37),
                        max_iter: 600,
                    },
                )?
            };
            let beta_cmp = if spec.is_logit() {
                SQRT3_OVER_PI * beta_est.beta[k]
            } else {
                beta_est.beta[k] / beta_est.beta[0].abs()
            };
            let d_v = spec.d_x();
            let delta = default_delta(*ell, beta_est.epsilon_rate, d_v).ok_or_else(|| {
                Error::Invalid(format!(
                    "no admissible bandwidth exponent for ell = {ell}, d_V = {d_v}"
                ))
            })?;
            let cfg = LocalPolyConfig::new(*ell, d_v, BandwidthSpec::new(1.0, delta)?);
            let mut engine = EffectsEngine::new(
                &indexed,
                &beta_est,
                cfg,
                TrimmingPolicy::default(),
            )?
            .with_smoother(*smoother)
            .with_monotone_ape(*monotone);
            let kappa_star = match kappa {
                Some(kp) => *kp,
                None => engine.select_kappa(0, cv_grid)?.0,
            };
            engine.set_kappa(kappa_star);

            let periods: Vec<usize> = if *time_average {
                (0..spec.n_periods).collect()
            } else {
                vec![0]
            };
            let mut asf = Vec::with_capacity(x_grid.len());
            let mut ape = Vec::with_capacity(x_grid.len());
            for x in x_grid {
                let mut per_t_asf = Vec::with_capacity(periods.len());
                let mut per_t_ape = Vec::with_capacity(periods.len());
                for &t in &periods {
                    let (a, p) = engine.asf_ape(x, k, t)?;
                    per_t_asf.push(a);
                    per_t_ape.push(p);
                }
                let a = average_over_time(&per_t_asf)?;
                let p = average_over_time(&per_t_ape)?;
                asf.push(a.value);
                ape.push(p.value);
            }
            Ok(RepRecord {
                rep,
                beta: beta_cmp,
                kappa: Some(kappa_star),
                asf,
                ape,
            })
        }
    }
}

/// Run the full study: simulate `spec.n_reps` panels, fit every estimator on
/// each, and score against the ground-truth oracle.
pub fn run_study(
    spec: &DgpSpec,
    estimators: &[EstimatorKind],
    grid_values: &[f64],
) -> Result<Vec<StudyResult>> {
    if grid_values.is_empty() {
        return Err(Error::Invalid("evaluation grid is empty".into()));
    }
    let k = vary_coordinate(spec);
    let x_grid = evaluation_grid(spec.d_x(), k, grid_values);
    let truth = true_effects(spec, &x_grid, k);
    let weights: Vec<f64> = grid_values.iter().map(|&x| normal_pdf(x)).collect();
    let beta_truth = spec.beta0[k] / spec.beta0[0].abs();

    let mut out = Vec::with_capacity(estimators.len());
    for kind in estimators {
        use rayon::prelude::*;
        let results: Vec<(usize, Result<RepRecord>)> = (0..spec.n_reps)
            .into_par_iter()
            .map(|rep| (rep, fit_one_rep(spec, kind, rep, &x_grid, k)))
            .collect();
        let mut records = Vec::new();
        let mut failed = Vec::new();
        for (rep, r) in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(_) => failed.push(rep),
            }
        }
        if records.len() < 2 {
            return Err(Error::NonConvergence(format!(
                "{} replications succeeded for {}",
                records.len(),
                kind.label()
            )));
        }
        let asf_matrix: Vec<Vec<f64>> = records.iter().map(|r| r.asf.clone()).collect();
        let ape_matrix: Vec<Vec<f64>> = records.iter().map(|r| r.ape.clone()).collect();
        let asf_truth: Vec<f64> = truth.iter().map(|t| t.asf).collect();
        let ape_truth: Vec<f64> = truth.iter().map(|t| t.ape).collect();
        let asf_stats = perf_stats(&asf_matrix, &asf_truth, grid_values, &weights)?;
        let ape_stats = perf_stats(&ape_matrix, &ape_truth, grid_values, &weights)?;

        let betas: Vec<f64> = records.iter().map(|r| r.beta).collect();
        let mean = betas.iter().sum::<f64>() / betas.len() as f64;
        let var = betas.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
            / betas.len() as f64;
        let bias = mean - beta_truth;
        out.push(StudyResult {
            estimator: kind.label().to_string(),
            beta: ScalarStats {
                bias,
                sd: var.sqrt(),
                rmse: (bias * bias + var).sqrt(),
            },
            asf: asf_stats,
            ape: ape_stats,
            records,
            failed_reps: failed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible() {
        let spec = DgpSpec::preset(DgpFamily::L1, 2, 99).unwrap();
        let (a, la) = generate(&spec, 3);
        let (b, lb) = generate(&spec, 3);
        assert_eq!(a, b);
        assert_eq!(la.c, lb.c);
        let (c, _) = generate(&spec, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn error_law_moments() {
        let spec = DgpSpec::preset(DgpFamily::L1, 1, 7).unwrap();
        let mut rng = CounterRng::new(1, 1);
        let n = 200_000;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let u = draw_error(&mut rng, spec.error);
            s1 += u;
            s2 += u * u;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // Var = 1 by the sqrt(3)/pi scaling; 3 SEs at this draw count
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn skew_normal_skewness_matches_closed_form() {
        let alpha = 10.0;
        let delta: f64 = alpha / (1.0f64 + alpha * alpha).sqrt();
        let mu = delta * (2.0 / std::f64::consts::PI).sqrt();
        let sig2 = 1.0 - 2.0 * delta * delta / std::f64::consts::PI;
        let gamma = (4.0 - std::f64::consts::PI) / 2.0 * mu.powi(3) / sig2.powf(1.5);
        assert!((gamma - 0.9556).abs() < 1e-3, "closed form {gamma}");

        let mut rng = CounterRng::new(5, 0);
        let n = 1_000_000;
        let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = draw_skew_normal(&mut rng, alpha);
            s1 += z;
            s2 += z * z;
            s3 += z * z * z;
        }
        let m1 = s1 / n as f64;
        let m2 = s2 / n as f64 - m1 * m1;
        let m3 = s3 / n as f64 - 3.0 * m1 * (s2 / n as f64) + 2.0 * m1.powi(3);
        let skew = m3 / m2.powf(1.5);
        // 3 SEs of sample skewness at 1e6 draws is well under 0.02
        assert!((skew - gamma).abs() < 0.02, "sample {skew} vs {gamma}");
    }

    #[test]
    fn fat_tailed_mixture_kurtosis_exceeds_three() {
        // exact: E[U^4] = 3 (0.2 * 16 + 0.8 / 16), variance 1
        let exact: f64 = 3.0 * (0.2 * 16.0 + 0.8 / 16.0);
        assert!((exact - 9.75).abs() < 1e-12);
        let mut rng = CounterRng::new(6, 0);
        let n = 400_000;
        let (mut s2, mut s4) = (0.0, 0.0);
        for _ in 0..n {
            let u = draw_error(&mut rng, ErrorLaw::FatTailedMixture);
            s2 += u * u;
            s4 += u * u * u * u;
        }
        let kurt = (s4 / n as f64) / (s2 / n as f64).powi(2);
        assert!(kurt > 3.0, "kurtosis {kurt}");
        assert!((kurt - exact).abs() < 0.8, "kurtosis {kurt} vs {exact}");
    }

    #[test]
    fn mixture_component_frequencies() {
        let mut rng = CounterRng::new(8, 0);
        let n = 1_000_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            // the skewed mixture picks its first component with prob 1/9;
            // values above 1 are essentially always from that component
            let u = draw_error(&mut rng, ErrorLaw::SkewedMixture);
            if u > 1.0 {
                hits += 1;
            }
        }
        // P(first) * P(N(2, 1/2) > 1) + tiny second-component mass
        let s = (0.5f64).sqrt();
        let expect = (1.0 / 9.0) * (1.0 - normal_cdf((1.0 - 2.0) / s))
            + (8.0 / 9.0) * (1.0 - normal_cdf((1.0 + 0.25) / s));
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!(
            ((hits as f64 / n as f64) - expect).abs() < 4.0 * se,
            "freq {} vs {expect}",
            hits as f64 / n as f64
        );
    }

    #[test]
    fn oracle_degenerate_heterogeneity_is_closed_form() {
        let spec = DgpSpec {
            family: DgpFamily::Custom,
            n_units: 100,
            n_periods: 5,
            beta0: vec![0.7],
            heterogeneity: HeterogeneityLaw::None,
            error: ErrorLaw::ScaledLogistic,
            n_reps: 1,
            seed: 0,
        };
        let grid = evaluation_grid(1, 0, &[-0.5, 0.0, 0.8]);
        let t = true_effects(&spec, &grid, 0);
        for (g, x) in [-0.5, 0.0, 0.8].iter().enumerate() {
            let expect = error_cdf(ErrorLaw::ScaledLogistic, x * 0.7);
            // constant integrand: only summation rounding remains
            assert!((t[g].asf - expect).abs() < 1e-9, "no MC noise when C = 0");
        }
    }

    #[test]
    fn oracle_asf_monotone_and_interior() {
        let spec = DgpSpec::preset(DgpFamily::L2, 1, 0).unwrap();
        let values = default_grid_values();
        let grid = evaluation_grid(1, 0, &values);
        let t = true_effects(&spec, &grid, 0);
        for w in t.windows(2) {
            assert!(w[1].asf >= w[0].asf - 1e-4, "ASF must increase in x beta");
        }
        for e in &t {
            assert!(e.asf > 0.0 && e.asf < 1.0);
        }
    }

    #[test]
    fn zero_coefficient_gives_zero_ape() {
        let spec = DgpSpec {
            family: DgpFamily::Custom,
            n_units: 10,
            n_periods: 2,
            beta0: vec![0.0],
            heterogeneity: HeterogeneityLaw::None,
            error: ErrorLaw::ScaledLogistic,
            n_reps: 1,
            seed: 0,
        };
        let grid = evaluation_grid(1, 0, &[-1.0, 0.5]);
        let t = true_effects(&spec, &grid, 0);
        assert_eq!(t[0].ape, 0.0);
        assert_eq!(t[1].ape, 0.0);
    }

    #[test]
    fn perf_stats_hand_checked() {
        // two reps {0.4, 0.6}, truth 0.5: bias 0, SD 0.1, RMSE 0.1
        let stats = perf_stats(
            &[vec![0.4], vec![0.6]],
            &[0.5],
            &[0.0],
            &[1.0],
        )
        .unwrap();
        assert!(stats.per_point[0].bias.abs() < 1e-15);
        assert!((stats.per_point[0].sd - 0.1).abs() < 1e-15);
        assert!((stats.per_point[0].rmse - 0.1).abs() < 1e-15);

        // exact estimator: all zeros
        let stats = perf_stats(
            &[vec![0.3, 0.7], vec![0.3, 0.7]],
            &[0.3, 0.7],
            &[0.0, 1.0],
            &[1.0, 1.0],
        )
        .unwrap();
        assert_eq!(stats.weighted_abs_bias, 0.0);
        assert_eq!(stats.weighted_sd, 0.0);
        assert_eq!(stats.weighted_rmse, 0.0);

        // single grid point: weighted equals unweighted
        let stats = perf_stats(&[vec![1.0], vec![3.0]], &[1.5], &[0.0], &[0.37]).unwrap();
        assert!((stats.weighted_rmse - stats.per_point[0].rmse).abs() < 1e-15);
    }

    #[test]
    fn perf_stats_rmse_identity_exact() {
        let ests = vec![vec![0.1, 0.9, 0.4], vec![0.2, 0.6, 0.5], vec![0.7, 0.8, 0.3]];
        let stats = perf_stats(
            &ests,
            &[0.3, 0.7, 0.4],
            &[-1.0, 0.0, 1.0],
            &[0.2, 0.5, 0.3],
        )
        .unwrap();
        for p in &stats.per_point {
            let gap = (p.rmse * p.rmse - p.bias * p.bias - p.sd * p.sd).abs();
            // one correctly-rounded square root away from exact
            assert!(gap <= 4.0 * f64::EPSILON * p.rmse * p.rmse, "gap {gap}");
        }
    }

    #[test]
    fn degenerate_truth_rejected_for_ratios() {
        let r = perf_stats(&[vec![0.1], vec![0.2]], &[0.0], &[0.0], &[1.0]);
        assert!(matches!(r, Err(Error::DegenerateTruth)));
    }
}
