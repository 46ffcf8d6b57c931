//! Cluster (unit-level) bootstrap for effect estimates, deterministic under
//! seeding regardless of the parallel schedule.

use serde::{Deserialize, Serialize};

use crate::effects::EffectEstimate;
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::rng::CounterRng;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum CiKind {
    /// point +/- z * SD of the replicates (symmetric by construction).
    PercentileT,
    /// empirical quantiles of the replicates.
    Percentile,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BootstrapPlan {
    pub n_reps: usize,
    pub seed: u64,
    pub ci_kind: CiKind,
    pub level: f64,
    /// Share of failed replicates tolerated before aborting.
    pub max_failure_share: f64,
}

impl BootstrapPlan {
    pub fn new(n_reps: usize, seed: u64, ci_kind: CiKind, level: f64) -> Result<Self> {
        if n_reps < 2 {
            return Err(Error::Invalid("need at least 2 bootstrap replicates".into()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Invalid("confidence level must be in (0,1)".into()));
        }
        if matches!(ci_kind, CiKind::Percentile) {
            let need = (2.0 / (1.0 - level)).ceil() as usize;
            if n_reps < need {
                return Err(Error::Invalid(format!(
                    "percentile endpoints at level {level} need at least {need} replicates"
                )));
            }
        }
        Ok(BootstrapPlan {
            n_reps,
            seed,
            ci_kind,
            level,
            max_failure_share: 0.2,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BootstrapResult {
    pub point: EffectEstimate,
    pub sd: f64,
    pub ci: (f64, f64),
    /// Replicate values in replicate order (failed replicates omitted).
    pub replicates: Vec<f64>,
    pub n_failed: usize,
}

/// Two-sided standard normal quantile via Acklam's rational approximation;
/// relative error below 1e-9 across the open unit interval.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Type-1 (left-continuous) empirical quantile of a sorted sample.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = (p * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

/// Cluster bootstrap of an effect estimator.
///
/// Each replicate resamples N unit indices with replacement (whole
/// trajectories, so within-unit dependence is preserved) and re-runs the
/// estimator closure on the resampled panel. The index draws for replicate r
/// come from a counter stream keyed by (seed, r), so the replicate set is a
/// pure function of (seed, data) no matter how the work is scheduled.
pub fn bootstrap_effect<F>(
    plan: &BootstrapPlan,
    estimator: F,
    panel: &PanelDataset,
) -> Result<BootstrapResult>
where
    F: Fn(&PanelDataset) -> Result<EffectEstimate> + Sync,
{
    let point = estimator(panel)?;
    let n = panel.n_units();

    use rayon::prelude::*;
    let outcomes: Vec<Result<f64>> = (0..plan.n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = CounterRng::from_tags(plan.seed, &[0xb001, rep as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
            let resampled = panel.select_units(&idx);
            estimator(&resampled).map(|e| e.value)
        })
        .collect();

    let mut replicates = Vec::with_capacity(plan.n_reps);
    let mut n_failed = 0usize;
    let mut example = String::new();
    for o in outcomes {
        match o {
            Ok(v) => replicates.push(v),
            Err(e) => {
                n_failed += 1;
                if example.is_empty() {
                    example = e.to_string();
                }
            }
        }
    }
    if (n_failed as f64) > plan.max_failure_share * plan.n_reps as f64 {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            total: plan.n_reps,
            example,
        });
    }

    let m = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / m;
    let var = replicates.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    let sd = var.sqrt();

    let alpha = 1.0 - plan.level;
    let ci = match plan.ci_kind {
        CiKind::PercentileT => {
            let z = normal_quantile(1.0 - 0.5 * alpha);
            (point.value - z * sd, point.value + z * sd)
        }
        CiKind::Percentile => {
            let mut sorted = replicates.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (
                quantile_sorted(&sorted, 0.5 * alpha),
                quantile_sorted(&sorted, 1.0 - 0.5 * alpha),
            )
        }
    };

    Ok(BootstrapResult {
        point,
        sd,
        ci,
        replicates,
        n_failed,
    })
}
