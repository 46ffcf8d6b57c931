//! Balanced panel data model, CSV ingestion, index construction, and
//! standardization of the conditioning variables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Balanced N x T panel of binary outcomes and d_X covariates.
///
/// Storage is row-major over (unit, period): outcome index `i * T + t`,
/// covariate index `(i * T + t) * d_X + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    n_units: usize,
    n_periods: usize,
    d_x: usize,
    outcomes: Vec<u8>,
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
    unit_ids: Vec<String>,
}

impl PanelDataset {
    /// Build from flat arrays; validates balance, binary outcomes, and
    /// finiteness of every covariate.
    pub fn from_parts(
        n_units: usize,
        n_periods: usize,
        outcomes: Vec<u8>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
        unit_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let d_x = covariate_names.len();
        if n_units == 0 || n_periods == 0 || d_x == 0 {
            return Err(Error::Invalid(
                "panel needs at least one unit, period, and covariate".into(),
            ));
        }
        if outcomes.len() != n_units * n_periods {
            return Err(Error::Invalid(format!(
                "expected {} outcomes, got {}",
                n_units * n_periods,
                outcomes.len()
            )));
        }
        if covariates.len() != n_units * n_periods * d_x {
            return Err(Error::Invalid(format!(
                "expected {} covariate values, got {}",
                n_units * n_periods * d_x,
                covariates.len()
            )));
        }
        for (pos, &y) in outcomes.iter().enumerate() {
            if y > 1 {
                return Err(Error::NonBinaryOutcome {
                    unit: (pos / n_periods).to_string(),
                    period: (pos % n_periods).to_string(),
                    value: y.to_string(),
                });
            }
        }
        if let Some(bad) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite covariate at flat index {bad}"
            )));
        }
        let unit_ids =
            unit_ids.unwrap_or_else(|| (0..n_units).map(|i| i.to_string()).collect());
        if unit_ids.len() != n_units {
            return Err(Error::Invalid("unit id count mismatch".into()));
        }
        Ok(PanelDataset {
            n_units,
            n_periods,
            d_x,
            outcomes,
            covariates,
            covariate_names,
            unit_ids,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    #[inline]
    pub fn y(&self, i: usize, t: usize) -> u8 {
        self.outcomes[i * self.n_periods + t]
    }

    #[inline]
    pub fn x(&self, i: usize, t: usize, k: usize) -> f64 {
        self.covariates[(i * self.n_periods + t) * self.d_x + k]
    }

    /// Covariate row X_it as a slice.
    #[inline]
    pub fn x_row(&self, i: usize, t: usize) -> &[f64] {
        let base = (i * self.n_periods + t) * self.d_x;
        &self.covariates[base..base + self.d_x]
    }

    pub fn covariate_position(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Sum of outcomes for unit i (the conditional-logit sufficient statistic).
    pub fn outcome_total(&self, i: usize) -> usize {
        (0..self.n_periods).map(|t| self.y(i, t) as usize).sum()
    }

    /// New panel restricted to the given units, preserving their order.
    /// Duplicate indices are allowed (bootstrap resampling).
    pub fn select_units(&self, idx: &[usize]) -> PanelDataset {
        let t = self.n_periods;
        let d = self.d_x;
        let mut outcomes = Vec::with_capacity(idx.len() * t);
        let mut covariates = Vec::with_capacity(idx.len() * t * d);
        let mut unit_ids = Vec::with_capacity(idx.len());
        for &i in idx {
            outcomes.extend_from_slice(&self.outcomes[i * t..(i + 1) * t]);
            covariates.extend_from_slice(&self.covariates[i * t * d..(i + 1) * t * d]);
            unit_ids.push(self.unit_ids[i].clone());
        }
        PanelDataset {
            n_units: idx.len(),
            n_periods: t,
            d_x: d,
            outcomes,
            covariates,
            covariate_names: self.covariate_names.clone(),
            unit_ids,
        }
    }
}

/// Column mapping for long-format CSV ingestion.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct CsvSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

/// Read a long-format CSV (one row per unit-period) into a balanced panel.
///
/// Units are sorted by id (numerically when every id parses as an integer),
/// periods ascending (numerically when numeric). Every (unit, period) cell
/// must be present exactly once.
pub fn load_panel(path: &Path, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Invalid(format!("column `{name}` not found in header")))
    };
    let unit_col = col(&schema.unit)?;
    let period_col = col(&schema.period)?;
    let outcome_col = col(&schema.outcome)?;
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    struct Row {
        unit: String,
        period: String,
        y: u8,
        x: Vec<f64>,
    }
    let mut rows: Vec<Row> = Vec::new();
    for (ln, rec) in reader.records().enumerate() {
        let line = ln + 2; // header is line 1
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let unit = rec.get(unit_col).unwrap_or("").trim().to_string();
        let period = rec.get(period_col).unwrap_or("").trim().to_string();
        let y_raw = rec.get(outcome_col).unwrap_or("").trim();
        let y = match y_raw {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                // tolerate 0.0 / 1.0 style but nothing else
                match other.parse::<f64>() {
                    Ok(v) if v == 0.0 => 0,
                    Ok(v) if v == 1.0 => 1,
                    _ => {
                        return Err(Error::NonBinaryOutcome {
                            unit,
                            period,
                            value: other.to_string(),
                        })
                    }
                }
            }
        };
        let mut x = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&schema.covariates) {
            let raw = rec.get(c).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("covariate `{name}` value `{raw}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("covariate `{name}` value `{raw}` is not finite"),
                });
            }
            x.push(v);
        }
        rows.push(Row { unit, period, y, x });
    }
    if rows.is_empty() {
        return Err(Error::Invalid("csv contains no data rows".into()));
    }

    let mut units: Vec<String> = rows.iter().map(|r| r.unit.clone()).collect();
    units.sort();
    units.dedup();
    sort_labels(&mut units);
    let mut periods: Vec<String> = rows.iter().map(|r| r.period.clone()).collect();
    periods.sort();
    periods.dedup();
    sort_labels(&mut periods);

    let unit_pos: BTreeMap<&str, usize> = units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let period_pos: BTreeMap<&str, usize> = periods
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();

    let n = units.len();
    let t = periods.len();
    let d = schema.covariates.len();
    let mut outcomes = vec![u8::MAX; n * t];
    let mut covariates = vec![f64::NAN; n * t * d];
    for r in &rows {
        let i = unit_pos[r.unit.as_str()];
        let j = period_pos[r.period.as_str()];
        let cell = i * t + j;
        if outcomes[cell] != u8::MAX {
            return Err(Error::Invalid(format!(
                "duplicate cell: unit `{}`, period `{}`",
                r.unit, r.period
            )));
        }
        outcomes[cell] = r.y;
        covariates[cell * d..(cell + 1) * d].copy_from_slice(&r.x);
    }
    for i in 0..n {
        for j in 0..t {
            if outcomes[i * t + j] == u8::MAX {
                return Err(Error::UnbalancedPanel {
                    unit: units[i].clone(),
                    period: periods[j].clone(),
                });
            }
        }
    }

    PanelDataset::from_parts(
        n,
        t,
        outcomes,
        covariates,
        schema.covariates.clone(),
        Some(units),
    )
}

/// Sort labels numerically when every label parses as an integer, otherwise
/// lexicographically (the initial sort already handled that case).
fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
}

/// Quantile-based coarsening of a discrete index component.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoarseningScheme {
    /// Strictly increasing probabilities in (0,1); m cuts produce at most
    /// m + 1 cells.
    pub cut_quantiles: Vec<f64>,
}

impl CoarseningScheme {
    pub fn new(cut_quantiles: Vec<f64>) -> Result<Self> {
        if cut_quantiles.is_empty() {
            return Err(Error::Invalid("coarsening needs at least one cut".into()));
        }
        for w in cut_quantiles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Invalid("cut quantiles must strictly increase".into()));
            }
        }
        if cut_quantiles[0] <= 0.0 || *cut_quantiles.last().unwrap() >= 1.0 {
            return Err(Error::Invalid("cut quantiles must lie in (0,1)".into()));
        }
        Ok(CoarseningScheme { cut_quantiles })
    }

    pub fn median() -> Self {
        CoarseningScheme {
            cut_quantiles: vec![0.5],
        }
    }

    pub fn terciles() -> Self {
        CoarseningScheme {
            cut_quantiles: vec![1.0 / 3.0, 2.0 / 3.0],
        }
    }
}

/// Index specification: each component is a time-average of one covariate,
/// kept continuous or coarsened into cells.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IndexSpec {
    /// Continuous components: time-average of the named covariate.
    pub continuous: Vec<String>,
    /// Discrete components: time-average coarsened by empirical quantiles.
    pub discrete: Vec<(String, CoarseningScheme)>,
}

impl IndexSpec {
    pub fn continuous(names: &[&str]) -> Self {
        IndexSpec {
            continuous: names.iter().map(|s| s.to_string()).collect(),
            discrete: vec![],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.continuous.is_empty() && self.discrete.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut names: Vec<&String> = self
            .continuous
            .iter()
            .chain(self.discrete.iter().map(|(n, _)| n))
            .collect();
        names.sort();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Invalid(format!(
                    "index component `{}` appears twice",
                    w[0]
                )));
            }
        }
        Ok(())
    }
}

/// Location/scale transform for the continuous index components: subtract
/// the sample mean, then solve against the Cholesky factor of the sample
/// covariance (divisor N), leaving mean zero, unit variance, and zero
/// cross-correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizeTransform {
    pub location: Vec<f64>,
    /// Lower-triangular Cholesky factor of the sample covariance, row-major.
    pub scale_chol: Vec<f64>,
    pub applied_to_v_only: bool,
}

impl StandardizeTransform {
    pub fn identity(d_v: usize) -> Self {
        let mut chol = vec![0.0; d_v * d_v];
        for i in 0..d_v {
            chol[i * d_v + i] = 1.0;
        }
        StandardizeTransform {
            location: vec![0.0; d_v],
            scale_chol: chol,
            applied_to_v_only: true,
        }
    }

    /// Fit location and covariance Cholesky from rows of v (N x d_v).
    pub fn fit(v: &[f64], n: usize, d_v: usize) -> Result<Self> {
        if d_v == 0 {
            return Ok(Self::identity(0));
        }
        let mut location = vec![0.0; d_v];
        for i in 0..n {
            for k in 0..d_v {
                location[k] += v[i * d_v + k];
            }
        }
        for l in location.iter_mut() {
            *l /= n as f64;
        }
        let mut cov = vec![0.0; d_v * d_v];
        for i in 0..n {
            for a in 0..d_v {
                let da = v[i * d_v + a] - location[a];
                for b in 0..=a {
                    cov[a * d_v + b] += da * (v[i * d_v + b] - location[b]);
                }
            }
        }
        for a in 0..d_v {
            for b in 0..=a {
                cov[a * d_v + b] /= n as f64;
                cov[b * d_v + a] = cov[a * d_v + b];
            }
        }
        let chol = Cholesky::factor(&cov, d_v).ok_or(Error::SingularCovariance)?;
        Ok(StandardizeTransform {
            location,
            scale_chol: chol.lower().to_vec(),
            applied_to_v_only: true,
        })
    }

    /// Map one raw index row to standardized coordinates.
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        let d = self.location.len();
        let mut y: Vec<f64> = (0..d).map(|k| row[k] - self.location[k]).collect();
        // forward substitution against the lower factor
        for i in 0..d {
            for k in 0..i {
                let term = self.scale_chol[i * d + k] * y[k];
                y[i] -= term;
            }
            y[i] /= self.scale_chol[i * d + i];
        }
        y
    }

    /// Inverse map back to raw coordinates.
    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        let d = self.location.len();
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += self.scale_chol[i * d + k] * row[k];
            }
            y[i] = acc + self.location[i];
        }
        y
    }
}

/// Panel augmented with the sufficiency index: continuous components V and
/// a discrete cell label per unit.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedPanel {
    pub base: PanelDataset,
    /// N x d_V row-major continuous index values.
    v: Vec<f64>,
    d_v: usize,
    /// Contiguous cell label per unit (all zero when no discrete component).
    cells: Vec<usize>,
    n_cells: usize,
    transform: StandardizeTransform,
    transformed: bool,
}

impl IndexedPanel {
    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn cell(&self, i: usize) -> usize {
        self.cells[i]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    #[inline]
    pub fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.d_v..(i + 1) * self.d_v]
    }

    pub fn v_flat(&self) -> &[f64] {
        &self.v
    }

    pub fn transform(&self) -> &StandardizeTransform {
        &self.transform
    }

    pub fn is_transformed(&self) -> bool {
        self.transformed
    }

    /// Unit indices belonging to one cell.
    pub fn cell_members(&self, cell: usize) -> Vec<usize> {
        (0..self.base.n_units())
            .filter(|&i| self.cells[i] == cell)
            .collect()
    }
}

/// Type-1 (left-continuous inverted CDF) quantile of a sorted sample.
pub fn quantile_type1(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let k = (p * n as f64).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

/// Compute the index values from a panel: continuous time-averages plus
/// quantile-coarsened cells. The standardizing transform is fitted here but
/// not yet applied; see [`apply_transform`].
pub fn build_index(data: &PanelDataset, spec: &IndexSpec) -> Result<IndexedPanel> {
    spec.validate()?;
    let n = data.n_units();
    let t = data.n_periods();
    let d_v = spec.continuous.len();

    let time_average = |name: &str| -> Result<Vec<f64>> {
        let k = data
            .covariate_position(name)
            .ok_or_else(|| Error::Invalid(format!("covariate `{name}` not in panel")))?;
        Ok((0..n)
            .map(|i| (0..t).map(|s| data.x(i, s, k)).sum::<f64>() / t as f64)
            .collect())
    };

    let mut v = vec![0.0; n * d_v];
    for (j, name) in spec.continuous.iter().enumerate() {
        let col = time_average(name)?;
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(Error::DegenerateComponent(name.clone()));
        }
        for i in 0..n {
            v[i * d_v + j] = col[i];
        }
    }

    // each discrete component maps units to a small label; the joint cell is
    // the combination, relabeled contiguously in first-seen sorted order
    let mut combo: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (name, scheme) in &spec.discrete {
        let col = time_average(name)?;
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cuts: Vec<f64> = scheme
            .cut_quantiles
            .iter()
            .map(|&p| quantile_type1(&sorted, p))
            .collect();
        for i in 0..n {
            let label = cuts.iter().take_while(|&&c| col[i] > c).count();
            combo[i].push(label);
        }
    }
    let (cells, n_cells) = if spec.discrete.is_empty() {
        (vec![0usize; n], 1)
    } else {
        let mut seen: Vec<Vec<usize>> = combo.clone();
        seen.sort();
        seen.dedup();
        let cells: Vec<usize> = combo
            .iter()
            .map(|c| seen.binary_search(c).unwrap())
            .collect();
        (cells, seen.len())
    };

    let transform = StandardizeTransform::fit(&v, n, d_v)?;
    Ok(IndexedPanel {
        base: data.clone(),
        v,
        d_v,
        cells,
        n_cells,
        transform,
        transformed: false,
    })
}

/// Replace the continuous index values by their standardized, orthogonalized
/// counterparts. Idempotent in effect: re-fitting on transformed data gives
/// an identity transform up to rounding.
pub fn apply_transform(panel: &IndexedPanel) -> Result<IndexedPanel> {
    let n = panel.base.n_units();
    let d_v = panel.d_v;
    let mut out = panel.clone();
    if d_v == 0 {
        out.transformed = true;
        return Ok(out);
    }
    // fit on the current values so already-standardized data is a fixed point
    let transform = StandardizeTransform::fit(&panel.v, n, d_v)?;
    for i in 0..n {
        let row = transform.apply_row(panel.v_row(i));
        out.v[i * d_v..(i + 1) * d_v].copy_from_slice(&row);
    }
    out.transform = transform;
    out.transformed = true;
    Ok(out)
}
