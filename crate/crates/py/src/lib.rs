//! Python bindings for the panel binary-response estimators: panel
//! construction, first-step coefficient fits, the semiparametric ASF/APE
//! pipeline, parametric baselines, simulation, and rate checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use panelbin::baselines::{baseline_asf_ape, re_cre_fit, BaselineMode};
use panelbin::beta::{
    cmle_fit, smoothed_max_score_fit, BetaEstimate, BetaMethod, CmleOptions, SmsOptions,
};
use panelbin::bootstrap::{bootstrap_effect, BootstrapPlan, CiKind};
use panelbin::effects::{average_over_time, EffectEstimate, EffectsEngine, Period, Smoother};
use panelbin::error::Error;
use panelbin::localpoly::{
    check_rates, default_delta, BandwidthSpec, LocalPolyConfig, TrimmingPolicy,
};
use panelbin::mc::{self, DgpFamily, DgpSpec};
use panelbin::panel::{
    apply_transform, build_index, load_panel, CoarseningScheme, CsvSchema, IndexSpec,
    IndexedPanel, PanelDataset,
};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) | Error::EmptyIndex => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Balanced binary-outcome panel.
#[pyclass(name = "Panel", from_py_object)]
#[derive(Clone)]
struct PyPanel {
    inner: PanelDataset,
}

#[pymethods]
impl PyPanel {
    /// Build from flat arrays: outcomes in unit-major period order,
    /// covariates flattened as (unit, period, covariate).
    #[new]
    fn new(
        n_units: usize,
        n_periods: usize,
        outcomes: Vec<u8>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> PyResult<Self> {
        PanelDataset::from_parts(
            n_units,
            n_periods,
            outcomes,
            covariates,
            covariate_names,
            None,
        )
        .map(|inner| PyPanel { inner })
        .map_err(to_py_err)
    }

    /// Load a long-format CSV with the given column mapping.
    #[staticmethod]
    fn from_csv(
        path: PathBuf,
        unit: String,
        period: String,
        outcome: String,
        covariates: Vec<String>,
    ) -> PyResult<Self> {
        let schema = CsvSchema {
            unit,
            period,
            outcome,
            covariates,
        };
        load_panel(&path, &schema)
            .map(|inner| PyPanel { inner })
            .map_err(to_py_err)
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.n_periods()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    fn outcome(&self, unit: usize, period: usize) -> u8 {
        self.inner.y(unit, period)
    }

    fn covariate_row(&self, unit: usize, period: usize) -> Vec<f64> {
        self.inner.x_row(unit, period).to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(n_units={}, n_periods={}, covariates={:?})",
            self.inner.n_units(),
            self.inner.n_periods(),
            self.inner.covariate_names()
        )
    }
}

fn beta_dict(py: Python<'_>, est: &BetaEstimate) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("beta", est.beta.clone())?;
    d.set_item(
        "method",
        match est.method {
            BetaMethod::Cmle => "cmle",
            BetaMethod::SmoothedMaxScore => "smoothed_max_score",
        },
    )?;
    d.set_item("scale_normalized", est.scale_normalized)?;
    d.set_item("converged", est.converged)?;
    d.set_item("objective_value", est.objective_value)?;
    d.set_item("iterations", est.iterations)?;
    d.set_item("epsilon_rate", est.epsilon_rate)?;
    Ok(d.into())
}

/// Conditional maximum likelihood (logit) estimate of the coefficients.
#[pyfunction]
fn cmle(py: Python<'_>, panel: &PyPanel) -> PyResult<Py<PyDict>> {
    let est = cmle_fit(&panel.inner, CmleOptions::default()).map_err(to_py_err)?;
    beta_dict(py, &est)
}

/// Smoothed maximum score estimate; the first coefficient is normalized to
/// absolute value one.
#[pyfunction]
#[pyo3(signature = (panel, bandwidth=None, starts=16, seed=0))]
fn smoothed_max_score(
    py: Python<'_>,
    panel: &PyPanel,
    bandwidth: Option<f64>,
    starts: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let est = smoothed_max_score_fit(
        &panel.inner,
        &SmsOptions {
            bandwidth,
            starts,
            seed,
            max_iter: 600,
        },
    )
    .map_err(to_py_err)?;
    beta_dict(py, &est)
}

fn effect_dict(py: Python<'_>, e: &EffectEstimate) -> PyResult<Py<PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", e.value)?;
    d.set_item("trim_share", e.trim_share)?;
    d.set_item("analytic_se", e.analytic_se)?;
    d.set_item("ci", e.ci)?;
    d.set_item("bounds", e.bounds)?;
    d.set_item(
        "period",
        match e.period {
            Period::At(t) => t.to_string(),
            Period::Averaged => "averaged".to_string(),
        },
    )?;
    Ok(d.into())
}

/// Three-step semiparametric ASF/APE estimator bound to one panel.
#[pyclass(name = "Pipeline")]
struct PyPipeline {
    panel: PanelDataset,
    indexed: IndexedPanel,
    spec: IndexSpec,
    beta: BetaEstimate,
    beta_method: String,
    seed: u64,
    ell: usize,
    kappa: f64,
    delta: f64,
    smoother: Smoother,
    monotone_ape: bool,
    trimming: TrimmingPolicy,
}

impl PyPipeline {
    fn config(&self) -> PyResult<LocalPolyConfig> {
        let bw = BandwidthSpec::new(self.kappa, self.delta).map_err(to_py_err)?;
        Ok(LocalPolyConfig::new(self.ell, self.indexed.d_v(), bw))
    }

    fn engine(&self) -> PyResult<EffectsEngine<'_>> {
        Ok(
            EffectsEngine::new(&self.indexed, &self.beta, self.config()?, self.trimming)
                .map_err(to_py_err)?
                .with_smoother(self.smoother)
                .with_monotone_ape(self.monotone_ape),
        )
    }

    fn periods(&self, t: Option<usize>) -> Vec<usize> {
        match t {
            Some(t) => vec![t],
            None => (0..self.panel.n_periods()).collect(),
        }
    }
}

#[pymethods]
impl PyPipeline {
    /// Build the pipeline: index construction (continuous components are
    /// time-averages of the named covariates; discrete ones are coarsened by
    /// the given cut quantiles), standardization, and the first-step fit.
    #[new]
    #[pyo3(signature = (panel, continuous, discrete=None, beta_method="cmle", ell=2, kappa=1.5,
                        local_logit=false, monotone_ape=false, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        panel: &PyPanel,
        continuous: Vec<String>,
        discrete: Option<Vec<(String, Vec<f64>)>>,
        beta_method: &str,
        ell: usize,
        kappa: f64,
        local_logit: bool,
        monotone_ape: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let discrete = discrete
            .unwrap_or_default()
            .into_iter()
            .map(|(name, cuts)| Ok((name, CoarseningScheme::new(cuts).map_err(to_py_err)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let spec = IndexSpec {
            continuous,
            discrete,
        };
        let indexed = apply_transform(&build_index(&panel.inner, &spec).map_err(to_py_err)?)
            .map_err(to_py_err)?;
        let beta = match beta_method {
            "cmle" => cmle_fit(&panel.inner, CmleOptions::default()).map_err(to_py_err)?,
            "smoothed_max_score" | "sms" => smoothed_max_score_fit(
                &panel.inner,
                &SmsOptions {
                    bandwidth: None,
                    starts: 16,
                    seed,
                    max_iter: 600,
                },
            )
            .map_err(to_py_err)?,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown beta method `{other}`"
                )))
            }
        };
        let d_v = indexed.d_v();
        let delta = default_delta(ell, beta.epsilon_rate, d_v).ok_or_else(|| {
            PyValueError::new_err(format!(
                "no admissible bandwidth exponent for ell={ell}, d_V={d_v}"
            ))
        })?;
        Ok(PyPipeline {
            panel: panel.inner.clone(),
            indexed,
            spec,
            beta,
            beta_method: beta_method.to_string(),
            seed,
            ell,
            kappa,
            delta,
            smoother: if local_logit {
                Smoother::LocalLogit
            } else {
                Smoother::LeastSquares
            },
            monotone_ape,
            trimming: TrimmingPolicy::default(),
        })
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.beta.beta.clone()
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.kappa
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.delta
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.indexed.n_cells()
    }

    /// Leave-one-out cross-validation of the bandwidth constant on the
    /// first period; sets and returns the winner.
    fn select_kappa(&mut self, grid: Vec<f64>) -> PyResult<f64> {
        let engine = self.engine()?;
        let (k, _) = engine.select_kappa(0, &grid).map_err(to_py_err)?;
        self.kappa = k;
        Ok(k)
    }

    /// Trimmed ASF at x_bar; for one period when t is given, otherwise
    /// averaged over all periods.
    #[pyo3(signature = (x_bar, t=None))]
    fn asf(&self, py: Python<'_>, x_bar: Vec<f64>, t: Option<usize>) -> PyResult<Py<PyDict>> {
        let engine = self.engine()?;
        let per_t = self
            .periods(t)
            .into_iter()
            .map(|t| engine.asf(&x_bar, t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py_err)?;
        let e = if per_t.len() == 1 {
            per_t.into_iter().next().unwrap()
        } else {
            average_over_time(&per_t).map_err(to_py_err)?
        };
        effect_dict(py, &e)
    }

    /// Trimmed APE of covariate k (zero-based); per-period or time-averaged.
    #[pyo3(signature = (x_bar, k, t=None))]
    fn ape(
        &self,
        py: Python<'_>,
        x_bar: Vec<f64>,
        k: usize,
        t: Option<usize>,
    ) -> PyResult<Py<PyDict>> {
        let engine = self.engine()?;
        let per_t = self
            .periods(t)
            .into_iter()
            .map(|t| engine.ape(&x_bar, k, t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py_err)?;
        let e = if per_t.len() == 1 {
            per_t.into_iter().next().unwrap()
        } else {
            average_over_time(&per_t).map_err(to_py_err)?
        };
        effect_dict(py, &e)
    }

    /// Support diagnostic at x_bar for period t.
    fn support_diagnostic(
        &self,
        py: Python<'_>,
        x_bar: Vec<f64>,
        t: usize,
    ) -> PyResult<Py<PyDict>> {
        let engine = self.engine()?;
        let r = engine.support_diagnostic(&x_bar, t).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("p_out", r.p_out)?;
        d.set_item("per_cell", r.per_cell)?;
        Ok(d.into())
    }

    /// ASF identification bounds at x_bar for period t.
    fn asf_bounds(&self, py: Python<'_>, x_bar: Vec<f64>, t: usize) -> PyResult<Py<PyDict>> {
        let engine = self.engine()?;
        let r = engine.asf_bounds(&x_bar, t).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("lo", r.lo)?;
        d.set_item("hi", r.hi)?;
        d.set_item("p_out", r.p_out)?;
        d.set_item("point", r.point)?;
        Ok(d.into())
    }

    /// Plug-in analytic standard error for the ASF or APE at x_bar.
    #[pyo3(signature = (x_bar, kind="asf", k=0, t=0))]
    fn analytic_se(&self, x_bar: Vec<f64>, kind: &str, k: usize, t: usize) -> PyResult<f64> {
        let engine = self.engine()?;
        let ek = match kind {
            "asf" => panelbin::effects::EffectKind::Asf,
            "ape" => panelbin::effects::EffectKind::ApeContinuous,
            other => return Err(PyValueError::new_err(format!("unknown kind `{other}`"))),
        };
        engine.analytic_se(ek, &x_bar, k, t).map_err(to_py_err)
    }

    /// Cluster bootstrap CI for the time-averaged ASF or APE at x_bar. The
    /// full pipeline (index, first step, partial mean) is re-run on each
    /// replicate with the bandwidth constant frozen.
    #[pyo3(signature = (x_bar, kind="ape", k=0, n_reps=200, seed=0, level=0.95, percentile=false))]
    #[allow(clippy::too_many_arguments)]
    fn bootstrap(
        &self,
        py: Python<'_>,
        x_bar: Vec<f64>,
        kind: &str,
        k: usize,
        n_reps: usize,
        seed: u64,
        level: f64,
        percentile: bool,
    ) -> PyResult<Py<PyDict>> {
        let plan = BootstrapPlan::new(
            n_reps,
            seed,
            if percentile {
                CiKind::Percentile
            } else {
                CiKind::PercentileT
            },
            level,
        )
        .map_err(to_py_err)?;
        let spec = self.spec.clone();
        let (ell, kappa, delta) = (self.ell, self.kappa, self.delta);
        let trimming = self.trimming;
        let smoother = self.smoother;
        let monotone = self.monotone_ape;
        let beta_method = self.beta_method.clone();
        let sms_seed = self.seed;
        let kind_owned = kind.to_string();
        let estimator = move |p: &PanelDataset| -> panelbin::Result<EffectEstimate> {
            let indexed = apply_transform(&build_index(p, &spec)?)?;
            let beta = match beta_method.as_str() {
                "cmle" => cmle_fit(p, CmleOptions::default())?,
                _ => smoothed_max_score_fit(
                    p,
                    &SmsOptions {
                        bandwidth: None,
                        starts: 16,
                        seed: sms_seed,
                        max_iter: 600,
                    },
                )?,
            };
            let cfg =
                LocalPolyConfig::new(ell, indexed.d_v(), BandwidthSpec::new(kappa, delta)?);
            let engine = EffectsEngine::new(&indexed, &beta, cfg, trimming)?
                .with_smoother(smoother)
                .with_monotone_ape(monotone);
            let per_t: panelbin::Result<Vec<_>> = (0..p.n_periods())
                .map(|t| match kind_owned.as_str() {
                    "asf" => engine.asf(&x_bar, t),
                    _ => engine.ape(&x_bar, k, t),
                })
                .collect();
            average_over_time(&per_t?)
        };
        let r = bootstrap_effect(&plan, estimator, &self.panel).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("point", r.point.value)?;
        d.set_item("sd", r.sd)?;
        d.set_item("ci", r.ci)?;
        d.set_item("n_failed", r.n_failed)?;
        Ok(d.into())
    }
}

/// RE/CRE logit baseline: fit plus model-implied ASF and APE at x_bar.
#[pyfunction]
#[pyo3(signature = (panel, continuous, x_bar, k, cre=false, quad_nodes=32))]
fn baseline(
    py: Python<'_>,
    panel: &PyPanel,
    continuous: Vec<String>,
    x_bar: Vec<f64>,
    k: usize,
    cre: bool,
    quad_nodes: usize,
) -> PyResult<Py<PyDict>> {
    let spec = IndexSpec {
        continuous,
        discrete: vec![],
    };
    let indexed = apply_transform(&build_index(&panel.inner, &spec).map_err(to_py_err)?)
        .map_err(to_py_err)?;
    let mode = if cre {
        BaselineMode::Cre
    } else {
        BaselineMode::Re
    };
    let fit = re_cre_fit(&indexed, mode, quad_nodes).map_err(to_py_err)?;
    let (asf, ape) = baseline_asf_ape(&fit, &indexed, &x_bar, k).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("beta", fit.beta.clone())?;
    d.set_item("mu_c0", fit.mu_c0)?;
    d.set_item("mu_c1", fit.mu_c1.clone())?;
    d.set_item("sigma_c", fit.sigma_c)?;
    d.set_item("loglik", fit.loglik)?;
    d.set_item("asf", asf.value)?;
    d.set_item("ape", ape.value)?;
    Ok(d.into())
}

/// Simulate one replication of a named design (L1, L2, G11, G12, G21, G22).
#[pyfunction]
#[pyo3(signature = (family, rep=0, seed=0, n_units=None, n_periods=None))]
fn simulate(
    family: &str,
    rep: usize,
    seed: u64,
    n_units: Option<usize>,
    n_periods: Option<usize>,
) -> PyResult<PyPanel> {
    let fam = DgpFamily::parse(family)
        .ok_or_else(|| PyValueError::new_err(format!("unknown family `{family}`")))?;
    let mut spec = DgpSpec::preset(fam, 1, seed).map_err(to_py_err)?;
    if let Some(n) = n_units {
        spec.n_units = n;
    }
    if let Some(t) = n_periods {
        spec.n_periods = t;
    }
    let (panel, _) = mc::generate(&spec, rep);
    Ok(PyPanel { inner: panel })
}

/// True ASF/APE of a named design along a grid of the varying coordinate.
#[pyfunction]
fn true_effects(py: Python<'_>, family: &str, values: Vec<f64>) -> PyResult<Py<PyDict>> {
    let fam = DgpFamily::parse(family)
        .ok_or_else(|| PyValueError::new_err(format!("unknown family `{family}`")))?;
    let spec = DgpSpec::preset(fam, 1, 0).map_err(to_py_err)?;
    let k = mc::vary_coordinate(&spec);
    let grid = mc::evaluation_grid(spec.d_x(), k, &values);
    let t = mc::true_effects(&spec, &grid, k);
    let d = PyDict::new(py);
    d.set_item("x", values)?;
    d.set_item("asf", t.iter().map(|e| e.asf).collect::<Vec<_>>())?;
    d.set_item("ape", t.iter().map(|e| e.ape).collect::<Vec<_>>())?;
    Ok(d.into())
}

/// Bandwidth-rate feasibility report.
#[pyfunction]
#[pyo3(signature = (ell, d_v, epsilon, n=1500))]
fn rates(py: Python<'_>, ell: usize, d_v: usize, epsilon: f64, n: usize) -> PyResult<Py<PyDict>> {
    let delta = default_delta(ell, epsilon, d_v);
    let bw = BandwidthSpec::new(1.0, delta.unwrap_or(0.1)).map_err(to_py_err)?;
    let r = check_rates(&LocalPolyConfig::new(ell, d_v, bw), epsilon, d_v, n);
    let d = PyDict::new(py);
    d.set_item("delta_window", (r.delta_lower, r.delta_upper))?;
    d.set_item("feasible", r.feasible)?;
    d.set_item("epsilon_floor", r.epsilon_floor)?;
    d.set_item("epsilon_ok", r.epsilon_ok)?;
    d.set_item("default_delta", delta)?;
    d.set_item("asf_rate_interval", r.asf_rate_interval)?;
    d.set_item("ape_rate_interval", r.ape_rate_interval)?;
    Ok(d.into())
}

#[pymodule]
fn panelbin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(cmle, m)?)?;
    m.add_function(wrap_pyfunction!(smoothed_max_score, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(true_effects, m)?)?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    Ok(())
}
