//! Fitting drivers: the minimum-distance estimator (one- or two-stage) and
//! the simulation-based estimator, with sandwich inference attached.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::inference::{self, SandwichParts};
use crate::model::{Dataset, ModelSpec, ParamSpace, ParamVector};
use crate::objective::{self, condition_v, MomentSource, Weight};
use crate::optimize::{self, MinimizeOptions, Minimum, Objective};
use crate::quadrature::{QuadratureRule, DEFAULT_ORDER, MAX_QUADRATURE_DIM};
use crate::simulated::{DrawStore, Half, ImportanceDensity, WEIGHT_RATIO_WARNING};

/// User-facing weight choice.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    Identity,
    Fixed(Matrix2<f64>),
    PerObservation(Arc<Vec<Matrix2<f64>>>),
    /// Identity first stage, then `V̂⁻¹`.
    EstimatedVinv,
}

/// How conditional moments are computed for the distance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    /// Closed forms when the model has them, quadrature otherwise.
    Auto,
    Closed,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub weight: WeightScheme,
    /// Refit with `V̂⁻¹` after the first stage.
    pub two_stage: bool,
    pub multistart_count: usize,
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub seed: u64,
    pub polish: bool,
    pub moments: MomentMethod,
    pub quadrature_order: usize,
    /// Attach the sandwich covariance to the result.
    pub inference: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weight: WeightScheme::Identity,
            two_stage: false,
            multistart_count: 5,
            max_iterations: 2000,
            ftol: 1e-10,
            xtol: 1e-8,
            seed: 0,
            polish: true,
            moments: MomentMethod::Auto,
            quadrature_order: DEFAULT_ORDER,
            inference: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.multistart_count == 0 {
            return Err(Error::Config("multistart_count must be >= 1".into()));
        }
        if !(self.ftol > 0.0 && self.xtol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if let WeightScheme::Fixed(m) = &self.weight {
            Weight::Constant(*m).validate(0)?;
        }
        Ok(())
    }

    fn minimize_options(&self, starts: usize) -> MinimizeOptions {
        MinimizeOptions {
            starts,
            max_iterations: self.max_iterations,
            ftol: self.ftol,
            xtol: self.xtol,
            seed: self.seed,
            polish: self.polish,
            ..MinimizeOptions::default()
        }
    }

    fn is_two_stage(&self) -> bool {
        self.two_stage || self.weight == WeightScheme::EstimatedVinv
    }
}

/// Output of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: String,
    pub gamma_hat: Vec<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub boundary_hit: bool,
    pub n_evals: usize,
    /// The constant weight of the final stage; `None` for per-observation
    /// weights.
    pub weight_used: Option<[[f64; 2]; 2]>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub diagnostics: BTreeMap<String, Value>,
    #[serde(skip, default = "Weight::identity")]
    pub weight: Weight,
}

impl EstimateResult {
    pub fn param_vector(&self, model: &ModelSpec) -> Result<ParamVector> {
        ParamVector::from_slice(model.dims(), &self.gamma_hat)
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let d = c.len();
        Some(DMatrix::from_fn(d, d, |i, j| c[i][j]))
    }
}

fn matrix_array(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Resolved moment backend for the distance estimator.
pub enum Backend {
    Closed,
    Quadrature(QuadratureRule),
}

impl Backend {
    pub fn for_model(model: &ModelSpec, method: MomentMethod, order: usize) -> Result<Self> {
        let closed = model.closed_moments().is_some();
        match method {
            MomentMethod::Closed if !closed => Err(Error::Unsupported(format!("model '{}' has no closed-form moments", model.name()))),
            MomentMethod::Closed => Ok(Backend::Closed),
            MomentMethod::Auto if closed => Ok(Backend::Closed),
            _ => {
                let k = model.dims().k;
                if k > MAX_QUADRATURE_DIM {
                    return Err(Error::Unsupported(format!(
                        "model '{}' needs quadrature in dimension {k} > {MAX_QUADRATURE_DIM}; use the simulated estimator",
                        model.name()
                    )));
                }
                Ok(Backend::Quadrature(QuadratureRule::standard(order, k)?))
            }
        }
    }

    pub fn source(&self) -> MomentSource<'_> {
        match self {
            Backend::Closed => MomentSource::Closed,
            Backend::Quadrature(rule) => MomentSource::Quadrature(rule),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Backend::Closed => "closed",
            Backend::Quadrature(_) => "quadrature",
        }
    }
}

struct DistanceObjective<'a> {
    data: &'a Dataset,
    model: &'a ModelSpec,
    weight: &'a Weight,
    source: MomentSource<'a>,
}

impl Objective for DistanceObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        objective::q_n(self.data, self.model, x, self.weight, self.source)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        Some(objective::grad_q_n(self.data, self.model, x, self.weight, self.source))
    }
}

struct SimulatedObjective<'a> {
    data: &'a Dataset,
    model: &'a ModelSpec,
    weight: &'a Weight,
    store: &'a DrawStore,
}

impl Objective for SimulatedObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        objective::q_ns(self.data, self.model, x, self.weight, self.store)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        Some(objective::grad_q_ns(self.data, self.model, x, self.weight, self.store))
    }
}

fn check_inputs(data: &Dataset, model: &ModelSpec, space: &ParamSpace, options: &FitOptions) -> Result<()> {
    options.validate()?;
    let d = model.dims();
    if space.dim() != d.len() {
        return Err(Error::dim("parameter box", d.len(), space.dim()));
    }
    if data.k() != d.k {
        return Err(Error::dim("data predictor dimension", d.k, data.k()));
    }
    if data.is_empty() {
        return Err(Error::data(None, "empty dataset"));
    }
    Ok(())
}

fn resolve_first_weight(scheme: &WeightScheme, n: usize) -> Result<Weight> {
    let w = match scheme {
        WeightScheme::Identity | WeightScheme::EstimatedVinv => Weight::identity(),
        WeightScheme::Fixed(m) => Weight::Constant(*m),
        WeightScheme::PerObservation(v) => Weight::PerObservation(v.clone()),
    };
    w.validate(n)?;
    Ok(w)
}

fn base_result(estimator: &str, m: Minimum, weight: Weight) -> EstimateResult {
    EstimateResult {
        estimator: estimator.into(),
        gamma_hat: m.x,
        objective_value: m.value,
        converged: m.converged,
        boundary_hit: m.boundary_hit,
        n_evals: m.n_evals,
        weight_used: match &weight {
            Weight::Constant(c) => Some(matrix_array(c)),
            Weight::PerObservation(_) => None,
        },
        covariance: None,
        std_errors: None,
        diagnostics: BTreeMap::new(),
        weight,
    }
}

/// Minimizes `Q_n` for a fixed weight. `warm` starts precede the box
/// center and the seeded uniform starts.
pub fn fit_with_weight(
    data: &Dataset,
    model: &ModelSpec,
    space: &ParamSpace,
    weight: &Weight,
    source: MomentSource<'_>,
    options: &FitOptions,
    warm: &[Vec<f64>],
) -> Result<Minimum> {
    let obj = DistanceObjective {
        data,
        model,
        weight,
        source,
    };
    optimize::minimize(&obj, space, &options.minimize_options(options.multistart_count), warm)
}

/// The distance estimator: one stage with the configured weight, or two
/// stages when `two_stage` is set or the weight is `EstimatedVinv`.
pub fn fit_mde(data: &Dataset, model: &ModelSpec, space: &ParamSpace, options: &FitOptions) -> Result<EstimateResult> {
    check_inputs(data, model, space, options)?;
    let backend = Backend::for_model(model, options.moments, options.quadrature_order)?;
    let source = backend.source();
    let w1 = resolve_first_weight(&options.weight, data.len())?;
    let first = fit_with_weight(data, model, space, &w1, source, options, &[])?;
    let mut result = if options.is_two_stage() {
        let stage1 = base_result("mde", first, w1);
        let mut r = second_stage(data, model, space, &stage1, source, options)?;
        r.diagnostics.insert("stage1_gamma".into(), json!(stage1.gamma_hat));
        r.diagnostics.insert("stage1_objective".into(), json!(stage1.objective_value));
        r
    } else {
        base_result("mde", first, w1)
    };
    result.diagnostics.insert("moments".into(), json!(backend.name()));
    if options.inference {
        attach_distance_inference(&mut result, data, model, source);
    }
    check_side(&mut result, model);
    Ok(result)
}

/// Computes the sandwich covariance of a distance-estimator result at its
/// `γ̂` and weight. Failures are recorded in the diagnostics.
pub fn attach_distance_inference(result: &mut EstimateResult, data: &Dataset, model: &ModelSpec, source: MomentSource<'_>) {
    attach_inference(result, |w, g| {
        Ok(SandwichParts {
            b: inference::estimate_b(data, model, g, w, source)?,
            c: inference::estimate_c(data, model, g, w, source)?,
            n: data.len(),
        })
    });
}

/// Second stage of the two-stage procedure: estimates `V̂` at the first
/// stage's `γ̂`, conditions it, and refits with `V̂⁻¹` starting from the
/// first-stage solution plus the usual multistarts.
pub fn second_stage(
    data: &Dataset,
    model: &ModelSpec,
    space: &ParamSpace,
    first: &EstimateResult,
    source: MomentSource<'_>,
    options: &FitOptions,
) -> Result<EstimateResult> {
    let v = objective::estimate_v(data, model, &first.gamma_hat, source)?;
    second_stage_with_v(data, model, space, first, &v, source, options)
}

/// The refit of [`second_stage`] for a given residual variance matrix.
pub fn second_stage_with_v(
    data: &Dataset,
    model: &ModelSpec,
    space: &ParamSpace,
    first: &EstimateResult,
    v: &Matrix2<f64>,
    source: MomentSource<'_>,
    options: &FitOptions,
) -> Result<EstimateResult> {
    let cond = condition_v(v);
    let w2 = Weight::Constant(cond.inverse);
    let m = fit_with_weight(data, model, space, &w2, source, options, std::slice::from_ref(&first.gamma_hat))?;
    let mut r = base_result("mde2", m, w2);
    r.n_evals += first.n_evals;
    record_v(&mut r, v, &cond);
    Ok(r)
}

fn record_v(r: &mut EstimateResult, v: &Matrix2<f64>, cond: &objective::ConditionedV) {
    r.diagnostics.insert("v_hat".into(), json!(matrix_array(v)));
    if let Some(l) = cond.shrinkage {
        r.diagnostics.insert("v_hat_shrinkage".into(), json!(l));
    }
    if cond.identity_fallback {
        r.diagnostics.insert("v_hat_degenerate".into(), json!("identity weight kept"));
    }
}

/// The simulation-based estimator on one frozen store of `2S` draws per
/// observation.
pub fn fit_se(
    data: &Dataset,
    model: &ModelSpec,
    space: &ParamSpace,
    options: &FitOptions,
    s: usize,
    phi: &ImportanceDensity,
    seed: u64,
) -> Result<EstimateResult> {
    check_inputs(data, model, space, options)?;
    let store = DrawStore::build(data.len(), s, data.k(), phi, seed)?;
    fit_se_with_store(data, model, space, options, &store)
}

/// As [`fit_se`] with a prebuilt store.
pub fn fit_se_with_store(data: &Dataset, model: &ModelSpec, space: &ParamSpace, options: &FitOptions, store: &DrawStore) -> Result<EstimateResult> {
    check_inputs(data, model, space, options)?;
    if store.n() != data.len() || store.offset() != 0 {
        return Err(Error::Config("draw store does not match the data".into()));
    }
    let w1 = resolve_first_weight(&options.weight, data.len())?;
    let run = |w: &Weight, warm: &[Vec<f64>]| {
        let obj = SimulatedObjective {
            data,
            model,
            weight: w,
            store,
        };
        optimize::minimize(&obj, space, &options.minimize_options(options.multistart_count), warm)
    };
    let first = run(&w1, &[])?;
    let mut result = if options.is_two_stage() {
        let g1 = first.x.clone();
        let va = objective::estimate_v(data, model, &g1, MomentSource::Simulated(store, Half::First))?;
        let vb = objective::estimate_v(data, model, &g1, MomentSource::Simulated(store, Half::Second))?;
        let v = (va + vb) * 0.5;
        let cond = condition_v(&v);
        let w2 = Weight::Constant(cond.inverse);
        let evals = first.n_evals;
        let m = run(&w2, std::slice::from_ref(&g1))?;
        let mut r = base_result("se2", m, w2);
        r.n_evals += evals;
        record_v(&mut r, &v, &cond);
        r.diagnostics.insert("stage1_gamma".into(), json!(g1));
        r
    } else {
        base_result("se", first, w1)
    };
    result.diagnostics.insert("S".into(), json!(store.s()));
    result.diagnostics.insert("seed".into(), json!(store.seed()));
    result.diagnostics.insert("importance_density".into(), json!(store.tag()));
    let psi = &result.gamma_hat[model.dims().psi_range()];
    let stats = store.weight_stats(model, psi);
    result.diagnostics.insert("max_weight_ratio".into(), json!(stats.ratio));
    if !(stats.ratio <= WEIGHT_RATIO_WARNING) {
        result.diagnostics.insert(
            "warning".into(),
            json!(format!(
                "importance weights are unbalanced (max/median = {:.3e}); consider a wider importance density",
                stats.ratio
            )),
        );
    }
    if options.inference {
        attach_inference(&mut result, |w, g| {
            Ok(SandwichParts {
                b: inference::estimate_b_simulated(data, model, g, w, store)?,
                c: inference::estimate_cs(data, model, g, w, store)?,
                n: data.len(),
            })
        });
    }
    check_side(&mut result, model);
    Ok(result)
}

fn attach_inference<F>(result: &mut EstimateResult, parts: F)
where
    F: FnOnce(&Weight, &[f64]) -> Result<SandwichParts>,
{
    if result.boundary_hit {
        result.diagnostics.insert(
            "inference_warning".into(),
            json!("estimate on the parameter box boundary; the sandwich covariance assumes an interior optimum"),
        );
    }
    let weight = result.weight.clone();
    match parts(&weight, &result.gamma_hat).and_then(|p| inference::sandwich(&p)) {
        Ok(s) => {
            result.covariance = Some(inference::rows(&s.covariance));
            result.std_errors = Some(s.std_errors);
            result.diagnostics.insert("b_condition".into(), json!(s.condition));
        }
        Err(e) => {
            if let Error::InferenceUnavailable { condition, .. } = &e {
                if condition.is_finite() {
                    result.diagnostics.insert("b_condition".into(), json!(condition));
                }
            }
            result.diagnostics.insert("inference".into(), json!(format!("unavailable: {e}")));
        }
    }
}

fn check_side(result: &mut EstimateResult, model: &ModelSpec) {
    if let Ok(p) = result.param_vector(model) {
        if let Err(e) = model.check_side_conditions(&p) {
            result.diagnostics.insert("side_condition".into(), json!(e.to_string()));
        }
    }
}
