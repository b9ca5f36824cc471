//! MAP optimization and Laplace approximation of the log marginal
//! likelihood.
//!
//! Stage-1 models use a plain Laplace approximation at the MAP:
//!
//! `lml = log p(y, β̂) + (d/2)·log 2π − ½·log det(−H(β̂))`
//!
//! Stage-2 models nest that approximation inside a numeric integration
//! over the random-intercept variance: conditional Laplace fits over the
//! joint `(α, ε)` latents are evaluated on an adaptive log-scale σ² grid
//! centered at the posterior mode of `log σ²`, and combined with the
//! Inverse-Gamma hyperprior by trapezoid weights in σ² units. The grid is
//! re-expanded (up to three times) when normalized weight piles up on a
//! boundary.
//!
//! Grid points are independent and evaluated in parallel; the final
//! reduction runs in fixed grid order so results are bit-identical at any
//! thread count.

use nalgebra::{DMatrix, DVector};

use crate::datamodel::{encode, CohortDataset, DesignMatrix, Stage, Standardization};
use crate::error::{Error, Result};
use crate::glm::{
    log_hyperprior_sigma2, logsumexp, LatentState, Objective, ObjectiveEval, PriorSpec,
    Stage1Objective, Stage2Objective,
};
use crate::par::par_map;

const LN_2PI: f64 = 1.8378770664093453;
/// 97.5% standard-normal quantile used for credible intervals.
pub const Z_95: f64 = 1.959964;

/// Newton optimizer settings.
#[derive(Debug, Clone, Copy)]
pub struct FitSettings {
    pub max_iter: usize,
    /// Convergence tolerance on the gradient max-norm.
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { max_iter: 100, grad_tol: 1e-8, max_halvings: 30 }
    }
}

/// σ²-grid settings for Stage-2 fits.
#[derive(Debug, Clone, Copy)]
pub struct GridSettings {
    pub n_points: usize,
    /// Half-width of the grid in curvature sds of the log-σ² posterior.
    pub span_sds: f64,
    /// Normalized boundary weight that triggers re-expansion.
    pub boundary_tol: f64,
    pub max_expansions: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { n_points: 25, span_sds: 5.0, boundary_tol: 1e-3, max_expansions: 3 }
    }
}

/// A fitted model's identity: stage plus covariate subset.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ModelSpec {
    pub stage: Stage,
    pub variables: Vec<String>,
}

impl ModelSpec {
    pub fn new(stage: Stage, variables: Vec<String>) -> Self {
        ModelSpec { stage, variables }
    }
}

/// One σ² grid point of a Stage-2 fit, with the conditional Laplace
/// posterior it carries.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub sigma2: f64,
    pub conditional_lml: f64,
    /// Normalized posterior weight; the grid sums to 1.
    pub weight: f64,
    pub alpha_mean: Vec<f64>,
    pub alpha_sd: Vec<f64>,
    pub eps_mean: Vec<f64>,
    pub eps_sd: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Result of a Laplace fit: MAP, posterior covariance, log marginal
/// likelihood, and (Stage 2) the σ² grid.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelSpec,
    pub column_names: Vec<String>,
    pub transforms: Vec<Option<Standardization>>,
    pub map_estimate: LatentState,
    /// `(−H)⁻¹` at the MAP; Stage 2 reports the modal grid point.
    pub posterior_cov: DMatrix<f64>,
    pub lml: f64,
    /// Empty for Stage 1.
    pub sigma2_grid: Vec<GridPoint>,
    /// Stage 2: patient ids in random-intercept order.
    pub patients: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn n_coefficients(&self) -> usize {
        self.map_estimate.coefficients.len()
    }
}

/// Outcome of the Newton iteration.
pub struct MapFit {
    pub state: DVector<f64>,
    pub eval: ObjectiveEval,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximize a log joint density by Newton's method with step halving on
/// non-increase. Deterministic from the initial point.
pub fn fit_map<O: Objective>(objective: &O, initial: &DVector<f64>, settings: &FitSettings) -> Result<MapFit> {
    if initial.len() != objective.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial point has {} entries, objective dimension is {}",
            initial.len(),
            objective.dim()
        )));
    }
    let mut x = initial.clone();
    let mut eval = objective.eval(&x)?;
    if !eval.value.is_finite() {
        return Err(Error::NonFiniteObjective(format!("value {} at the initial point", eval.value)));
    }
    let mut iterations = 0;
    let converged = loop {
        if eval.gradient.amax() <= settings.grad_tol {
            break true;
        }
        if iterations >= settings.max_iter {
            break false;
        }
        iterations += 1;
        let step = eval.hessian.solve_neg(&eval.gradient)?;
        let mut t = 1.0;
        let mut improved = None;
        // slack of ~1e-12 relative: near the optimum the true ascent drops
        // below value resolution while the Newton step still contracts the
        // gradient; rejecting those steps stalls the iteration one ulp away
        let slack = 1e-12 * (1.0 + eval.value.abs());
        for _ in 0..settings.max_halvings {
            let cand = &x + &step * t;
            let cand_eval = objective.eval(&cand)?;
            if cand_eval.value.is_finite() && cand_eval.value >= eval.value - slack {
                improved = Some((cand, cand_eval));
                break;
            }
            t *= 0.5;
        }
        match improved {
            Some((cx, ce)) => {
                if cx == x {
                    break ce.gradient.amax() <= settings.grad_tol;
                }
                x = cx;
                eval = ce;
            }
            // no ascent left at floating-point resolution
            None => break eval.gradient.amax() <= settings.grad_tol,
        }
    };
    Ok(MapFit { state: x, eval, converged, iterations })
}

fn laplace_lml(eval: &ObjectiveEval, dim: usize) -> Result<f64> {
    Ok(eval.value + 0.5 * dim as f64 * LN_2PI - 0.5 * eval.hessian.logdet_neg()?)
}

/// Fit a Stage-1 model and return its Laplace log marginal likelihood.
pub fn lml_stage1(
    dataset: &CohortDataset,
    variable_subset: &[String],
    prior: &PriorSpec,
    settings: &FitSettings,
) -> Result<FitResult> {
    let design = encode(dataset, variable_subset, Stage::Stage1)?;
    let y = dataset.stage1_outcome();
    lml_stage1_design(&design, &y, variable_subset, prior, settings)
}

/// Stage-1 fit against an already-encoded design (used by selection and
/// cross-validation, which refit many subsets of one dataset).
pub fn lml_stage1_design(
    design: &DesignMatrix,
    y: &DVector<f64>,
    variable_subset: &[String],
    prior: &PriorSpec,
    settings: &FitSettings,
) -> Result<FitResult> {
    let objective = Stage1Objective::new(&design.matrix, y, prior)?;
    let initial = DVector::zeros(objective.dim());
    let fit = fit_map(&objective, &initial, settings)?;
    let lml = laplace_lml(&fit.eval, objective.dim())?;
    let posterior_cov = fit.eval.hessian.neg_inverse()?;
    Ok(FitResult {
        model: ModelSpec::new(Stage::Stage1, variable_subset.to_vec()),
        column_names: design.column_names.clone(),
        transforms: design.transforms.clone(),
        map_estimate: LatentState::stage1(fit.state),
        posterior_cov,
        lml,
        sigma2_grid: Vec::new(),
        patients: Vec::new(),
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

struct ConditionalFit {
    sigma2: f64,
    cond_lml: f64,
    map: DVector<f64>,
    eval: ObjectiveEval,
    converged: bool,
    iterations: usize,
}

fn conditional_fit(
    design: &DesignMatrix,
    y: &DVector<f64>,
    prior: &PriorSpec,
    settings: &FitSettings,
    log_sigma2: f64,
) -> Result<ConditionalFit> {
    let sigma2 = log_sigma2.exp();
    let objective =
        Stage2Objective::new(&design.matrix, &design.row_patient, design.patients.len(), y, prior, sigma2)?;
    let initial = DVector::zeros(objective.dim());
    let fit = fit_map(&objective, &initial, settings)?;
    let cond_lml = laplace_lml(&fit.eval, objective.dim())?;
    Ok(ConditionalFit {
        sigma2,
        cond_lml,
        map: fit.state,
        eval: fit.eval,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

/// Fit a Stage-2 random-intercept model, integrating σ² on an adaptive
/// log-scale grid. The returned `lml` marginalizes the coefficients, the
/// random intercepts, and σ².
pub fn lml_stage2(
    dataset: &CohortDataset,
    variable_subset: &[String],
    prior: &PriorSpec,
    grid: &GridSettings,
    settings: &FitSettings,
) -> Result<FitResult> {
    let design = encode(dataset, variable_subset, Stage::Stage2)?;
    let y = dataset.stage2_outcome();
    lml_stage2_design(&design, &y, variable_subset, prior, grid, settings)
}

/// Stage-2 fit against an already-encoded design.
pub fn lml_stage2_design(
    design: &DesignMatrix,
    y: &DVector<f64>,
    variable_subset: &[String],
    prior: &PriorSpec,
    grid: &GridSettings,
    settings: &FitSettings,
) -> Result<FitResult> {
    if design.n_rows() == 0 {
        return Err(Error::InvalidConfig("stage-2 fit needs at least one fall event".into()));
    }
    if grid.n_points < 3 {
        return Err(Error::InvalidConfig("sigma2 grid needs at least 3 points".into()));
    }
    prior.validate()?;

    // posterior of t = log σ² up to a constant: conditional Laplace evidence
    // + hyperprior + Jacobian
    let log_post_t = |t: f64| -> Result<f64> {
        let fit = conditional_fit(design, y, prior, settings, t)?;
        Ok(fit.cond_lml + log_hyperprior_sigma2(fit.sigma2, prior)? + t)
    };

    // coarse scan, then golden-section refinement around the best point
    let coarse: Vec<f64> = (0..16).map(|i| -11.0 + 1.2 * i as f64).collect();
    // the wrapper keeps `log_post_t` borrowed for the refinement below
    #[allow(clippy::redundant_closure)]
    let coarse_vals = par_map(coarse.clone(), |t| log_post_t(t));
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in coarse_vals.iter().enumerate() {
        if let Ok(v) = v {
            if *v > best_val {
                best_val = *v;
                best = i;
            }
        }
    }
    if !best_val.is_finite() {
        return Err(Error::GridDegenerate("no finite conditional evidence on the coarse scan".into()));
    }
    let lo = coarse[best.saturating_sub(1)];
    let hi = coarse[(best + 1).min(coarse.len() - 1)];
    let t_mode = golden_max_t(&log_post_t, lo, hi, 28)?;

    // curvature-based sd of the log-σ² posterior
    let h = 0.25;
    let f0 = log_post_t(t_mode)?;
    let fp = log_post_t(t_mode + h)?;
    let fm = log_post_t(t_mode - h)?;
    let second = (fp - 2.0 * f0 + fm) / (h * h);
    let kappa = if second < -1e-8 { (-1.0 / second).sqrt().clamp(0.05, 4.0) } else { 1.0 };

    let mut half_span = grid.span_sds * kappa;
    for expansion in 0..=grid.max_expansions {
        // keep the log-σ² resolution fine enough for the trapezoid rule
        // when a weakly identified σ² stretches the span
        let n_used = grid.n_points.max(((2.0 * half_span / 0.5).ceil() as usize + 1).min(161));
        let ts: Vec<f64> = (0..n_used)
            .map(|i| t_mode - half_span + 2.0 * half_span * i as f64 / (n_used - 1) as f64)
            .collect();
        let fits = par_map(ts, |t| conditional_fit(design, y, prior, settings, t));
        let mut points = Vec::with_capacity(n_used);
        for f in fits {
            points.push(f?);
        }

        // trapezoid widths in σ² units
        let n = points.len();
        let widths: Vec<f64> = (0..n)
            .map(|g| {
                let lo = if g == 0 { points[0].sigma2 } else { points[g - 1].sigma2 };
                let hi = if g == n - 1 { points[n - 1].sigma2 } else { points[g + 1].sigma2 };
                0.5 * (hi - lo)
            })
            .collect();

        let mut terms = Vec::with_capacity(n);
        for (g, p) in points.iter().enumerate() {
            terms.push(p.cond_lml + log_hyperprior_sigma2(p.sigma2, prior)? + widths[g].ln());
        }
        let lml = logsumexp(&terms);
        if !lml.is_finite() {
            return Err(Error::GridDegenerate("non-finite grid evidence".into()));
        }
        let weights: Vec<f64> = terms.iter().map(|t| (t - lml).exp()).collect();

        if weights[0] + weights[n - 1] > grid.boundary_tol {
            if expansion == grid.max_expansions {
                return Err(Error::GridDegenerate(format!(
                    "boundary weight {:.3e} after {} re-expansions",
                    weights[0] + weights[n - 1],
                    grid.max_expansions
                )));
            }
            half_span *= 2.0;
            continue;
        }

        return assemble_stage2(design, variable_subset, points, weights, lml);
    }
    unreachable!("loop either returns or errors");
}

fn golden_max_t(f: &dyn Fn(f64) -> Result<f64>, lo: f64, hi: f64, iters: usize) -> Result<f64> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

fn assemble_stage2(
    design: &DesignMatrix,
    variable_subset: &[String],
    points: Vec<ConditionalFit>,
    weights: Vec<f64>,
    lml: f64,
) -> Result<FitResult> {
    let d = design.n_cols();
    let n_pat = design.patients.len();

    let mut modal = 0;
    for (g, w) in weights.iter().enumerate() {
        if *w > weights[modal] {
            modal = g;
        }
    }

    let mut grid_points = Vec::with_capacity(points.len());
    let mut all_converged = true;
    for (fit, &weight) in points.iter().zip(&weights) {
        let (alpha_cov, eps_var) = fit.eval.hessian.block_marginals()?;
        all_converged &= fit.converged;
        grid_points.push(GridPoint {
            sigma2: fit.sigma2,
            conditional_lml: fit.cond_lml,
            weight,
            alpha_mean: fit.map.rows(0, d).iter().cloned().collect(),
            alpha_sd: (0..d).map(|j| alpha_cov[(j, j)].sqrt()).collect(),
            eps_mean: fit.map.rows(d, n_pat).iter().cloned().collect(),
            eps_sd: eps_var.iter().map(|v| v.sqrt()).collect(),
            converged: fit.converged,
            iterations: fit.iterations,
        });
    }

    let modal_fit = &points[modal];
    let posterior_cov = modal_fit.eval.hessian.neg_inverse()?;
    let map_estimate = LatentState::stage2(
        modal_fit.map.rows(0, d).into_owned(),
        modal_fit.map.rows(d, n_pat).into_owned(),
        modal_fit.sigma2,
    );

    Ok(FitResult {
        model: ModelSpec::new(Stage::Stage2, variable_subset.to_vec()),
        column_names: design.column_names.clone(),
        transforms: design.transforms.clone(),
        map_estimate,
        posterior_cov,
        lml,
        sigma2_grid: grid_points,
        patients: design.patients.clone(),
        converged: all_converged,
        iterations: modal_fit.iterations,
    })
}

/// σ²-conditional proposal components for the importance-sampling oracle,
/// one per grid point of a converged Stage-2 fit.
pub fn importance_proposal_components(fit: &FitResult) -> Vec<crate::oracle::SigmaConditionalProposal> {
    fit.sigma2_grid
        .iter()
        .map(|g| {
            let mut loc = Vec::with_capacity(g.alpha_mean.len() + g.eps_mean.len());
            loc.extend_from_slice(&g.alpha_mean);
            loc.extend_from_slice(&g.eps_mean);
            let mut sd = Vec::with_capacity(loc.len());
            sd.extend_from_slice(&g.alpha_sd);
            sd.extend_from_slice(&g.eps_sd);
            crate::oracle::SigmaConditionalProposal {
                sigma2: g.sigma2,
                location: DVector::from_vec(loc),
                sd: DVector::from_vec(sd.into_iter().map(|s| s.max(1e-6)).collect()),
            }
        })
        .collect()
}

/// Per-coefficient posterior summary on the log-odds and odds-ratio scales.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Gaussian-Laplace marginals of the coefficients. Stage-2 summaries are
/// weight-averaged over the σ² grid, with variances combined by the law of
/// total variance.
pub fn posterior_summary(fit: &FitResult) -> Result<Vec<CoefficientSummary>> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let d = fit.n_coefficients();
    let (means, sds): (Vec<f64>, Vec<f64>) = if fit.sigma2_grid.is_empty() {
        let means: Vec<f64> = fit.map_estimate.coefficients.iter().cloned().collect();
        let sds = (0..d).map(|j| fit.posterior_cov[(j, j)].sqrt()).collect();
        (means, sds)
    } else {
        let mut means = vec![0.0; d];
        let mut second = vec![0.0; d];
        for gp in &fit.sigma2_grid {
            for j in 0..d {
                means[j] += gp.weight * gp.alpha_mean[j];
                second[j] += gp.weight * (gp.alpha_sd[j].powi(2) + gp.alpha_mean[j].powi(2));
            }
        }
        let sds = (0..d).map(|j| (second[j] - means[j] * means[j]).max(0.0).sqrt()).collect();
        (means, sds)
    };

    Ok((0..d)
        .map(|j| CoefficientSummary {
            name: fit.column_names[j].clone(),
            mean: means[j],
            sd: sds[j],
            odds_ratio: means[j].exp(),
            ci_low: (means[j] - Z_95 * sds[j]).exp(),
            ci_high: (means[j] + Z_95 * sds[j]).exp(),
        })
        .collect())
}
