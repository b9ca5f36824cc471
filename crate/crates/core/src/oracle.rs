//! Independent brute-force references for the test suite and the CLI
//! `verify` command.
//!
//! Everything here deliberately avoids the numeric code paths of the main
//! modules: likelihoods are direct probability products with compensated
//! accumulation, marginal likelihoods come from tensor-grid quadrature or
//! importance sampling instead of Laplace, and AUC comes from exhaustive
//! pair counting. Oracles are deterministic given their settings and seed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::glm::PriorSpec;
use crate::par::par_map_range;

/// Outcome of an oracle computation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleResult {
    pub value: f64,
    pub error_estimate: f64,
    pub method: String,
    pub settings: String,
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        // compensation is meaningless once the sum leaves the finite range
        // (inf - inf would poison it with NaN)
        if t.is_finite() {
            if self.sum.abs() >= x.abs() {
                self.comp += (self.sum - t) + x;
            } else {
                self.comp += (x - t) + self.sum;
            }
        } else {
            self.comp = 0.0;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

fn logsumexp_compensated(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = KahanSum::default();
    for &v in values {
        acc.add((v - m).exp());
    }
    m + acc.total().ln()
}

// ---------------------------------------------------------------------------
// direct-probability likelihood and joint densities
// ---------------------------------------------------------------------------

/// Bernoulli log likelihood as a direct product of per-row probabilities,
/// `Σ ln p_i` with `p_i = σ(η_i)` or `1 − σ(η_i)`, compensated.
pub fn naive_bernoulli_loglik(design: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let mut acc = KahanSum::default();
    for r in 0..design.nrows() {
        let mut eta = KahanSum::default();
        for j in 0..design.ncols() {
            eta.add(design[(r, j)] * beta[j]);
        }
        let p = 1.0 / (1.0 + (-eta.total()).exp());
        acc.add(if y[r] == 1.0 { p.ln() } else { (1.0 - p).ln() });
    }
    acc.total()
}

fn naive_log_normal(x: f64, v: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * v.ln() - 0.5 * x * x / v
}

fn naive_log_invgamma(sigma2: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * sigma2.ln() - b / sigma2
}

/// Stage-1 log joint (likelihood + coefficient priors) via direct formulas.
pub fn naive_stage1_logjoint(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorSpec,
    beta: &DVector<f64>,
) -> f64 {
    let mut acc = KahanSum::default();
    acc.add(naive_bernoulli_loglik(design, y, beta));
    for &bk in beta.iter() {
        acc.add(naive_log_normal(bk, prior.v0));
    }
    acc.total()
}

/// Oracle-side description of a Stage-2 model, with its own joint-density
/// evaluation. `latent = (α, ε)` in one slice.
#[derive(Debug, Clone)]
pub struct NaiveStage2 {
    pub design: DMatrix<f64>,
    pub row_patient: Vec<usize>,
    pub n_patients: usize,
    pub y: DVector<f64>,
    pub prior: PriorSpec,
}

impl NaiveStage2 {
    pub fn dim(&self) -> usize {
        self.design.ncols() + self.n_patients
    }

    /// Joint log density of data and latents conditional on `sigma2`
    /// (no hyperprior term).
    pub fn log_joint_given_sigma2(&self, latent: &[f64], sigma2: f64) -> f64 {
        let d = self.design.ncols();
        let mut acc = KahanSum::default();
        for r in 0..self.design.nrows() {
            let mut eta = KahanSum::default();
            for j in 0..d {
                eta.add(self.design[(r, j)] * latent[j]);
            }
            eta.add(latent[d + self.row_patient[r]]);
            let p = 1.0 / (1.0 + (-eta.total()).exp());
            acc.add(if self.y[r] == 1.0 { p.ln() } else { (1.0 - p).ln() });
        }
        for j in 0..d {
            acc.add(naive_log_normal(latent[j], self.prior.v0));
        }
        for i in 0..self.n_patients {
            acc.add(naive_log_normal(latent[d + i], sigma2));
        }
        acc.total()
    }

    /// Joint log density including the Inverse-Gamma hyperprior on `sigma2`.
    pub fn log_joint_with_hyperprior(&self, latent: &[f64], sigma2: f64) -> f64 {
        self.log_joint_given_sigma2(latent, sigma2)
            + naive_log_invgamma(sigma2, self.prior.a, self.prior.b)
    }
}

// ---------------------------------------------------------------------------
// tensor-grid quadrature
// ---------------------------------------------------------------------------

/// Tensor-grid trapezoid integration of `exp(log_density)` over a box,
/// with logsumexp stabilization. Supports up to 3 dimensions.
///
/// The error estimate is a Richardson comparison against a grid with half
/// the points per axis. Bounds should cover the posterior generously; the
/// call fails with `BoundsTooNarrow` when the density on the boundary is
/// above `1e-12` of the peak.
pub fn quadrature_lml<F>(log_density: F, bounds: &[(f64, f64)], n_points: usize) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    if dim == 0 || dim > 3 {
        return Err(Error::DimensionTooLarge(dim));
    }
    if n_points < 8 {
        return Err(Error::InvalidConfig("quadrature needs at least 8 points per axis".into()));
    }
    for &(lo, hi) in bounds {
        if !(hi > lo) {
            return Err(Error::InvalidConfig(format!("bad quadrature bounds ({lo}, {hi})")));
        }
    }

    let full = tensor_trapezoid(&log_density, bounds, n_points, true)?;
    let half = tensor_trapezoid(&log_density, bounds, n_points / 2, false)?;
    Ok(OracleResult {
        value: full.0,
        error_estimate: (full.0 - half.0).abs(),
        method: "tensor_trapezoid".into(),
        settings: format!("dim={dim} n_points={n_points} bounds={bounds:?}"),
    })
}

fn tensor_trapezoid<F>(
    log_density: &F,
    bounds: &[(f64, f64)],
    n_points: usize,
    check_boundary: bool,
) -> Result<(f64,)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let h = (hi - lo) / (n_points - 1) as f64;
            (0..n_points).map(|i| lo + h * i as f64).collect()
        })
        .collect();
    let log_h: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| ((hi - lo) / (n_points - 1) as f64).ln())
        .collect();

    // log trapezoid weight for index i on one axis
    let log_w = |axis: usize, i: usize| -> f64 {
        let edge = i == 0 || i == n_points - 1;
        log_h[axis] + if edge { (0.5f64).ln() } else { 0.0 }
    };

    // parallel over the first axis; each task scans the remaining axes
    let slabs: Vec<(Vec<f64>, f64, f64)> = par_map_range(n_points, |i0| {
        let mut terms = Vec::new();
        let mut peak = f64::NEG_INFINITY;
        let mut boundary_peak = f64::NEG_INFINITY;
        let mut point = vec![0.0; dim];
        point[0] = axes[0][i0];
        let w0 = log_w(0, i0);
        let on_edge0 = i0 == 0 || i0 == n_points - 1;
        match dim {
            1 => {
                let lf = log_density(&point);
                peak = peak.max(lf);
                if on_edge0 {
                    boundary_peak = boundary_peak.max(lf);
                }
                terms.push(lf + w0);
            }
            2 => {
                for i1 in 0..n_points {
                    point[1] = axes[1][i1];
                    let lf = log_density(&point);
                    peak = peak.max(lf);
                    if on_edge0 || i1 == 0 || i1 == n_points - 1 {
                        boundary_peak = boundary_peak.max(lf);
                    }
                    terms.push(lf + w0 + log_w(1, i1));
                }
            }
            _ => {
                for i1 in 0..n_points {
                    point[1] = axes[1][i1];
                    for i2 in 0..n_points {
                        point[2] = axes[2][i2];
                        let lf = log_density(&point);
                        peak = peak.max(lf);
                        if on_edge0 || i1 == 0 || i1 == n_points - 1 || i2 == 0 || i2 == n_points - 1 {
                            boundary_peak = boundary_peak.max(lf);
                        }
                        terms.push(lf + w0 + log_w(1, i1) + log_w(2, i2));
                    }
                }
            }
        }
        (terms, peak, boundary_peak)
    });

    let peak = slabs.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let boundary_peak = slabs.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    if check_boundary && boundary_peak > peak + (1e-12f64).ln() {
        return Err(Error::BoundsTooNarrow(format!(
            "boundary density {:.3e} of peak",
            (boundary_peak - peak).exp()
        )));
    }

    let all: Vec<f64> = slabs.into_iter().flat_map(|s| s.0).collect();
    Ok((logsumexp_compensated(&all),))
}

/// Box covering `mean ± k·sd` per axis, for quadrature bounds from a pilot fit.
pub fn bounds_around(mean: &[f64], sd: &[f64], k: f64) -> Vec<(f64, f64)> {
    mean.iter().zip(sd.iter()).map(|(&m, &s)| (m - k * s, m + k * s)).collect()
}

/// Quadrature with bounds widened from `mean ± 12 sd` until the boundary
/// check passes. Skewed posteriors with slow one-sided likelihood decay can
/// need well over 10 sds of coverage.
pub fn quadrature_lml_expanding<F>(
    log_density: F,
    mean: &[f64],
    sd: &[f64],
    n_points: usize,
) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut k = 12.0;
    loop {
        match quadrature_lml(&log_density, &bounds_around(mean, sd, k), n_points) {
            Err(Error::BoundsTooNarrow(_)) if k < 80.0 => k *= 1.5,
            other => return other,
        }
    }
}

// ---------------------------------------------------------------------------
// importance sampling
// ---------------------------------------------------------------------------

/// Heavy-tailed elliptical proposal: multivariate Student-t.
#[derive(Debug, Clone)]
pub struct TProposal {
    location: DVector<f64>,
    chol_l: DMatrix<f64>,
    df: f64,
    log_norm: f64,
}

impl TProposal {
    /// Build from a location and scale matrix (typically MAP and posterior
    /// covariance of a converged Laplace fit). `df` defaults to 5 in callers.
    pub fn new(location: DVector<f64>, scale: DMatrix<f64>, df: f64) -> Result<Self> {
        let d = location.len();
        if scale.nrows() != d || scale.ncols() != d {
            return Err(Error::DimensionMismatch("proposal scale shape".into()));
        }
        if !(df > 2.0) {
            return Err(Error::DegenerateProposal(format!("df must exceed 2, got {df}")));
        }
        let chol = nalgebra::Cholesky::new(scale)
            .ok_or_else(|| Error::DegenerateProposal("scale matrix is not positive definite".into()))?;
        let chol_l = chol.l();
        let logdet = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let dd = d as f64;
        let log_norm = statrs::function::gamma::ln_gamma((df + dd) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * dd * (df * std::f64::consts::PI).ln()
            - 0.5 * logdet;
        Ok(TProposal { location, chol_l, df, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    fn sample(&self, rng: &mut ChaCha20Rng) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let chi2 = Gamma::new(self.df / 2.0, 2.0).expect("valid gamma").sample(rng);
        let scale = (self.df / chi2).sqrt();
        &self.location + &self.chol_l * z * scale
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.location;
        let z = self.chol_l.solve_lower_triangular(&diff).expect("triangular solve");
        let quad = z.norm_squared();
        let d = self.dim() as f64;
        self.log_norm - 0.5 * (self.df + d) * (quad / self.df).ln_1p()
    }
}

/// Settings for the importance-sampling oracle.
#[derive(Debug, Clone)]
pub struct ImportanceSettings {
    pub n_samples: usize,
    pub seed: u64,
    pub df: f64,
    /// Log-uniform envelope for σ²; `None` keeps σ² fixed (conditional lml).
    pub sigma2_range: Option<(f64, f64)>,
}

impl Default for ImportanceSettings {
    fn default() -> Self {
        ImportanceSettings { n_samples: 100_000, seed: 0, df: 5.0, sigma2_range: None }
    }
}

/// Self-normalized importance estimate of the Stage-2 log marginal
/// likelihood. With `sigma2_range` set, σ² is drawn from a log-uniform
/// envelope and integrated along with the latents; otherwise the estimate
/// conditions on `fixed_sigma2`.
pub fn importance_lml(
    target: &NaiveStage2,
    proposal: &TProposal,
    fixed_sigma2: f64,
    settings: &ImportanceSettings,
) -> Result<OracleResult> {
    if proposal.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "proposal dim {} vs target dim {}",
            proposal.dim(),
            target.dim()
        )));
    }
    if settings.n_samples < 1000 {
        return Err(Error::InvalidConfig("importance sampling needs at least 1000 samples".into()));
    }
    if let Some((lo, hi)) = settings.sigma2_range {
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidConfig(format!("bad sigma2 envelope ({lo}, {hi})")));
        }
    }

    let n = settings.n_samples;
    let log_weights: Vec<f64> = par_map_range(n, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
        rng.set_stream(i as u64 + 1);
        let x = proposal.sample(&mut rng);
        let latent: Vec<f64> = x.iter().cloned().collect();
        match settings.sigma2_range {
            None => {
                let lt = target.log_joint_given_sigma2(&latent, fixed_sigma2);
                lt - proposal.log_density(&x)
            }
            Some((lo, hi)) => {
                let span = hi.ln() - lo.ln();
                let u = Uniform::new(lo.ln(), hi.ln()).expect("valid uniform").sample(&mut rng);
                let sigma2 = u.exp();
                // q(σ²) for log-uniform: 1/(σ²·span)
                let log_q_sigma2 = -sigma2.ln() - span.ln();
                let lt = target.log_joint_with_hyperprior(&latent, sigma2);
                lt - proposal.log_density(&x) - log_q_sigma2
            }
        }
    });

    summarize_weights(&log_weights, n).map(|(value, se, ess)| OracleResult {
        value,
        error_estimate: se,
        method: "importance_t".into(),
        settings: format!(
            "n_samples={} seed={} df={} sigma2={:?} ess={ess:.0}",
            settings.n_samples, settings.seed, settings.df, settings.sigma2_range
        ),
    })
}

/// One σ²-indexed component of a grid-conditional importance proposal:
/// a diagonal Student-t for the latents, valid near that σ².
#[derive(Debug, Clone)]
pub struct SigmaConditionalProposal {
    pub sigma2: f64,
    pub location: DVector<f64>,
    pub sd: DVector<f64>,
}

fn diag_t_log_density(x: &DVector<f64>, loc: &DVector<f64>, sd: &DVector<f64>, df: f64) -> f64 {
    let d = x.len() as f64;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for j in 0..x.len() {
        let z = (x[j] - loc[j]) / sd[j];
        quad += z * z;
        log_det += sd[j].ln();
    }
    statrs::function::gamma::ln_gamma((df + d) / 2.0)
        - statrs::function::gamma::ln_gamma(df / 2.0)
        - 0.5 * d * (df * std::f64::consts::PI).ln()
        - log_det
        - 0.5 * (df + d) * (quad / df).ln_1p()
}

/// Importance estimate of the Stage-2 log marginal likelihood with σ² drawn
/// from a log-uniform envelope. The latent proposal adapts to the drawn σ²:
/// it is the component (from a converged Laplace fit's grid) whose σ² is
/// nearest in log scale, with sds inflated by `scale_inflation` and Student-t
/// tails. This keeps the weights stable when the σ² posterior spreads over
/// many decades and the latent scale changes with it.
pub fn importance_lml_grid(
    target: &NaiveStage2,
    components: &[SigmaConditionalProposal],
    sigma2_range: (f64, f64),
    settings: &ImportanceSettings,
    scale_inflation: f64,
) -> Result<OracleResult> {
    if components.is_empty() {
        return Err(Error::DegenerateProposal("no proposal components".into()));
    }
    for c in components {
        if c.location.len() != target.dim() || c.sd.len() != target.dim() {
            return Err(Error::DimensionMismatch("proposal component dimension".into()));
        }
        if c.sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateProposal("component sd must be positive".into()));
        }
    }
    let (lo, hi) = sigma2_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidConfig(format!("bad sigma2 envelope ({lo}, {hi})")));
    }
    if settings.n_samples < 1000 {
        return Err(Error::InvalidConfig("importance sampling needs at least 1000 samples".into()));
    }

    let df = settings.df;
    let d = target.dim();
    let log_span = hi.ln() - lo.ln();
    let nearest = |sigma2: f64| -> &SigmaConditionalProposal {
        let t = sigma2.ln();
        components
            .iter()
            .min_by(|a, b| {
                let da = (a.sigma2.ln() - t).abs();
                let db = (b.sigma2.ln() - t).abs();
                da.partial_cmp(&db).unwrap()
            })
            .expect("non-empty")
    };

    let n = settings.n_samples;
    let log_weights: Vec<f64> = par_map_range(n, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
        rng.set_stream(i as u64 + 1);
        let u = Uniform::new(lo.ln(), hi.ln()).expect("valid").sample(&mut rng);
        let sigma2 = u.exp();
        let comp = nearest(sigma2);
        let chi2: f64 = Gamma::new(df / 2.0, 2.0).expect("valid").sample(&mut rng);
        let t_scale = (df / chi2).sqrt();
        let x = DVector::from_fn(d, |j, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            comp.location[j] + comp.sd[j] * scale_inflation * z * t_scale
        });
        let latent: Vec<f64> = x.iter().cloned().collect();
        let inflated = &comp.sd * scale_inflation;
        let log_q = diag_t_log_density(&x, &comp.location, &inflated, df) - sigma2.ln() - log_span.ln();
        target.log_joint_with_hyperprior(&latent, sigma2) - log_q
    });

    summarize_weights(&log_weights, n).map(|(value, se, ess)| OracleResult {
        value,
        error_estimate: se,
        method: "importance_grid_t".into(),
        settings: format!(
            "n_samples={} seed={} df={} envelope=({lo:.3e},{hi:.3e}) components={} ess={ess:.0}",
            settings.n_samples,
            settings.seed,
            settings.df,
            components.len()
        ),
    })
}

fn summarize_weights(log_weights: &[f64], n: usize) -> Result<(f64, f64, f64)> {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::DegenerateProposal("all importance weights are zero".into()));
    }
    let mut sum = KahanSum::default();
    let mut sum_sq = KahanSum::default();
    for &lw in log_weights {
        let u = (lw - m).exp();
        sum.add(u);
        sum_sq.add(u * u);
    }
    let s = sum.total();
    let s2 = sum_sq.total();
    let ess = s * s / s2;
    if ess < 100.0 {
        return Err(Error::EffectiveSampleTooSmall(ess));
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0) / n as f64;
    Ok((m + mean.ln(), var.sqrt() / mean, ess))
}

// ---------------------------------------------------------------------------
// pair-counting AUC
// ---------------------------------------------------------------------------

/// Exact AUC by exhaustive pair enumeration:
/// `(Σ [s⁺ > s⁻] + ½[s⁺ = s⁻]) / (n⁺·n⁻)`, accumulated in integers.
pub fn pair_count_auc(labels: &[u8], scores: &[f64]) -> Result<OracleResult> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch("labels vs scores length".into()));
    }
    if labels.len() > 10_000 {
        return Err(Error::InvalidConfig("pair counting is limited to n <= 10000".into()));
    }
    let pos: Vec<f64> =
        labels.iter().zip(scores).filter(|(&l, _)| l == 1).map(|(_, &s)| s).collect();
    let neg: Vec<f64> =
        labels.iter().zip(scores).filter(|(&l, _)| l == 0).map(|(_, &s)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut twice_wins: u64 = 0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                twice_wins += 2;
            } else if p == q {
                twice_wins += 1;
            }
        }
    }
    let denom = 2 * pos.len() as u64 * neg.len() as u64;
    Ok(OracleResult {
        value: twice_wins as f64 / denom as f64,
        error_estimate: 0.0,
        method: "pair_count".into(),
        settings: format!("n_pos={} n_neg={}", pos.len(), neg.len()),
    })
}

// ---------------------------------------------------------------------------
// finite differences, 1-D search, Gauss-Hermite
// ---------------------------------------------------------------------------

/// Central finite-difference gradient with per-coordinate step `h·max(1,|x_j|)`.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = x.len();
    DVector::from_fn(d, |j, _| {
        let step = h * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += step;
        let mut xm = x.clone();
        xm[j] -= step;
        (f(&xp) - f(&xm)) / (2.0 * step)
    })
}

/// Central finite-difference Jacobian of a vector-valued map (used to
/// difference an analytic gradient into a Hessian check). Symmetrized.
pub fn fd_jacobian<F>(g: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let step = h * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += step;
        let mut xm = x.clone();
        xm[j] -= step;
        let col = (g(&xp) - g(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    let jt = jac.transpose();
    (jac + jt) * 0.5
}

/// Golden-section maximization of a unimodal 1-D function on `[lo, hi]`.
pub fn golden_max<F>(f: F, lo: f64, hi: f64, iters: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Gauss-Hermite nodes and weights for `∫ e^{-x²} f(x) dx`, via the
/// Golub-Welsch eigen decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 2);
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 0..n - 1 {
        let v = ((k + 1) as f64 / 2.0).sqrt();
        jacobi[(k, k + 1)] = v;
        jacobi[(k + 1, k)] = v;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let w = eig.eigenvectors[(0, i)].powi(2) * std::f64::consts::PI.sqrt();
            (eig.eigenvalues[i], w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs
}

/// `E[σ(eta + ε)]` with `ε ~ N(0, sigma2)`, by Gauss-Hermite quadrature.
pub fn gh_expected_sigmoid(eta: f64, sigma2: f64, n_nodes: usize) -> f64 {
    if sigma2 <= 0.0 {
        return 1.0 / (1.0 + (-eta).exp());
    }
    let nodes = gauss_hermite(n_nodes);
    let scale = (2.0 * sigma2).sqrt();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    nodes
        .iter()
        .map(|&(x, w)| {
            let e = eta + scale * x;
            w * inv_sqrt_pi / (1.0 + (-e).exp())
        })
        .sum()
}
