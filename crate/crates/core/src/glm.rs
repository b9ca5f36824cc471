//! Bernoulli-logit likelihood kernels, priors, and joint log densities with
//! analytic gradients and Hessians.
//!
//! Two model families share these kernels:
//!
//! * Stage 1: `logit(π_i) = x_iᵀβ` with `β_k ~ N(0, v0)`.
//! * Stage 2: `logit(π_r) = x_rᵀα + ε_{pat(r)}` with `α_l ~ N(0, v0)`,
//!   `ε_i ~ N(0, σ²)`, and `σ² ~ IG(a, b)` handled by conditioning: the
//!   kernels take `σ²` as an input so the marginal-likelihood layer can
//!   integrate over it on a grid.
//!
//! The Bernoulli-logit terms are evaluated with the overflow-safe
//! `log1p(exp(-|η|))` branch so the joint density stays finite for any
//! linear predictor the optimizer visits under vague priors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Prior specification: Gaussian variance for every regression coefficient
/// and Inverse-Gamma shape/rate for the random-intercept variance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PriorSpec {
    /// Coefficient prior variance `v0`.
    pub v0: f64,
    /// Inverse-Gamma shape.
    pub a: f64,
    /// Inverse-Gamma rate.
    pub b: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { v0: 1000.0, a: 0.001, b: 0.001 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.v0 > 0.0) || !self.v0.is_finite() {
            return Err(Error::InvalidConfig(format!("prior v0 must be positive, got {}", self.v0)));
        }
        if !(self.a > 0.0) || !(self.b > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "inverse-gamma prior needs a > 0 and b > 0, got a={}, b={}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Free latent variables of a model: regression coefficients, plus one
/// random intercept per patient for Stage 2 (empty for Stage 1).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub coefficients: DVector<f64>,
    pub random_intercepts: DVector<f64>,
    /// Conditioning hyperparameter; `None` for Stage 1.
    pub sigma2: Option<f64>,
}

impl LatentState {
    pub fn stage1(coefficients: DVector<f64>) -> Self {
        LatentState { coefficients, random_intercepts: DVector::zeros(0), sigma2: None }
    }

    pub fn stage2(coefficients: DVector<f64>, random_intercepts: DVector<f64>, sigma2: f64) -> Self {
        LatentState { coefficients, random_intercepts, sigma2: Some(sigma2) }
    }

    /// Concatenated free-latent vector `(coefficients, random_intercepts)`.
    pub fn flat(&self) -> DVector<f64> {
        let d = self.coefficients.len();
        let n = self.random_intercepts.len();
        let mut out = DVector::zeros(d + n);
        out.rows_mut(0, d).copy_from(&self.coefficients);
        if n > 0 {
            out.rows_mut(d, n).copy_from(&self.random_intercepts);
        }
        out
    }
}

/// `log(1 + exp(eta))` without overflow.
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Logistic function, stable on both tails.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Log density of `N(0, v)` at `x`, including the normalization constant.
pub fn log_normal(x: f64, v: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - x * x / (2.0 * v)
}

/// Log density of the Inverse-Gamma prior at `sigma2`:
/// `a·log b − logΓ(a) − (a+1)·log σ² − b/σ²`.
pub fn log_hyperprior_sigma2(sigma2: f64, prior: &PriorSpec) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::NonpositiveSigma2(sigma2));
    }
    prior.validate()?;
    let lg = statrs::function::gamma::ln_gamma(prior.a);
    Ok(prior.a * prior.b.ln() - lg - (prior.a + 1.0) * sigma2.ln() - prior.b / sigma2)
}

/// Hessian of a log joint density. Stage-1 Hessians are dense; Stage-2
/// Hessians keep the `(α, ε)` block structure so the Newton solve and the
/// log-determinant cost `O(dim_α³ + n_patients·dim_α²)` instead of the
/// cubic cost in the full latent dimension.
#[derive(Debug, Clone)]
pub enum Hessian {
    Dense(DMatrix<f64>),
    Block(BlockHessian),
}

/// `H = [[A, B], [Bᵀ, D]]` with `A` the dense coefficient block, `D` a
/// diagonal random-intercept block, and `B` the coupling. All blocks store
/// the Hessian itself (negative definite at an interior optimum).
#[derive(Debug, Clone)]
pub struct BlockHessian {
    pub alpha: DMatrix<f64>,
    /// `dim_α × n_patients` coupling block.
    pub cross: DMatrix<f64>,
    pub eps_diag: DVector<f64>,
}

const RIDGE: f64 = 1e-8;

fn cholesky_with_ridge(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    match nalgebra::Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => {
            let mut ridged = m;
            for i in 0..n {
                ridged[(i, i)] += RIDGE;
            }
            nalgebra::Cholesky::new(ridged)
                .ok_or_else(|| Error::SingularHessian("Cholesky failed after ridge fallback".into()))
        }
    }
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(m) => m.nrows(),
            Hessian::Block(b) => b.alpha.nrows() + b.eps_diag.len(),
        }
    }

    /// Solve `(−H)·s = g`.
    pub fn solve_neg(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Hessian::Dense(h) => {
                let chol = cholesky_with_ridge(-h)?;
                Ok(chol.solve(g))
            }
            Hessian::Block(b) => {
                let (d, n) = (b.alpha.nrows(), b.eps_diag.len());
                let dp = b.neg_eps_diag()?;
                let schur = b.neg_schur(&dp);
                let chol = cholesky_with_ridge(schur)?;
                let g_a = g.rows(0, d).into_owned();
                let g_e = g.rows(d, n).into_owned();
                // rhs_α = g_α − B'·(g_ε ./ D') with B' = −cross
                let ge_scaled = g_e.component_div(&dp);
                let rhs = &g_a + &b.cross * &ge_scaled;
                let s_a = chol.solve(&rhs);
                // s_ε = (g_ε − B'ᵀ s_α) ./ D'
                let bt_sa = b.cross.transpose() * &s_a;
                let s_e = (&g_e + bt_sa).component_div(&dp);
                let mut s = DVector::zeros(d + n);
                s.rows_mut(0, d).copy_from(&s_a);
                s.rows_mut(d, n).copy_from(&s_e);
                Ok(s)
            }
        }
    }

    /// `log det(−H)`.
    pub fn logdet_neg(&self) -> Result<f64> {
        match self {
            Hessian::Dense(h) => {
                let chol = cholesky_with_ridge(-h)?;
                Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
            }
            Hessian::Block(b) => {
                let dp = b.neg_eps_diag()?;
                let schur = b.neg_schur(&dp);
                let chol = cholesky_with_ridge(schur)?;
                let ld_schur = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                Ok(ld_schur + dp.iter().map(|d| d.ln()).sum::<f64>())
            }
        }
    }

    /// `(−H)⁻¹`, the Laplace posterior covariance.
    pub fn neg_inverse(&self) -> Result<DMatrix<f64>> {
        match self {
            Hessian::Dense(h) => {
                let chol = cholesky_with_ridge(-h)?;
                Ok(chol.inverse())
            }
            Hessian::Block(b) => {
                let (d, n) = (b.alpha.nrows(), b.eps_diag.len());
                let dp = b.neg_eps_diag()?;
                let schur = b.neg_schur(&dp);
                let chol = cholesky_with_ridge(schur)?;
                let s_inv = chol.inverse();
                // B' D'⁻¹ with B' = −cross
                let mut bd = -b.cross.clone();
                for j in 0..n {
                    let mut col = bd.column_mut(j);
                    col /= dp[j];
                }
                let top_right = -(&s_inv * &bd); // d×n
                let mut cov = DMatrix::zeros(d + n, d + n);
                cov.view_mut((0, 0), (d, d)).copy_from(&s_inv);
                cov.view_mut((0, d), (d, n)).copy_from(&top_right);
                cov.view_mut((d, 0), (n, d)).copy_from(&top_right.transpose());
                let bottom = bd.transpose() * &s_inv * &bd; // n×n
                for i in 0..n {
                    for j in 0..n {
                        cov[(d + i, d + j)] = bottom[(i, j)] + if i == j { 1.0 / dp[i] } else { 0.0 };
                    }
                }
                Ok(cov)
            }
        }
    }

    /// Marginal posterior blocks for Stage-2 fits: covariance of the
    /// coefficients and per-patient variances of the random intercepts,
    /// computed without forming the full `(d+n)²` matrix.
    pub fn block_marginals(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        match self {
            Hessian::Dense(h) => {
                let chol = cholesky_with_ridge(-h)?;
                Ok((chol.inverse(), DVector::zeros(0)))
            }
            Hessian::Block(b) => {
                let n = b.eps_diag.len();
                let dp = b.neg_eps_diag()?;
                let schur = b.neg_schur(&dp);
                let chol = cholesky_with_ridge(schur)?;
                let s_inv = chol.inverse();
                let mut eps_var = DVector::zeros(n);
                for i in 0..n {
                    let bi = -b.cross.column(i); // B' column
                    let z = &s_inv * &bi;
                    eps_var[i] = 1.0 / dp[i] + bi.dot(&z) / (dp[i] * dp[i]);
                }
                Ok((s_inv, eps_var))
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Dense(h) => h.clone(),
            Hessian::Block(b) => {
                let (d, n) = (b.alpha.nrows(), b.eps_diag.len());
                let mut h = DMatrix::zeros(d + n, d + n);
                h.view_mut((0, 0), (d, d)).copy_from(&b.alpha);
                h.view_mut((0, d), (d, n)).copy_from(&b.cross);
                h.view_mut((d, 0), (n, d)).copy_from(&b.cross.transpose());
                for i in 0..n {
                    h[(d + i, d + i)] = b.eps_diag[i];
                }
                h
            }
        }
    }
}

impl BlockHessian {
    /// `D' = −D`, positive at any interior point.
    fn neg_eps_diag(&self) -> Result<DVector<f64>> {
        let dp = -self.eps_diag.clone();
        if dp.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::SingularHessian("random-intercept block is not negative definite".into()));
        }
        Ok(dp)
    }

    /// Schur complement of `−H` on the ε block: `−A − B D⁻¹ Bᵀ` expressed
    /// through `D' = −D` as `−A + B D'⁻¹ Bᵀ`... written out directly below.
    fn neg_schur(&self, dp: &DVector<f64>) -> DMatrix<f64> {
        let d = self.alpha.nrows();
        let n = dp.len();
        // M = −H ⇒ A' = −alpha, B' = −cross; Schur = A' − B' D'⁻¹ B'ᵀ
        let mut schur = -self.alpha.clone();
        let mut scaled = self.cross.clone(); // sign of B cancels in B' D'⁻¹ B'ᵀ
        for j in 0..n {
            let mut col = scaled.column_mut(j);
            col /= dp[j].sqrt();
        }
        schur.gemm(-1.0, &scaled, &scaled.transpose(), 1.0);
        // enforce exact symmetry before factorization
        for i in 0..d {
            for j in (i + 1)..d {
                let s = 0.5 * (schur[(i, j)] + schur[(j, i)]);
                schur[(i, j)] = s;
                schur[(j, i)] = s;
            }
        }
        schur
    }
}

/// Value, gradient, and Hessian of a log joint density at one point.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Hessian,
}

/// A twice-differentiable log joint density over a free latent vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<ObjectiveEval>;
}

/// Bernoulli-logit log likelihood `Σ_i [y_i η_i − log(1+exp(η_i))]`.
pub fn log_likelihood_stage1(beta: &DVector<f64>, design: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_dims(design, y, beta.len())?;
    let eta = design * beta;
    Ok(bernoulli_loglik(&eta, y))
}

fn bernoulli_loglik(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - log1p_exp(e)).sum()
}

fn check_dims(design: &DMatrix<f64>, y: &DVector<f64>, n_coef: usize) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but y has {} entries",
            design.nrows(),
            y.len()
        )));
    }
    if design.ncols() != n_coef {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but {} coefficients were given",
            design.ncols(),
            n_coef
        )));
    }
    Ok(())
}

/// Stage-1 joint: likelihood plus independent `N(0, v0)` coefficient priors.
pub struct Stage1Objective<'a> {
    design: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    v0: f64,
}

impl<'a> Stage1Objective<'a> {
    pub fn new(design: &'a DMatrix<f64>, y: &'a DVector<f64>, prior: &PriorSpec) -> Result<Self> {
        prior.validate()?;
        if design.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but y has {} entries",
                design.nrows(),
                y.len()
            )));
        }
        Ok(Stage1Objective { design, y, v0: prior.v0 })
    }
}

impl Objective for Stage1Objective<'_> {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn eval(&self, beta: &DVector<f64>) -> Result<ObjectiveEval> {
        check_dims(self.design, self.y, beta.len())?;
        let eta = self.design * beta;
        let pi = eta.map(sigmoid);

        let mut value = bernoulli_loglik(&eta, self.y);
        for &b in beta.iter() {
            value += log_normal(b, self.v0);
        }

        let resid = self.y - &pi;
        let gradient = self.design.transpose() * resid - beta / self.v0;

        let hessian = Hessian::Dense(neg_xtwx_minus_prior(self.design, &pi, self.v0));
        Ok(ObjectiveEval { value, gradient, hessian })
    }
}

fn neg_xtwx_minus_prior(design: &DMatrix<f64>, pi: &DVector<f64>, v0: f64) -> DMatrix<f64> {
    let d = design.ncols();
    let mut xw = design.clone();
    for i in 0..design.nrows() {
        let w = pi[i] * (1.0 - pi[i]);
        let mut row = xw.row_mut(i);
        row *= w;
    }
    let mut h = DMatrix::zeros(d, d);
    h.gemm(-1.0, &design.transpose(), &xw, 0.0);
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = s;
            h[(j, i)] = s;
        }
        h[(i, i)] -= 1.0 / v0;
    }
    h
}

/// Convenience wrapper matching the kernel contract directly.
pub fn log_joint_stage1(
    beta: &DVector<f64>,
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    prior: &PriorSpec,
) -> Result<ObjectiveEval> {
    Stage1Objective::new(design, y, prior)?.eval(beta)
}

/// Stage-2 joint conditional on `σ²`: Bernoulli-logit likelihood over fall
/// rows with `η_r = x_rᵀα + ε_{pat(r)}`, Gaussian priors on `α`, and
/// `ε_i ~ N(0, σ²)`.
pub struct Stage2Objective<'a> {
    design: &'a DMatrix<f64>,
    row_patient: &'a [usize],
    n_patients: usize,
    y: &'a DVector<f64>,
    v0: f64,
    sigma2: f64,
}

impl<'a> Stage2Objective<'a> {
    pub fn new(
        design: &'a DMatrix<f64>,
        row_patient: &'a [usize],
        n_patients: usize,
        y: &'a DVector<f64>,
        prior: &PriorSpec,
        sigma2: f64,
    ) -> Result<Self> {
        prior.validate()?;
        if !(sigma2 > 0.0) {
            return Err(Error::NonpositiveSigma2(sigma2));
        }
        if design.nrows() != y.len() || design.nrows() != row_patient.len() {
            return Err(Error::DimensionMismatch(format!(
                "design rows {}, y {}, patient map {}",
                design.nrows(),
                y.len(),
                row_patient.len()
            )));
        }
        if let Some(&bad) = row_patient.iter().find(|&&p| p >= n_patients) {
            return Err(Error::DimensionMismatch(format!(
                "patient index {bad} out of range for {n_patients} patients"
            )));
        }
        Ok(Stage2Objective { design, row_patient, n_patients, y, v0: prior.v0, sigma2 })
    }

    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_patients(&self) -> usize {
        self.n_patients
    }
}

impl Objective for Stage2Objective<'_> {
    fn dim(&self) -> usize {
        self.design.ncols() + self.n_patients
    }

    fn eval(&self, x: &DVector<f64>) -> Result<ObjectiveEval> {
        let d = self.design.ncols();
        let n = self.n_patients;
        if x.len() != d + n {
            return Err(Error::DimensionMismatch(format!(
                "latent vector has {} entries, expected {}",
                x.len(),
                d + n
            )));
        }
        let alpha = x.rows(0, d).into_owned();
        let eps = x.rows(d, n).into_owned();

        let mut eta = self.design * &alpha;
        for (r, &p) in self.row_patient.iter().enumerate() {
            eta[r] += eps[p];
        }
        let pi = eta.map(sigmoid);

        let mut value = bernoulli_loglik(&eta, self.y);
        for &a in alpha.iter() {
            value += log_normal(a, self.v0);
        }
        for &e in eps.iter() {
            value += log_normal(e, self.sigma2);
        }

        // gradient
        let resid = self.y - &pi;
        let grad_alpha = self.design.transpose() * &resid - &alpha / self.v0;
        let mut grad_eps = DVector::zeros(n);
        for (r, &p) in self.row_patient.iter().enumerate() {
            grad_eps[p] += resid[r];
        }
        grad_eps -= &eps / self.sigma2;
        let mut gradient = DVector::zeros(d + n);
        gradient.rows_mut(0, d).copy_from(&grad_alpha);
        gradient.rows_mut(d, n).copy_from(&grad_eps);

        // Hessian blocks
        let alpha_block = neg_xtwx_minus_prior(self.design, &pi, self.v0);
        let mut cross = DMatrix::zeros(d, n);
        let mut eps_diag = DVector::from_element(n, -1.0 / self.sigma2);
        for (r, &p) in self.row_patient.iter().enumerate() {
            let w = pi[r] * (1.0 - pi[r]);
            eps_diag[p] -= w;
            for j in 0..d {
                cross[(j, p)] -= w * self.design[(r, j)];
            }
        }

        Ok(ObjectiveEval {
            value,
            gradient,
            hessian: Hessian::Block(BlockHessian { alpha: alpha_block, cross, eps_diag }),
        })
    }
}

/// Convenience wrapper matching the kernel contract directly.
pub fn log_joint_stage2_given_sigma2(
    latent: &LatentState,
    design: &DMatrix<f64>,
    patient_index_map: &[usize],
    y: &DVector<f64>,
    prior: &PriorSpec,
    sigma2: f64,
) -> Result<ObjectiveEval> {
    let n_patients = latent.random_intercepts.len();
    let obj = Stage2Objective::new(design, patient_index_map, n_patients, y, prior, sigma2)?;
    obj.eval(&latent.flat())
}

/// Numerically stable `log Σ exp(v)`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
