//! Predictive probabilities.
//!
//! Stage-1 predictions are plug-in: `p = logit⁻¹(xᵀβ̂)`. Stage-2
//! predictions integrate the random intercept by Monte Carlo: σ² is drawn
//! from the grid posterior, then the intercept from `N(0, σ²)` for a new
//! patient — or from that patient's conditional Gaussian posterior at the
//! drawn grid point when the patient was in the fit — and the predictive
//! probability is the average of `logit⁻¹(η + ε)` over all draws.
//!
//! Each row consumes its own counter-indexed stream of the seeded
//! generator, so parallel and serial runs produce bit-identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::datamodel::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::sigmoid;
use crate::laplace::FitResult;
use crate::par::par_map_range;

/// Monte-Carlo settings for Stage-2 prediction.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct McSettings {
    pub n_sigma2_draws: usize,
    pub n_epsilon_draws_per_sigma2: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings { n_sigma2_draws: 200, n_epsilon_draws_per_sigma2: 50, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct PredictionBatch {
    pub row_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Zero for deterministic (plug-in) predictions.
    pub mc_standard_error: Vec<f64>,
}

/// Plug-in Stage-1 probabilities at the MAP estimate.
pub fn predict_stage1(fit: &FitResult, design: &DesignMatrix) -> Result<PredictionBatch> {
    let eta = design.linear_predictor(&fit.map_estimate.coefficients)?;
    Ok(PredictionBatch {
        row_ids: design.row_ids.clone(),
        probabilities: eta.iter().map(|&e| sigmoid(e)).collect(),
        mc_standard_error: vec![0.0; design.n_rows()],
    })
}

/// Monte-Carlo Stage-2 probabilities for fall rows.
///
/// With `patient_known`, every row's patient must carry a random intercept
/// in the fit; otherwise rows are treated as new patients. With
/// `literal_logodds_mean` the log-odds draws are averaged first and the
/// result mapped through the logistic function (the literal procedure),
/// instead of averaging the probabilities themselves.
pub fn predict_stage2(
    fit: &FitResult,
    design: &DesignMatrix,
    patient_known: bool,
    mc: &McSettings,
    literal_logodds_mean: bool,
) -> Result<PredictionBatch> {
    if fit.sigma2_grid.is_empty() {
        return Err(Error::DimensionMismatch("fit has no sigma2 grid; use predict_stage1".into()));
    }
    if mc.n_sigma2_draws < 2 || mc.n_epsilon_draws_per_sigma2 < 1 {
        return Err(Error::InvalidConfig("need at least 2 sigma2 draws and 1 epsilon draw".into()));
    }

    // per-grid-point linear predictors for all rows (conditional MAP slopes)
    let n_grid = fit.sigma2_grid.len();
    let mut etas: Vec<Vec<f64>> = Vec::with_capacity(n_grid);
    for gp in &fit.sigma2_grid {
        let alpha = nalgebra::DVector::from_vec(gp.alpha_mean.clone());
        etas.push(design.linear_predictor(&alpha)?.iter().cloned().collect());
    }
    // cumulative grid weights for categorical sampling
    let mut cum = Vec::with_capacity(n_grid);
    let mut acc = 0.0;
    for gp in &fit.sigma2_grid {
        acc += gp.weight;
        cum.push(acc);
    }

    // map each row's patient to its intercept index in the fit
    let row_eps_index: Vec<Option<usize>> = if patient_known {
        let mut idx = Vec::with_capacity(design.n_rows());
        for r in 0..design.n_rows() {
            let pid = &design.patients[design.row_patient[r]];
            let pos = fit
                .patients
                .iter()
                .position(|p| p == pid)
                .ok_or_else(|| Error::UnknownPatient(pid.clone()))?;
            idx.push(Some(pos));
        }
        idx
    } else {
        vec![None; design.n_rows()]
    };

    let rows: Vec<(f64, f64)> = par_map_range(design.n_rows(), |r| {
        let mut rng = ChaCha20Rng::seed_from_u64(mc.seed);
        rng.set_stream(r as u64 + 1);
        let unit = Normal::new(0.0, 1.0).expect("valid");

        let mut block_stats = Vec::with_capacity(mc.n_sigma2_draws);
        for _ in 0..mc.n_sigma2_draws {
            let u: f64 = rand::Rng::random(&mut rng);
            let g = cum.partition_point(|c| *c < u).min(n_grid - 1);
            let gp = &fit.sigma2_grid[g];
            let (eps_mean, eps_sd) = match row_eps_index[r] {
                Some(i) => (gp.eps_mean[i], gp.eps_sd[i]),
                None => (0.0, gp.sigma2.sqrt()),
            };
            let eta_fixed = etas[g][r];
            let mut block = 0.0;
            for _ in 0..mc.n_epsilon_draws_per_sigma2 {
                let eps = eps_mean + eps_sd * unit.sample(&mut rng);
                block += if literal_logodds_mean { eta_fixed + eps } else { sigmoid(eta_fixed + eps) };
            }
            block /= mc.n_epsilon_draws_per_sigma2 as f64;
            block_stats.push(if literal_logodds_mean { sigmoid(block) } else { block });
        }

        // blocks are iid estimates; their spread gives the standard error
        let nb = block_stats.len() as f64;
        let mean: f64 = block_stats.iter().sum::<f64>() / nb;
        let var: f64 = block_stats.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        (mean, (var / nb).sqrt())
    });

    Ok(PredictionBatch {
        row_ids: design.row_ids.clone(),
        probabilities: rows.iter().map(|r| r.0).collect(),
        mc_standard_error: rows.iter().map(|r| r.1).collect(),
    })
}
