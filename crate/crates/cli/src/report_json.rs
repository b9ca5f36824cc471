//! JSON report shapes for the CLI outputs.

use serde_json::{json, Value};

use bayeslogit::bma::{top_models, BmaEnsemble};
use bayeslogit::laplace::{CoefficientSummary, FitResult};
use bayeslogit::selection::{FitOutcome, SelectionTrace};

pub fn fit_json(fit: &FitResult, summary: &[CoefficientSummary]) -> Value {
    json!({
        "model": fit.model.variables,
        "stage": fit.model.stage.number(),
        "lml": fit.lml,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "coefficients": summary.iter().map(|c| json!({
            "name": c.name,
            "mean": c.mean,
            "sd": c.sd,
            "or": c.odds_ratio,
            "ci_low": c.ci_low,
            "ci_high": c.ci_high,
        })).collect::<Vec<_>>(),
        "sigma2_grid": fit.sigma2_grid.iter().map(|g| json!({
            "sigma2": g.sigma2,
            "conditional_lml": g.conditional_lml,
            "weight": g.weight,
        })).collect::<Vec<_>>(),
    })
}

pub fn trace_json(trace: &SelectionTrace) -> Value {
    json!({
        "stage": match trace.stage {
            bayeslogit::datamodel::Stage::Stage1 => 1,
            bayeslogit::datamodel::Stage::Stage2 => 2,
        },
        "steps": trace.steps,
        "final_model": trace.final_model,
        "n_model_fits": trace.n_model_fits,
        "models": trace.all_evaluated.iter().map(|(sig, outcome)| match outcome {
            FitOutcome::Success(fit) => json!({
                "signature": sig,
                "variables": fit.model.variables,
                "lml": fit.lml,
                "converged": fit.converged,
            }),
            FitOutcome::Failed(msg) => json!({
                "signature": sig,
                "error": msg,
            }),
        }).collect::<Vec<_>>(),
    })
}

pub fn ensemble_json(ensemble: &BmaEnsemble, k: usize) -> Value {
    json!({
        "weight_rule": ensemble.weight_rule,
        "n_members": ensemble.members.len(),
        "top_models": top_models(ensemble, k).iter().enumerate().map(|(i, m)| json!({
            "rank": i + 1,
            "variables": m.variables,
            "lml": m.lml,
            "weight": m.weight,
        })).collect::<Vec<_>>(),
        "members": ensemble.members.iter().map(|m| json!({
            "signature": m.signature,
            "variables": m.variables,
            "lml": m.lml,
            "weight": m.weight,
        })).collect::<Vec<_>>(),
    })
}
