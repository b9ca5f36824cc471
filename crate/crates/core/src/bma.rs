//! Bayesian model averaging over every model visited by the forward
//! search.
//!
//! The default weight is the posterior model probability
//! `w_m = exp(lml_m − logsumexp(lml))`. The literal lml-ratio rule
//! (`lml_m / Σ lml`) divides log values and is scale-inconsistent; it is
//! kept behind a flag for fidelity experiments and refuses to run unless
//! every lml is negative.

use crate::datamodel::Stage;
use crate::error::{Error, Result};
use crate::glm::logsumexp;
use crate::laplace::FitResult;
use crate::par::par_map;
use crate::selection::SelectionTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    NormalizedMarginal,
    LiteralLmlRatio,
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub signature: String,
    pub variables: Vec<String>,
    pub lml: f64,
    pub weight: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone)]
pub struct BmaEnsemble {
    pub stage: Stage,
    pub weight_rule: WeightRule,
    /// Members in signature order; weights sum to 1.
    pub members: Vec<EnsembleMember>,
}

/// Build the ensemble from every successful fit in the trace.
pub fn build_ensemble(trace: &SelectionTrace, weight_rule: WeightRule) -> Result<BmaEnsemble> {
    let mut members: Vec<EnsembleMember> = trace
        .all_evaluated
        .iter()
        .filter_map(|(sig, outcome)| {
            outcome.as_success().map(|fit| EnsembleMember {
                signature: sig.clone(),
                variables: fit.model.variables.clone(),
                lml: fit.lml,
                weight: 0.0,
                fit: fit.clone(),
            })
        })
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }

    let lmls: Vec<f64> = members.iter().map(|m| m.lml).collect();
    let weights = compute_weights(&lmls, weight_rule)?;
    for (m, w) in members.iter_mut().zip(weights) {
        m.weight = w;
    }
    Ok(BmaEnsemble { stage: trace.stage, weight_rule, members })
}

fn compute_weights(lmls: &[f64], rule: WeightRule) -> Result<Vec<f64>> {
    match rule {
        WeightRule::NormalizedMarginal => {
            let total = logsumexp(lmls);
            Ok(lmls.iter().map(|l| (l - total).exp()).collect())
        }
        WeightRule::LiteralLmlRatio => {
            if lmls.iter().any(|l| *l >= 0.0) {
                return Err(Error::LiteralWeightsUndefined(format!(
                    "max lml = {:.3}",
                    lmls.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                )));
            }
            let total: f64 = lmls.iter().sum();
            Ok(lmls.iter().map(|l| l / total).collect())
        }
    }
}

/// Weighted average of per-member predictions. `predict_fn` maps one
/// member's fit to per-row probabilities; members are evaluated in
/// parallel and reduced in fixed member order.
pub fn bma_predict<F>(ensemble: &BmaEnsemble, n_rows: usize, predict_fn: F) -> Result<Vec<f64>>
where
    F: Fn(&FitResult) -> Result<Vec<f64>> + Sync + Send,
{
    let member_rows: Vec<Result<Vec<f64>>> =
        par_map(ensemble.members.iter().collect(), |m| predict_fn(&m.fit));
    let mut out = vec![0.0; n_rows];
    for (member, rows) in ensemble.members.iter().zip(member_rows) {
        let rows = rows?;
        if rows.len() != n_rows {
            return Err(Error::DimensionMismatch(format!(
                "member `{}` predicted {} rows, expected {n_rows}",
                member.signature,
                rows.len()
            )));
        }
        for (o, p) in out.iter_mut().zip(&rows) {
            *o += member.weight * p;
        }
    }
    Ok(out)
}

/// Members sorted by descending weight (signature breaks ties), truncated
/// to `k`.
pub fn top_models(ensemble: &BmaEnsemble, k: usize) -> Vec<&EnsembleMember> {
    let mut sorted: Vec<&EnsembleMember> = ensemble.members.iter().collect();
    sorted.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.signature.cmp(&b.signature))
    });
    sorted.truncate(k);
    sorted
}

/// Plain-text table of the top-k models: one row per variable with a mark
/// under each model that includes it, and a closing weight row.
pub fn top_table(ensemble: &BmaEnsemble, k: usize, schema_order: &[String]) -> String {
    let top = top_models(ensemble, k);
    let mut rows: Vec<String> = Vec::new();
    for name in schema_order {
        if top.iter().any(|m| m.variables.contains(name)) {
            rows.push(name.clone());
        }
    }
    let name_width = rows.iter().map(|r| r.len()).max().unwrap_or(8).max("Variable".len());
    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}", "Variable"));
    for i in 1..=top.len() {
        out.push_str(&format!("  Model {i}"));
    }
    out.push('\n');
    for name in &rows {
        out.push_str(&format!("{name:<name_width$}"));
        for m in &top {
            let mark = if m.variables.contains(name) { "x" } else { "" };
            out.push_str(&format!("  {mark:>7}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<name_width$}", "Weight"));
    for m in &top {
        out.push_str(&format!("  {:>7.4}", m.weight));
    }
    out.push('\n');
    out
}
