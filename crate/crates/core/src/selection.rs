//! Forward stepwise variable selection maximizing the log marginal
//! likelihood.
//!
//! Starting from the intercept-only model, each step fits every candidate
//! extension of the current model, includes the best variable if it
//! improves the lml, and stops otherwise. Every model fitted along the way
//! is kept (keyed by a canonical signature) — the model-averaging layer
//! builds its ensemble from exactly this ledger.
//!
//! Candidates within a step are fitted in parallel; the argmax reduction
//! runs in schema declaration order, which is also the tie-breaking order,
//! so the trace is reproducible bit for bit.

use std::collections::BTreeMap;

use crate::datamodel::{CohortDataset, Stage, StageAvailability};
use crate::error::{Error, Result};
use crate::glm::PriorSpec;
use crate::laplace::{lml_stage1, lml_stage2, FitResult, FitSettings, GridSettings};
use crate::par::par_map;

/// Improvement below this is treated as a tie (float noise guard).
pub const LML_TIE_EPS: f64 = 1e-9;

/// Canonical model key: stage prefix plus the sorted variable names.
pub fn model_signature(stage: Stage, variables: &[String]) -> String {
    if variables.is_empty() {
        return format!("{stage}:(intercept)");
    }
    let mut sorted: Vec<&str> = variables.iter().map(|s| s.as_str()).collect();
    sorted.sort_unstable();
    format!("{stage}:{}", sorted.join(","))
}

/// One candidate evaluation within a step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CandidateEval {
    pub variable: String,
    pub lml: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SelectionStep {
    pub step_index: usize,
    pub candidates: Vec<CandidateEval>,
    /// `None` marks the stopping step.
    pub chosen: Option<String>,
}

/// Outcome of one model fit in the ledger.
#[derive(Debug, Clone)]
pub enum FitOutcome {
    Success(Box<FitResult>),
    Failed(String),
}

impl FitOutcome {
    pub fn as_success(&self) -> Option<&FitResult> {
        match self {
            FitOutcome::Success(fit) => Some(fit),
            FitOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub stage: Stage,
    pub steps: Vec<SelectionStep>,
    pub final_model: Vec<String>,
    /// Every model fitted during the search, keyed by signature.
    pub all_evaluated: BTreeMap<String, FitOutcome>,
    /// Actual fits performed; equals `all_evaluated.len()` (cache property).
    pub n_model_fits: usize,
}

impl SelectionTrace {
    pub fn final_lml(&self) -> Option<f64> {
        self.all_evaluated
            .get(&model_signature(self.stage, &self.final_model))
            .and_then(|o| o.as_success())
            .map(|f| f.lml)
    }
}

/// Search settings bundling the prior and the fitting controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionSettings {
    pub prior: PriorSpec,
    pub fit: FitSettings,
    pub grid: GridSettings,
}

fn fit_model(
    dataset: &CohortDataset,
    variables: &[String],
    stage: Stage,
    settings: &SelectionSettings,
) -> Result<FitResult> {
    match stage {
        Stage::Stage1 => lml_stage1(dataset, variables, &settings.prior, &settings.fit),
        Stage::Stage2 => {
            lml_stage2(dataset, variables, &settings.prior, &settings.grid, &settings.fit)
        }
    }
}

/// Run the forward search over `candidate_pool`. The pool is deduplicated
/// and ordered by schema declaration order; all candidates must be
/// stage-compatible.
pub fn forward_select(
    dataset: &CohortDataset,
    candidate_pool: &[String],
    stage: Stage,
    settings: &SelectionSettings,
) -> Result<SelectionTrace> {
    if candidate_pool.is_empty() {
        return Err(Error::InvalidConfig("candidate pool is empty".into()));
    }
    let mut pool: Vec<(usize, String)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for name in candidate_pool {
        let cov = dataset
            .schema
            .get(name)
            .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        if stage == Stage::Stage1 && cov.stage == StageAvailability::PerFall {
            return Err(Error::StageMismatch {
                variable: name.clone(),
                availability: "per-fall".into(),
                stage: 1,
            });
        }
        if seen.insert(name.clone()) {
            pool.push((dataset.schema.position(name).expect("validated"), name.clone()));
        }
    }
    pool.sort();
    let pool: Vec<String> = pool.into_iter().map(|(_, n)| n).collect();

    let mut all_evaluated: BTreeMap<String, FitOutcome> = BTreeMap::new();
    let mut n_model_fits = 0usize;

    // the intercept-only model anchors the search
    let base = fit_model(dataset, &[], stage, settings)?;
    let mut current_lml = base.lml;
    n_model_fits += 1;
    all_evaluated.insert(model_signature(stage, &[]), FitOutcome::Success(Box::new(base)));

    let mut current: Vec<String> = Vec::new();
    let mut steps = Vec::new();

    for step_index in 1.. {
        let remaining: Vec<String> =
            pool.iter().filter(|v| !current.contains(v)).cloned().collect();

        // fit all candidate extensions not already in the ledger
        let jobs: Vec<(String, Vec<String>, String)> = remaining
            .iter()
            .map(|v| {
                let mut vars = current.clone();
                vars.push(v.clone());
                let sig = model_signature(stage, &vars);
                (v.clone(), vars, sig)
            })
            .filter(|(_, _, sig)| !all_evaluated.contains_key(sig))
            .collect();
        n_model_fits += jobs.len();
        let results = par_map(jobs, |(v, vars, sig)| {
            let outcome = match fit_model(dataset, &vars, stage, settings) {
                Ok(fit) => FitOutcome::Success(Box::new(fit)),
                Err(e) => FitOutcome::Failed(e.to_string()),
            };
            (v, sig, outcome)
        });
        for (_, sig, outcome) in &results {
            all_evaluated.insert(sig.clone(), outcome.clone());
        }

        let mut candidates = Vec::with_capacity(remaining.len());
        let mut best: Option<(String, f64)> = None;
        for v in &remaining {
            let mut vars = current.clone();
            vars.push(v.clone());
            let sig = model_signature(stage, &vars);
            let outcome = all_evaluated.get(&sig).expect("just inserted");
            match outcome {
                FitOutcome::Success(fit) => {
                    candidates.push(CandidateEval {
                        variable: v.clone(),
                        lml: Some(fit.lml),
                        error: None,
                    });
                    // strict improvement over the running best keeps the
                    // earliest variable on ties
                    let better = match &best {
                        None => true,
                        Some((_, b)) => fit.lml > b + LML_TIE_EPS,
                    };
                    if better {
                        best = Some((v.clone(), fit.lml));
                    }
                }
                FitOutcome::Failed(msg) => {
                    candidates.push(CandidateEval {
                        variable: v.clone(),
                        lml: None,
                        error: Some(msg.clone()),
                    });
                }
            }
        }

        if step_index == 1 && !remaining.is_empty() && best.is_none() {
            return Err(Error::AllCandidatesFailed);
        }

        match best {
            Some((v, lml)) if lml > current_lml + LML_TIE_EPS => {
                steps.push(SelectionStep {
                    step_index,
                    candidates,
                    chosen: Some(v.clone()),
                });
                current.push(v);
                current_lml = lml;
            }
            _ => {
                steps.push(SelectionStep { step_index, candidates, chosen: None });
                break;
            }
        }
    }

    Ok(SelectionTrace { stage, steps, final_model: current, all_evaluated, n_model_fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{
        simulate, Covariate, FallsPerFaller, Schema, SimulationConfig, StageAvailability,
        StageEffects,
    };

    fn schema(n_covs: usize) -> Schema {
        let covs = (0..n_covs)
            .map(|i| Covariate::continuous(&format!("x{}", i + 1), StageAvailability::Baseline))
            .collect();
        Schema::new(covs)
    }

    fn dataset(seed: u64, n: usize, effects: &[(&str, f64)], n_covs: usize) -> crate::datamodel::CohortDataset {
        let mut cfg = SimulationConfig {
            seed,
            n_patients: n,
            stage1: StageEffects { intercept: -0.2, coefficients: Default::default() },
            stage2: StageEffects::default(),
            sigma2: 0.0,
            falls_per_faller: FallsPerFaller::Fixed { k: 1 },
            covariates: Default::default(),
        };
        for (name, c) in effects {
            cfg.stage1.coefficients.insert(name.to_string(), *c);
        }
        simulate(&schema(n_covs), &cfg).unwrap()
    }

    #[test]
    fn signatures_are_order_insensitive_and_stage_prefixed() {
        let a = model_signature(Stage::Stage1, &["gait".into(), "fearful".into()]);
        let b = model_signature(Stage::Stage1, &["fearful".into(), "gait".into()]);
        assert_eq!(a, b);
        assert_eq!(model_signature(Stage::Stage1, &[]), "stage1:(intercept)");
        assert_ne!(
            model_signature(Stage::Stage1, &["gait".into()]),
            model_signature(Stage::Stage2, &["gait".into()])
        );
    }

    #[test]
    fn single_improving_variable_gives_two_steps() {
        let ds = dataset(101, 400, &[("x1", 1.5)], 1);
        let trace = forward_select(
            &ds,
            &["x1".to_string()],
            Stage::Stage1,
            &SelectionSettings::default(),
        )
        .unwrap();
        assert_eq!(trace.final_model, vec!["x1".to_string()]);
        assert_eq!(trace.steps.len(), 2);
        assert_eq!(trace.steps[0].chosen.as_deref(), Some("x1"));
        assert_eq!(trace.steps[1].chosen, None);
        assert!(trace.steps[1].candidates.is_empty());
        assert!(trace.all_evaluated.contains_key("stage1:(intercept)"));
    }

    #[test]
    fn fit_count_equals_distinct_signatures() {
        let ds = dataset(103, 300, &[("x1", 1.2), ("x2", -1.0)], 4);
        let pool: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
        let trace =
            forward_select(&ds, &pool, Stage::Stage1, &SelectionSettings::default()).unwrap();
        assert_eq!(trace.n_model_fits, trace.all_evaluated.len());
    }

    #[test]
    fn rerun_reproduces_the_trace_bitwise() {
        let ds = dataset(105, 250, &[("x1", 1.0)], 3);
        let pool: Vec<String> = (1..=3).map(|i| format!("x{i}")).collect();
        let a = forward_select(&ds, &pool, Stage::Stage1, &SelectionSettings::default()).unwrap();
        let b = forward_select(&ds, &pool, Stage::Stage1, &SelectionSettings::default()).unwrap();
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.steps.len(), b.steps.len());
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.chosen, sb.chosen);
            for (ca, cb) in sa.candidates.iter().zip(&sb.candidates) {
                match (ca.lml, cb.lml) {
                    (Some(x), Some(y)) => assert_eq!(x.to_bits(), y.to_bits()),
                    (None, None) => {}
                    _ => panic!("mismatched candidate outcomes"),
                }
            }
        }
    }

    #[test]
    fn removing_the_winner_promotes_the_runner_up() {
        let ds = dataset(107, 500, &[("x1", 1.4), ("x2", 0.9)], 4);
        let pool: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
        let trace =
            forward_select(&ds, &pool, Stage::Stage1, &SelectionSettings::default()).unwrap();
        let winner = trace.steps[0].chosen.clone().expect("should select something");

        // runner-up = best step-1 candidate other than the winner
        let runner_up = trace.steps[0]
            .candidates
            .iter()
            .filter(|c| c.variable != winner && c.lml.is_some())
            .max_by(|a, b| a.lml.unwrap().partial_cmp(&b.lml.unwrap()).unwrap())
            .map(|c| c.variable.clone())
            .expect("pool has more than one candidate");

        let reduced: Vec<String> = pool.iter().filter(|v| **v != winner).cloned().collect();
        let trace2 =
            forward_select(&ds, &reduced, Stage::Stage1, &SelectionSettings::default()).unwrap();
        assert_eq!(trace2.steps[0].chosen.as_deref(), Some(runner_up.as_str()));
    }

    #[test]
    fn pure_noise_pool_mostly_selects_nothing() {
        // small version of the Occam acceptance check
        let mut empty = 0;
        for seed in 0..10u64 {
            let ds = dataset(200 + seed, 200, &[], 3);
            let pool: Vec<String> = (1..=3).map(|i| format!("x{i}")).collect();
            let trace =
                forward_select(&ds, &pool, Stage::Stage1, &SelectionSettings::default()).unwrap();
            if trace.final_model.is_empty() {
                empty += 1;
            }
        }
        assert!(empty >= 6, "intercept-only selected in only {empty}/10 replicates");
    }

    #[test]
    fn stage_mismatch_and_unknown_variables_are_rejected() {
        let ds = dataset(109, 50, &[], 2);
        let err = forward_select(
            &ds,
            &["nope".to_string()],
            Stage::Stage1,
            &SelectionSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownVariable(_)));
    }
}
