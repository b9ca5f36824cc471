//! Descriptive summaries: per-variable means or level counts split by the
//! fall outcome (patient counts) and the injury outcome (fall counts).

use serde::Serialize;

use super::schema::CovariateKind;
use super::{CohortDataset, StageAvailability, Value};

#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    pub n_patients: usize,
    pub n_fallers: usize,
    pub n_falls: usize,
    pub n_injurious_falls: usize,
    pub injurious_fraction: Option<f64>,
    pub variables: Vec<VariableSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub stage: String,
    #[serde(flatten)]
    pub detail: Detail,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Detail {
    Numeric(NumericSummary),
    Levels { levels: Vec<LevelSummary> },
}

/// Means over patients (overall and by fall status) and over falls (by
/// injury status, with the patient's baseline value repeated per fall).
/// `None` marks a vacuous group.
#[derive(Debug, Clone, Serialize)]
pub struct NumericSummary {
    pub mean_all: Option<f64>,
    pub mean_fallers: Option<f64>,
    pub mean_non_fallers: Option<f64>,
    pub mean_injured_falls: Option<f64>,
    pub mean_non_injured_falls: Option<f64>,
}

/// Counts for one level. Patient columns apply to baseline variables,
/// fall columns to both; percentages are within-level row shares for the
/// splits and within-variable column shares for the totals.
#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: String,
    pub n_patients: Option<usize>,
    pub pct_patients: Option<f64>,
    pub n_fallers: Option<usize>,
    pub pct_fallers: Option<f64>,
    pub n_falls: Option<usize>,
    pub n_injured_falls: Option<usize>,
    pub pct_injured_falls: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn numeric_value(v: &Value) -> Option<f64> {
    match v {
        Value::Number(x) => Some(*x),
        Value::Level(_) => None,
    }
}

pub fn summarize(dataset: &CohortDataset) -> SummaryReport {
    let n_patients = dataset.patients.len();
    let n_fallers = dataset.n_fallers();
    let n_falls = dataset.falls.len();
    let n_injurious = dataset.n_injurious_falls();

    let mut variables = Vec::new();
    for cov in &dataset.schema.covariates {
        let is_baseline = cov.stage == StageAvailability::Baseline;

        // per-observation (level-or-number, fell, fall rows with injury flags)
        let patient_values: Vec<(&Value, bool)> = if is_baseline {
            dataset
                .patients
                .iter()
                .filter_map(|p| p.baseline.get(&cov.name).map(|v| (v, p.fell)))
                .collect()
        } else {
            Vec::new()
        };
        let fall_values: Vec<(Value, bool)> = dataset
            .falls
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                let value = if is_baseline {
                    dataset.patient(&f.patient_id)?.baseline.get(&cov.name).cloned()?
                } else {
                    super::encode::encode_fall_value_for_summary(f, &cov.name, i + 1)?
                };
                Some((value, f.injured))
            })
            .collect();

        let detail = match &cov.kind {
            CovariateKind::Continuous => {
                let all: Vec<f64> =
                    patient_values.iter().filter_map(|(v, _)| numeric_value(v)).collect();
                let fallers: Vec<f64> = patient_values
                    .iter()
                    .filter(|(_, fell)| *fell)
                    .filter_map(|(v, _)| numeric_value(v))
                    .collect();
                let non_fallers: Vec<f64> = patient_values
                    .iter()
                    .filter(|(_, fell)| !*fell)
                    .filter_map(|(v, _)| numeric_value(v))
                    .collect();
                let injured: Vec<f64> = fall_values
                    .iter()
                    .filter(|(_, i)| *i)
                    .filter_map(|(v, _)| numeric_value(v))
                    .collect();
                let non_injured: Vec<f64> = fall_values
                    .iter()
                    .filter(|(_, i)| !*i)
                    .filter_map(|(v, _)| numeric_value(v))
                    .collect();
                Detail::Numeric(NumericSummary {
                    mean_all: mean(&all),
                    mean_fallers: mean(&fallers),
                    mean_non_fallers: mean(&non_fallers),
                    mean_injured_falls: mean(&injured),
                    mean_non_injured_falls: mean(&non_injured),
                })
            }
            _ => {
                let levels: Vec<String> = match cov.levels() {
                    Some(ls) => ls.to_vec(),
                    None => vec!["0".into(), "1".into()], // binary
                };
                let label = |v: &Value| -> String {
                    match v {
                        Value::Level(l) => l.clone(),
                        Value::Number(x) => format!("{}", *x as i64),
                    }
                };
                let rows = levels
                    .iter()
                    .map(|level| {
                        let (n_pat, n_fall_pat) = if is_baseline {
                            let in_level: Vec<&(&Value, bool)> = patient_values
                                .iter()
                                .filter(|(v, _)| &label(v) == level)
                                .collect();
                            let fell = in_level.iter().filter(|(_, f)| *f).count();
                            (Some(in_level.len()), Some(fell))
                        } else {
                            (None, None)
                        };
                        let in_level_falls: Vec<&(Value, bool)> =
                            fall_values.iter().filter(|(v, _)| &label(v) == level).collect();
                        let n_level_falls = in_level_falls.len();
                        let injured = in_level_falls.iter().filter(|(_, i)| *i).count();
                        LevelSummary {
                            level: level.clone(),
                            n_patients: n_pat,
                            pct_patients: n_pat.and_then(|n| {
                                (n_patients > 0).then(|| 100.0 * n as f64 / n_patients as f64)
                            }),
                            n_fallers: n_fall_pat,
                            pct_fallers: n_fall_pat.zip(n_pat).and_then(|(f, n)| {
                                (n > 0).then(|| 100.0 * f as f64 / n as f64)
                            }),
                            n_falls: (n_falls > 0).then_some(n_level_falls),
                            n_injured_falls: (n_falls > 0).then_some(injured),
                            pct_injured_falls: (n_level_falls > 0)
                                .then(|| 100.0 * injured as f64 / n_level_falls as f64),
                        }
                    })
                    .collect();
                Detail::Levels { levels: rows }
            }
        };

        variables.push(VariableSummary {
            name: cov.name.clone(),
            stage: cov.stage.to_string(),
            detail,
        });
    }

    SummaryReport {
        n_patients,
        n_fallers,
        n_falls,
        n_injurious_falls: n_injurious,
        injurious_fraction: (n_falls > 0).then(|| n_injurious as f64 / n_falls as f64),
        variables,
    }
}
