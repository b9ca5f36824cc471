//! Design-matrix construction.
//!
//! `encode` realizes a covariate subset as a numeric matrix with a leading
//! intercept column: one row per patient for Stage 1, one row per fall for
//! Stage 2 (baseline values repeated across a patient's falls). Categorical
//! variables expand to dummy columns against their reference level, ordinal
//! variables map to their numeric scores (or dummies when the schema says
//! so), and opt-in standardization of continuous columns is recorded so
//! coefficients can be mapped back to raw units.

use nalgebra::{DMatrix, DVector};

use super::schema::{Covariate, CovariateKind, StageAvailability};
use super::{CohortDataset, FallEvent, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn number(&self) -> u8 {
        match self {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage{}", self.number())
    }
}

/// Recorded `(x - mean) / sd` transform of a standardized column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub stage: Stage,
    pub matrix: DMatrix<f64>,
    /// First entry is always `(intercept)`.
    pub column_names: Vec<String>,
    pub row_ids: Vec<String>,
    /// Per-column standardization, `None` where not applied.
    pub transforms: Vec<Option<Standardization>>,
    /// Stage 2: random-intercept index of each row.
    pub row_patient: Vec<usize>,
    /// Stage 2: patient ids in random-intercept order.
    pub patients: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn linear_predictor(&self, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
        if coefficients.len() != self.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a {}-column design",
                coefficients.len(),
                self.n_cols()
            )));
        }
        Ok(&self.matrix * coefficients)
    }
}

/// Names of the design columns a covariate expands to.
pub fn encoded_columns(cov: &Covariate) -> Vec<String> {
    match &cov.kind {
        CovariateKind::Continuous | CovariateKind::Binary => vec![cov.name.clone()],
        CovariateKind::Categorical { levels, reference } => levels
            .iter()
            .filter(|l| *l != reference)
            .map(|l| format!("{}={}", cov.name, l))
            .collect(),
        CovariateKind::Ordinal { levels, .. } => {
            if cov.dummy_code {
                levels.iter().skip(1).map(|l| format!("{}={}", cov.name, l)).collect()
            } else {
                vec![cov.name.clone()]
            }
        }
    }
}

/// Numeric expansion of one observed value, aligned with `encoded_columns`.
pub fn encode_value(cov: &Covariate, value: &Value) -> Result<Vec<f64>> {
    cov.check_value(value, "dataset", 0)?;
    Ok(match (&cov.kind, value) {
        (CovariateKind::Continuous, Value::Number(x)) | (CovariateKind::Binary, Value::Number(x)) => {
            vec![*x]
        }
        (CovariateKind::Categorical { levels, reference }, Value::Level(l)) => levels
            .iter()
            .filter(|lv| *lv != reference)
            .map(|lv| (lv == l) as u8 as f64)
            .collect(),
        (CovariateKind::Ordinal { levels, scores }, Value::Level(l)) => {
            let pos = levels.iter().position(|lv| lv == l).expect("checked level");
            if cov.dummy_code {
                levels.iter().skip(1).map(|lv| (lv == l) as u8 as f64).collect()
            } else {
                vec![scores[pos]]
            }
        }
        _ => unreachable!("check_value enforces kind/value agreement"),
    })
}

/// Per-fall value for descriptive summaries; `None` when an optional field
/// is simply absent (summaries tolerate missingness, designs do not).
pub(crate) fn encode_fall_value_for_summary(fall: &FallEvent, name: &str, _row: usize) -> Option<Value> {
    match name {
        "fall_time_category" => Some(Value::Level(fall.fall_time_category.as_str().into())),
        "location" => Some(Value::Level(fall.location.as_str().into())),
        "glasses" => fall.glasses.map(|g| Value::Number(g as u8 as f64)),
        _ => None,
    }
}

fn fall_value(fall: &FallEvent, name: &str, row: usize) -> Result<Value> {
    match name {
        "fall_time_category" => Ok(Value::Level(fall.fall_time_category.as_str().into())),
        "location" => Ok(Value::Level(fall.location.as_str().into())),
        "glasses" => match fall.glasses {
            Some(g) => Ok(Value::Number(g as u8 as f64)),
            None => Err(Error::MissingValue {
                file: "falls".into(),
                row,
                column: "glasses".into(),
            }),
        },
        other => Err(Error::UnknownVariable(other.into())),
    }
}

/// Encode rows for prediction against an existing fit: the same columns,
/// with the training run's standardization applied instead of recomputed.
pub fn encode_aligned(
    dataset: &CohortDataset,
    subset: &[String],
    stage: Stage,
    transforms: &[Option<Standardization>],
) -> Result<DesignMatrix> {
    let mut design = encode_impl(dataset, subset, stage, false)?;
    if transforms.len() != design.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} transforms for a {}-column design",
            transforms.len(),
            design.n_cols()
        )));
    }
    for (c, t) in transforms.iter().enumerate() {
        if let Some(t) = t {
            for r in 0..design.n_rows() {
                design.matrix[(r, c)] = (design.matrix[(r, c)] - t.mean) / t.sd;
            }
        }
    }
    design.transforms = transforms.to_vec();
    Ok(design)
}

/// Build the design matrix for a covariate subset. The subset may be given
/// in any order and is realized in schema declaration order; an empty
/// subset yields the intercept-only matrix.
pub fn encode(dataset: &CohortDataset, subset: &[String], stage: Stage) -> Result<DesignMatrix> {
    encode_impl(dataset, subset, stage, true)
}

fn encode_impl(
    dataset: &CohortDataset,
    subset: &[String],
    stage: Stage,
    standardize: bool,
) -> Result<DesignMatrix> {
    let schema = &dataset.schema;
    let mut chosen: Vec<&Covariate> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for name in subset {
        let cov = schema.get(name).ok_or_else(|| Error::UnknownVariable(name.clone()))?;
        if cov.stage == StageAvailability::PerFall && stage == Stage::Stage1 {
            return Err(Error::StageMismatch {
                variable: name.clone(),
                availability: "per-fall".into(),
                stage: 1,
            });
        }
        seen.insert(name.as_str());
    }
    for cov in &schema.covariates {
        if seen.contains(cov.name.as_str()) {
            chosen.push(cov);
        }
    }

    let mut column_names = vec!["(intercept)".to_string()];
    for cov in &chosen {
        column_names.extend(encoded_columns(cov));
    }
    let n_cols = column_names.len();

    let (n_rows, row_ids, row_patient, patients) = match stage {
        Stage::Stage1 => {
            let ids = dataset.patients.iter().map(|p| p.patient_id.clone()).collect();
            (dataset.patients.len(), ids, Vec::new(), Vec::new())
        }
        Stage::Stage2 => {
            let patients = dataset.faller_ids();
            let index: std::collections::BTreeMap<&str, usize> =
                patients.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            let mut row_patient = Vec::with_capacity(dataset.falls.len());
            let mut ids = Vec::with_capacity(dataset.falls.len());
            for f in &dataset.falls {
                let &p = index.get(f.patient_id.as_str()).ok_or_else(|| {
                    Error::OrphanFallEvent { row: 0, patient_id: f.patient_id.clone() }
                })?;
                row_patient.push(p);
                ids.push(format!("{}#{}", f.patient_id, f.fall_index));
            }
            (dataset.falls.len(), ids, row_patient, patients)
        }
    };

    let mut matrix = DMatrix::zeros(n_rows, n_cols);
    for r in 0..n_rows {
        matrix[(r, 0)] = 1.0;
        let mut c = 1;
        for cov in &chosen {
            let value = match stage {
                Stage::Stage1 => dataset.patients[r]
                    .baseline
                    .get(&cov.name)
                    .cloned()
                    .ok_or_else(|| Error::MissingValue {
                        file: "patients".into(),
                        row: r + 1,
                        column: cov.name.clone(),
                    })?,
                Stage::Stage2 => {
                    let fall = &dataset.falls[r];
                    if cov.stage == StageAvailability::Baseline {
                        dataset
                            .patient(&fall.patient_id)
                            .and_then(|p| p.baseline.get(&cov.name).cloned())
                            .ok_or_else(|| Error::MissingValue {
                                file: "patients".into(),
                                row: r + 1,
                                column: cov.name.clone(),
                            })?
                    } else {
                        fall_value(fall, &cov.name, r + 1)?
                    }
                }
            };
            for x in encode_value(cov, &value)? {
                matrix[(r, c)] = x;
                c += 1;
            }
        }
    }

    // opt-in standardization of continuous columns
    let mut transforms: Vec<Option<Standardization>> = vec![None; n_cols];
    let mut c = 1;
    for cov in &chosen {
        let width = encoded_columns(cov).len();
        if standardize && cov.standardize && n_rows >= 2 {
            let col = matrix.column(c);
            let mean = col.sum() / n_rows as f64;
            let ss: f64 = col.iter().map(|x| (x - mean).powi(2)).sum();
            let sd = (ss / (n_rows - 1) as f64).sqrt();
            let sd = if sd > 1e-12 { sd } else { 1.0 };
            for r in 0..n_rows {
                matrix[(r, c)] = (matrix[(r, c)] - mean) / sd;
            }
            transforms[c] = Some(Standardization { mean, sd });
        }
        c += width;
    }

    Ok(DesignMatrix { stage, matrix, column_names, row_ids, transforms, row_patient, patients })
}
