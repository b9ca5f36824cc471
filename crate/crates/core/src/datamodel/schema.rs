//! Covariate schema: declarations, JSON round trip, and value checking.

use serde::{Deserialize, Serialize};

use super::{FallTimeCategory, Location, Value, PER_FALL_FIELDS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String>, reference: String },
    /// Ordered levels mapped to strictly increasing numeric scores.
    Ordinal { levels: Vec<String>, scores: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageAvailability {
    Baseline,
    PerFall,
}

impl std::fmt::Display for StageAvailability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageAvailability::Baseline => "baseline",
            StageAvailability::PerFall => "per_fall",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
    pub stage: StageAvailability,
    /// Continuous only: standardize to mean 0, sd 1 at encode time.
    pub standardize: bool,
    /// Ordinal only: expand to dummy columns instead of the numeric score.
    pub dummy_code: bool,
}

impl Covariate {
    pub fn continuous(name: &str, stage: StageAvailability) -> Self {
        Covariate {
            name: name.into(),
            kind: CovariateKind::Continuous,
            stage,
            standardize: false,
            dummy_code: false,
        }
    }

    pub fn binary(name: &str, stage: StageAvailability) -> Self {
        Covariate {
            name: name.into(),
            kind: CovariateKind::Binary,
            stage,
            standardize: false,
            dummy_code: false,
        }
    }

    pub fn categorical(name: &str, levels: &[&str], reference: &str, stage: StageAvailability) -> Self {
        Covariate {
            name: name.into(),
            kind: CovariateKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                reference: reference.into(),
            },
            stage,
            standardize: false,
            dummy_code: false,
        }
    }

    pub fn ordinal(name: &str, levels: &[&str], scores: &[f64], stage: StageAvailability) -> Self {
        Covariate {
            name: name.into(),
            kind: CovariateKind::Ordinal {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                scores: scores.to_vec(),
            },
            stage,
            standardize: false,
            dummy_code: false,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            CovariateKind::Categorical { levels, .. } | CovariateKind::Ordinal { levels, .. } => {
                Some(levels)
            }
            _ => None,
        }
    }

    /// Validate a stored value against this covariate's kind.
    pub fn check_value(&self, value: &Value, file: &str, row: usize) -> Result<()> {
        match (&self.kind, value) {
            (CovariateKind::Continuous, Value::Number(x)) if x.is_finite() => Ok(()),
            (CovariateKind::Binary, Value::Number(x)) if *x == 0.0 || *x == 1.0 => Ok(()),
            (CovariateKind::Categorical { levels, .. }, Value::Level(l))
            | (CovariateKind::Ordinal { levels, .. }, Value::Level(l)) => {
                if levels.iter().any(|v| v == l) {
                    Ok(())
                } else {
                    Err(Error::UnknownCategoryLevel {
                        file: file.into(),
                        row,
                        variable: self.name.clone(),
                        level: l.clone(),
                    })
                }
            }
            _ => Err(Error::BadValue {
                file: file.into(),
                row,
                column: self.name.clone(),
                value: format!("{value:?}"),
                reason: "value does not match the declared covariate kind".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub covariates: Vec<Covariate>,
}

impl Schema {
    pub fn new(covariates: Vec<Covariate>) -> Self {
        Schema { covariates }
    }

    pub fn get(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// Position in declaration order; used for deterministic tie-breaking.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn baseline(&self) -> impl Iterator<Item = &Covariate> {
        self.covariates.iter().filter(|c| c.stage == StageAvailability::Baseline)
    }

    pub fn per_fall(&self) -> impl Iterator<Item = &Covariate> {
        self.covariates.iter().filter(|c| c.stage == StageAvailability::PerFall)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for cov in &self.covariates {
            if cov.name.is_empty() {
                return Err(Error::InvalidSchema("covariate with empty name".into()));
            }
            if !names.insert(cov.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate covariate `{}`", cov.name)));
            }
            match &cov.kind {
                CovariateKind::Categorical { levels, reference } => {
                    if levels.len() < 2 {
                        return Err(Error::InvalidSchema(format!(
                            "categorical `{}` needs at least 2 levels",
                            cov.name
                        )));
                    }
                    if !levels.contains(reference) {
                        return Err(Error::InvalidSchema(format!(
                            "reference level `{}` of `{}` is not among its levels",
                            reference, cov.name
                        )));
                    }
                    if has_duplicates(levels) {
                        return Err(Error::InvalidSchema(format!(
                            "duplicate levels in `{}`",
                            cov.name
                        )));
                    }
                }
                CovariateKind::Ordinal { levels, scores } => {
                    if levels.len() < 2 || scores.len() != levels.len() {
                        return Err(Error::InvalidSchema(format!(
                            "ordinal `{}` needs matching levels and scores",
                            cov.name
                        )));
                    }
                    if scores.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::InvalidSchema(format!(
                            "scores of `{}` must be strictly increasing",
                            cov.name
                        )));
                    }
                    if has_duplicates(levels) {
                        return Err(Error::InvalidSchema(format!(
                            "duplicate levels in `{}`",
                            cov.name
                        )));
                    }
                }
                _ => {}
            }
            if cov.standardize && !matches!(cov.kind, CovariateKind::Continuous) {
                return Err(Error::InvalidSchema(format!(
                    "`{}`: standardize applies to continuous covariates only",
                    cov.name
                )));
            }
            if cov.dummy_code && !matches!(cov.kind, CovariateKind::Ordinal { .. }) {
                return Err(Error::InvalidSchema(format!(
                    "`{}`: dummy coding applies to ordinal covariates only",
                    cov.name
                )));
            }
            if cov.stage == StageAvailability::PerFall {
                validate_per_fall(cov)?;
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Schema> {
        let raw: Vec<RawCovariate> = serde_json::from_str(s)?;
        let covariates = raw.into_iter().map(Covariate::try_from).collect::<Result<Vec<_>>>()?;
        let schema = Schema { covariates };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Schema> {
        Schema::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let raw: Vec<RawCovariate> = self.covariates.iter().map(RawCovariate::from).collect();
        serde_json::to_string_pretty(&raw).expect("schema serialization")
    }
}

fn has_duplicates(levels: &[String]) -> bool {
    let set: std::collections::BTreeSet<&str> = levels.iter().map(|s| s.as_str()).collect();
    set.len() != levels.len()
}

/// Per-fall covariates bind to the fixed fall-event fields; check name and
/// kind compatibility.
fn validate_per_fall(cov: &Covariate) -> Result<()> {
    match cov.name.as_str() {
        "fall_time_category" => match &cov.kind {
            CovariateKind::Categorical { levels, .. }
                if levels.iter().all(|l| FallTimeCategory::parse(l).is_some())
                    && levels.len() == 3 =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidSchema(
                "`fall_time_category` must be categorical over MORNING/AFTERNOON/NIGHT".into(),
            )),
        },
        "location" => match &cov.kind {
            CovariateKind::Categorical { levels, .. }
                if levels.iter().all(|l| Location::parse(l).is_some()) && levels.len() == 2 =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidSchema(
                "`location` must be categorical over INSIDE/OUTSIDE".into(),
            )),
        },
        "glasses" => match &cov.kind {
            CovariateKind::Binary => Ok(()),
            _ => Err(Error::InvalidSchema("`glasses` must be binary".into())),
        },
        other => Err(Error::InvalidSchema(format!(
            "per-fall covariate `{other}` does not match a fall-event field ({})",
            PER_FALL_FIELDS.join(", ")
        ))),
    }
}

/// JSON wire form: `{name, kind, levels?, reference?, scores?, stage, ...}`.
#[derive(Debug, Serialize, Deserialize)]
struct RawCovariate {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    stage: StageAvailability,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    standardize: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    dummy: bool,
}

impl TryFrom<RawCovariate> for Covariate {
    type Error = Error;

    fn try_from(raw: RawCovariate) -> Result<Covariate> {
        let kind = match raw.kind.as_str() {
            "continuous" => CovariateKind::Continuous,
            "binary" => CovariateKind::Binary,
            "categorical" => {
                let levels = raw.levels.ok_or_else(|| {
                    Error::InvalidSchema(format!("categorical `{}` needs `levels`", raw.name))
                })?;
                let reference = raw.reference.ok_or_else(|| {
                    Error::InvalidSchema(format!("categorical `{}` needs `reference`", raw.name))
                })?;
                CovariateKind::Categorical { levels, reference }
            }
            "ordinal" => {
                let levels = raw.levels.ok_or_else(|| {
                    Error::InvalidSchema(format!("ordinal `{}` needs `levels`", raw.name))
                })?;
                let scores = raw.scores.unwrap_or_else(|| {
                    (1..=levels.len()).map(|i| i as f64).collect()
                });
                CovariateKind::Ordinal { levels, scores }
            }
            other => {
                return Err(Error::InvalidSchema(format!(
                    "unknown covariate kind `{other}` for `{}`",
                    raw.name
                )))
            }
        };
        Ok(Covariate {
            name: raw.name,
            kind,
            stage: raw.stage,
            standardize: raw.standardize,
            dummy_code: raw.dummy,
        })
    }
}

impl From<&Covariate> for RawCovariate {
    fn from(cov: &Covariate) -> RawCovariate {
        let (kind, levels, reference, scores) = match &cov.kind {
            CovariateKind::Continuous => ("continuous", None, None, None),
            CovariateKind::Binary => ("binary", None, None, None),
            CovariateKind::Categorical { levels, reference } => {
                ("categorical", Some(levels.clone()), Some(reference.clone()), None)
            }
            CovariateKind::Ordinal { levels, scores } => {
                ("ordinal", Some(levels.clone()), None, Some(scores.clone()))
            }
        };
        RawCovariate {
            name: cov.name.clone(),
            kind: kind.into(),
            levels,
            reference,
            scores,
            stage: cov.stage,
            standardize: cov.standardize,
            dummy: cov.dummy_code,
        }
    }
}
