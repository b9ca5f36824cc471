//! Cohort data schema, ingestion, encoding, and synthetic-data generation.
//!
//! A [`CohortDataset`] holds one record per patient with baseline covariates
//! and the binary `fell` outcome, plus one [`FallEvent`] per recorded fall
//! with per-fall covariates and the binary `injured` outcome. Datasets are
//! immutable after load and safe to share across threads.

mod csv_io;
mod encode;
mod schema;
mod simulate;
mod summary;

pub use csv_io::{load_csv, write_csv};
pub use encode::{encode, encode_aligned, encoded_columns, DesignMatrix, Stage, Standardization};
pub use schema::{Covariate, CovariateKind, Schema, StageAvailability};
pub use simulate::{
    simulate, FallsPerFaller, MarginalDistribution, SimulationConfig, StageEffects,
};
pub use summary::{summarize, LevelSummary, NumericSummary, SummaryReport, VariableSummary};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A covariate value: numeric for continuous/binary variables, a level
/// label for categorical/ordinal ones.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Level(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub baseline: BTreeMap<String, Value>,
    /// Stage-1 outcome: 1 iff the patient has at least one recorded fall.
    pub fell: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallTimeCategory {
    Morning,
    Afternoon,
    Night,
}

impl FallTimeCategory {
    pub const LEVELS: [&'static str; 3] = ["MORNING", "AFTERNOON", "NIGHT"];

    pub fn as_str(&self) -> &'static str {
        match self {
            FallTimeCategory::Morning => "MORNING",
            FallTimeCategory::Afternoon => "AFTERNOON",
            FallTimeCategory::Night => "NIGHT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "MORNING" => Some(FallTimeCategory::Morning),
            "AFTERNOON" => Some(FallTimeCategory::Afternoon),
            "NIGHT" => Some(FallTimeCategory::Night),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Inside,
    Outside,
}

impl Location {
    pub const LEVELS: [&'static str; 2] = ["INSIDE", "OUTSIDE"];

    pub fn as_str(&self) -> &'static str {
        match self {
            Location::Inside => "INSIDE",
            Location::Outside => "OUTSIDE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "INSIDE" => Some(Location::Inside),
            "OUTSIDE" => Some(Location::Outside),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallEvent {
    pub patient_id: String,
    /// 1-based, contiguous per patient.
    pub fall_index: u32,
    /// Minutes since midnight, when recorded.
    pub fall_clock_time: Option<u32>,
    pub fall_time_category: FallTimeCategory,
    pub location: Location,
    pub glasses: Option<bool>,
    /// Stage-2 outcome.
    pub injured: bool,
}

/// Built-in per-fall field names that per-fall schema covariates may bind to.
pub const PER_FALL_FIELDS: [&str; 3] = ["fall_time_category", "location", "glasses"];

/// Map a clock time in minutes to its fall-time interval. The partition is
/// half-open on the left: MORNING `[06:00, 12:00)`, AFTERNOON
/// `[12:00, 21:00)`, NIGHT otherwise.
pub fn bucket_fall_time(minutes: u32) -> Result<FallTimeCategory> {
    if minutes > 1439 {
        return Err(Error::OutOfRange(minutes));
    }
    Ok(if (360..720).contains(&minutes) {
        FallTimeCategory::Morning
    } else if (720..1260).contains(&minutes) {
        FallTimeCategory::Afternoon
    } else {
        FallTimeCategory::Night
    })
}

#[derive(Debug, Clone)]
pub struct CohortDataset {
    pub schema: Schema,
    pub patients: Vec<PatientRecord>,
    pub falls: Vec<FallEvent>,
}

impl CohortDataset {
    /// Check every dataset invariant: unique patient ids, fell flags
    /// consistent with fall records, fall indices contiguous from 1, no
    /// orphan falls, clock times consistent with their category, and all
    /// declared baseline covariates present on every patient.
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::DuplicatePatient(p.patient_id.clone()));
            }
            for cov in self.schema.baseline() {
                match p.baseline.get(&cov.name) {
                    None => {
                        return Err(Error::MissingValue {
                            file: "patients".into(),
                            row: 0,
                            column: cov.name.clone(),
                        })
                    }
                    Some(v) => cov.check_value(v, "patients", 0)?,
                }
            }
        }
        let mut per_patient: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for (row, f) in self.falls.iter().enumerate() {
            if !seen.contains(f.patient_id.as_str()) {
                return Err(Error::OrphanFallEvent { row: row + 2, patient_id: f.patient_id.clone() });
            }
            if let Some(minutes) = f.fall_clock_time {
                let expected = bucket_fall_time(minutes)?;
                if expected != f.fall_time_category {
                    return Err(Error::InconsistentFallTime {
                        row: row + 2,
                        minutes,
                        expected: expected.as_str().into(),
                        actual: f.fall_time_category.as_str().into(),
                    });
                }
            }
            per_patient.entry(f.patient_id.as_str()).or_default().push(f.fall_index);
        }
        for p in &self.patients {
            let n_falls = per_patient.get(p.patient_id.as_str()).map_or(0, |v| v.len());
            if p.fell != (n_falls > 0) {
                return Err(Error::InconsistentFellFlag {
                    patient_id: p.patient_id.clone(),
                    flag: p.fell as u8,
                    n_falls,
                });
            }
        }
        for (id, mut idx) in per_patient {
            idx.sort_unstable();
            if idx.iter().enumerate().any(|(i, &v)| v != (i + 1) as u32) {
                return Err(Error::NonContiguousFallIndex { patient_id: id.to_string() });
            }
        }
        Ok(())
    }

    pub fn n_fallers(&self) -> usize {
        self.patients.iter().filter(|p| p.fell).count()
    }

    pub fn n_injurious_falls(&self) -> usize {
        self.falls.iter().filter(|f| f.injured).count()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    /// Patient ids with at least one fall, in dataset order. This is the
    /// random-intercept ordering used by Stage-2 designs.
    pub fn faller_ids(&self) -> Vec<String> {
        self.patients.iter().filter(|p| p.fell).map(|p| p.patient_id.clone()).collect()
    }

    /// Stage-1 outcome vector, one entry per patient in dataset order.
    pub fn stage1_outcome(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.patients.len(),
            self.patients.iter().map(|p| p.fell as u8 as f64),
        )
    }

    /// Stage-2 outcome vector, one entry per fall in dataset order.
    pub fn stage2_outcome(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.falls.len(),
            self.falls.iter().map(|f| f.injured as u8 as f64),
        )
    }

    /// Drop one patient (and their falls), preserving order. Fall indices
    /// of other patients are untouched.
    pub fn without_patient(&self, id: &str) -> CohortDataset {
        CohortDataset {
            schema: self.schema.clone(),
            patients: self.patients.iter().filter(|p| p.patient_id != id).cloned().collect(),
            falls: self.falls.iter().filter(|f| f.patient_id != id).cloned().collect(),
        }
    }

    /// Drop a single fall, reindexing the remaining falls of that patient
    /// so indices stay contiguous; the patient's fell flag is refreshed.
    pub fn without_fall(&self, patient_id: &str, fall_index: u32) -> CohortDataset {
        let mut falls: Vec<FallEvent> = Vec::with_capacity(self.falls.len().saturating_sub(1));
        for f in &self.falls {
            if f.patient_id == patient_id && f.fall_index == fall_index {
                continue;
            }
            let mut f = f.clone();
            if f.patient_id == patient_id && f.fall_index > fall_index {
                f.fall_index -= 1;
            }
            falls.push(f);
        }
        let still_falls = falls.iter().any(|f| f.patient_id == patient_id);
        let patients = self
            .patients
            .iter()
            .map(|p| {
                let mut p = p.clone();
                if p.patient_id == patient_id {
                    p.fell = still_falls;
                }
                p
            })
            .collect();
        CohortDataset { schema: self.schema.clone(), patients, falls }
    }
}
