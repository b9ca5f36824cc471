//! CSV ingestion and emission.
//!
//! `patients.csv` carries `patient_id`, one column per baseline covariate,
//! and `fell` (0/1). `falls.csv` carries `patient_id, fall_index,
//! fall_clock_time, fall_time_category, location, glasses, injured` with
//! clock times as `HH:MM` (possibly empty). Row numbers in error messages
//! are 1-based file lines including the header.

use std::collections::BTreeMap;
use std::path::Path;

use super::schema::{CovariateKind, Schema};
use super::{
    bucket_fall_time, CohortDataset, FallEvent, FallTimeCategory, Location, PatientRecord, Value,
};
use crate::error::{Error, Result};

const FALLS_COLUMNS: [&str; 7] = [
    "patient_id",
    "fall_index",
    "fall_clock_time",
    "fall_time_category",
    "location",
    "glasses",
    "injured",
];

/// Load and validate a cohort. The `fell` indicator is cross-checked
/// against the falls file; any mismatch is an error.
pub fn load_csv(patients_path: &Path, falls_path: &Path, schema: &Schema) -> Result<CohortDataset> {
    schema.validate()?;
    let patients = load_patients(patients_path, schema)?;
    let falls = load_falls(falls_path)?;
    let dataset = CohortDataset { schema: schema.clone(), patients, falls };
    dataset.validate()?;
    Ok(dataset)
}

fn load_patients(path: &Path, schema: &Schema) -> Result<Vec<PatientRecord>> {
    let file = "patients";
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            file: file.into(),
            column: name.into(),
        })
    };
    let id_col = col("patient_id")?;
    let fell_col = col("fell")?;
    let mut cov_cols = Vec::new();
    for cov in schema.baseline() {
        cov_cols.push((cov, col(&cov.name)?));
    }
    for h in &headers {
        let known = h == "patient_id" || h == "fell" || schema.baseline().any(|c| &c.name == h);
        if !known {
            return Err(Error::InvalidSchema(format!(
                "unexpected column `{h}` in patients file"
            )));
        }
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let get = |idx: usize| record.get(idx).unwrap_or("");
        let patient_id = get(id_col).to_string();
        if patient_id.is_empty() {
            return Err(Error::MissingValue { file: file.into(), row, column: "patient_id".into() });
        }
        let fell = parse_binary(get(fell_col), file, row, "fell")? == 1.0;

        let mut baseline = BTreeMap::new();
        for (cov, idx) in &cov_cols {
            let raw = get(*idx);
            if raw.is_empty() {
                return Err(Error::MissingValue {
                    file: file.into(),
                    row,
                    column: cov.name.clone(),
                });
            }
            let value = match &cov.kind {
                CovariateKind::Continuous => Value::Number(parse_number(raw, file, row, &cov.name)?),
                CovariateKind::Binary => Value::Number(parse_binary(raw, file, row, &cov.name)?),
                CovariateKind::Categorical { .. } | CovariateKind::Ordinal { .. } => {
                    Value::Level(raw.to_string())
                }
            };
            cov.check_value(&value, file, row)?;
            baseline.insert(cov.name.clone(), value);
        }
        out.push(PatientRecord { patient_id, baseline, fell });
    }
    Ok(out)
}

fn load_falls(path: &Path) -> Result<Vec<FallEvent>> {
    let file = "falls";
    // An empty falls file (no header at all) is a valid zero-fall cohort.
    if std::fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let mut cols = BTreeMap::new();
    for name in FALLS_COLUMNS {
        let idx = headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            file: file.into(),
            column: name.into(),
        })?;
        cols.insert(name, idx);
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let get = |name: &str| record.get(cols[name]).unwrap_or("");

        let patient_id = get("patient_id").to_string();
        if patient_id.is_empty() {
            return Err(Error::MissingValue { file: file.into(), row, column: "patient_id".into() });
        }
        let fall_index: u32 = get("fall_index").parse().map_err(|_| Error::BadValue {
            file: file.into(),
            row,
            column: "fall_index".into(),
            value: get("fall_index").into(),
            reason: "expected a positive integer".into(),
        })?;

        let clock_raw = get("fall_clock_time");
        let fall_clock_time = if clock_raw.is_empty() {
            None
        } else {
            Some(parse_clock(clock_raw, file, row)?)
        };

        let cat_raw = get("fall_time_category");
        let fall_time_category = match (cat_raw.is_empty(), fall_clock_time) {
            (true, Some(minutes)) => bucket_fall_time(minutes)?,
            (true, None) => {
                return Err(Error::MissingValue {
                    file: file.into(),
                    row,
                    column: "fall_time_category".into(),
                })
            }
            (false, _) => {
                let cat = FallTimeCategory::parse(cat_raw).ok_or_else(|| {
                    Error::UnknownCategoryLevel {
                        file: file.into(),
                        row,
                        variable: "fall_time_category".into(),
                        level: cat_raw.into(),
                    }
                })?;
                if let Some(minutes) = fall_clock_time {
                    let expected = bucket_fall_time(minutes)?;
                    if expected != cat {
                        return Err(Error::InconsistentFallTime {
                            row,
                            minutes,
                            expected: expected.as_str().into(),
                            actual: cat.as_str().into(),
                        });
                    }
                }
                cat
            }
        };

        let loc_raw = get("location");
        if loc_raw.is_empty() {
            return Err(Error::MissingValue { file: file.into(), row, column: "location".into() });
        }
        let location = Location::parse(loc_raw).ok_or_else(|| Error::UnknownCategoryLevel {
            file: file.into(),
            row,
            variable: "location".into(),
            level: loc_raw.into(),
        })?;

        let glasses_raw = get("glasses");
        let glasses = if glasses_raw.is_empty() {
            None
        } else {
            Some(parse_binary(glasses_raw, file, row, "glasses")? == 1.0)
        };

        let injured = parse_binary(get("injured"), file, row, "injured")? == 1.0;

        out.push(FallEvent {
            patient_id,
            fall_index,
            fall_clock_time,
            fall_time_category,
            location,
            glasses,
            injured,
        });
    }
    Ok(out)
}

fn parse_number(raw: &str, file: &str, row: usize, column: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| Error::BadValue {
        file: file.into(),
        row,
        column: column.into(),
        value: raw.into(),
        reason: "expected a number".into(),
    })
}

fn parse_binary(raw: &str, file: &str, row: usize, column: &str) -> Result<f64> {
    match raw {
        "0" => Ok(0.0),
        "1" => Ok(1.0),
        "" => Err(Error::MissingValue { file: file.into(), row, column: column.into() }),
        other => Err(Error::BadValue {
            file: file.into(),
            row,
            column: column.into(),
            value: other.into(),
            reason: "expected 0 or 1".into(),
        }),
    }
}

fn parse_clock(raw: &str, file: &str, row: usize) -> Result<u32> {
    let bad = || Error::BadValue {
        file: file.into(),
        row,
        column: "fall_clock_time".into(),
        value: raw.into(),
        reason: "expected HH:MM".into(),
    };
    let (h, m) = raw.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if h > 23 || m > 59 {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

fn format_clock(minutes: u32) -> String {
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

fn format_value(value: &Value) -> String {
    match value {
        Value::Number(x) => format!("{x}"),
        Value::Level(l) => l.clone(),
    }
}

/// Write a dataset back out in the same layout `load_csv` reads; loading
/// the result reproduces the dataset record for record.
pub fn write_csv(dataset: &CohortDataset, patients_path: &Path, falls_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(patients_path)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(dataset.schema.baseline().map(|c| c.name.clone()));
    header.push("fell".into());
    w.write_record(&header)?;
    for p in &dataset.patients {
        let mut rec = vec![p.patient_id.clone()];
        for cov in dataset.schema.baseline() {
            rec.push(p.baseline.get(&cov.name).map(format_value).unwrap_or_default());
        }
        rec.push((p.fell as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(falls_path)?;
    w.write_record(FALLS_COLUMNS)?;
    for f in &dataset.falls {
        w.write_record(&[
            f.patient_id.clone(),
            f.fall_index.to_string(),
            f.fall_clock_time.map(format_clock).unwrap_or_default(),
            f.fall_time_category.as_str().to_string(),
            f.location.as_str().to_string(),
            f.glasses.map(|g| (g as u8).to_string()).unwrap_or_default(),
            (f.injured as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Covariate, StageAvailability};

    fn tiny_schema() -> Schema {
        Schema::new(vec![
            Covariate::continuous("age", StageAvailability::Baseline),
            Covariate::categorical(
                "bmi",
                &["Normal", "Overweight", "Obese"],
                "Normal",
                StageAvailability::Baseline,
            ),
            Covariate::categorical(
                "fall_time_category",
                &["MORNING", "AFTERNOON", "NIGHT"],
                "AFTERNOON",
                StageAvailability::PerFall,
            ),
        ])
    }

    fn write_files(patients: &str, falls: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patients.csv");
        let f = dir.path().join("falls.csv");
        std::fs::write(&p, patients).unwrap();
        std::fs::write(&f, falls).unwrap();
        (dir, p, f)
    }

    #[test]
    fn loads_a_small_cohort() {
        let (_d, p, f) = write_files(
            "patient_id,age,bmi,fell\nA,70.5,Normal,1\nB,64,Obese,0\n",
            "patient_id,fall_index,fall_clock_time,fall_time_category,location,glasses,injured\n\
             A,1,13:00,,OUTSIDE,1,1\nA,2,,NIGHT,INSIDE,,0\n",
        );
        let ds = load_csv(&p, &f, &tiny_schema()).unwrap();
        assert_eq!(ds.patients.len(), 2);
        assert_eq!(ds.falls.len(), 2);
        // category derived from 13:00
        assert_eq!(ds.falls[0].fall_time_category, FallTimeCategory::Afternoon);
        assert_eq!(ds.falls[0].fall_clock_time, Some(780));
        assert_eq!(ds.falls[1].glasses, None);
        assert!(ds.patients[0].fell && !ds.patients[1].fell);
    }

    #[test]
    fn empty_falls_file_gives_zero_events() {
        let (_d, p, f) = write_files("patient_id,age,bmi,fell\nA,70,Normal,0\n", "");
        let ds = load_csv(&p, &f, &tiny_schema()).unwrap();
        assert!(ds.falls.is_empty());
        assert_eq!(ds.n_fallers(), 0);
    }

    #[test]
    fn orphan_fall_is_rejected() {
        let (_d, p, f) = write_files(
            "patient_id,age,bmi,fell\nA,70,Normal,0\n",
            "patient_id,fall_index,fall_clock_time,fall_time_category,location,glasses,injured\n\
             ZZZ,1,,NIGHT,INSIDE,,0\n",
        );
        let err = load_csv(&p, &f, &tiny_schema()).unwrap_err();
        assert!(matches!(err, Error::OrphanFallEvent { row: 2, .. }), "{err}");
    }

    #[test]
    fn inconsistent_fell_flag_is_rejected() {
        let (_d, p, f) = write_files(
            "patient_id,age,bmi,fell\nA,70,Normal,0\n",
            "patient_id,fall_index,fall_clock_time,fall_time_category,location,glasses,injured\n\
             A,1,,NIGHT,INSIDE,,0\n",
        );
        assert!(matches!(
            load_csv(&p, &f, &tiny_schema()),
            Err(Error::InconsistentFellFlag { .. })
        ));
    }

    #[test]
    fn missing_value_and_unknown_level_are_rejected() {
        let (_d, p, f) = write_files("patient_id,age,bmi,fell\nA,,Normal,0\n", "");
        assert!(matches!(
            load_csv(&p, &f, &tiny_schema()),
            Err(Error::MissingValue { row: 2, .. })
        ));

        let (_d2, p2, f2) = write_files("patient_id,age,bmi,fell\nA,70,Slim,0\n", "");
        assert!(matches!(
            load_csv(&p2, &f2, &tiny_schema()),
            Err(Error::UnknownCategoryLevel { .. })
        ));
    }

    #[test]
    fn clock_category_mismatch_is_rejected() {
        let (_d, p, f) = write_files(
            "patient_id,age,bmi,fell\nA,70,Normal,1\n",
            "patient_id,fall_index,fall_clock_time,fall_time_category,location,glasses,injured\n\
             A,1,13:00,MORNING,INSIDE,,0\n",
        );
        assert!(matches!(
            load_csv(&p, &f, &tiny_schema()),
            Err(Error::InconsistentFallTime { .. })
        ));
    }

    #[test]
    fn csv_round_trip_reproduces_the_dataset() {
        let (_d, p, f) = write_files(
            "patient_id,age,bmi,fell\nA,70.25,Normal,1\nB,64,Obese,0\n",
            "patient_id,fall_index,fall_clock_time,fall_time_category,location,glasses,injured\n\
             A,1,06:00,,OUTSIDE,1,1\nA,2,,NIGHT,INSIDE,,0\n",
        );
        let schema = tiny_schema();
        let ds = load_csv(&p, &f, &schema).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p2 = dir.path().join("p.csv");
        let f2 = dir.path().join("f.csv");
        write_csv(&ds, &p2, &f2).unwrap();
        let ds2 = load_csv(&p2, &f2, &schema).unwrap();
        assert_eq!(ds.patients, ds2.patients);
        assert_eq!(ds.falls, ds2.falls);
    }
}
