//! Regenerates the bundled example cohort under `data/`.
//!
//! The cohort is synthetic but pinned to the marginal structure the rest
//! of the test suite expects: 99 patients, 55 fallers (20 of them with a
//! single fall), 335 falls, 84 of them injurious. Run manually after any
//! schema change:
//!
//! ```bash
//! cargo test -p bayeslogit --test fixtures -- --ignored
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use bayeslogit::datamodel::{
    bucket_fall_time, write_csv, CohortDataset, Covariate, FallEvent, FallTimeCategory, Location,
    PatientRecord, Schema, StageAvailability, Value,
};
use bayeslogit::glm::sigmoid;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn example_schema() -> Schema {
    Schema::new(vec![
        Covariate::continuous("age", StageAvailability::Baseline),
        Covariate::continuous("tinetti_balance", StageAvailability::Baseline),
        Covariate::continuous("tinetti_gait", StageAvailability::Baseline),
        Covariate::continuous("functional_reach", StageAvailability::Baseline),
        Covariate::continuous("tug", StageAvailability::Baseline),
        Covariate::binary("previous_falls", StageAvailability::Baseline),
        Covariate::continuous("sf36_physical_functioning", StageAvailability::Baseline),
        Covariate::continuous("sf36_physical_health", StageAvailability::Baseline),
        Covariate::continuous("sf36_bodily_pain", StageAvailability::Baseline),
        Covariate::continuous("sf36_general_health", StageAvailability::Baseline),
        Covariate::continuous("sf36_vitality", StageAvailability::Baseline),
        Covariate::continuous("sf36_social_functioning", StageAvailability::Baseline),
        Covariate::continuous("sf36_emotional_problems", StageAvailability::Baseline),
        Covariate::continuous("sf36_mental_health", StageAvailability::Baseline),
        Covariate::continuous("bdi", StageAvailability::Baseline),
        Covariate::continuous("bai", StageAvailability::Baseline),
        Covariate::categorical("gender", &["Male", "Female"], "Male", StageAvailability::Baseline),
        Covariate::categorical(
            "bmi",
            &["Normal", "Overweight", "Obese"],
            "Normal",
            StageAvailability::Baseline,
        ),
        Covariate::ordinal(
            "self_rated_balance",
            &["Excellent", "Very good", "Good", "Fair", "Poor"],
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            StageAvailability::Baseline,
        ),
        Covariate::ordinal(
            "fearful",
            &["Not at all", "Slightly", "Moderately", "Quite a bit", "Extremely"],
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            StageAvailability::Baseline,
        ),
        Covariate::categorical(
            "fall_time_category",
            &["MORNING", "AFTERNOON", "NIGHT"],
            "AFTERNOON",
            StageAvailability::PerFall,
        ),
        Covariate::categorical(
            "location",
            &["INSIDE", "OUTSIDE"],
            "OUTSIDE",
            StageAvailability::PerFall,
        ),
        Covariate::binary("glasses", StageAvailability::PerFall),
    ])
}

fn rounded(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn clipped_normal(rng: &mut ChaCha20Rng, mean: f64, sd: f64, lo: f64, hi: f64, decimals: i32) -> f64 {
    let d = Normal::new(mean, sd).unwrap();
    rounded(d.sample(rng).clamp(lo, hi), decimals)
}

/// Exact level counts, assigned in a deterministic shuffled order.
fn level_pool(rng: &mut ChaCha20Rng, counts: &[(&str, usize)]) -> Vec<String> {
    let mut pool: Vec<String> = counts
        .iter()
        .flat_map(|(level, n)| std::iter::repeat_n(level.to_string(), *n))
        .collect();
    pool.shuffle(rng);
    pool
}

/// Flip flags toward `target` count, moving the entries nearest the
/// decision boundary first.
fn force_count(flags: &mut [bool], probs: &[f64], target: usize) {
    loop {
        let current = flags.iter().filter(|f| **f).count();
        if current == target {
            return;
        }
        if current > target {
            let i = (0..flags.len())
                .filter(|&i| flags[i])
                .min_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap())
                .unwrap();
            flags[i] = false;
        } else {
            let i = (0..flags.len())
                .filter(|&i| !flags[i])
                .max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap())
                .unwrap();
            flags[i] = true;
        }
    }
}

fn build_cohort(schema: &Schema) -> CohortDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(20020312);
    let n = 99;

    let genders = level_pool(&mut rng, &[("Male", 43), ("Female", 56)]);
    let bmis = level_pool(&mut rng, &[("Normal", 44), ("Overweight", 34), ("Obese", 21)]);
    let balances = level_pool(
        &mut rng,
        &[("Excellent", 4), ("Very good", 28), ("Good", 35), ("Fair", 27), ("Poor", 5)],
    );
    let fearfuls = level_pool(
        &mut rng,
        &[("Not at all", 40), ("Slightly", 40), ("Moderately", 11), ("Quite a bit", 6), ("Extremely", 2)],
    );
    let mut prev_flags = vec![false; n];
    let prev_probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    force_count(&mut prev_flags, &prev_probs, 37);

    let mut patients = Vec::with_capacity(n);
    let mut fall_eta = Vec::with_capacity(n);
    for i in 0..n {
        let mut b: BTreeMap<String, Value> = BTreeMap::new();
        b.insert("age".into(), Value::Number(clipped_normal(&mut rng, 66.9, 8.5, 45.0, 90.0, 1)));
        b.insert(
            "tinetti_balance".into(),
            Value::Number(clipped_normal(&mut rng, 14.9, 1.4, 8.0, 16.0, 0)),
        );
        b.insert(
            "tinetti_gait".into(),
            Value::Number(clipped_normal(&mut rng, 10.6, 1.5, 4.0, 12.0, 0)),
        );
        b.insert(
            "functional_reach".into(),
            Value::Number(clipped_normal(&mut rng, 28.3, 6.0, 10.0, 45.0, 1)),
        );
        b.insert("tug".into(), Value::Number(clipped_normal(&mut rng, 11.5, 3.2, 5.0, 35.0, 1)));
        b.insert("previous_falls".into(), Value::Number(prev_flags[i] as u8 as f64));
        for (name, mean) in [
            ("sf36_physical_functioning", 73.4),
            ("sf36_physical_health", 58.8),
            ("sf36_bodily_pain", 74.5),
            ("sf36_general_health", 61.2),
            ("sf36_vitality", 57.8),
            ("sf36_social_functioning", 83.5),
            ("sf36_emotional_problems", 81.5),
            ("sf36_mental_health", 81.1),
        ] {
            b.insert(name.into(), Value::Number(clipped_normal(&mut rng, mean, 17.0, 0.0, 100.0, 0)));
        }
        b.insert("bdi".into(), Value::Number(clipped_normal(&mut rng, 6.1, 4.0, 0.0, 30.0, 0)));
        b.insert("bai".into(), Value::Number(clipped_normal(&mut rng, 6.8, 4.8, 0.0, 35.0, 0)));
        b.insert("gender".into(), Value::Level(genders[i].clone()));
        b.insert("bmi".into(), Value::Level(bmis[i].clone()));
        b.insert("self_rated_balance".into(), Value::Level(balances[i].clone()));
        b.insert("fearful".into(), Value::Level(fearfuls[i].clone()));

        let fearful_score = 1.0
            + ["Not at all", "Slightly", "Moderately", "Quite a bit", "Extremely"]
                .iter()
                .position(|l| *l == fearfuls[i])
                .unwrap() as f64;
        let gait = match b["tinetti_gait"] {
            Value::Number(x) => x,
            _ => unreachable!(),
        };
        let eta = -0.35 + 0.5 * (fearful_score - 1.9) - 0.28 * (gait - 10.6)
            + 1.0 * (prev_flags[i] as u8 as f64)
            - 0.55;
        fall_eta.push(eta);

        patients.push(PatientRecord {
            patient_id: format!("P{:03}", i + 1),
            baseline: b,
            fell: false,
        });
    }

    // draw the fall indicator from the logistic model, then pin 55 fallers
    let fall_probs: Vec<f64> = fall_eta.iter().map(|&e| sigmoid(e)).collect();
    let mut fell: Vec<bool> = fall_probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    force_count(&mut fell, &fall_probs, 55);
    for (p, &f) in patients.iter_mut().zip(&fell) {
        p.fell = f;
    }

    // falls per faller: 20 single fallers, 35 recurrent sharing 315 falls
    let faller_idx: Vec<usize> = (0..n).filter(|&i| fell[i]).collect();
    let mut order = faller_idx.clone();
    order.shuffle(&mut rng);
    let singles: std::collections::BTreeSet<usize> = order[..20].iter().cloned().collect();
    let recurrent: Vec<usize> = order[20..].to_vec();
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for &i in &singles {
        counts.insert(i, 1);
    }
    let mut remaining = 315i64;
    for (k, &i) in recurrent.iter().enumerate() {
        let left = (recurrent.len() - k - 1) as i64;
        // keep at least 2 for everyone still unassigned
        let draw = 2 + rng.random_range(0..14) as i64;
        let draw = draw.min(remaining - 2 * left).max(2);
        counts.insert(i, draw as u32);
        remaining -= draw;
    }
    // distribute any remainder over recurrent fallers deterministically
    let mut k = 0;
    while remaining > 0 {
        let i = recurrent[k % recurrent.len()];
        *counts.get_mut(&i).unwrap() += 1;
        remaining -= 1;
        k += 1;
    }

    // per-fall records with a morning-heavy time profile
    let mut falls = Vec::new();
    let mut injury_probs = Vec::new();
    for &i in &faller_idx {
        let patient_id = patients[i].patient_id.clone();
        let bmi_load = match &patients[i].baseline["bmi"] {
            Value::Level(l) if l == "Normal" => 0.0,
            Value::Level(l) if l == "Overweight" => 0.55,
            _ => 0.75,
        };
        for fall_index in 1..=counts[&i] {
            let u: f64 = rng.random();
            let category = if u < 0.46 {
                FallTimeCategory::Morning
            } else if u < 0.80 {
                FallTimeCategory::Afternoon
            } else {
                FallTimeCategory::Night
            };
            let minutes = match category {
                FallTimeCategory::Morning => rng.random_range(360..720),
                FallTimeCategory::Afternoon => rng.random_range(720..1260),
                FallTimeCategory::Night => {
                    let off = rng.random_range(0..540);
                    if off < 180 {
                        1260 + off
                    } else {
                        off - 180
                    }
                }
            };
            debug_assert_eq!(bucket_fall_time(minutes).unwrap(), category);
            // a small share of diaries record only the interval
            let clock = if rng.random::<f64>() < 0.92 { Some(minutes) } else { None };
            let location =
                if rng.random::<f64>() < 0.44 { Location::Outside } else { Location::Inside };
            let glasses = Some(rng.random::<f64>() < 0.55);

            let base = match category {
                FallTimeCategory::Morning => -1.85,
                FallTimeCategory::Afternoon => -0.75,
                FallTimeCategory::Night => -0.95,
            };
            let eta = base
                + if location == Location::Outside { 0.45 } else { 0.0 }
                + bmi_load;
            let p = sigmoid(eta);
            injury_probs.push(p);
            falls.push(FallEvent {
                patient_id: patient_id.clone(),
                fall_index,
                fall_clock_time: clock,
                fall_time_category: category,
                location,
                glasses,
                injured: rng.random::<f64>() < p,
            });
        }
    }
    let mut injured: Vec<bool> = falls.iter().map(|f| f.injured).collect();
    force_count(&mut injured, &injury_probs, 84);
    for (f, &inj) in falls.iter_mut().zip(&injured) {
        f.injured = inj;
    }

    let dataset = CohortDataset { schema: schema.clone(), patients, falls };
    dataset.validate().expect("generated cohort is valid");
    dataset
}

#[test]
#[ignore = "regenerates the committed data/ fixtures"]
fn regenerate_example_cohort() {
    let schema = example_schema();
    let dir = data_dir();
    std::fs::create_dir_all(&dir).unwrap();

    let ds = build_cohort(&schema);
    assert_eq!(ds.patients.len(), 99);
    assert_eq!(ds.n_fallers(), 55);
    assert_eq!(ds.falls.len(), 335);
    assert_eq!(ds.n_injurious_falls(), 84);
    let singles = ds
        .patients
        .iter()
        .filter(|p| ds.falls.iter().filter(|f| f.patient_id == p.patient_id).count() == 1)
        .count();
    assert_eq!(singles, 20);

    std::fs::write(dir.join("schema.json"), schema.to_json_string()).unwrap();
    write_csv(&ds, &dir.join("patients.csv"), &dir.join("falls.csv")).unwrap();
    eprintln!("wrote {}", dir.display());
}
