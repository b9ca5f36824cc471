//! Synthetic cohort generation from the two-stage generative model.
//!
//! Baseline covariates are drawn from declared marginal distributions
//! (defaults: standard normal, Bernoulli(½), or uniform over levels), the
//! fall indicator from the Stage-1 logistic model, and per-fall injury
//! outcomes from the Stage-2 model with a patient random intercept
//! `ε_i ~ N(0, σ²)`. Everything is drawn from a single seeded generator in
//! a fixed order, so output is bit-reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encode::{encode_value, encoded_columns};
use super::schema::{Covariate, CovariateKind, Schema, StageAvailability};
use super::{
    bucket_fall_time, CohortDataset, FallEvent, FallTimeCategory, Location, PatientRecord, Value,
};
use crate::error::{Error, Result};
use crate::glm::sigmoid;

/// Intercept and named coefficients of one stage's linear predictor.
/// Coefficient keys are encoded column names (`age`, `bmi=Obese`, ...).
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StageEffects {
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

/// Distribution of the number of falls per faller.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case")]
pub enum FallsPerFaller {
    /// Every faller has exactly `k` falls.
    Fixed { k: u32 },
    /// Poisson(λ) conditioned on a positive count.
    ZeroTruncatedPoisson { lambda: f64 },
    /// Negative binomial (failures before `r` successes, success
    /// probability `p`) conditioned on a positive count.
    ZeroTruncatedNegBinomial { r: f64, p: f64 },
}

impl Default for FallsPerFaller {
    fn default() -> Self {
        FallsPerFaller::ZeroTruncatedNegBinomial { r: 1.5, p: 0.25 }
    }
}

/// Marginal distribution override for one covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum MarginalDistribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Bernoulli { p: f64 },
    /// Level probabilities aligned with the schema's declared levels.
    Categorical { probs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub stage1: StageEffects,
    pub stage2: StageEffects,
    /// True random-intercept variance; 0 disables the random effect.
    pub sigma2: f64,
    #[serde(default)]
    pub falls_per_faller: FallsPerFaller,
    /// Per-covariate marginal overrides, keyed by covariate name.
    #[serde(default)]
    pub covariates: BTreeMap<String, MarginalDistribution>,
}

impl SimulationConfig {
    fn validate(&self, schema: &Schema) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidConfig("n_patients must be positive".into()));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        match self.falls_per_faller {
            FallsPerFaller::Fixed { k: 0 } => {
                return Err(Error::InvalidConfig("falls_per_faller k must be positive".into()))
            }
            FallsPerFaller::ZeroTruncatedPoisson { lambda } if !(lambda > 0.0) => {
                return Err(Error::InvalidConfig("poisson lambda must be positive".into()))
            }
            FallsPerFaller::ZeroTruncatedNegBinomial { r, p } if !(r > 0.0 && p > 0.0 && p < 1.0) => {
                return Err(Error::InvalidConfig("negative binomial needs r > 0, 0 < p < 1".into()))
            }
            _ => {}
        }
        for (stage, effects) in [(StageAvailability::Baseline, &self.stage1), (StageAvailability::PerFall, &self.stage2)] {
            for key in effects.coefficients.keys() {
                let cov = resolve_column(schema, key).ok_or_else(|| {
                    Error::InvalidConfig(format!("coefficient `{key}` resolves to no schema column"))
                })?;
                if stage == StageAvailability::Baseline && cov.stage != StageAvailability::Baseline {
                    return Err(Error::InvalidConfig(format!(
                        "stage-1 coefficient `{key}` must reference a baseline covariate"
                    )));
                }
            }
        }
        for (name, dist) in &self.covariates {
            let cov = schema
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("marginal for unknown covariate `{name}`")))?;
            check_marginal(cov, dist)?;
        }
        Ok(())
    }
}

fn check_marginal(cov: &Covariate, dist: &MarginalDistribution) -> Result<()> {
    let bad = |msg: &str| Err(Error::InvalidConfig(format!("covariate `{}`: {msg}", cov.name)));
    match (&cov.kind, dist) {
        (CovariateKind::Continuous, MarginalDistribution::Normal { sd, .. }) => {
            if *sd > 0.0 { Ok(()) } else { bad("normal sd must be positive") }
        }
        (CovariateKind::Continuous, MarginalDistribution::Uniform { lo, hi }) => {
            if hi > lo { Ok(()) } else { bad("uniform needs hi > lo") }
        }
        (CovariateKind::Binary, MarginalDistribution::Bernoulli { p }) => {
            if (0.0..=1.0).contains(p) { Ok(()) } else { bad("bernoulli p must be in [0,1]") }
        }
        (CovariateKind::Categorical { levels, .. }, MarginalDistribution::Categorical { probs })
        | (CovariateKind::Ordinal { levels, .. }, MarginalDistribution::Categorical { probs }) => {
            if probs.len() != levels.len() {
                return bad("probs length must match levels");
            }
            if probs.iter().any(|p| *p < 0.0) || probs.iter().sum::<f64>() <= 0.0 {
                return bad("probs must be non-negative with positive sum");
            }
            Ok(())
        }
        _ => bad("marginal distribution does not match the covariate kind"),
    }
}

/// Find the covariate owning an encoded column name, with the position of
/// that column in its expansion.
fn resolve_column<'a>(schema: &'a Schema, column: &str) -> Option<&'a Covariate> {
    schema.covariates.iter().find(|cov| encoded_columns(cov).iter().any(|c| c == column))
}

fn draw_value(cov: &Covariate, dist: Option<&MarginalDistribution>, rng: &mut ChaCha20Rng) -> Value {
    match dist {
        Some(MarginalDistribution::Normal { mean, sd }) => {
            Value::Number(Normal::new(*mean, *sd).expect("validated").sample(rng))
        }
        Some(MarginalDistribution::Uniform { lo, hi }) => Value::Number(rng.random_range(*lo..*hi)),
        Some(MarginalDistribution::Bernoulli { p }) => {
            Value::Number((rng.random::<f64>() < *p) as u8 as f64)
        }
        Some(MarginalDistribution::Categorical { probs }) => {
            let levels = cov.levels().expect("validated");
            let total: f64 = probs.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (level, &p) in levels.iter().zip(probs) {
                u -= p;
                if u <= 0.0 {
                    return Value::Level(level.clone());
                }
            }
            Value::Level(levels.last().expect("non-empty").clone())
        }
        None => match &cov.kind {
            CovariateKind::Continuous => {
                Value::Number(Normal::new(0.0, 1.0).expect("valid").sample(rng))
            }
            CovariateKind::Binary => Value::Number((rng.random::<f64>() < 0.5) as u8 as f64),
            CovariateKind::Categorical { levels, .. } | CovariateKind::Ordinal { levels, .. } => {
                let i = rng.random_range(0..levels.len());
                Value::Level(levels[i].clone())
            }
        },
    }
}

/// Linear-predictor contribution of named coefficients for one observation.
/// Values map through the same encoding the design matrix uses; the
/// `column -> value` correspondence is positional within each covariate's
/// expansion.
fn effects_eta(
    schema: &Schema,
    effects: &StageEffects,
    lookup: impl Fn(&Covariate) -> Option<Value>,
) -> Result<f64> {
    let mut eta = effects.intercept;
    for (key, coef) in &effects.coefficients {
        let cov = resolve_column(schema, key)
            .ok_or_else(|| Error::InvalidConfig(format!("coefficient `{key}` has no column")))?;
        let value = lookup(cov)
            .ok_or_else(|| Error::InvalidConfig(format!("no value drawn for `{}`", cov.name)))?;
        let cols = encoded_columns(cov);
        let pos = cols.iter().position(|c| c == key).expect("resolved");
        eta += coef * encode_value(cov, &value)?[pos];
    }
    Ok(eta)
}

fn draw_falls_count(dist: &FallsPerFaller, rng: &mut ChaCha20Rng) -> u32 {
    match dist {
        FallsPerFaller::Fixed { k } => *k,
        FallsPerFaller::ZeroTruncatedPoisson { lambda } => loop {
            // Knuth sampler; desk-scale lambdas only
            let l = (-lambda).exp();
            let mut k = 0u32;
            let mut p = 1.0;
            loop {
                p *= rng.random::<f64>();
                if p <= l {
                    break;
                }
                k += 1;
            }
            if k > 0 {
                return k;
            }
        },
        FallsPerFaller::ZeroTruncatedNegBinomial { r, p } => loop {
            // Gamma-Poisson mixture
            let lambda = rand_distr::Gamma::new(*r, (1.0 - p) / p)
                .expect("validated")
                .sample(rng);
            let l = (-lambda).exp();
            let mut k = 0u32;
            let mut q = 1.0;
            loop {
                q *= rng.random::<f64>();
                if q <= l {
                    break;
                }
                k += 1;
            }
            if k > 0 {
                return k;
            }
        },
    }
}

fn draw_clock_for_category(cat: FallTimeCategory, rng: &mut ChaCha20Rng) -> u32 {
    match cat {
        FallTimeCategory::Morning => rng.random_range(360..720),
        FallTimeCategory::Afternoon => rng.random_range(720..1260),
        FallTimeCategory::Night => {
            // [21:00, 24:00) ∪ [00:00, 06:00), 540 minutes total
            let offset = rng.random_range(0..540);
            if offset < 180 {
                1260 + offset
            } else {
                offset - 180
            }
        }
    }
}

/// Injury probability of one fall given its linear predictor and the
/// patient's random intercept.
pub(crate) fn injury_probability(eta_fixed: f64, epsilon: f64) -> f64 {
    sigmoid(eta_fixed + epsilon)
}

/// Generate a cohort from the generative model. Deterministic given the
/// seed: identical config and schema reproduce the dataset bit for bit.
pub fn simulate(schema: &Schema, config: &SimulationConfig) -> Result<CohortDataset> {
    schema.validate()?;
    config.validate(schema)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let baseline_covs: Vec<&Covariate> = schema.baseline().collect();
    let per_fall_covs: Vec<&Covariate> = schema.per_fall().collect();

    let mut patients = Vec::with_capacity(config.n_patients);
    let mut falls = Vec::new();

    let width = (config.n_patients as f64).log10().ceil().max(3.0) as usize;
    for i in 0..config.n_patients {
        let patient_id = format!("P{:0width$}", i + 1, width = width);
        let mut baseline = BTreeMap::new();
        for cov in &baseline_covs {
            let value = draw_value(cov, config.covariates.get(&cov.name), &mut rng);
            baseline.insert(cov.name.clone(), value);
        }
        let eta1 = effects_eta(schema, &config.stage1, |cov| baseline.get(&cov.name).cloned())?;
        let fell = rng.random::<f64>() < sigmoid(eta1);

        if fell {
            let epsilon = if config.sigma2 > 0.0 {
                Normal::new(0.0, config.sigma2.sqrt()).expect("validated").sample(&mut rng)
            } else {
                0.0
            };
            let n_falls = draw_falls_count(&config.falls_per_faller, &mut rng);
            for fall_index in 1..=n_falls {
                let mut per_fall: BTreeMap<String, Value> = BTreeMap::new();
                for cov in &per_fall_covs {
                    let value = draw_value(cov, config.covariates.get(&cov.name), &mut rng);
                    per_fall.insert(cov.name.clone(), value);
                }
                let category = match per_fall.get("fall_time_category") {
                    Some(Value::Level(l)) => FallTimeCategory::parse(l).expect("validated level"),
                    _ => bucket_fall_time(rng.random_range(0..1440)).expect("in range"),
                };
                let clock = draw_clock_for_category(category, &mut rng);
                let location = match per_fall.get("location") {
                    Some(Value::Level(l)) => Location::parse(l).expect("validated level"),
                    _ => {
                        if rng.random::<f64>() < 0.5 {
                            Location::Inside
                        } else {
                            Location::Outside
                        }
                    }
                };
                let glasses = match per_fall.get("glasses") {
                    Some(Value::Number(x)) => Some(*x == 1.0),
                    _ => None,
                };

                let fall_values = per_fall.clone();
                let eta2 = effects_eta(schema, &config.stage2, |cov| {
                    if cov.stage == StageAvailability::Baseline {
                        baseline.get(&cov.name).cloned()
                    } else {
                        match cov.name.as_str() {
                            "fall_time_category" => Some(Value::Level(category.as_str().into())),
                            "location" => Some(Value::Level(location.as_str().into())),
                            _ => fall_values.get(&cov.name).cloned(),
                        }
                    }
                })?;
                let injured = rng.random::<f64>() < injury_probability(eta2, epsilon);

                falls.push(FallEvent {
                    patient_id: patient_id.clone(),
                    fall_index,
                    fall_clock_time: Some(clock),
                    fall_time_category: category,
                    location,
                    glasses,
                    injured,
                });
            }
        }
        patients.push(PatientRecord { patient_id, baseline, fell });
    }

    let dataset = CohortDataset { schema: schema.clone(), patients, falls };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Covariate;
    use rand::rngs::StdRng;

    fn schema() -> Schema {
        Schema::new(vec![
            Covariate::continuous("x", StageAvailability::Baseline),
            Covariate::categorical(
                "fall_time_category",
                &["MORNING", "AFTERNOON", "NIGHT"],
                "AFTERNOON",
                StageAvailability::PerFall,
            ),
        ])
    }

    fn base_config(seed: u64, n: usize) -> SimulationConfig {
        SimulationConfig {
            seed,
            n_patients: n,
            stage1: StageEffects::default(),
            stage2: StageEffects::default(),
            sigma2: 0.0,
            falls_per_faller: FallsPerFaller::Fixed { k: 2 },
            covariates: BTreeMap::new(),
        }
    }

    #[test]
    fn zero_coefficients_give_half_fall_rate() {
        let ds = simulate(&schema(), &base_config(42, 10_000)).unwrap();
        let rate = ds.n_fallers() as f64 / ds.patients.len() as f64;
        assert!((rate - 0.5).abs() <= 0.02, "fall rate {rate}");
    }

    #[test]
    fn simulation_is_bit_reproducible() {
        let a = simulate(&schema(), &base_config(7, 200)).unwrap();
        let b = simulate(&schema(), &base_config(7, 200)).unwrap();
        assert_eq!(a.patients, b.patients);
        assert_eq!(a.falls, b.falls);
        let c = simulate(&schema(), &base_config(8, 200)).unwrap();
        assert!(a.patients != c.patients || a.falls != c.falls);
    }

    #[test]
    fn zero_sigma2_gives_identical_injury_probabilities_within_patient() {
        // with sigma2 = 0 the random effect vanishes, so two falls with equal
        // covariates share one probability exactly
        assert_eq!(injury_probability(0.3, 0.0), injury_probability(0.3, 0.0));
        let p_with_effect = injury_probability(0.3, 0.5);
        assert!(p_with_effect != injury_probability(0.3, 0.0));

        // end to end: probabilities enter through eta only; a degenerate
        // intercept-only stage 2 makes every fall Bernoulli(sigmoid(a0))
        let mut cfg = base_config(3, 4000);
        cfg.stage2.intercept = 2.0;
        let ds = simulate(&schema(), &cfg).unwrap();
        let rate = ds.n_injurious_falls() as f64 / ds.falls.len() as f64;
        let expected = sigmoid(2.0);
        assert!((rate - expected).abs() < 0.02, "injury rate {rate} vs {expected}");
    }

    #[test]
    fn fall_rate_matches_monte_carlo_integral_oracle() {
        // stage 1: intercept -1, coefficient 2 on x ~ N(0,1)
        let mut cfg = base_config(2024, 10_000);
        cfg.stage1.intercept = -1.0;
        cfg.stage1.coefficients.insert("x".into(), 2.0);
        let ds = simulate(&schema(), &cfg).unwrap();
        let rate = ds.n_fallers() as f64 / ds.patients.len() as f64;

        // independent 200k-draw Monte-Carlo estimate of E[sigmoid(-1 + 2Z)]
        use rand::SeedableRng;
        let mut rng = StdRng::seed_from_u64(777);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut acc = 0.0;
        let n = 200_000;
        for _ in 0..n {
            let z: f64 = normal.sample(&mut rng);
            acc += 1.0 / (1.0 + (1.0 - 2.0 * z).exp());
        }
        let oracle = acc / n as f64;
        assert!((rate - oracle).abs() <= 0.01, "rate {rate} vs oracle {oracle}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = base_config(1, 10);
        cfg.sigma2 = -1.0;
        assert!(matches!(simulate(&schema(), &cfg), Err(Error::InvalidConfig(_))));

        let mut cfg = base_config(1, 10);
        cfg.stage1.coefficients.insert("nope".into(), 1.0);
        assert!(matches!(simulate(&schema(), &cfg), Err(Error::InvalidConfig(_))));

        let mut cfg = base_config(1, 10);
        cfg.stage2.coefficients.insert("fall_time_category=NIGHT".into(), 0.5);
        assert!(simulate(&schema(), &cfg).is_ok());
    }
}
