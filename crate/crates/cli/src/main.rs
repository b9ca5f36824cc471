//! `bayeslogit` — two-stage Bayesian logistic regression runs from the
//! command line.
//!
//! Subcommands: `fit`, `select`, `cv`, `simulate`, `summarize`, `verify`.
//! Every command writes its outputs plus a `manifest.json` (command,
//! library version, seed, and the full run configuration) into `--out`,
//! enough to reproduce the run exactly. Exit codes: 0 success, 2 data or
//! configuration error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bayeslogit::bma::{build_ensemble, top_models, top_table, WeightRule};
use bayeslogit::datamodel::{
    load_csv, simulate, summarize, write_csv, CohortDataset, Schema, SimulationConfig, Stage,
};
use bayeslogit::evaluate::{loo_cv, report, LooSettings, LooTarget, LooUnit};
use bayeslogit::glm::PriorSpec;
use bayeslogit::laplace::{
    importance_proposal_components, lml_stage1, lml_stage2, posterior_summary, FitResult,
    FitSettings, GridSettings,
};
use bayeslogit::oracle;
use bayeslogit::predict::McSettings;
use bayeslogit::selection::{forward_select, SelectionSettings};
use bayeslogit::Error;

mod report_json;
use report_json::{ensemble_json, fit_json, trace_json};

#[derive(Parser)]
#[command(name = "bayeslogit", version, about = "Two-stage Bayesian logistic regression toolkit")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results
    /// do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and write its marginal likelihood and posterior summary
    Fit(FitArgs),
    /// Forward variable selection plus the model-averaging ensemble
    Select(SelectArgs),
    /// Leave-one-out cross-validated classification report
    Cv(CvArgs),
    /// Generate a synthetic cohort from a simulation config
    Simulate(SimulateArgs),
    /// Descriptive per-variable summary of a cohort
    Summarize(SummarizeArgs),
    /// Cross-check a fit against the brute-force oracles
    Verify(VerifyArgs),
}

#[derive(Args, Serialize)]
struct DataArgs {
    /// patients.csv path
    #[arg(long)]
    patients: PathBuf,
    /// falls.csv path
    #[arg(long)]
    falls: PathBuf,
    /// schema.json path
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args, Serialize)]
struct PriorArgs {
    /// Coefficient prior variance v0
    #[arg(long = "prior-v0", default_value_t = 1000.0)]
    prior_v0: f64,
    /// Inverse-Gamma shape for the random-intercept variance
    #[arg(long = "prior-a", default_value_t = 0.001)]
    prior_a: f64,
    /// Inverse-Gamma rate for the random-intercept variance
    #[arg(long = "prior-b", default_value_t = 0.001)]
    prior_b: f64,
}

impl PriorArgs {
    fn to_spec(&self) -> PriorSpec {
        PriorSpec { v0: self.prior_v0, a: self.prior_a, b: self.prior_b }
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    match s {
        "1" => Ok(Stage::Stage1),
        "2" => Ok(Stage::Stage2),
        other => Err(format!("stage must be 1 or 2, got `{other}`")),
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum WeightRuleArg {
    Normalized,
    Literal,
}

impl From<WeightRuleArg> for WeightRule {
    fn from(w: WeightRuleArg) -> WeightRule {
        match w {
            WeightRuleArg::Normalized => WeightRule::NormalizedMarginal,
            WeightRuleArg::Literal => WeightRule::LiteralLmlRatio,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum LooUnitArg {
    Patient,
    Fall,
}

impl From<LooUnitArg> for LooUnit {
    fn from(u: LooUnitArg) -> LooUnit {
        match u {
            LooUnitArg::Patient => LooUnit::Patient,
            LooUnitArg::Fall => LooUnit::Fall,
        }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model stage: 1 (falls) or 2 (injurious falls, random intercept)
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Comma-separated covariate subset; empty for intercept-only
    #[arg(long, value_delimiter = ',', default_value = "")]
    vars: Vec<String>,
    #[command(flatten)]
    prior: PriorArgs,
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Candidate pool: comma-separated names, or `all` for every
    /// stage-compatible schema variable
    #[arg(long, default_value = "all")]
    pool: String,
    #[arg(long = "weight-rule", value_enum, default_value = "normalized")]
    weight_rule: WeightRuleArg,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Fixed-model CV: comma-separated covariates of the single model
    #[arg(long, value_delimiter = ',', conflicts_with = "pool")]
    vars: Option<Vec<String>>,
    /// Pipeline CV: rerun selection + averaging inside every fold over
    /// this pool (`all` for every stage-compatible variable)
    #[arg(long)]
    pool: Option<String>,
    #[arg(long = "loo-unit", value_enum, default_value = "patient")]
    loo_unit: LooUnitArg,
    #[arg(long = "weight-rule", value_enum, default_value = "normalized")]
    weight_rule: WeightRuleArg,
    /// RNG seed (required: stage-2 predictions are Monte Carlo)
    #[arg(long)]
    seed: u64,
    /// sigma2 draws per row for stage-2 prediction
    #[arg(long = "mc-sigma2-draws", default_value_t = 200)]
    mc_sigma2_draws: usize,
    /// intercept draws per sigma2 draw
    #[arg(long = "mc-eps-draws", default_value_t = 50)]
    mc_eps_draws: usize,
    /// Fit single-class training folds instead of skipping them
    #[arg(long = "allow-single-class-folds", default_value_t = false)]
    allow_single_class_folds: bool,
    /// Average draws on the log-odds scale before transforming (the
    /// literal predictive procedure)
    #[arg(long = "literal-logodds", default_value_t = false)]
    literal_logodds: bool,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// schema.json path
    #[arg(long)]
    schema: PathBuf,
    /// Simulation config JSON
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SummarizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    #[arg(long, value_delimiter = ',', default_value = "")]
    vars: Vec<String>,
    /// Absolute lml tolerance; defaults to 0.1 nats for stage 1 and 0.3
    /// for stage 2
    #[arg(long)]
    tolerance: Option<f64>,
    /// Importance-sampling draws (stage 2 oracle)
    #[arg(long = "oracle-samples", default_value_t = 100_000)]
    oracle_samples: usize,
    /// RNG seed for the stage-2 oracle
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // results are independent of the pool size; this only caps workers
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: Option<usize>) {}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn load(data: &DataArgs) -> Result<CohortDataset, Error> {
    let schema = Schema::from_json_file(&data.schema)?;
    load_csv(&data.patients, &data.falls, &schema)
}

fn resolve_pool(dataset: &CohortDataset, pool: &str, stage: Stage) -> Vec<String> {
    if pool == "all" {
        dataset
            .schema
            .covariates
            .iter()
            .filter(|c| {
                stage == Stage::Stage2
                    || c.stage == bayeslogit::datamodel::StageAvailability::Baseline
            })
            .map(|c| c.name.clone())
            .collect()
    } else {
        pool.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    }
}

fn clean_vars(vars: &[String]) -> Vec<String> {
    vars.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

/// Write a file atomically (temp + rename) so partial output never lands
/// under the final name.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

/// Manifest: command name, library version, and the full configuration.
/// The thread cap is deliberately absent — it cannot change results.
fn write_manifest<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<(), Error> {
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    write_json(&out.join("manifest.json"), &manifest)
}

fn prepare_out(out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn fit_one(
    dataset: &CohortDataset,
    stage: Stage,
    vars: &[String],
    prior: &PriorSpec,
) -> Result<FitResult, Error> {
    match stage {
        Stage::Stage1 => lml_stage1(dataset, vars, prior, &FitSettings::default()),
        Stage::Stage2 => {
            lml_stage2(dataset, vars, prior, &GridSettings::default(), &FitSettings::default())
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<ExitCode, Error> {
    prepare_out(&args.out)?;
    let dataset = load(&args.data)?;
    let vars = clean_vars(&args.vars);
    let prior = args.prior.to_spec();
    let fit = fit_one(&dataset, args.stage, &vars, &prior)?;
    let summary = posterior_summary(&fit)?;

    write_manifest(&args.out, "fit", args)?;
    write_json(&args.out.join("fit.json"), &fit_json(&fit, &summary))?;

    let mut table = String::from("coefficient            mean        sd        OR    95% CI\n");
    for c in &summary {
        table.push_str(&format!(
            "{:<20} {:>8.4} {:>9.4} {:>9.4}    ({:.4}, {:.4})\n",
            c.name, c.mean, c.sd, c.odds_ratio, c.ci_low, c.ci_high
        ));
    }
    table.push_str(&format!("\nlog marginal likelihood: {:.6}\n", fit.lml));
    write_atomic(&args.out.join("summary.txt"), table.as_bytes())?;
    println!("lml = {:.6} ({} coefficients)", fit.lml, summary.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_select(args: &SelectArgs) -> Result<ExitCode, Error> {
    prepare_out(&args.out)?;
    let dataset = load(&args.data)?;
    let pool = resolve_pool(&dataset, &args.pool, args.stage);
    let settings = SelectionSettings { prior: args.prior.to_spec(), ..Default::default() };
    let trace = forward_select(&dataset, &pool, args.stage, &settings)?;
    let ensemble = build_ensemble(&trace, args.weight_rule.into())?;

    write_manifest(&args.out, "select", args)?;
    write_json(&args.out.join("trace.json"), &trace_json(&trace))?;
    write_json(&args.out.join("ensemble.json"), &ensemble_json(&ensemble, 5))?;
    let schema_order: Vec<String> =
        dataset.schema.covariates.iter().map(|c| c.name.clone()).collect();
    write_atomic(&args.out.join("top5.txt"), top_table(&ensemble, 5, &schema_order).as_bytes())?;

    println!(
        "final model: [{}]  ({} models evaluated)",
        trace.final_model.join(", "),
        trace.all_evaluated.len()
    );
    for (rank, m) in top_models(&ensemble, 5).iter().enumerate() {
        let name = if m.variables.is_empty() { "(intercept)".to_string() } else { m.variables.join("+") };
        println!("  {}. w={:.4} lml={:.3} {}", rank + 1, m.weight, m.lml, name);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cv(args: &CvArgs) -> Result<ExitCode, Error> {
    prepare_out(&args.out)?;
    let dataset = load(&args.data)?;
    let target = match (&args.vars, &args.pool) {
        (Some(vars), None) => LooTarget::FixedModel(clean_vars(vars)),
        (None, Some(pool)) => LooTarget::Pipeline {
            pool: resolve_pool(&dataset, pool, args.stage),
            weight_rule: args.weight_rule.into(),
        },
        (None, None) => LooTarget::FixedModel(Vec::new()),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let settings = LooSettings {
        unit: args.loo_unit.into(),
        prior: args.prior.to_spec(),
        mc: McSettings {
            n_sigma2_draws: args.mc_sigma2_draws,
            n_epsilon_draws_per_sigma2: args.mc_eps_draws,
            seed: args.seed,
        },
        allow_single_class_folds: args.allow_single_class_folds,
        literal_logodds_mean: args.literal_logodds,
        ..Default::default()
    };
    let loo = loo_cv(&dataset, &target, args.stage, &settings)?;
    let rep = report(loo)?;

    write_manifest(&args.out, "cv", args)?;
    write_json(&args.out.join("report.json"), &rep)?;

    let mut roc = String::from("threshold,fpr,tpr\n");
    for p in &rep.roc_points {
        roc.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    write_atomic(&args.out.join("roc_points.csv"), roc.as_bytes())?;

    let mut preds = String::from("row_id,label,probability,mc_se\n");
    for r in &rep.rows {
        preds.push_str(&format!("{},{},{},{}\n", r.id, r.label, r.probability, r.mc_se));
    }
    write_atomic(&args.out.join("loo_predictions.csv"), preds.as_bytes())?;

    println!(
        "n={} skipped={} threshold={:.4} sens={:.3} spec={:.3} acc={:.3} auc={:.4}",
        rep.rows.len(),
        rep.skipped.len(),
        rep.threshold,
        rep.metrics.sensitivity,
        rep.metrics.specificity,
        rep.metrics.accuracy,
        rep.auc
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode, Error> {
    prepare_out(&args.out)?;
    let schema = Schema::from_json_file(&args.schema)?;
    let mut config: SimulationConfig =
        serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = simulate(&schema, &config)?;
    write_manifest(&args.out, "simulate", &serde_json::json!({"args": args, "config": config}))?;
    write_csv(&dataset, &args.out.join("patients.csv"), &args.out.join("falls.csv"))?;
    println!(
        "{} patients, {} fallers, {} falls ({} injurious)",
        dataset.patients.len(),
        dataset.n_fallers(),
        dataset.falls.len(),
        dataset.n_injurious_falls()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<ExitCode, Error> {
    prepare_out(&args.out)?;
    let dataset = load(&args.data)?;
    let report = summarize(&dataset);
    write_manifest(&args.out, "summarize", args)?;
    write_json(&args.out.join("summary.json"), &report)?;
    println!(
        "{} patients, {} fallers, {} falls, injurious fraction {}",
        report.n_patients,
        report.n_fallers,
        report.n_falls,
        report
            .injurious_fraction
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: &VerifyArgs) -> Result<ExitCode, Error> {
    prepare_out(&args.out)?;
    let dataset = load(&args.data)?;
    let vars = clean_vars(&args.vars);
    let prior = args.prior.to_spec();
    let fit = fit_one(&dataset, args.stage, &vars, &prior)?;

    let (oracle_result, default_tol) = match args.stage {
        Stage::Stage1 => {
            let design = bayeslogit::datamodel::encode(&dataset, &vars, Stage::Stage1)?;
            if design.n_cols() > 3 {
                return Err(Error::DimensionTooLarge(design.n_cols()));
            }
            let y = dataset.stage1_outcome();
            let map: Vec<f64> = fit.map_estimate.coefficients.iter().cloned().collect();
            let sds: Vec<f64> =
                (0..design.n_cols()).map(|j| fit.posterior_cov[(j, j)].sqrt()).collect();
            let matrix = design.matrix.clone();
            let r = oracle::quadrature_lml_expanding(
                move |b: &[f64]| {
                    oracle::naive_stage1_logjoint(
                        &matrix,
                        &y,
                        &prior,
                        &bayeslogit::nalgebra::DVector::from_vec(b.to_vec()),
                    )
                },
                &map,
                &sds,
                400,
            )?;
            (r, 0.1)
        }
        Stage::Stage2 => {
            let design = bayeslogit::datamodel::encode(&dataset, &vars, Stage::Stage2)?;
            let target = oracle::NaiveStage2 {
                design: design.matrix.clone(),
                row_patient: design.row_patient.clone(),
                n_patients: design.patients.len(),
                y: dataset.stage2_outcome(),
                prior,
            };
            let components = importance_proposal_components(&fit);
            let lo = fit.sigma2_grid.first().expect("stage2 grid").sigma2;
            let hi = fit.sigma2_grid.last().expect("stage2 grid").sigma2;
            let r = oracle::importance_lml_grid(
                &target,
                &components,
                (lo, hi),
                &oracle::ImportanceSettings {
                    n_samples: args.oracle_samples,
                    seed: args.seed,
                    df: 5.0,
                    sigma2_range: None,
                },
                1.4,
            )?;
            (r, 0.3)
        }
    };

    let tolerance = args.tolerance.unwrap_or(default_tol);
    let discrepancy = (fit.lml - oracle_result.value).abs();
    let pass = discrepancy <= tolerance;
    let verdict = serde_json::json!({
        "main_value": fit.lml,
        "oracle_value": oracle_result.value,
        "discrepancy": discrepancy,
        "tolerance": tolerance,
        "pass": pass,
        "oracle_method": oracle_result.method,
        "oracle_error_estimate": oracle_result.error_estimate,
        "oracle_settings": oracle_result.settings,
    });
    write_manifest(&args.out, "verify", args)?;
    write_json(&args.out.join("verify.json"), &verdict)?;
    println!(
        "main {:.6} vs oracle {:.6} (|Δ| = {:.6}, tol {tolerance}): {}",
        fit.lml,
        oracle_result.value,
        discrepancy,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
