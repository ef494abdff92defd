//! Command-line front end. Every command writes JSON (or CSV for data and
//! experiment tables) to the given writer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::criteria::{information_criteria, CriterionName};
use crate::cv::{criterion_se, kfold_cluster_deviance, loo_cluster_deviance, CvResult};
use crate::data::{Dataset, Family};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, write_records, write_timings, DesignSpec};
use crate::glm::fit_glm;
use crate::io::{read_dataset, write_dataset, CsvSpec};
use crate::selection::{forward_path, select, Criterion, Rule};
use crate::simulation::{generate, nicu_like, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "nicc", version, about = "Information criteria and cross-validation for clustered GLMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and report coefficients, log-likelihood and AIC/BIC/NIC/NICc.
    Fit(DataArgs),
    /// Cluster-based cross-validated deviance of one model.
    Cv(CvArgs),
    /// Forward stepwise selection under one criterion.
    Select(SelectArgs),
    /// Write a simulated clustered dataset as CSV.
    Simulate(SimulateArgs),
    /// Run the simulation study described by a design spec.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    pub csv: PathBuf,
    #[arg(long, default_value = "gaussian", value_parser = parse_family)]
    pub family: Family,
    #[arg(long, default_value = "y")]
    pub response: String,
    #[arg(long, default_value = "cluster")]
    pub cluster: String,
    /// Comma-separated predictor columns; all other columns when omitted.
    #[arg(long, value_delimiter = ',')]
    pub predictors: Option<Vec<String>>,
}

/// Either a fold count or leave-one-cluster-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Folds {
    Loo,
    K(usize),
}

fn parse_folds(s: &str) -> std::result::Result<Folds, String> {
    if s.eq_ignore_ascii_case("loo") {
        return Ok(Folds::Loo);
    }
    s.parse::<usize>().map(Folds::K).map_err(|_| format!("expected a fold count or 'loo', got '{s}'"))
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_criterion(s: &str) -> std::result::Result<CriterionName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_rule(s: &str) -> std::result::Result<Rule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of folds, or `loo`.
    #[arg(long, default_value = "loo", value_parser = parse_folds)]
    pub k: Folds,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// One of aic, bic, nic, nicc, loodev, cvdev.
    #[arg(long, value_parser = parse_criterion)]
    pub criterion: CriterionName,
    /// `min` or `1se`.
    #[arg(long, default_value = "min", value_parser = parse_rule)]
    pub rule: Rule,
    /// Folds for cvdev.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "gaussian", value_parser = parse_family)]
    pub family: Family,
    #[arg(long, default_value_t = 50)]
    pub clusters: usize,
    #[arg(long, default_value_t = 50)]
    pub cluster_size: usize,
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    #[arg(long, default_value_t = 5.0)]
    pub r_b: f64,
    #[arg(long, default_value_t = 0.4)]
    pub phi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write a synthetic NICU-style cohort with this many patients instead.
    #[arg(long)]
    pub nicu: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Key-value design spec file.
    #[arg(long)]
    pub design: PathBuf,
    /// Output CSV; timings go to `<out>.timing.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Overrides the spec's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let spec = CsvSpec {
            family: self.family,
            response: self.response.clone(),
            cluster: self.cluster.clone(),
            predictors: self.predictors.clone(),
        };
        read_dataset(&self.csv, &spec)
    }
}

fn emit(out: &mut dyn Write, value: &Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

fn fit(args: &DataArgs, out: &mut dyn Write) -> Result<()> {
    let data = args.load()?;
    let columns: Vec<usize> = (0..data.n_predictors()).collect();
    let fit = fit_glm(&data, &columns)?;
    let mut names = vec!["(Intercept)".to_string()];
    names.extend(data.names().iter().cloned());
    let coefficients: Vec<Value> =
        names.iter().zip(fit.theta_hat.iter()).map(|(n, v)| json!({ "name": n, "estimate": v })).collect();
    let criteria: Vec<Value> = information_criteria(&fit)?
        .iter()
        .map(|c| json!({ "criterion": c.name, "value": c.value, "penalty": c.penalty }))
        .collect();
    emit(
        out,
        &json!({
            "family": data.family(),
            "n_obs": data.n_obs(),
            "n_clusters": data.n_clusters(),
            "coefficients": coefficients,
            "loglik": fit.loglik,
            "dispersion": fit.dispersion,
            "converged": fit.converged,
            "iterations": fit.iterations,
            "criteria": criteria,
        }),
    )
}

fn cv_json(result: &CvResult, data: &Dataset) -> Value {
    let folds: Vec<Option<f64>> =
        result.per_fold_deviance.iter().map(|d| d.is_finite().then_some(*d)).collect();
    json!({
        "k": result.k(),
        "n_clusters": data.n_clusters(),
        "total_deviance": result.total_deviance,
        "in_sample_deviance": result.in_sample_deviance,
        "se": criterion_se(&result.per_fold_deviance).ok(),
        "per_fold_deviance": folds,
        "n_failed_folds": result.n_failed_folds,
        "failures": result.failures.iter().map(|f| json!({ "fold": f.fold, "reason": f.reason })).collect::<Vec<_>>(),
    })
}

fn cv(args: &CvArgs, out: &mut dyn Write) -> Result<()> {
    let data = args.data.load()?;
    let columns: Vec<usize> = (0..data.n_predictors()).collect();
    let result = match args.k {
        Folds::Loo => loo_cluster_deviance(&data, &columns)?,
        Folds::K(k) => kfold_cluster_deviance(&data, &columns, k, args.seed)?,
    };
    emit(out, &cv_json(&result, &data))?;
    if result.is_valid() {
        Ok(())
    } else {
        Err(Error::FoldFailures { failed: result.n_failed_folds, k: result.k() })
    }
}

fn select_cmd(args: &SelectArgs, out: &mut dyn Write) -> Result<()> {
    let data = args.data.load()?;
    let criterion = Criterion::from_name(args.criterion, args.k, args.seed);
    let path = forward_path(&data, &criterion)?;
    let choice = select(&path, args.rule)?;
    let names = data.names();
    let steps: Vec<Value> = path
        .steps
        .iter()
        .map(|s| {
            json!({
                "added_variable": names[s.added_variable],
                "variables": s.variable_set.iter().map(|&v| names[v].clone()).collect::<Vec<_>>(),
                "value": s.criterion_value,
                "se": s.criterion_se.is_finite().then_some(s.criterion_se),
            })
        })
        .collect();
    let chosen: Vec<String> = path.steps[..choice.size].iter().map(|s| names[s.added_variable].clone()).collect();
    emit(
        out,
        &json!({
            "criterion": path.criterion,
            "rule": choice.rule,
            "complete": path.complete,
            "path": steps,
            "chosen_size": choice.size,
            "chosen_variables": chosen,
            "exclusions": path.exclusions.iter().map(|e| json!({
                "step": e.step, "variable": names[e.variable], "reason": e.reason
            })).collect::<Vec<_>>(),
        }),
    )
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let data = match args.nicu {
        Some(patients) => nicu_like(patients, args.seed)?,
        None => {
            let config = SimConfig {
                family: args.family,
                clusters: args.clusters,
                cluster_size: args.cluster_size,
                p: args.p,
                r_b: args.r_b,
                phi: args.phi,
                seed: args.seed,
                ..SimConfig::default()
            };
            generate(&config)?.0
        }
    };
    match &args.out {
        Some(path) => write_dataset(&data, BufWriter::new(File::create(path)?)),
        None => write_dataset(&data, out),
    }
}

fn timing_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".timing.csv");
    PathBuf::from(name)
}

fn experiment(args: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = DesignSpec::from_path(&args.design)?;
    if let Some(it) = args.iterations {
        if it == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        spec.iterations = it;
    }
    if let Some(seed) = args.seed {
        spec.base_seed = seed;
    }
    let result = run_experiment(&spec, args.parallelism)?;
    write_records(&result.records, BufWriter::new(File::create(&args.out)?))?;
    write_timings(&result.timings, BufWriter::new(File::create(timing_path(&args.out))?))?;
    let failed = result.records.iter().filter(|r| r.failed).count();
    emit(
        out,
        &json!({
            "records": result.records.len(),
            "failed_records": failed,
            "out": args.out,
        }),
    )
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => fit(a, out),
        Command::Cv(a) => cv(a, out),
        Command::Select(a) => select_cmd(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Experiment(a) => experiment(a, out),
    }
}
