//! Command-line front end: `dare`, `estimate`, `distance` and `experiment`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PriorStructure};
use crate::error::{Error, Result};
use crate::estimator::build_theta_hat;
use crate::experiment::{
    run_exp1, run_exp2, run_exp3, write_exp1, write_exp2, write_exp3, ExperimentConfig, Seeds,
};
use crate::io::{fmt_f64, read_matrix_csv, write_matrix_csv, write_singular_values_csv};
use crate::lqr::{solve_dare, CostPair, LinearSystem, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use crate::subspace::{distance, recover_solution, RankRule, Recovery, SolutionSpace};

#[derive(Debug, Parser)]
#[command(
    name = "are-est",
    version,
    about = "Estimate the discrete-time ARE of an LQR controller from data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the forward Riccati equation for a JSON system/cost config.
    Dare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Build the data-driven coefficient matrix and its solution space.
    Estimate {
        dataset: PathBuf,
        prior: PathBuf,
        #[arg(long, default_value = "auto")]
        rank_rule: RankRule,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance between the spans of two basis CSV files.
    Distance { a: PathBuf, b: PathBuf },
    /// Run one of the numerical experiments and write its result bundle.
    Experiment {
        name: ExperimentName,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the full-scale defaults instead of the desk-scale ones.
        #[arg(long)]
        full: bool,
        /// Sets every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated noise variances (exp3).
        #[arg(long, value_delimiter = ',')]
        sigma2: Option<Vec<f64>>,
        #[arg(long)]
        rank_rule: Option<RankRule>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    Exp1,
    Exp2,
    Exp3,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DareConfig {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!(
            "{name} must be a non-empty rectangular array of rows"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct DareOutput {
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    residual: f64,
    iterations: usize,
}

fn cmd_dare(config: &Path) -> Result<String> {
    let cfg: DareConfig = serde_json::from_str(&fs::read_to_string(config)?)
        .map_err(|e| Error::Config(e.to_string()))?;
    let sys = LinearSystem::new(
        matrix_from_rows("A", &cfg.a)?,
        matrix_from_rows("B", &cfg.b)?,
    )?;
    let cost = CostPair::new(
        matrix_from_rows("Q", &cfg.q)?,
        matrix_from_rows("R", &cfg.r)?,
    )?;
    let sol = solve_dare(
        &sys,
        &cost,
        cfg.tol.unwrap_or(DEFAULT_DARE_TOL),
        cfg.max_iter.unwrap_or(DEFAULT_DARE_MAX_ITER),
    )?;
    let out = DareOutput {
        p: rows_of(&sol.p),
        k: rows_of(&sol.k),
        residual: sol.residual,
        iterations: sol.iterations,
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

#[derive(Serialize)]
struct RecoveryReport {
    status: &'static str,
    #[serde(rename = "P", skip_serializing_if = "Option::is_none")]
    p: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    r: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    all_positive_definite: Option<bool>,
}

#[derive(Serialize)]
struct EstimateReport {
    #[serde(rename = "N_d")]
    n_data: usize,
    #[serde(rename = "N_d_prime")]
    n_feedback: usize,
    #[serde(rename = "N_rows")]
    n_rows: usize,
    #[serde(rename = "N_v")]
    n_v: usize,
    rank_rule: String,
    dim: usize,
    solution_basis: &'static str,
    recovery: RecoveryReport,
}

fn cmd_estimate(dataset: &Path, prior: &Path, rule: RankRule, out: &Path) -> Result<String> {
    let data = Dataset::read_csv(dataset)?;
    let structure = PriorStructure::read_json(prior, data.n(), data.m())?;
    let cs = build_theta_hat(&data, &structure)?;
    let space = cs.solution_space(rule)?;
    fs::create_dir_all(out)?;
    cs.export(out, "theta_hat")?;
    write_singular_values_csv(out.join("singular_values.csv"), &space.singular_values)?;
    write_matrix_csv(out.join("solution_basis.csv"), &space.basis)?;
    let recovery = match recover_solution(&space, &structure)? {
        Recovery::Recovered(rec) => RecoveryReport {
            status: "recovered",
            all_positive_definite: Some(rec.all_positive_definite()),
            p: Some(rows_of(&rec.p)),
            q: Some(rows_of(&rec.q)),
            r: Some(rows_of(&rec.r)),
        },
        Recovery::Indeterminate { .. } => RecoveryReport {
            status: "indeterminate",
            p: None,
            q: None,
            r: None,
            all_positive_definite: None,
        },
    };
    let report = EstimateReport {
        n_data: data.len(),
        n_feedback: data.n_feedback(),
        n_rows: cs.n_rows(),
        n_v: cs.n_v(),
        rank_rule: rule.to_string(),
        dim: space.dim(),
        solution_basis: "solution_basis.csv",
        recovery,
    };
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(format!("dim = {}", space.dim()))
}

fn cmd_distance(a: &Path, b: &Path) -> Result<String> {
    let sa = SolutionSpace::from_columns(&read_matrix_csv(a)?)?;
    let sb = SolutionSpace::from_columns(&read_matrix_csv(b)?)?;
    Ok(fmt_f64(distance(&sa, &sb)?))
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    name: ExperimentName,
    config: Option<&Path>,
    full: bool,
    seed: Option<u64>,
    sigma2: Option<Vec<f64>>,
    rank_rule: Option<RankRule>,
    out: &Path,
) -> Result<String> {
    if name == ExperimentName::Exp1 {
        let res = run_exp1(rank_rule)?;
        write_exp1(out, &res)?;
        return Ok(format!("d(S, S_hat) = {}", fmt_f64(res.distance)));
    }
    let mut cfg = match (config, name, full) {
        (Some(path), _, _) => ExperimentConfig::read(path)?,
        (None, ExperimentName::Exp2, false) => ExperimentConfig::exp2_default(),
        (None, ExperimentName::Exp2, true) => ExperimentConfig::exp2_full(),
        (None, _, false) => ExperimentConfig::exp3_default(),
        (None, _, true) => ExperimentConfig::exp3_full(),
    };
    if let Some(seed) = seed {
        cfg.seeds = Seeds::all(seed);
    }
    if let Some(levels) = sigma2 {
        cfg.sigma2 = levels;
    }
    if let Some(rule) = rank_rule {
        cfg.rank_rule = Some(rule.to_string());
    }
    cfg.validate()?;
    if name == ExperimentName::Exp2 {
        let res = run_exp2(&cfg)?;
        write_exp2(out, &cfg, &res)?;
        Ok(format!("d(S, S_hat) = {}", fmt_f64(res.distance)))
    } else {
        let res = run_exp3(&cfg)?;
        write_exp3(out, &cfg, &res)?;
        let lines: Vec<String> = res
            .summary()
            .iter()
            .map(|s| {
                let f = |v: Option<f64>| v.map_or("nan".to_string(), fmt_f64);
                format!(
                    "sigma2 = {}: median d_est = {}, median d_si = {}, median ratio = {}",
                    fmt_f64(s.sigma2),
                    f(s.median_d_est),
                    f(s.median_d_si),
                    f(s.median_ratio)
                )
            })
            .collect();
        Ok(lines.join("\n"))
    }
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Dare { config } => cmd_dare(&config),
        Command::Estimate {
            dataset,
            prior,
            rank_rule,
            out,
        } => cmd_estimate(&dataset, &prior, rank_rule, &out),
        Command::Distance { a, b } => cmd_distance(&a, &b),
        Command::Experiment {
            name,
            config,
            full,
            seed,
            sigma2,
            rank_rule,
            out,
        } => cmd_experiment(name, config.as_deref(), full, seed, sigma2, rank_rule, &out),
    }
}

/// Parses `args`, runs the command and maps failures to exit codes:
/// 1 for bad input or configuration, 2 for numerical failures.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
