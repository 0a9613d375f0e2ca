//! Runners for the three numerical experiments and their result bundles.
//!
//! * `exp1`: the fixed 3-state example; compares the true and data-driven
//!   solution spaces.
//! * `exp2`: random system with a diagonal prior and fewer data than system
//!   identification needs.
//! * `exp3`: noisy sequential closed-loop data with a sparse prior; compares
//!   the data-driven estimate with the system-identification baseline.

use std::fs;
use std::path::Path;

use nalgebra::{dmatrix, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::are_builder::{build_theta_are, CoefficientSystem};
use crate::data::{min_data_count, Dataset, PriorStructure};
use crate::datagen::{
    make_problem1_dataset, random_controllable_system, random_cost, random_problem1_dataset,
    simulate_noisy_trajectory, CostKind, NoiseSpec,
};
use crate::error::{Error, Result};
use crate::estimator::build_theta_hat;
use crate::io::{fmt_f64, write_matrix_csv, write_singular_values_csv};
use crate::lqr::{solve_dare_default, CostPair, LinearSystem, RiccatiSolution};
use crate::subspace::{
    default_rank_tol, distance, numerical_rank, recover_solution, RankRule, Recovery, SolutionSpace,
};
use crate::sysid::theta_from_sysid;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub system: u64,
    pub cost: u64,
    /// Problem-1 data in `exp2`, the closed-loop trajectory in `exp3`.
    pub data: u64,
    /// Base seed for the observation noise; each `exp3` run adds its index.
    pub noise: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            system: seed,
            cost: seed,
            data: seed,
            noise: seed,
        }
    }
}

fn default_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    /// Number of observations (`exp3`: simulation steps).
    #[serde(rename = "N_d", default)]
    pub n_data: Option<usize>,
    /// Number of feedback observations (`exp2` only).
    #[serde(rename = "N_d_prime", default)]
    pub n_feedback: Option<usize>,
    pub cost_kind: CostKind,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Noise variances swept by `exp3`.
    #[serde(default)]
    pub sigma2: Vec<f64>,
    /// Noise draws per variance in `exp3`.
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seeds: Seeds,
    /// Rule for the estimated spaces, e.g. `"fixed:1"`. When absent they take
    /// the dimension of the true space.
    #[serde(default)]
    pub rank_rule: Option<String>,
}

impl ExperimentConfig {
    /// Desk-scale `exp2`: `n = 20`, `m = 10`, `N_d = min_data_count(n, m)`.
    pub fn exp2_default() -> Self {
        Self {
            n: 20,
            m: 10,
            n_data: None,
            n_feedback: None,
            cost_kind: CostKind::DiagonalUniform { lo: 0.01, hi: 1.0 },
            noise: NoiseSpec::default(),
            sigma2: Vec::new(),
            runs: 1,
            seeds: Seeds::default(),
            rank_rule: None,
        }
    }

    pub fn exp2_full() -> Self {
        Self {
            n: 100,
            m: 50,
            ..Self::exp2_default()
        }
    }

    /// Desk-scale `exp3`: `n = 10`, `m = 5`, 60 steps. The exploration gate is
    /// scaled by `sqrt(n / 40)` along with the typical state norm.
    pub fn exp3_default() -> Self {
        Self {
            n: 10,
            m: 5,
            n_data: Some(60),
            n_feedback: None,
            cost_kind: CostKind::SparseConditioned {
                zeros_q: 20,
                zeros_r: 4,
                cond: 10.0,
            },
            noise: NoiseSpec {
                sigma2: 0.0,
                exploration_norm: 0.2,
                state_norm_gate: 0.5,
            },
            sigma2: vec![1e-16, 1e-12, 1e-10],
            runs: 10,
            seeds: Seeds::default(),
            rank_rule: None,
        }
    }

    pub fn exp3_full() -> Self {
        Self {
            n: 40,
            m: 20,
            n_data: Some(200),
            cost_kind: CostKind::SparseConditioned {
                zeros_q: 800,
                zeros_r: 200,
                cond: 10.0,
            },
            noise: NoiseSpec::default(),
            sigma2: (6..=16).map(|e| 10f64.powi(-e)).collect(),
            ..Self::exp3_default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if let Some(s) = self.sigma2.iter().find(|s| s.is_nan() || **s < 0.0) {
            return Err(Error::Config(format!(
                "sigma2 entries must be nonnegative, got {s}"
            )));
        }
        self.estimate_rule()?;
        Ok(())
    }

    fn estimate_rule(&self) -> Result<Option<RankRule>> {
        self.rank_rule.as_deref().map(str::parse).transpose()
    }
}

/// Ranks use the default relative tolerance.
fn auto_rank(cs: &CoefficientSystem) -> usize {
    numerical_rank(&cs.theta, default_rank_tol(cs.n_rows(), cs.n_v()))
}

fn estimated_space(
    cs: &CoefficientSystem,
    rule: Option<RankRule>,
    truth: &SolutionSpace,
) -> Result<SolutionSpace> {
    cs.solution_space(rule.unwrap_or(RankRule::FixedDim(truth.dim())))
}

#[derive(Debug, Clone)]
pub struct Exp1Result {
    pub system: LinearSystem,
    pub cost: CostPair,
    pub solution: RiccatiSolution,
    pub data: Dataset,
    pub theta: CoefficientSystem,
    pub theta_hat: CoefficientSystem,
    pub space: SolutionSpace,
    pub space_hat: SolutionSpace,
    pub distance: f64,
}

pub fn exp1_problem() -> (LinearSystem, CostPair) {
    let a = dmatrix![-0.2, -0.4, -0.6; 0.4, -0.7, -0.3; -1.0, -0.8, -0.2];
    let b = dmatrix![0.1, -0.6; -0.2, 0.8; 0.4, -0.9];
    let q = dmatrix![0.4, -0.2, 0.7; -0.2, 1.7, -0.7; 0.7, -0.7, 1.9];
    let r = dmatrix![1.7, 0.4; 0.4, 1.8];
    (
        LinearSystem::new(a, b).expect("valid shapes"),
        CostPair::new(q, r).expect("valid shapes"),
    )
}

/// Initial states and the two non-feedback inputs of the 3-state example.
pub fn exp1_inputs() -> (DMatrix<f64>, DMatrix<f64>) {
    let x0 = dmatrix![
        0.1, 0.4, 0.5, -0.4, -0.1;
        0.4, 0.7, 1.0, 0.6, 0.8;
        -0.4, -1.0, 0.5, -0.8, -0.4
    ];
    let extra = dmatrix![0.0, 0.1; -0.9, -0.7];
    (x0, extra)
}

pub fn run_exp1(rule: Option<RankRule>) -> Result<Exp1Result> {
    let (system, cost) = exp1_problem();
    let solution = solve_dare_default(&system, &cost)?;
    let (x0, extra) = exp1_inputs();
    let data = make_problem1_dataset(&system, &solution.k, &x0, &extra, 3)?;
    let structure = PriorStructure::dense(3, 2);
    let theta = build_theta_are(&system, &solution.k, &structure)?;
    let theta_hat = build_theta_hat(&data, &structure)?;
    let space = theta.solution_space(RankRule::default())?;
    let space_hat = estimated_space(&theta_hat, rule, &space)?;
    let distance = distance(&space, &space_hat)?;
    Ok(Exp1Result {
        system,
        cost,
        solution,
        data,
        theta,
        theta_hat,
        space,
        space_hat,
        distance,
    })
}

#[derive(Debug, Clone)]
pub struct Exp2Result {
    pub system: LinearSystem,
    pub cost: CostPair,
    pub structure: PriorStructure,
    pub solution: RiccatiSolution,
    pub data: Dataset,
    pub theta: CoefficientSystem,
    pub theta_hat: CoefficientSystem,
    pub space: SolutionSpace,
    pub space_hat: SolutionSpace,
    pub distance: f64,
    /// System identification on the same data (normally `RankDeficient`).
    pub sysid_same_data: std::result::Result<f64, String>,
    /// System identification on `n + m` fresh observations, `n` of them feedback.
    pub sysid_full_data: std::result::Result<f64, String>,
    /// Max elementwise gap between recovered and true `(P, Q, R)`, both scaled
    /// to `|Q|_F = 1`, when the estimated space is one-dimensional.
    pub recovery_error: Option<f64>,
    pub recovered_positive_definite: Option<bool>,
}

fn sysid_distance(
    data: &Dataset,
    structure: &PriorStructure,
    rule: Option<RankRule>,
    truth: &SolutionSpace,
) -> Result<f64> {
    let cs = theta_from_sysid(data, structure)?;
    distance(truth, &estimated_space(&cs, rule, truth)?)
}

fn recovery_gap(
    space: &SolutionSpace,
    structure: &PriorStructure,
    p: &DMatrix<f64>,
    cost: &CostPair,
) -> Result<Option<(f64, bool)>> {
    let Recovery::Recovered(rec) = recover_solution(space, structure)? else {
        return Ok(None);
    };
    let (s_est, s_true) = (rec.q.norm(), cost.q.norm());
    let gap = [(&rec.p, p), (&rec.q, &cost.q), (&rec.r, &cost.r)]
        .iter()
        .map(|(est, truth)| (*est / s_est - *truth / s_true).amax())
        .fold(0.0, f64::max);
    Ok(Some((gap, rec.all_positive_definite())))
}

pub fn run_exp2(cfg: &ExperimentConfig) -> Result<Exp2Result> {
    cfg.validate()?;
    let rule = cfg.estimate_rule()?;
    let (n, m) = (cfg.n, cfg.m);
    let system = random_controllable_system(n, m, cfg.seeds.system)?;
    let (cost, structure) = random_cost(n, m, cfg.cost_kind, cfg.seeds.cost)?;
    let solution = solve_dare_default(&system, &cost)?;
    let n_data = cfg.n_data.unwrap_or_else(|| min_data_count(n, m));
    let n_feedback = cfg.n_feedback.unwrap_or(n).min(n_data);
    let data = random_problem1_dataset(&system, &solution.k, n_data, n_feedback, cfg.seeds.data)?;

    let theta = build_theta_are(&system, &solution.k, &structure)?;
    let theta_hat = build_theta_hat(&data, &structure)?;
    let space = theta.solution_space(RankRule::default())?;
    let space_hat = estimated_space(&theta_hat, rule, &space)?;
    let distance = distance(&space, &space_hat)?;

    let sysid_same_data =
        sysid_distance(&data, &structure, rule, &space).map_err(|e| e.to_string());
    let full = random_problem1_dataset(
        &system,
        &solution.k,
        n + m,
        n,
        cfg.seeds.data.wrapping_add(1),
    )?;
    let sysid_full_data =
        sysid_distance(&full, &structure, rule, &space).map_err(|e| e.to_string());
    let recovered = recovery_gap(&space_hat, &structure, &solution.p, &cost)?;

    Ok(Exp2Result {
        system,
        cost,
        structure,
        solution,
        data,
        theta,
        theta_hat,
        space,
        space_hat,
        distance,
        sysid_same_data,
        sysid_full_data,
        recovery_error: recovered.map(|r| r.0),
        recovered_positive_definite: recovered.map(|r| r.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp3Row {
    pub sigma2: f64,
    pub run: usize,
    pub noise_seed: u64,
    #[serde(rename = "N_d_prime")]
    pub n_feedback: usize,
    pub d_est: Option<f64>,
    pub d_si: Option<f64>,
    pub error_est: Option<String>,
    pub error_si: Option<String>,
}

impl Exp3Row {
    pub fn ratio(&self) -> Option<f64> {
        match (self.d_est, self.d_si) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Exp3Result {
    pub structure: PriorStructure,
    pub theta: CoefficientSystem,
    pub space: SolutionSpace,
    pub rows: Vec<Exp3Row>,
    /// Singular values of the data-driven matrix for run 0 of each variance.
    pub theta_hat_singular_values: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exp3Summary {
    pub sigma2: f64,
    pub runs: usize,
    pub failures: usize,
    pub median_d_est: Option<f64>,
    pub median_d_si: Option<f64>,
    pub median_ratio: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

impl Exp3Result {
    pub fn summary(&self) -> Vec<Exp3Summary> {
        let mut levels: Vec<f64> = self.rows.iter().map(|r| r.sigma2).collect();
        levels.dedup();
        levels
            .into_iter()
            .map(|sigma2| {
                let rows: Vec<&Exp3Row> = self.rows.iter().filter(|r| r.sigma2 == sigma2).collect();
                let mut est: Vec<f64> = rows.iter().filter_map(|r| r.d_est).collect();
                let mut si: Vec<f64> = rows.iter().filter_map(|r| r.d_si).collect();
                let mut ratio: Vec<f64> = rows.iter().filter_map(|r| r.ratio()).collect();
                Exp3Summary {
                    sigma2,
                    runs: rows.len(),
                    failures: rows
                        .iter()
                        .filter(|r| r.d_est.is_none() || r.d_si.is_none())
                        .count(),
                    median_d_est: median(&mut est),
                    median_d_si: median(&mut si),
                    median_ratio: median(&mut ratio),
                }
            })
            .collect()
    }
}

pub fn run_exp3(cfg: &ExperimentConfig) -> Result<Exp3Result> {
    cfg.validate()?;
    let rule = cfg.estimate_rule()?;
    let (n, m) = (cfg.n, cfg.m);
    let steps = cfg.n_data.unwrap_or(200);
    let system = random_controllable_system(n, m, cfg.seeds.system)?;
    let (cost, structure) = random_cost(n, m, cfg.cost_kind, cfg.seeds.cost)?;
    let solution = solve_dare_default(&system, &cost)?;
    let theta = build_theta_are(&system, &solution.k, &structure)?;
    let space = theta.solution_space(RankRule::default())?;

    let jobs: Vec<(usize, f64, usize)> = cfg
        .sigma2
        .iter()
        .enumerate()
        .flat_map(|(level, &s)| (0..cfg.runs).map(move |run| (level, s, run)))
        .collect();
    let outcomes: Vec<Result<(Exp3Row, Option<Vec<f64>>)>> = jobs
        .par_iter()
        .map(|&(level, sigma2, run)| {
            let noise_seed = cfg
                .seeds
                .noise
                .wrapping_add((level * cfg.runs + run) as u64);
            let noise = NoiseSpec {
                sigma2,
                ..cfg.noise
            };
            let data = simulate_noisy_trajectory(
                &system,
                &solution.k,
                &noise,
                steps,
                cfg.seeds.data,
                noise_seed,
            )?
            .into_dataset()?;
            let mut sv = None;
            let est = build_theta_hat(&data, &structure).and_then(|cs| {
                let hat = estimated_space(&cs, rule, &space)?;
                if run == 0 {
                    sv = Some(hat.singular_values.clone());
                }
                distance(&space, &hat)
            });
            let si = sysid_distance(&data, &structure, rule, &space);
            let row = Exp3Row {
                sigma2,
                run,
                noise_seed,
                n_feedback: data.n_feedback(),
                error_est: est.as_ref().err().map(ToString::to_string),
                error_si: si.as_ref().err().map(ToString::to_string),
                d_est: est.ok(),
                d_si: si.ok(),
            };
            Ok((row, sv))
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len());
    let mut theta_hat_singular_values = Vec::new();
    for outcome in outcomes {
        let (row, sv) = outcome?;
        if let Some(sv) = sv {
            theta_hat_singular_values.push((row.sigma2, sv));
        }
        rows.push(row);
    }
    Ok(Exp3Result {
        structure,
        theta,
        space,
        rows,
        theta_hat_singular_values,
    })
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct SpaceReport {
    n_rows: usize,
    #[serde(rename = "N_v")]
    n_v: usize,
    numerical_rank: usize,
    dim: usize,
}

impl SpaceReport {
    fn new(cs: &CoefficientSystem, space: &SolutionSpace) -> Self {
        Self {
            n_rows: cs.n_rows(),
            n_v: cs.n_v(),
            numerical_rank: auto_rank(cs),
            dim: space.dim(),
        }
    }
}

fn write_pair(
    dir: &Path,
    theta: &CoefficientSystem,
    theta_hat: &CoefficientSystem,
    s: &SolutionSpace,
    s_hat: &SolutionSpace,
) -> Result<()> {
    theta.export(dir, "theta")?;
    theta_hat.export(dir, "theta_hat")?;
    write_singular_values_csv(dir.join("singular_values_theta.csv"), &s.singular_values)?;
    write_singular_values_csv(
        dir.join("singular_values_theta_hat.csv"),
        &s_hat.singular_values,
    )?;
    write_matrix_csv(dir.join("basis_S.csv"), &s.basis)?;
    write_matrix_csv(dir.join("basis_S_hat.csv"), &s_hat.basis)?;
    Ok(())
}

pub fn write_exp1(dir: impl AsRef<Path>, res: &Exp1Result) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_pair(dir, &res.theta, &res.theta_hat, &res.space, &res.space_hat)?;
    res.data.write_csv(dir.join("dataset.csv"))?;
    #[derive(Serialize)]
    struct Summary {
        experiment: &'static str,
        dare_residual: f64,
        dare_iterations: usize,
        theta: SpaceReport,
        theta_hat: SpaceReport,
        distance: f64,
    }
    write_json(
        dir.join("summary.json"),
        &Summary {
            experiment: "exp1",
            dare_residual: res.solution.residual,
            dare_iterations: res.solution.iterations,
            theta: SpaceReport::new(&res.theta, &res.space),
            theta_hat: SpaceReport::new(&res.theta_hat, &res.space_hat),
            distance: res.distance,
        },
    )
}

pub fn write_exp2(dir: impl AsRef<Path>, cfg: &ExperimentConfig, res: &Exp2Result) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(dir.join("config.json"), cfg)?;
    write_pair(dir, &res.theta, &res.theta_hat, &res.space, &res.space_hat)?;
    res.data.write_csv(dir.join("dataset.csv"))?;
    res.structure.write_json(dir.join("prior.json"))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        #[serde(rename = "N_d")]
        n_data: usize,
        #[serde(rename = "N_d_prime")]
        n_feedback: usize,
        theta: SpaceReport,
        theta_hat: SpaceReport,
        distance: f64,
        sysid_same_data: Option<f64>,
        sysid_same_data_error: Option<&'a str>,
        sysid_full_data: Option<f64>,
        sysid_full_data_error: Option<&'a str>,
        recovery_error: Option<f64>,
        recovered_positive_definite: Option<bool>,
    }
    write_json(
        dir.join("summary.json"),
        &Summary {
            experiment: "exp2",
            n_data: res.data.len(),
            n_feedback: res.data.n_feedback(),
            theta: SpaceReport::new(&res.theta, &res.space),
            theta_hat: SpaceReport::new(&res.theta_hat, &res.space_hat),
            distance: res.distance,
            sysid_same_data: res.sysid_same_data.as_ref().ok().copied(),
            sysid_same_data_error: res.sysid_same_data.as_ref().err().map(String::as_str),
            sysid_full_data: res.sysid_full_data.as_ref().ok().copied(),
            sysid_full_data_error: res.sysid_full_data.as_ref().err().map(String::as_str),
            recovery_error: res.recovery_error,
            recovered_positive_definite: res.recovered_positive_definite,
        },
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_exp3(dir: impl AsRef<Path>, cfg: &ExperimentConfig, res: &Exp3Result) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(dir.join("config.json"), cfg)?;
    res.structure.write_json(dir.join("prior.json"))?;
    write_singular_values_csv(
        dir.join("singular_values_theta.csv"),
        &res.space.singular_values,
    )?;
    for (level, (_, sv)) in res.theta_hat_singular_values.iter().enumerate() {
        write_singular_values_csv(
            dir.join(format!("singular_values_theta_hat_{level}.csv")),
            sv,
        )?;
    }
    let mut csv = String::from("sigma2,run,noise_seed,N_d_prime,d_est,d_si\n");
    for r in &res.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(r.sigma2),
            r.run,
            r.noise_seed,
            r.n_feedback,
            opt(r.d_est),
            opt(r.d_si)
        ));
    }
    fs::write(dir.join("distances.csv"), csv)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: &'static str,
        #[serde(rename = "N_v")]
        n_v: usize,
        theta_rows: usize,
        dim_s: usize,
        levels: Vec<Exp3Summary>,
        rows: &'a [Exp3Row],
    }
    write_json(
        dir.join("summary.json"),
        &Summary {
            experiment: "exp3",
            n_v: res.structure.n_v(),
            theta_rows: res.theta.n_rows(),
            dim_s: res.space.dim(),
            levels: res.summary(),
            rows: &res.rows,
        },
    )
}
