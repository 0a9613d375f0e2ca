//! Random systems, costs and datasets for the experiments.
//!
//! All randomness comes from ChaCha8 generators. A seed is expanded into one
//! independent stream per purpose (system, cost, data, initial state,
//! exploration, noise), so changing e.g. the noise variance never changes the
//! noiseless trajectory drawn from the same seed.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, PriorStructure};
use crate::error::{Error, Result};
use crate::lqr::{CostPair, LinearSystem};

/// Draws allowed before giving up on finding a controllable pair.
pub const MAX_SYSTEM_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    System = 1,
    Cost = 2,
    Data = 3,
    InitialState = 4,
    Exploration = 5,
    Noise = 6,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..=hi))
}

fn uniform_vector(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..=1.0))
}

/// `A` and `B` with i.i.d. uniform `[-1, 1]` entries, redrawn until controllable.
pub fn random_controllable_system(n: usize, m: usize, seed: u64) -> Result<LinearSystem> {
    if n == 0 || m == 0 {
        return Err(Error::Config("n and m must be positive".into()));
    }
    let mut rng = rng_for(seed, Stream::System);
    for _ in 0..MAX_SYSTEM_DRAWS {
        let a = uniform_matrix(&mut rng, n, n, -1.0, 1.0);
        let b = uniform_matrix(&mut rng, n, m, -1.0, 1.0);
        let sys = LinearSystem::new(a, b)?;
        if sys.is_controllable() {
            return Ok(sys);
        }
    }
    Err(Error::RetriesExhausted(MAX_SYSTEM_DRAWS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CostKind {
    /// Diagonal `Q`, `R` with entries uniform in `[lo, hi]`.
    DiagonalUniform { lo: f64, hi: f64 },
    /// Gram matrices with `zeros_q` / `zeros_r` off-diagonal entries (counted
    /// in both triangles) set to zero, then shifted so `lambda_max / lambda_min = cond`.
    SparseConditioned {
        zeros_q: usize,
        zeros_r: usize,
        cond: f64,
    },
}

/// Zeroes `zeros / 2` random symmetric off-diagonal pairs, returning the kept
/// upper-triangular pattern.
fn sparsify(mat: &mut DMatrix<f64>, zeros: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let dim = mat.nrows();
    let mut off: Vec<(usize, usize)> = (0..dim)
        .flat_map(|k| (k + 1..dim).map(move |l| (k, l)))
        .collect();
    off.shuffle(rng);
    for &(k, l) in &off[..zeros / 2] {
        mat[(k, l)] = 0.0;
        mat[(l, k)] = 0.0;
    }
    let mut kept: Vec<(usize, usize)> = (0..dim)
        .map(|k| (k, k))
        .chain(off[zeros / 2..].iter().copied())
        .collect();
    kept.sort_unstable();
    kept
}

/// Adds `c I` so that the eigenvalue ratio becomes exactly `cond`.
/// A 1x1 matrix has ratio 1 whatever the shift, so it is left as is.
fn condition(mat: &mut DMatrix<f64>, cond: f64) {
    if mat.nrows() < 2 {
        return;
    }
    let eig = mat.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let shift = (hi - cond * lo) / (cond - 1.0);
    for i in 0..mat.nrows() {
        mat[(i, i)] += shift;
    }
}

pub fn random_cost(
    n: usize,
    m: usize,
    kind: CostKind,
    seed: u64,
) -> Result<(CostPair, PriorStructure)> {
    let mut rng = rng_for(seed, Stream::Cost);
    match kind {
        CostKind::DiagonalUniform { lo, hi } => {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!(
                    "diagonal range [{lo}, {hi}] must be positive"
                )));
            }
            let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..=hi)));
            let r = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.random_range(lo..=hi)));
            Ok((CostPair::new(q, r)?, PriorStructure::diagonal(n, m)))
        }
        CostKind::SparseConditioned {
            zeros_q,
            zeros_r,
            cond,
        } => {
            for (name, zeros, dim) in [("zeros_Q", zeros_q, n), ("zeros_R", zeros_r, m)] {
                if zeros % 2 != 0 || zeros > dim * (dim - 1) {
                    return Err(Error::InvalidPattern(format!(
                        "{name} = {zeros} must be even and at most {}",
                        dim * (dim - 1)
                    )));
                }
            }
            if cond.is_nan() || cond <= 1.0 {
                return Err(Error::Config(format!(
                    "condition number must exceed 1, got {cond}"
                )));
            }
            let mq = uniform_matrix(&mut rng, n, n, -1.0, 1.0);
            let mr = uniform_matrix(&mut rng, m, m, -1.0, 1.0);
            let mut q = mq.transpose() * mq;
            let mut r = mr.transpose() * mr;
            let keep_q = sparsify(&mut q, zeros_q, &mut rng);
            let keep_r = sparsify(&mut r, zeros_r, &mut rng);
            condition(&mut q, cond);
            condition(&mut r, cond);
            let structure = if zeros_q == 0 && zeros_r == 0 {
                PriorStructure::dense(n, m)
            } else {
                PriorStructure::pattern(n, m, &keep_q, &keep_r)?
            };
            Ok((CostPair::new(q, r)?, structure))
        }
    }
}

/// Noiseless data: `u_i = -K x_i(0)` for the first `n_feedback` columns of
/// `x0`, the given inputs for the rest, and `x_i(1) = A x_i(0) + B u_i`.
pub fn make_problem1_dataset(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    x0: &DMatrix<f64>,
    extra_inputs: &DMatrix<f64>,
    n_feedback: usize,
) -> Result<Dataset> {
    let (n, m) = (sys.n(), sys.m());
    let n_data = x0.ncols();
    if x0.nrows() != n
        || gain.shape() != (m, n)
        || n_feedback > n_data
        || extra_inputs.shape() != (m, n_data - n_feedback)
    {
        return Err(Error::DimensionMismatch(format!(
            "expected X0 {n}xN_d, K {m}x{n} and extra inputs {m}x(N_d - N'_d), got {:?}, {:?}, {:?} with N'_d = {n_feedback}",
            x0.shape(),
            gain.shape(),
            extra_inputs.shape()
        )));
    }
    let obs = (0..n_data)
        .map(|i| {
            let x = x0.column(i).into_owned();
            let u = if i < n_feedback {
                -gain * &x
            } else {
                extra_inputs.column(i - n_feedback).into_owned()
            };
            let x1 = &sys.a * &x + &sys.b * &u;
            Observation::new(x, u, x1)
        })
        .collect();
    Dataset::new(obs, n_feedback)
}

/// Problem-1 data with states and non-feedback inputs uniform in `[-1, 1]`.
pub fn random_problem1_dataset(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    n_data: usize,
    n_feedback: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = rng_for(seed, Stream::Data);
    let x0 = uniform_matrix(&mut rng, sys.n(), n_data, -1.0, 1.0);
    let extra = uniform_matrix(
        &mut rng,
        sys.m(),
        n_data.saturating_sub(n_feedback),
        -1.0,
        1.0,
    );
    make_problem1_dataset(sys, gain, &x0, &extra, n_feedback)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-element variance of the Gaussian observation noise.
    pub sigma2: f64,
    /// Norm of the exploration input `v(k)`.
    #[serde(default = "default_exploration_norm")]
    pub exploration_norm: f64,
    /// Exploration is applied only while `|x*(k)| <= state_norm_gate`.
    #[serde(default = "default_state_norm_gate")]
    pub state_norm_gate: f64,
}

fn default_exploration_norm() -> f64 {
    0.2
}

fn default_state_norm_gate() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma2: 0.0,
            exploration_norm: default_exploration_norm(),
            state_norm_gate: default_state_norm_gate(),
        }
    }
}

impl NoiseSpec {
    pub fn with_sigma2(sigma2: f64) -> Self {
        Self {
            sigma2,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sigma2.is_nan()
            || self.sigma2 < 0.0
            || self.exploration_norm.is_nan()
            || self.exploration_norm < 0.0
        {
            return Err(Error::Config(format!(
                "sigma2 and exploration_norm must be nonnegative, got {} and {}",
                self.sigma2, self.exploration_norm
            )));
        }
        Ok(())
    }
}

/// A simulated closed-loop run before sorting.
#[derive(Debug, Clone)]
pub struct NoisyTrajectory {
    /// Observation `k` is `(x*(k) + e(k), u*(k) + e_u(k), x*(k+1) + e(k+1))`.
    pub observations: Vec<Observation>,
    /// Whether `v(k)` was nonzero at step `k`.
    pub explored: Vec<bool>,
}

impl NoisyTrajectory {
    /// Stable partition with the unexplored (pure feedback) steps first.
    pub fn into_dataset(self) -> Result<Dataset> {
        let n_feedback = self.explored.iter().filter(|e| !**e).count();
        let (feedback, explored): (Vec<_>, Vec<_>) = self
            .observations
            .into_iter()
            .zip(self.explored)
            .partition(|(_, e)| !*e);
        let obs = feedback
            .into_iter()
            .chain(explored)
            .map(|(o, _)| o)
            .collect();
        Dataset::new(obs, n_feedback)
    }
}

/// Runs `x*(k+1) = A x*(k) + B u*(k)`, `u*(k) = -K x*(k) + v(k)` for `steps`
/// steps and records noisy consecutive-step triples. Consecutive observations
/// share the state noise draw, so `x_{k+1}(0) == x_k(1)` exactly. `seed`
/// drives the initial state and exploration, `noise_seed` the observation noise.
pub fn simulate_noisy_trajectory(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    noise: &NoiseSpec,
    steps: usize,
    seed: u64,
    noise_seed: u64,
) -> Result<NoisyTrajectory> {
    noise.validate()?;
    let (n, m) = (sys.n(), sys.m());
    if gain.shape() != (m, n) {
        return Err(Error::DimensionMismatch(format!("gain must be {m}x{n}")));
    }
    if steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }

    let mut init_rng = rng_for(seed, Stream::InitialState);
    let mut x = uniform_vector(&mut init_rng, n);
    if x.norm() > 1.0 {
        x.unscale_mut(x.norm());
    }

    let mut explore_rng = rng_for(seed, Stream::Exploration);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut explored = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut u = -gain * &x;
        let explore = noise.exploration_norm > 0.0 && x.norm() <= noise.state_norm_gate;
        if explore {
            let dir = uniform_vector(&mut explore_rng, m);
            let scale = noise.exploration_norm / dir.norm();
            u += dir * scale;
        }
        let next = &sys.a * &x + &sys.b * &u;
        states.push(x);
        inputs.push(u);
        explored.push(explore);
        x = next;
    }
    states.push(x);

    let sigma = noise.sigma2.sqrt();
    let mut noise_rng = rng_for(noise_seed, Stream::Noise);
    let mut draw = |len: usize| {
        DVector::from_fn(len, |_, _| {
            sigma * noise_rng.sample::<f64, _>(StandardNormal)
        })
    };
    let noisy_states: Vec<DVector<f64>> = states.iter().map(|s| s + draw(n)).collect();
    let noisy_inputs: Vec<DVector<f64>> = inputs.iter().map(|u| u + draw(m)).collect();

    let observations = (0..steps)
        .map(|k| {
            Observation::new(
                noisy_states[k].clone(),
                noisy_inputs[k].clone(),
                noisy_states[k + 1].clone(),
            )
        })
        .collect();
    Ok(NoisyTrajectory {
        observations,
        explored,
    })
}

/// Sorted dataset from [`simulate_noisy_trajectory`]; `N'_d` is the number of
/// steps without exploration.
pub fn simulate_noisy_sequential(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    noise: &NoiseSpec,
    steps: usize,
    seed: u64,
) -> Result<Dataset> {
    simulate_noisy_trajectory(sys, gain, noise, steps, seed, seed)?.into_dataset()
}
