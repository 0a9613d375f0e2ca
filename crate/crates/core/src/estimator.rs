//! Data-driven estimate of the ARE.
//!
//! For observation pairs `(i, j)` where `u_i = -K x_i(0)`, the scalar
//!
//! ```text
//! f_ij = x_i(1)' P x_j(1) + x_i(0)' (Q - P) x_j(0) + u_i' R u_j
//! ```
//!
//! vanishes at every `(P, Q, R)` satisfying the gain-form ARE, whatever `u_j`
//! is. Each `f_ij` is linear in the packed parameters, so stacking one row per
//! pair gives `Theta_hat s = 0` without knowing `A`, `B` or `K`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::are_builder::{CoefficientSystem, Provenance, RowLabel};
use crate::data::{Block, Dataset, Observation, PriorStructure};
use crate::error::{Error, Result};
use crate::lqr::{closed_loop_value, CostPair, LinearSystem};

/// Rows of `Theta_hat`: `N_d N'_d - N'_d (N'_d - 1) / 2`.
pub fn estimated_row_count(n_data: usize, n_feedback: usize) -> usize {
    n_data * n_feedback - n_feedback * n_feedback.saturating_sub(1) / 2
}

fn check_pair(a: &Observation, b: &Observation) -> Result<()> {
    if a.x0.len() != b.x0.len() || a.x1.len() != b.x1.len() || a.u.len() != b.u.len() {
        return Err(Error::DimensionMismatch(
            "observations of different sizes".into(),
        ));
    }
    if a.x0.len() != a.x1.len() {
        return Err(Error::DimensionMismatch(
            "x(0) and x(1) differ in length".into(),
        ));
    }
    Ok(())
}

fn quad(a: &DVector<f64>, m: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    a.dot(&(m * b))
}

pub fn f_value(
    obs_i: &Observation,
    obs_j: &Observation,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    check_pair(obs_i, obs_j)?;
    let (n, m) = (obs_i.x0.len(), obs_i.u.len());
    if p.shape() != (n, n) || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "P, Q must be {n}x{n} and R {m}x{m}"
        )));
    }
    Ok(quad(&obs_i.x1, p, &obs_j.x1)
        + quad(&obs_i.x0, &(q - p), &obs_j.x0)
        + quad(&obs_i.u, r, &obs_j.u))
}

/// Coefficient of the symmetric parameter `m_kl` in `a' M b`.
#[inline]
fn bilinear_coeff(a: &DVector<f64>, b: &DVector<f64>, k: usize, l: usize) -> f64 {
    if k == l {
        a[k] * b[k]
    } else {
        a[k] * b[l] + a[l] * b[k]
    }
}

/// Linearization of `f_ij` in the packed parameters: `row . pack(P, Q, R) = f_ij`.
pub fn f_row(
    obs_i: &Observation,
    obs_j: &Observation,
    structure: &PriorStructure,
) -> Result<DVector<f64>> {
    check_pair(obs_i, obs_j)?;
    if obs_i.x0.len() != structure.n() || obs_i.u.len() != structure.m() {
        return Err(Error::DimensionMismatch(format!(
            "observations are (n={}, m={}) but structure is (n={}, m={})",
            obs_i.x0.len(),
            obs_i.u.len(),
            structure.n(),
            structure.m()
        )));
    }
    let row = structure
        .params()
        .iter()
        .map(|param| {
            let (k, l) = (param.k, param.l);
            match param.block {
                Block::P => {
                    bilinear_coeff(&obs_i.x1, &obs_j.x1, k, l)
                        - bilinear_coeff(&obs_i.x0, &obs_j.x0, k, l)
                }
                Block::Q => bilinear_coeff(&obs_i.x0, &obs_j.x0, k, l),
                Block::R => bilinear_coeff(&obs_i.u, &obs_j.u, k, l),
            }
        })
        .collect::<Vec<_>>();
    Ok(DVector::from_vec(row))
}

/// Pairs `(i, j)` (0-based) in row order: for each feedback `i`, the pairs
/// `(i, j)` with `i <= j < N'_d`; then every feedback `i` against every
/// non-feedback `j`. Symmetric feedback pairs appear once since `f_ij = f_ji`.
pub fn pair_order(n_data: usize, n_feedback: usize) -> Vec<(usize, usize)> {
    let within = (0..n_feedback).flat_map(|i| (i..n_feedback).map(move |j| (i, j)));
    let across = (0..n_feedback).flat_map(move |i| (n_feedback..n_data).map(move |j| (i, j)));
    within.chain(across).collect()
}

/// Builds `Theta_hat` from the data alone.
pub fn build_theta_hat(data: &Dataset, structure: &PriorStructure) -> Result<CoefficientSystem> {
    if data.n_feedback() == 0 {
        return Err(Error::EmptyFeedbackSet);
    }
    if data.n() != structure.n() || data.m() != structure.m() {
        return Err(Error::DimensionMismatch(format!(
            "dataset is (n={}, m={}) but structure is (n={}, m={})",
            data.n(),
            data.m(),
            structure.n(),
            structure.m()
        )));
    }
    let pairs = pair_order(data.len(), data.n_feedback());
    let obs = data.observations();
    let rows: Vec<DVector<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| f_row(&obs[i], &obs[j], structure))
        .collect::<Result<_>>()?;
    let theta = DMatrix::from_fn(rows.len(), structure.n_v(), |r, c| rows[r][c]);
    Ok(CoefficientSystem {
        theta,
        structure: structure.clone(),
        provenance: Provenance::DataDriven,
        row_labels: pairs
            .into_iter()
            .map(|(i, j)| RowLabel::Pair { i, j })
            .collect(),
    })
}

/// `max |f_ij|` over all pairs with a feedback first index, at `(P, Q, R)`.
pub fn max_pair_residual(
    data: &Dataset,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    let obs = data.observations();
    let mut worst: f64 = 0.0;
    for i in 0..data.n_feedback() {
        for o in obs {
            worst = worst.max(f_value(&obs[i], o, p, q, r)?.abs());
        }
    }
    Ok(worst)
}

/// Evaluates every `f_ij` (`i` feedback, any `j`) at the `(P, Q, R)` for which
/// `K` is optimal. `P` is the value matrix of the closed loop under `K`.
pub fn check_pair_identity(
    data: &Dataset,
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    cost: &CostPair,
) -> Result<f64> {
    let p = closed_loop_value(sys, gain, cost)?;
    max_pair_residual(data, &p, &cost.q, &cost.r)
}

/// Largest absolute entry over all observation vectors.
pub fn data_scale(data: &Dataset) -> f64 {
    data.observations()
        .iter()
        .flat_map(|o| o.x0.iter().chain(o.u.iter()).chain(o.x1.iter()))
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}
