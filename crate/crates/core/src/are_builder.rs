//! The vectorized true ARE `Theta s = 0` for known `(A, B, K)`.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PriorStructure;
use crate::error::{Error, Result};
use crate::io::write_matrix_csv;
use crate::lqr::{are_blocks_unchecked, LinearSystem};
use crate::subspace::{null_space, RankRule, SolutionSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    TrueARE,
    DataDriven,
    SysId,
}

/// Which scalar equation a row of a coefficient matrix encodes (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RowLabel {
    /// Entry `(k, l)`, `k <= l`, of `G1`.
    G1 { k: usize, l: usize },
    /// Entry `(k, l)` of `G2`.
    G2 { k: usize, l: usize },
    /// `f_{i,j}` for observations `i`, `j`.
    Pair { i: usize, j: usize },
}

/// A homogeneous linear system in the packed cost parameters.
#[derive(Debug, Clone)]
pub struct CoefficientSystem {
    pub theta: DMatrix<f64>,
    pub structure: PriorStructure,
    pub provenance: Provenance,
    pub row_labels: Vec<RowLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    provenance: Provenance,
    #[serde(rename = "N_rows")]
    n_rows: usize,
    #[serde(rename = "N_v")]
    n_v: usize,
    row_labels: Vec<RowLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pair_index: Option<Vec<[usize; 2]>>,
}

impl CoefficientSystem {
    pub fn n_rows(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.theta.ncols()
    }

    pub fn solution_space(&self, rule: RankRule) -> Result<SolutionSpace> {
        null_space(&self.theta, rule)
    }

    /// `(i, j)` pairs of the data-driven rows, in row order.
    pub fn pair_index(&self) -> Vec<(usize, usize)> {
        self.row_labels
            .iter()
            .filter_map(|label| match *label {
                RowLabel::Pair { i, j } => Some((i, j)),
                _ => None,
            })
            .collect()
    }

    /// Writes `<stem>.csv` (the matrix) and `<stem>.json` (row provenance).
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        write_matrix_csv(dir.join(format!("{stem}.csv")), &self.theta)?;
        let pairs = self.pair_index();
        let sidecar = Sidecar {
            provenance: self.provenance,
            n_rows: self.n_rows(),
            n_v: self.n_v(),
            row_labels: self.row_labels.clone(),
            pair_index: (self.provenance == Provenance::DataDriven)
                .then(|| pairs.iter().map(|&(i, j)| [i, j]).collect()),
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }
}

/// Row labels of the true ARE: `G1` upper triangle row-major, then `G2` row-major.
pub fn are_row_labels(n: usize, m: usize) -> Vec<RowLabel> {
    let g1 = (0..n).flat_map(|k| (k..n).map(move |l| RowLabel::G1 { k, l }));
    let g2 = (0..m).flat_map(|k| (0..n).map(move |l| RowLabel::G2 { k, l }));
    g1.chain(g2).collect()
}

fn stack_residual(g1: &DMatrix<f64>, g2: &DMatrix<f64>) -> Vec<f64> {
    let n = g1.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2 + g2.len());
    for k in 0..n {
        for l in k..n {
            out.push(g1[(k, l)]);
        }
    }
    for k in 0..g2.nrows() {
        for l in 0..n {
            out.push(g2[(k, l)]);
        }
    }
    out
}

/// `(G1, G2)` of the gain-form ARE at `(P, Q, R)` stacked in row-label order.
pub fn are_residual_vector(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Vec<f64> {
    let (g1, g2) = are_blocks_unchecked(&sys.a, &sys.b, gain, p, q, r);
    stack_residual(&g1, &g2)
}

/// Builds `Theta` column by column: column `k` is the stacked `(G1, G2)`
/// evaluated at `unpack(e_k)`. Exact because the residual is linear in
/// `(P, Q, R)` for fixed `(A, B, K)`.
pub fn build_theta_are(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    structure: &PriorStructure,
) -> Result<CoefficientSystem> {
    let (n, m) = (sys.n(), sys.m());
    if gain.shape() != (m, n) {
        return Err(Error::DimensionMismatch(format!(
            "gain must be {m}x{n}, got {:?}",
            gain.shape()
        )));
    }
    if structure.n() != n || structure.m() != m {
        return Err(Error::DimensionMismatch(format!(
            "structure is for (n={}, m={}) but system has (n={n}, m={m})",
            structure.n(),
            structure.m()
        )));
    }
    let n_v = structure.n_v();
    let labels = are_row_labels(n, m);
    let columns: Vec<Vec<f64>> = (0..n_v)
        .into_par_iter()
        .map(|col| {
            let mut e = vec![0.0; n_v];
            e[col] = 1.0;
            let (p, q, r) = structure.unpack(&e).expect("unit vector has length N_v");
            are_residual_vector(sys, gain, &p, &q, &r)
        })
        .collect();
    let theta = DMatrix::from_fn(labels.len(), n_v, |row, col| columns[col][row]);
    Ok(CoefficientSystem {
        theta,
        structure: structure.clone(),
        provenance: Provenance::TrueARE,
        row_labels: labels,
    })
}
