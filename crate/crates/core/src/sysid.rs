//! Least-squares identification of `(A, B, K)`, the baseline the data-driven
//! estimate is compared against.

use nalgebra::DMatrix;

use crate::are_builder::{build_theta_are, CoefficientSystem, Provenance};
use crate::data::{Dataset, PriorStructure};
use crate::error::{Error, Result};
use crate::lqr::LinearSystem;
use crate::subspace::{default_rank_tol, numerical_rank};

#[derive(Debug, Clone)]
pub struct IdentifiedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl IdentifiedSystem {
    pub fn system(&self) -> Result<LinearSystem> {
        LinearSystem::new(self.a.clone(), self.b.clone())
    }
}

/// Minimizes `|M X - Y|_F` for `M` given `X` with full row rank, i.e. returns
/// `Y X' (X X')^{-1}`, computed from a QR factorization of `X'`.
fn right_least_squares(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = x.shape();
    let rank = if cols >= rows {
        numerical_rank(x, default_rank_tol(rows, cols))
    } else {
        cols
    };
    if cols < rows || rank < rows {
        return Err(Error::RankDeficient {
            what,
            rank: rank.min(cols),
            needed: rows,
        });
    }
    let qr = x.transpose().qr();
    let rhs = qr.q().transpose() * y.transpose();
    let sol = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient {
            what,
            rank,
            needed: rows,
        })?;
    Ok(sol.transpose())
}

/// `[A B] = X(1) D' (D D')^{-1}` and `K = -U' X'(0)' (X'(0) X'(0)')^{-1}`.
pub fn identify(data: &Dataset) -> Result<IdentifiedSystem> {
    let n = data.n();
    let ab = right_least_squares(&data.d_matrix(), &data.x1_matrix(), "D")?;
    let k = -right_least_squares(
        &data.feedback_x0_matrix(),
        &data.feedback_u_matrix(),
        "X'(0)",
    )?;
    Ok(IdentifiedSystem {
        a: ab.columns(0, n).into_owned(),
        b: ab.columns(n, data.m()).into_owned(),
        k,
    })
}

/// The ARE coefficient system rebuilt from the identified model.
pub fn theta_from_sysid(data: &Dataset, structure: &PriorStructure) -> Result<CoefficientSystem> {
    let id = identify(data)?;
    let mut cs = build_theta_are(&id.system()?, &id.k, structure)?;
    cs.provenance = Provenance::SysId;
    Ok(cs)
}
