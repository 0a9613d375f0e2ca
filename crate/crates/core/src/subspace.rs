//! Null spaces, numerical rank, orthogonal projections and the projection
//! distance between solution spaces.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SVD};

use crate::data::PriorStructure;
use crate::error::{Error, Result};
use crate::lqr::is_positive_definite;

/// `max(rows, cols) * eps`, the usual numerical-rank threshold.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

/// How the dimension of a null space is decided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    /// rank = #{sigma_i > tol_rel * sigma_1}; `None` uses [`default_rank_tol`].
    Auto(Option<f64>),
    /// Take the last `d` right singular vectors regardless of any gap.
    FixedDim(usize),
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Auto(None)
    }
}

impl fmt::Display for RankRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankRule::Auto(None) => write!(f, "auto"),
            RankRule::Auto(Some(tol)) => write!(f, "auto:{tol:e}"),
            RankRule::FixedDim(d) => write!(f, "fixed:{d}"),
        }
    }
}

/// Parses `auto`, `auto:<tol>` or `fixed:<d>`.
impl FromStr for RankRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "auto" {
            return Ok(RankRule::Auto(None));
        }
        if let Some(tol) = s.strip_prefix("auto:") {
            let tol: f64 = tol
                .parse()
                .map_err(|_| Error::Config(format!("bad rank tolerance '{tol}'")))?;
            if tol.is_nan() || tol <= 0.0 {
                return Err(Error::Config(format!(
                    "rank tolerance must be positive, got {tol}"
                )));
            }
            return Ok(RankRule::Auto(Some(tol)));
        }
        if let Some(d) = s.strip_prefix("fixed:") {
            let d: usize = d
                .parse()
                .map_err(|_| Error::Config(format!("bad fixed dimension '{d}'")))?;
            return Ok(RankRule::FixedDim(d));
        }
        Err(Error::Config(format!(
            "rank rule must be auto, auto:<tol> or fixed:<d>, got '{s}'"
        )))
    }
}

/// Descending singular values (`min(rows, cols)` of them) together with a full
/// `cols x cols` orthogonal matrix of right singular vectors in the same order.
///
/// Tall inputs are reduced to their triangular QR factor first; wide inputs are
/// padded with zero rows so the decomposition yields every right singular vector.
pub fn full_right_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let square = if rows > cols {
        m.clone().qr().r()
    } else if rows < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = SVD::new(square, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut v = DMatrix::zeros(cols, cols);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &v_t.row(src).transpose());
    }
    let sigma = order
        .iter()
        .take(rows.min(cols))
        .map(|&i| svd.singular_values[i])
        .collect();
    (sigma, v)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol_rel * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol_rel: f64) -> usize {
    rank_from_sigma(&singular_values(m), tol_rel)
}

fn rank_from_sigma(sigma: &[f64], tol_rel: f64) -> usize {
    match sigma.first() {
        Some(&top) if top > 0.0 => sigma.iter().filter(|&&s| s > tol_rel * top).count(),
        _ => 0,
    }
}

/// An orthonormal basis of a subspace of `R^{N_v}`.
#[derive(Debug, Clone)]
pub struct SolutionSpace {
    pub basis: DMatrix<f64>,
    /// Descending singular values of the matrix the space was extracted from.
    pub singular_values: Vec<f64>,
}

impl SolutionSpace {
    /// Orthonormalizes arbitrary spanning columns. Columns must be independent.
    pub fn from_columns(columns: &DMatrix<f64>) -> Result<Self> {
        let (rows, d) = columns.shape();
        if d == 0 {
            return Ok(Self {
                basis: DMatrix::zeros(rows, 0),
                singular_values: Vec::new(),
            });
        }
        if d > rows {
            return Err(Error::DimensionMismatch(format!(
                "{d} columns cannot be independent in R^{rows}"
            )));
        }
        let rank = numerical_rank(columns, default_rank_tol(rows, d));
        if rank < d {
            return Err(Error::RankDeficient {
                what: "basis columns",
                rank,
                needed: d,
            });
        }
        let basis = columns.clone().qr().q();
        Ok(Self {
            basis,
            singular_values: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn projection(&self) -> DMatrix<f64> {
        projection(self)
    }
}

/// Null space of `theta` under the given rank rule.
pub fn null_space(theta: &DMatrix<f64>, rule: RankRule) -> Result<SolutionSpace> {
    let (rows, cols) = theta.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    let (sigma, v) = full_right_svd(theta);
    let dim = match rule {
        RankRule::Auto(tol) => {
            let tol = tol.unwrap_or_else(|| default_rank_tol(rows, cols));
            cols - rank_from_sigma(&sigma, tol)
        }
        RankRule::FixedDim(d) => {
            if d > cols {
                return Err(Error::DimensionMismatch(format!(
                    "fixed null dimension {d} exceeds N_v = {cols}"
                )));
            }
            d
        }
    };
    Ok(SolutionSpace {
        basis: v.columns(cols - dim, dim).into_owned(),
        singular_values: sigma,
    })
}

/// Orthogonal projector `U U'` onto the space.
pub fn projection(space: &SolutionSpace) -> DMatrix<f64> {
    &space.basis * space.basis.transpose()
}

/// `|Pi_1 - Pi_2|_2` for two subspaces of equal dimension.
///
/// Evaluated as the largest singular value of `(I - Pi_1) U_2`, which equals the
/// projector-difference norm for equal dimensions and stays accurate when the
/// distance is tiny. The larger of the two one-sided values is returned so the
/// result is exactly symmetric.
pub fn distance(s1: &SolutionSpace, s2: &SolutionSpace) -> Result<f64> {
    if s1.ambient_dim() != s2.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "ambient dimensions differ: {} vs {}",
            s1.ambient_dim(),
            s2.ambient_dim()
        )));
    }
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "solution spaces have dimensions {} and {}",
            s1.dim(),
            s2.dim()
        )));
    }
    if s1.dim() == 0 {
        return Ok(0.0);
    }
    let one_sided = |u: &DMatrix<f64>, w: &DMatrix<f64>| {
        let residual = w - u * (u.transpose() * w);
        singular_values(&residual).first().copied().unwrap_or(0.0)
    };
    let d = one_sided(&s1.basis, &s2.basis).max(one_sided(&s2.basis, &s1.basis));
    Ok(d.clamp(0.0, 1.0))
}

/// Cost matrices read off a one-dimensional solution space.
#[derive(Debug, Clone)]
pub struct RecoveredCost {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p_positive_definite: bool,
    pub q_positive_definite: bool,
    pub r_positive_definite: bool,
}

impl RecoveredCost {
    pub fn all_positive_definite(&self) -> bool {
        self.p_positive_definite && self.q_positive_definite && self.r_positive_definite
    }
}

#[derive(Debug, Clone)]
pub enum Recovery {
    /// One-dimensional space; the triple is defined up to positive scale.
    Recovered(RecoveredCost),
    /// Dimension other than one; no search over the space is attempted.
    Indeterminate { basis: DMatrix<f64> },
}

pub fn recover_solution(space: &SolutionSpace, structure: &PriorStructure) -> Result<Recovery> {
    if space.dim() != 1 {
        return Ok(Recovery::Indeterminate {
            basis: space.basis.clone(),
        });
    }
    let s = space.basis.column(0).into_owned();
    let (mut p, mut q, mut r) = structure.unpack(s.as_slice())?;
    let sign_key = if q.trace() != 0.0 {
        q.trace()
    } else {
        p.trace()
    };
    if sign_key < 0.0 {
        p.neg_mut();
        q.neg_mut();
        r.neg_mut();
    }
    Ok(Recovery::Recovered(RecoveredCost {
        p_positive_definite: is_positive_definite(&p),
        q_positive_definite: is_positive_definite(&q),
        r_positive_definite: is_positive_definite(&r),
        p,
        q,
        r,
    }))
}
