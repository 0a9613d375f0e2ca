//! Observation datasets, prior structure on the unknown cost, and packing of
//! `(P, Q, R)` into the parameter vector `s`.
//!
//! Packing order is fixed: the upper triangle of `P` row-major, then the free
//! entries of `Q` row-major, then the free entries of `R` row-major. An
//! off-diagonal parameter `m_kl` (k < l) stands for both `M[k,l]` and `M[l,k]`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;

/// One transition `(x_i(0), u_i, x_i(1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x0: DVector<f64>,
    pub u: DVector<f64>,
    pub x1: DVector<f64>,
}

impl Observation {
    pub fn new(x0: DVector<f64>, u: DVector<f64>, x1: DVector<f64>) -> Self {
        Self { x0, u, x1 }
    }

    /// Stacked `[x0; u]`.
    pub fn stacked(&self) -> DVector<f64> {
        let (n, m) = (self.x0.len(), self.u.len());
        DVector::from_fn(n + m, |i, _| if i < n { self.x0[i] } else { self.u[i - n] })
    }
}

/// Ordered observations; the first `n_feedback` were produced by `u = -K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    n_feedback: usize,
    n: usize,
    m: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, n_feedback: usize) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::DimensionMismatch("dataset has no observations".into()))?;
        let (n, m) = (first.x0.len(), first.u.len());
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch(
                "state and input dimensions must be positive".into(),
            ));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.x0.len() != n || obs.x1.len() != n || obs.u.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "observation {i} has dimensions ({}, {}, {}), expected ({n}, {m}, {n})",
                    obs.x0.len(),
                    obs.u.len(),
                    obs.x1.len()
                )));
            }
            let finite = obs
                .x0
                .iter()
                .chain(obs.u.iter())
                .chain(obs.x1.iter())
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::Parse(format!(
                    "observation {i} contains non-finite values"
                )));
            }
        }
        if n_feedback > observations.len() {
            return Err(Error::LengthMismatch {
                expected: observations.len(),
                got: n_feedback,
            });
        }
        Ok(Self {
            observations,
            n_feedback,
            n,
            m,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_feedback(&self) -> usize {
        self.n_feedback
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn collect_columns(
        &self,
        count: usize,
        rows: usize,
        pick: impl Fn(&Observation) -> &DVector<f64>,
    ) -> DMatrix<f64> {
        DMatrix::from_fn(rows, count, |r, c| pick(&self.observations[c])[r])
    }

    /// `X(0)`, `n x N_d`.
    pub fn x0_matrix(&self) -> DMatrix<f64> {
        self.collect_columns(self.len(), self.n, |o| &o.x0)
    }

    /// `X(1)`, `n x N_d`.
    pub fn x1_matrix(&self) -> DMatrix<f64> {
        self.collect_columns(self.len(), self.n, |o| &o.x1)
    }

    /// `U`, `m x N_d`.
    pub fn u_matrix(&self) -> DMatrix<f64> {
        self.collect_columns(self.len(), self.m, |o| &o.u)
    }

    /// `X'(0)`, the feedback columns of `X(0)`.
    pub fn feedback_x0_matrix(&self) -> DMatrix<f64> {
        self.collect_columns(self.n_feedback, self.n, |o| &o.x0)
    }

    /// `U'`, the feedback columns of `U`.
    pub fn feedback_u_matrix(&self) -> DMatrix<f64> {
        self.collect_columns(self.n_feedback, self.m, |o| &o.u)
    }

    /// `D = [X(0); U]`.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n + self.m, self.len());
        d.rows_mut(0, self.n).copy_from(&self.x0_matrix());
        d.rows_mut(self.n, self.m).copy_from(&self.u_matrix());
        d
    }

    /// Adds an observation; feedback ones go at the end of the feedback prefix.
    pub fn push(&mut self, obs: Observation, is_feedback: bool) -> Result<()> {
        if obs.x0.len() != self.n || obs.x1.len() != self.n || obs.u.len() != self.m {
            return Err(Error::DimensionMismatch(
                "pushed observation has wrong dimensions".into(),
            ));
        }
        if is_feedback {
            self.observations.insert(self.n_feedback, obs);
            self.n_feedback += 1;
        } else {
            self.observations.push(obs);
        }
        Ok(())
    }

    /// CSV form: a `# n=.. m=.. n_feedback=..` line, a column header, one row per observation.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!(
            "# n={} m={} n_feedback={}\n",
            self.n, self.m, self.n_feedback
        );
        let header: Vec<String> = (1..=self.n)
            .map(|i| format!("x0_{i}"))
            .chain((1..=self.m).map(|i| format!("u_{i}")))
            .chain((1..=self.n).map(|i| format!("x1_{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for obs in &self.observations {
            let row: Vec<String> = obs
                .x0
                .iter()
                .chain(obs.u.iter())
                .chain(obs.x1.iter())
                .map(|&v| fmt_f64(v))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let meta = first.trim().strip_prefix('#').ok_or_else(|| {
            Error::Parse("dataset CSV must start with '# n=.. m=.. n_feedback=..'".into())
        })?;
        let (mut n, mut m, mut n_feedback) = (None, None, None);
        for token in meta.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header token '{token}'")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::Parse(format!("bad header value '{token}'")))?;
            match key {
                "n" => n = Some(value),
                "m" => m = Some(value),
                "n_feedback" => n_feedback = Some(value),
                _ => return Err(Error::Parse(format!("unknown header key '{key}'"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("header is missing '{k}'"));
        let n = n.ok_or_else(|| missing("n"))?;
        let m = m.ok_or_else(|| missing("m"))?;
        let n_feedback = n_feedback.ok_or_else(|| missing("n_feedback"))?;

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(rest.as_bytes());
        let width = 2 * n + m;
        if reader.headers()?.len() != width {
            return Err(Error::Parse(format!(
                "expected {width} columns for n={n} m={m}, got {}",
                reader.headers()?.len()
            )));
        }
        let mut observations = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != width {
                return Err(Error::Parse(format!(
                    "row {line} has {} columns, expected {width}",
                    record.len()
                )));
            }
            let values = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {line}: bad number '{f}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            observations.push(Observation::new(
                DVector::from_column_slice(&values[..n]),
                DVector::from_column_slice(&values[n..n + m]),
                DVector::from_column_slice(&values[n + m..]),
            ));
        }
        Dataset::new(observations, n_feedback)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Smallest `N_d` that yields at least as many equations as free parameters
/// for diagonal `Q` and `R`: `n + 1 + ceil(m / n)`.
///
/// Using more than `n` feedback observations adds no independent equations
/// for noiseless data.
pub fn min_data_count(n: usize, m: usize) -> usize {
    assert!(n >= 1 && m >= 1, "n and m must be positive");
    n + 1 + m.div_ceil(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorMode {
    Dense,
    DiagonalQR,
    Pattern,
}

/// Which matrix a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    P,
    Q,
    R,
}

/// A single free parameter: entry `(k, l)`, `k <= l`, of one of the matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Param {
    pub block: Block,
    pub k: usize,
    pub l: usize,
}

/// Free entries of `Q` and `R`; `P` is always a full symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorStructure {
    mode: PriorMode,
    n: usize,
    m: usize,
    pattern_q: Vec<(usize, usize)>,
    pattern_r: Vec<(usize, usize)>,
}

fn upper_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim)
        .flat_map(|k| (k..dim).map(move |l| (k, l)))
        .collect()
}

fn diagonal_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).map(|k| (k, k)).collect()
}

fn validate_pattern(
    name: &str,
    dim: usize,
    pattern: &[(usize, usize)],
) -> Result<Vec<(usize, usize)>> {
    for &(k, l) in pattern {
        if k > l || l >= dim {
            return Err(Error::InvalidPattern(format!(
                "{name} entry ({k}, {l}) must satisfy k <= l < {dim}"
            )));
        }
    }
    let mut sorted = pattern.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted)
}

impl PriorStructure {
    pub fn dense(n: usize, m: usize) -> Self {
        Self {
            mode: PriorMode::Dense,
            n,
            m,
            pattern_q: upper_pairs(n),
            pattern_r: upper_pairs(m),
        }
    }

    pub fn diagonal(n: usize, m: usize) -> Self {
        Self {
            mode: PriorMode::DiagonalQR,
            n,
            m,
            pattern_q: diagonal_pairs(n),
            pattern_r: diagonal_pairs(m),
        }
    }

    /// Arbitrary sparsity pattern given as upper-triangular `(k, l)` pairs.
    pub fn pattern(
        n: usize,
        m: usize,
        pattern_q: &[(usize, usize)],
        pattern_r: &[(usize, usize)],
    ) -> Result<Self> {
        Ok(Self {
            mode: PriorMode::Pattern,
            n,
            m,
            pattern_q: validate_pattern("pattern_Q", n, pattern_q)?,
            pattern_r: validate_pattern("pattern_R", m, pattern_r)?,
        })
    }

    pub fn mode(&self) -> PriorMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pattern_q(&self) -> &[(usize, usize)] {
        &self.pattern_q
    }

    pub fn pattern_r(&self) -> &[(usize, usize)] {
        &self.pattern_r
    }

    pub fn n_p(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// Number of free parameters `N_v`.
    pub fn n_v(&self) -> usize {
        self.n_p() + self.pattern_q.len() + self.pattern_r.len()
    }

    /// Parameters in packing order.
    pub fn params(&self) -> Vec<Param> {
        let p = upper_pairs(self.n).into_iter().map(|(k, l)| Param {
            block: Block::P,
            k,
            l,
        });
        let q = self.pattern_q.iter().map(|&(k, l)| Param {
            block: Block::Q,
            k,
            l,
        });
        let r = self.pattern_r.iter().map(|&(k, l)| Param {
            block: Block::R,
            k,
            l,
        });
        p.chain(q).chain(r).collect()
    }

    fn check_shapes(&self, p: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if p.shape() != (n, n) || q.shape() != (n, n) || r.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "expected P, Q {n}x{n} and R {m}x{m}, got {:?}, {:?}, {:?}",
                p.shape(),
                q.shape(),
                r.shape()
            )));
        }
        Ok(())
    }

    /// Packs the upper triangles of `(P, Q, R)`; entries of `Q`, `R` outside the
    /// pattern must be exactly zero.
    pub fn pack(
        &self,
        p: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        self.check_shapes(p, q, r)?;
        for (which, mat, pattern) in [("Q", q, &self.pattern_q), ("R", r, &self.pattern_r)] {
            let dim = mat.nrows();
            for row in 0..dim {
                for col in row..dim {
                    let value = if mat[(row, col)] != 0.0 {
                        mat[(row, col)]
                    } else {
                        mat[(col, row)]
                    };
                    if value != 0.0 && pattern.binary_search(&(row, col)).is_err() {
                        return Err(Error::PatternViolation {
                            which,
                            row,
                            col,
                            value,
                        });
                    }
                }
            }
        }
        let values: Vec<f64> = self
            .params()
            .iter()
            .map(|param| {
                let mat = match param.block {
                    Block::P => p,
                    Block::Q => q,
                    Block::R => r,
                };
                mat[(param.k, param.l)]
            })
            .collect();
        Ok(DVector::from_vec(values))
    }

    /// Inverse of [`pack`](Self::pack); symmetric matrices are rebuilt from the upper triangles.
    pub fn unpack(&self, s: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        if s.len() != self.n_v() {
            return Err(Error::LengthMismatch {
                expected: self.n_v(),
                got: s.len(),
            });
        }
        let mut p = DMatrix::zeros(self.n, self.n);
        let mut q = DMatrix::zeros(self.n, self.n);
        let mut r = DMatrix::zeros(self.m, self.m);
        for (param, &value) in self.params().iter().zip(s) {
            let mat = match param.block {
                Block::P => &mut p,
                Block::Q => &mut q,
                Block::R => &mut r,
            };
            mat[(param.k, param.l)] = value;
            mat[(param.l, param.k)] = value;
        }
        Ok((p, q, r))
    }

    pub fn to_json(&self) -> PriorJson {
        PriorJson {
            mode: self.mode,
            pattern_q: self.pattern_q.iter().map(|&(k, l)| [k, l]).collect(),
            pattern_r: self.pattern_r.iter().map(|&(k, l)| [k, l]).collect(),
        }
    }

    /// Builds the structure for a system of size `(n, m)`. Dense and diagonal
    /// modes ignore the pattern lists.
    pub fn from_json(json: &PriorJson, n: usize, m: usize) -> Result<Self> {
        match json.mode {
            PriorMode::Dense => Ok(Self::dense(n, m)),
            PriorMode::DiagonalQR => Ok(Self::diagonal(n, m)),
            PriorMode::Pattern => {
                let to_pairs =
                    |v: &[[usize; 2]]| v.iter().map(|&[k, l]| (k, l)).collect::<Vec<_>>();
                Self::pattern(n, m, &to_pairs(&json.pattern_q), &to_pairs(&json.pattern_r))
            }
        }
    }

    pub fn read_json(path: impl AsRef<Path>, n: usize, m: usize) -> Result<Self> {
        let json: PriorJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&json, n, m)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

/// On-disk form of a [`PriorStructure`] with 0-based index pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorJson {
    pub mode: PriorMode,
    #[serde(rename = "pattern_Q", default)]
    pub pattern_q: Vec<[usize; 2]>,
    #[serde(rename = "pattern_R", default)]
    pub pattern_r: Vec<[usize; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    #[test]
    fn scalar_dense_pack() {
        let s = PriorStructure::dense(1, 1)
            .pack(&dmatrix![2.0], &dmatrix![3.0], &dmatrix![5.0])
            .unwrap();
        assert_eq!(s.as_slice(), &[2.0, 3.0, 5.0]);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(PriorStructure::diagonal(2, 1).n_v(), 6);
        assert_eq!(PriorStructure::dense(3, 2).n_v(), 15);
        assert_eq!(PriorStructure::diagonal(100, 50).n_v(), 5200);
        // 40 states, 20 inputs, 400 off-diagonal pairs of Q and 100 of R removed.
        let q_pairs = upper_pairs(40);
        let q_off: Vec<_> = q_pairs.iter().filter(|(k, l)| k != l).copied().collect();
        let q_kept: Vec<_> = q_pairs
            .iter()
            .filter(|(k, l)| k == l)
            .copied()
            .chain(q_off.into_iter().skip(400))
            .collect();
        let r_pairs = upper_pairs(20);
        let r_off: Vec<_> = r_pairs.iter().filter(|(k, l)| k != l).copied().collect();
        let r_kept: Vec<_> = r_pairs
            .iter()
            .filter(|(k, l)| k == l)
            .copied()
            .chain(r_off.into_iter().skip(100))
            .collect();
        let s = PriorStructure::pattern(40, 20, &q_kept, &r_kept).unwrap();
        assert_eq!(s.n_v(), 1350);
    }

    #[test]
    fn pattern_violation_is_reported() {
        let s = PriorStructure::diagonal(2, 1);
        let err = s
            .pack(
                &DMatrix::identity(2, 2),
                &dmatrix![1.0, 0.5; 0.5, 1.0],
                &dmatrix![1.0],
            )
            .unwrap_err();
        assert!(matches!(
            err,
            Error::PatternViolation {
                which: "Q",
                row: 0,
                col: 1,
                ..
            }
        ));
    }

    #[test]
    fn invalid_pattern_rejected() {
        assert!(matches!(
            PriorStructure::pattern(2, 1, &[(1, 0)], &[(0, 0)]),
            Err(Error::InvalidPattern(_))
        ));
        assert!(matches!(
            PriorStructure::pattern(2, 1, &[(0, 2)], &[(0, 0)]),
            Err(Error::InvalidPattern(_))
        ));
    }

    #[test]
    fn unpack_zero_and_length() {
        let s = PriorStructure::dense(2, 2);
        let (p, q, r) = s.unpack(&vec![0.0; s.n_v()]).unwrap();
        assert_eq!((p.norm(), q.norm(), r.norm()), (0.0, 0.0, 0.0));
        assert!(matches!(
            s.unpack(&[1.0]),
            Err(Error::LengthMismatch {
                expected: 9,
                got: 1
            })
        ));
    }

    #[test]
    fn unit_vectors_give_elementary_symmetric_matrices() {
        let s = PriorStructure::dense(2, 2);
        let elementary = |dim: usize, k: usize, l: usize| {
            let mut e = DMatrix::zeros(dim, dim);
            e[(k, l)] = 1.0;
            e[(l, k)] = 1.0;
            e
        };
        let z2 = DMatrix::<f64>::zeros(2, 2);
        let expected = [
            (elementary(2, 0, 0), z2.clone(), z2.clone()),
            (elementary(2, 0, 1), z2.clone(), z2.clone()),
            (elementary(2, 1, 1), z2.clone(), z2.clone()),
            (z2.clone(), elementary(2, 0, 0), z2.clone()),
            (z2.clone(), elementary(2, 0, 1), z2.clone()),
            (z2.clone(), elementary(2, 1, 1), z2.clone()),
            (z2.clone(), z2.clone(), elementary(2, 0, 0)),
            (z2.clone(), z2.clone(), elementary(2, 0, 1)),
            (z2.clone(), z2.clone(), elementary(2, 1, 1)),
        ];
        for (k, want) in expected.iter().enumerate() {
            let mut e = vec![0.0; 9];
            e[k] = 1.0;
            assert_eq!(&s.unpack(&e).unwrap(), want, "basis vector {k}");
        }
    }

    #[test]
    fn min_data_count_values() {
        assert_eq!(min_data_count(100, 50), 102);
        assert_eq!(min_data_count(3, 2), 5);
        assert_eq!(min_data_count(5, 200), 46);
        assert_eq!(min_data_count(20, 10), 22);
    }

    #[test]
    fn csv_round_trip() {
        let obs = vec![
            Observation::new(
                dvector![0.1, -2.5e-17],
                dvector![1.0 / 3.0],
                dvector![1e300, 7.0],
            ),
            Observation::new(dvector![0.0, 1.0], dvector![-0.25], dvector![2.0, 3.0]),
        ];
        let data = Dataset::new(obs, 1).unwrap();
        let text = data.to_csv_string();
        assert!(text.starts_with("# n=2 m=1 n_feedback=1\nx0_1,x0_2,u_1,x1_1,x1_2\n"));
        assert_eq!(Dataset::from_csv_str(&text).unwrap(), data);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Dataset::from_csv_str("x0_1,u_1,x1_1\n1,2,3\n").is_err());
        assert!(Dataset::from_csv_str("# n=1 m=1 n_feedback=1\nx0_1,u_1\n1,2\n").is_err());
        assert!(Dataset::from_csv_str("# n=1 m=1 n_feedback=3\nx0_1,u_1,x1_1\n1,2,3\n").is_err());
    }

    #[test]
    fn prior_json_round_trip() {
        let s = PriorStructure::pattern(3, 2, &[(0, 0), (1, 1), (2, 2), (0, 2)], &[(0, 0), (1, 1)])
            .unwrap();
        let text = serde_json::to_string(&s.to_json()).unwrap();
        assert!(text.contains("\"pattern_Q\":[[0,0],[0,2],[1,1],[2,2]]"));
        let back: PriorJson = serde_json::from_str(&text).unwrap();
        assert_eq!(PriorStructure::from_json(&back, 3, 2).unwrap(), s);
        let dense: PriorJson = serde_json::from_str(r#"{"mode":"Dense"}"#).unwrap();
        assert_eq!(
            PriorStructure::from_json(&dense, 3, 2).unwrap(),
            PriorStructure::dense(3, 2)
        );
    }

    #[test]
    fn push_feedback_keeps_prefix_order() {
        let o = |v: f64| Observation::new(dvector![v], dvector![v], dvector![v]);
        let mut data = Dataset::new(vec![o(1.0), o(2.0)], 1).unwrap();
        data.push(o(3.0), true).unwrap();
        assert_eq!(data.n_feedback(), 2);
        assert_eq!(data.observations()[1], o(3.0));
        assert_eq!(data.observations()[2], o(2.0));
    }

    fn patterned_structure() -> impl Strategy<Value = PriorStructure> {
        (1usize..5, 1usize..4, any::<u64>()).prop_map(|(n, m, bits)| {
            let pick = |pairs: Vec<(usize, usize)>, shift: u32| {
                pairs
                    .into_iter()
                    .enumerate()
                    .filter(|(i, (k, l))| k == l || (bits >> ((*i as u32 + shift) % 64)) & 1 == 1)
                    .map(|(_, p)| p)
                    .collect::<Vec<_>>()
            };
            PriorStructure::pattern(n, m, &pick(upper_pairs(n), 0), &pick(upper_pairs(m), 17))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn pack_unpack_bijection(structure in patterned_structure(), seed in prop::collection::vec(-10.0f64..10.0, 64)) {
            let s: Vec<f64> = seed.iter().cycle().take(structure.n_v()).copied().collect();
            let (p, q, r) = structure.unpack(&s).unwrap();
            prop_assert_eq!(p.clone(), p.transpose());
            let packed = structure.pack(&p, &q, &r).unwrap();
            prop_assert_eq!(packed.len(), structure.n_v());
            prop_assert_eq!(packed.as_slice(), s.as_slice());
            prop_assert_eq!(structure.unpack(packed.as_slice()).unwrap(), (p, q, r));
        }
    }
}
