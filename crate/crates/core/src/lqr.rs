//! Forward discrete-time LQR: Riccati solution, optimal gain and residuals.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::subspace::default_rank_tol;

/// Relative eigenvalue threshold used for positive-definiteness checks.
pub const PD_REL_TOL: f64 = 1e-12;

pub const DEFAULT_DARE_TOL: f64 = 1e-12;
pub const DEFAULT_DARE_MAX_ITER: usize = 100_000;

/// Plant `x(k+1) = A x(k) + B u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        ctrb
    }

    /// Dimension of the reachable subspace, grown one orthonormal Krylov block
    /// at a time. New directions count when their singular value exceeds
    /// `default_rank_tol(n, n m)` times the scale of `[A B]`; unlike the rank
    /// of [`Self::controllability_matrix`], this stays reliable for large `n`.
    pub fn controllability_rank(&self) -> usize {
        let n = self.n();
        let scale = self.a.norm().max(self.b.norm());
        if scale == 0.0 {
            return 0;
        }
        let threshold = default_rank_tol(n, n * self.m()) * scale;
        let mut basis = DMatrix::<f64>::zeros(n, 0);
        let mut block = self.b.clone();
        while basis.ncols() < n {
            for _ in 0..2 {
                let proj = &basis * (basis.transpose() * &block);
                block -= proj;
            }
            let svd = block.clone().svd(true, false);
            let u = svd.u.expect("left singular vectors requested");
            let fresh: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > threshold)
                .collect();
            if fresh.is_empty() {
                break;
            }
            let new_cols = u.select_columns(fresh.iter().take(n - basis.ncols()));
            let start = basis.ncols();
            basis = basis.resize_horizontally(start + new_cols.ncols(), 0.0);
            basis
                .columns_mut(start, new_cols.ncols())
                .copy_from(&new_cols);
            block = &self.a * new_cols;
        }
        basis.ncols()
    }

    pub fn is_controllable(&self) -> bool {
        self.controllability_rank() == self.n()
    }

    fn ensure_controllable(&self) -> Result<()> {
        let rank = self.controllability_rank();
        if rank < self.n() {
            return Err(Error::NotControllable { rank, n: self.n() });
        }
        Ok(())
    }

    /// `A - B K`.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * gain
    }
}

/// Quadratic stage cost `x'Qx + u'Ru`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPair {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostPair {
    /// Builds a cost pair, storing the symmetric part of each matrix.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(Error::DimensionMismatch("Q and R must be square".into()));
        }
        Ok(Self {
            q: symmetrize(&q),
            r: symmetrize(&r),
        })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    fn ensure_matches(&self, sys: &LinearSystem) -> Result<()> {
        if self.n() != sys.n() || self.m() != sys.m() {
            return Err(Error::DimensionMismatch(format!(
                "cost is for (n={}, m={}) but system has (n={}, m={})",
                self.n(),
                self.m(),
                sys.n(),
                sys.m()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Frobenius norm of the ARE residual at `p`.
    pub residual: f64,
    pub iterations: usize,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue-based check: `lambda_min > PD_REL_TOL * lambda_max > 0`.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.nrows() == 0 {
        return false;
    }
    let eig = symmetrize(m).symmetric_eigen().eigenvalues;
    let max = eig.max();
    let min = eig.min();
    max > 0.0 && min > PD_REL_TOL * max
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// One step of `P -> Q + A'PA - A'PB (R + B'PB)^{-1} B'PA`.
fn riccati_step(sys: &LinearSystem, cost: &CostPair, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let at_p = sys.a.transpose() * p;
    let at_p_a = &at_p * &sys.a;
    let at_p_b = &at_p * &sys.b;
    let s = &cost.r + sys.b.transpose() * p * &sys.b;
    let chol = symmetrize(&s)
        .cholesky()
        .ok_or(Error::SingularMatrix("R + B'PB is not positive definite"))?;
    let correction = &at_p_b * chol.solve(&at_p_b.transpose());
    Ok(symmetrize(&(&cost.q + at_p_a - correction)))
}

/// Residual of `A'PA - P + Q - A'PB (R + B'PB)^{-1} B'PA`.
pub fn dare_residual(
    sys: &LinearSystem,
    cost: &CostPair,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(riccati_step(sys, cost, p)? - p)
}

/// Solves the DARE by fixed-point Riccati iteration started at `P = Q`.
///
/// Stops when `|P_{k+1} - P_k|_F <= tol * max(1, |P_k|_F)`.
pub fn solve_dare(
    sys: &LinearSystem,
    cost: &CostPair,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    cost.ensure_matches(sys)?;
    if !is_positive_definite(&cost.q) {
        return Err(Error::NotPositiveDefinite("Q"));
    }
    if !is_positive_definite(&cost.r) {
        return Err(Error::NotPositiveDefinite("R"));
    }
    sys.ensure_controllable()?;

    let mut p = cost.q.clone();
    let mut last_step = f64::INFINITY;
    for iter in 1..=max_iter {
        let next = riccati_step(sys, cost, &p)?;
        last_step = (&next - &p).norm();
        if !last_step.is_finite() {
            break;
        }
        let scale = p.norm().max(1.0);
        p = next;
        if last_step <= tol * scale {
            let k = gain_from_p(sys, cost, &p)?;
            let residual = dare_residual(sys, cost, &p)?.norm();
            return Ok(RiccatiSolution {
                p,
                k,
                residual,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_step,
    })
}

pub fn solve_dare_default(sys: &LinearSystem, cost: &CostPair) -> Result<RiccatiSolution> {
    solve_dare(sys, cost, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)
}

/// `K = (R + B'PB)^{-1} B'PA`.
pub fn gain_from_p(sys: &LinearSystem, cost: &CostPair, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cost.ensure_matches(sys)?;
    if p.shape() != (sys.n(), sys.n()) {
        return Err(Error::DimensionMismatch("P must be n x n".into()));
    }
    let s = &cost.r + sys.b.transpose() * p * &sys.b;
    let rhs = sys.b.transpose() * p * &sys.a;
    s.lu()
        .solve(&rhs)
        .filter(|k| k.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularMatrix("R + B'PB"))
}

/// The two blocks of the gain-form ARE:
///
/// `G1 = A'PA - P + Q - K'(R + B'PB)K`, `G2 = B'PA - (R + B'PB)K`.
pub fn are_residual(
    sys: &LinearSystem,
    cost: &CostPair,
    gain: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (sys.n(), sys.m());
    if cost.n() != n || cost.m() != m || p.shape() != (n, n) || gain.shape() != (m, n) {
        return Err(Error::DimensionMismatch(format!(
            "are_residual: expected Q {n}x{n}, R {m}x{m}, P {n}x{n}, K {m}x{n}"
        )));
    }
    Ok(are_blocks_unchecked(
        &sys.a, &sys.b, gain, p, &cost.q, &cost.r,
    ))
}

/// Value matrix of the policy `u = -K x`: the solution of
/// `P = (A - BK)' P (A - BK) + Q + K'RK`, by Smith doubling.
pub fn closed_loop_value(
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    cost: &CostPair,
) -> Result<DMatrix<f64>> {
    cost.ensure_matches(sys)?;
    if gain.shape() != (sys.m(), sys.n()) {
        return Err(Error::DimensionMismatch(format!(
            "gain must be {}x{}, got {:?}",
            sys.m(),
            sys.n(),
            gain.shape()
        )));
    }
    let mut acl = sys.closed_loop(gain);
    let rho = spectral_radius(&acl);
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop(rho));
    }
    let mut p = &cost.q + gain.transpose() * &cost.r * gain;
    for _ in 0..64 {
        let increment = acl.transpose() * &p * &acl;
        p += &increment;
        acl = &acl * &acl;
        if increment.norm() <= f64::EPSILON * p.norm() {
            break;
        }
    }
    Ok(symmetrize(&p))
}

pub(crate) fn are_blocks_unchecked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let s_k = &s * gain;
    let g1 = a.transpose() * p * a - p + q - gain.transpose() * &s_k;
    let g2 = &bt_p * a - s_k;
    (g1, g2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn controllability_rank_matches_krylov_matrix_rank() {
        use crate::subspace::numerical_rank;
        let cases = [
            (dmatrix![1.0, 0.0; 0.0, 2.0], dmatrix![1.0; 1.0], 2),
            (dmatrix![1.0, 0.0; 0.0, 1.0], dmatrix![1.0; 1.0], 1),
            (
                dmatrix![0.5, 1.0, 0.0; 0.0, 0.5, 0.0; 0.0, 0.0, 0.2],
                dmatrix![0.0; 1.0; 0.0],
                2,
            ),
            (dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 0.0], 0),
        ];
        for (a, b, rank) in cases {
            let sys = LinearSystem::new(a, b).unwrap();
            assert_eq!(sys.controllability_rank(), rank);
            let ctrb = sys.controllability_matrix();
            assert_eq!(numerical_rank(&ctrb, 1e-12), rank);
        }
    }

    #[test]
    fn chain_system_is_controllable_at_large_n() {
        // Shift chain: e_n -> e_{n-1} -> ... reaches every state in n steps.
        let n = 120;
        let a = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 3.0 } else { 0.0 });
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let sys = LinearSystem::new(a, b).unwrap();
        assert!(sys.is_controllable());
    }

    pub(crate) fn exp1_system() -> (LinearSystem, CostPair) {
        let a = dmatrix![-0.2, -0.4, -0.6; 0.4, -0.7, -0.3; -1.0, -0.8, -0.2];
        let b = dmatrix![0.1, -0.6; -0.2, 0.8; 0.4, -0.9];
        let q = dmatrix![0.4, -0.2, 0.7; -0.2, 1.7, -0.7; 0.7, -0.7, 1.9];
        let r = dmatrix![1.7, 0.4; 0.4, 1.8];
        (
            LinearSystem::new(a, b).unwrap(),
            CostPair::new(q, r).unwrap(),
        )
    }

    #[test]
    fn zero_dynamics_gives_p_equal_q() {
        let sys = LinearSystem::new(dmatrix![0.0], dmatrix![1.0]).unwrap();
        let cost = CostPair::new(dmatrix![2.5], dmatrix![0.7]).unwrap();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        assert_abs_diff_eq!(sol.p[(0, 0)], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.k[(0, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn experiment_one_system_converges() {
        let (sys, cost) = exp1_system();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        assert!(sol.residual <= 1e-10, "residual {}", sol.residual);
        assert!(spectral_radius(&sys.closed_loop(&sol.k)) < 1.0);
        assert!(is_positive_definite(&sol.p));
        assert_eq!(sol.p, sol.p.transpose());
    }

    #[test]
    fn scalar_matches_quadratic_root() {
        // r(p - q) + b^2 p (p - q) - a^2 p r = 0
        // b^2 p^2 + (r - b^2 q - a^2 r) p - r q = 0
        for &(a, b, q, r) in &[
            (1.3f64, 0.7f64, 2.0f64, 0.5f64),
            (-0.4, 2.0, 0.1, 3.0),
            (2.5, -1.1, 1.0, 1.0),
            (0.9, 0.05, 4.0, 0.2),
        ] {
            let qa = b * b;
            let qb = r - b * b * q - a * a * r;
            let qc = -r * q;
            let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
            let sys = LinearSystem::new(dmatrix![a], dmatrix![b]).unwrap();
            let cost = CostPair::new(dmatrix![q], dmatrix![r]).unwrap();
            let sol = solve_dare_default(&sys, &cost).unwrap();
            assert!(
                (sol.p[(0, 0)] - root).abs() <= 1e-10 * root.max(1.0),
                "a={a}: {} vs {root}",
                sol.p[(0, 0)]
            );
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (sys, cost) = exp1_system();
        let bad_q = CostPair::new(-cost.q.clone(), cost.r.clone()).unwrap();
        assert!(matches!(
            solve_dare_default(&sys, &bad_q),
            Err(Error::NotPositiveDefinite("Q"))
        ));
        let bad_r = CostPair::new(cost.q.clone(), dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
        assert!(matches!(
            solve_dare_default(&sys, &bad_r),
            Err(Error::NotPositiveDefinite("R"))
        ));
        let unctrb = LinearSystem::new(dmatrix![0.5, 0.0; 0.0, 0.3], dmatrix![1.0; 0.0]).unwrap();
        let cost2 = CostPair::new(DMatrix::identity(2, 2), dmatrix![1.0]).unwrap();
        assert!(matches!(
            solve_dare_default(&unctrb, &cost2),
            Err(Error::NotControllable { rank: 1, n: 2 })
        ));
        assert!(matches!(
            solve_dare(&sys, &cost, 1e-12, 2),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn gain_with_zero_input_map_is_zero() {
        let sys = LinearSystem::new(dmatrix![0.5, 0.1; 0.0, 0.2], DMatrix::zeros(2, 1)).unwrap();
        let cost = CostPair::new(DMatrix::identity(2, 2), dmatrix![1.0]).unwrap();
        let k = gain_from_p(&sys, &cost, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(k, DMatrix::zeros(1, 2));
    }

    #[test]
    fn gain_matches_pseudo_inverse_oracle() {
        let sys = LinearSystem::new(dmatrix![0.3, -1.2; 0.8, 0.4], dmatrix![0.6; -0.9]).unwrap();
        let cost = CostPair::new(dmatrix![1.1, 0.2; 0.2, 0.9], dmatrix![0.4]).unwrap();
        let p = dmatrix![2.0, 0.3; 0.3, 1.5];
        let k = gain_from_p(&sys, &cost, &p).unwrap();
        let s = &cost.r + sys.b.transpose() * &p * &sys.b;
        let oracle = s.pseudo_inverse(1e-15).unwrap() * sys.b.transpose() * &p * &sys.a;
        assert_abs_diff_eq!(k, oracle, epsilon = 1e-14);
    }

    #[test]
    fn gain_singular() {
        let sys = LinearSystem::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        let cost = CostPair::new(dmatrix![1.0], dmatrix![-1.0]).unwrap();
        assert!(matches!(
            gain_from_p(&sys, &cost, &dmatrix![1.0]),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn residual_blocks_vanish_at_solution() {
        let (sys, cost) = exp1_system();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        let (g1, g2) = are_residual(&sys, &cost, &sol.k, &sol.p).unwrap();
        assert!(g1.norm() <= 1e-10 && g2.norm() <= 1e-10);
    }

    #[test]
    fn residual_with_zero_p_is_q() {
        let (sys, cost) = exp1_system();
        let k = DMatrix::from_element(2, 3, 0.3);
        let (g1, _) = are_residual(&sys, &cost, &k, &DMatrix::zeros(3, 3)).unwrap();
        // K'RK survives with P = 0, so use K = 0 for the pure check.
        assert!((g1 - &cost.q + k.transpose() * &cost.r * &k).norm() < 1e-15);
        let (g1, _) =
            are_residual(&sys, &cost, &DMatrix::zeros(2, 3), &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(g1, cost.q);
    }

    #[test]
    fn residual_forms_agree_for_perturbed_p() {
        // With K from the perturbed P, G2 = 0 and G1 equals the direct DARE residual.
        let (sys, cost) = exp1_system();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        let p = &sol.p + dmatrix![0.1, 0.02, -0.03; 0.02, -0.05, 0.04; -0.03, 0.04, 0.07];
        let k = gain_from_p(&sys, &cost, &p).unwrap();
        let (g1, g2) = are_residual(&sys, &cost, &k, &p).unwrap();
        let direct = dare_residual(&sys, &cost, &p).unwrap();
        assert!((g1 - direct).norm() < 1e-12);
        assert!(g2.norm() < 1e-12);
    }

    #[test]
    fn residual_dimension_mismatch() {
        let (sys, cost) = exp1_system();
        assert!(matches!(
            are_residual(&sys, &cost, &DMatrix::zeros(3, 2), &DMatrix::zeros(3, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn converged_p_is_a_fixed_point() {
        let (sys, cost) = exp1_system();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        let step = riccati_step(&sys, &cost, &sol.p).unwrap();
        assert!((step - &sol.p).norm() <= 10.0 * DEFAULT_DARE_TOL * sol.p.norm().max(1.0));
    }

    #[test]
    fn closed_loop_value_of_optimal_gain_is_riccati_solution() {
        let (sys, cost) = exp1_system();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        let p = closed_loop_value(&sys, &sol.k, &cost).unwrap();
        assert!((p - &sol.p).norm() <= 1e-10 * sol.p.norm());
        let unstable = DMatrix::zeros(2, 3);
        let big = LinearSystem::new(&sys.a * 3.0, sys.b.clone()).unwrap();
        assert!(matches!(
            closed_loop_value(&big, &unstable, &cost),
            Err(Error::UnstableClosedLoop(_))
        ));
    }

    #[test]
    fn bellman_identity_along_trajectory() {
        let (sys, cost) = exp1_system();
        let sol = solve_dare_default(&sys, &cost).unwrap();
        let cl = sys.closed_loop(&sol.k);
        let mut x = nalgebra::dvector![0.7, -1.2, 0.4];
        for _ in 0..30 {
            let next = &cl * &x;
            let lhs = (x.transpose() * &sol.p * &x)[0];
            let rhs = (next.transpose() * &sol.p * &next)[0]
                + (x.transpose() * &cost.q * &x)[0]
                + (x.transpose() * sol.k.transpose() * &cost.r * &sol.k * &x)[0];
            assert!((lhs - rhs).abs() <= 1e-9 * x.norm_squared().max(f64::MIN_POSITIVE));
            x = next;
        }
    }
}
