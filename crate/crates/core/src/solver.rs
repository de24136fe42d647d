//! Solvers for `min ||A x|| s.t. ||x|| = 1`: an L2 baseline via the smallest
//! singular vector of `A`, and a robust L1 solve via linearized ADMM.
//!
//! The L1 iteration alternates a soft-threshold update of the slack
//! `e ~ A x`, a linearized spherical update of `x` (project
//! `C = x - A^T(Ax - e)/eta - A^T lambda/(beta eta)` back to the unit
//! sphere), a multiplier step, and a geometric penalty ramp
//! `beta <- min(beta_max, rho beta)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assembly::SparseSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("iteration did not converge within the limit")]
    NotConverged,
    #[error("linearized update collapsed to a near-zero vector (|C| = {0:.3e})")]
    ZeroGradientPoint(f64),
}

/// Parameters of the linearized ADMM loop.
#[derive(Debug, Clone, Copy)]
pub struct AdmmParams {
    /// Initial penalty.
    pub beta0: f64,
    pub beta_max: f64,
    /// Geometric penalty growth factor, > 1.
    pub rho: f64,
    pub max_iter: usize,
    /// Primal feasibility tolerance on `||Ax - e||_2 / sqrt(m)`.
    pub tol_primal: f64,
    /// Iterate-change tolerance on `||x_k - x_{k-1}||_2`.
    pub tol_change: f64,
    /// Multiplier applied to the spectral-norm estimate so that the proximal
    /// parameter strictly dominates `sigma_max(A^T A)`.
    pub eta_safety: f64,
    pub seed: u64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            beta0: 1e-6,
            beta_max: 1e6,
            rho: 1.01,
            max_iter: 10_000,
            tol_primal: 1e-10,
            tol_change: 1e-8,
            eta_safety: 1.05,
            seed: 0,
        }
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Penalty value used during this iteration.
    pub beta: f64,
    /// `||A x_{k+1} - e_{k+1}||_2`.
    pub primal_residual: f64,
    /// `||A x_{k+1}||_1`.
    pub l1_objective: f64,
    /// `| ||x_{k+1}|| - 1 |`.
    pub x_norm_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AdmmDiagnostics {
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl AdmmDiagnostics {
    /// Trace as CSV: iteration, beta, primal residual, L1 objective.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,beta,primal_residual,l1_objective")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e}",
                r.iteration, r.beta, r.primal_residual, r.l1_objective
            )?;
        }
        Ok(())
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nv = norm2(&v);
        if nv > 1e-3 {
            return v.iter().map(|x| x / nv).collect();
        }
    }
}

/// Largest eigenvalue of `A^T A` (the squared spectral norm of `A`), by
/// power iteration until the relative eigenvalue change drops below `tol`.
pub fn spectral_norm_sq(a: &SparseSystem, tol: f64, seed: u64) -> f64 {
    let n = a.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_unit(&mut rng, n);
    let mut lambda = 0.0f64;
    let mut restarted = false;
    for _ in 0..100_000 {
        let w = a.matvec_transpose(&a.matvec(&v));
        let nw = norm2(&w);
        if nw < 1e-300 {
            if restarted {
                return 0.0;
            }
            restarted = true;
            v = random_unit(&mut rng, n);
            lambda = 0.0;
            continue;
        }
        let new_lambda: f64 = v.iter().zip(w.iter()).map(|(x, y)| x * y).sum();
        for (vi, wi) in v.iter_mut().zip(w.iter()) {
            *vi = wi / nw;
        }
        if (new_lambda - lambda).abs() <= tol * new_lambda.abs().max(1e-300) {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}

/// Unit vector minimizing `||A x||_2`, by inverse iteration on
/// `A^T A + delta I` with `delta = 1e-12`.
pub fn smallest_singular_vector(
    a: &SparseSystem,
    tol: f64,
    seed: u64,
) -> Result<Vec<f64>, SolverError> {
    let n = a.cols();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    // A^T A accumulated row by row of A (entries are finalized row-major)
    let entries = a.entries();
    let mut row_start = 0;
    while row_start < entries.len() {
        let r = entries[row_start].0;
        let mut row_end = row_start;
        while row_end < entries.len() && entries[row_end].0 == r {
            row_end += 1;
        }
        for p in row_start..row_end {
            for q in row_start..row_end {
                gram[(entries[p].1, entries[q].1)] += entries[p].2 * entries[q].2;
            }
        }
        row_start = row_end;
    }

    let mut delta = 1e-12;
    let chol = loop {
        let mut shifted = gram.clone();
        for i in 0..n {
            shifted[(i, i)] += delta;
        }
        match shifted.cholesky() {
            Some(c) => break c,
            None => {
                delta *= 100.0;
                if delta > 1.0 {
                    return Err(SolverError::NotConverged);
                }
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_vec(random_unit(&mut rng, n));
    for _ in 0..10_000 {
        let mut y = chol.solve(&v);
        let ny = y.norm();
        if ny < 1e-300 {
            v = DVector::from_vec(random_unit(&mut rng, n));
            continue;
        }
        y /= ny;
        if y.dot(&v) < 0.0 {
            y = -y;
        }
        let change = (&y - &v).norm();
        v = y;
        if change < tol {
            return Ok(v.as_slice().to_vec());
        }
    }
    Err(SolverError::NotConverged)
}

/// Elementwise soft-threshold: the closed-form minimizer of
/// `eps * ||e||_1 + ||e - u||^2 / 2`.
pub fn shrink(u: &[f64], eps: f64) -> Vec<f64> {
    u.iter()
        .map(|&ui| {
            if ui > eps {
                ui - eps
            } else if ui < -eps {
                ui + eps
            } else {
                0.0
            }
        })
        .collect()
}

/// Linearized spherical x-update: project
/// `C = x_k - A^T(A x_k - e)/eta - A^T lambda/(beta eta)` onto the unit
/// sphere. Requires `eta > sigma_max(A^T A)`.
pub fn update_x(
    x_k: &[f64],
    e_next: &[f64],
    lambda: &[f64],
    beta: f64,
    a: &SparseSystem,
    eta: f64,
) -> Result<Vec<f64>, SolverError> {
    let ax = a.matvec(x_k);
    let r: Vec<f64> = ax.iter().zip(e_next.iter()).map(|(p, q)| p - q).collect();
    let g1 = a.matvec_transpose(&r);
    let g2 = a.matvec_transpose(lambda);
    let c: Vec<f64> = (0..x_k.len())
        .map(|i| x_k[i] - g1[i] / eta - g2[i] / (beta * eta))
        .collect();
    let nc = norm2(&c);
    if nc < 1e-14 {
        return Err(SolverError::ZeroGradientPoint(nc));
    }
    Ok(c.iter().map(|v| v / nc).collect())
}

/// Linearized ADMM for `min ||Ax||_1 s.t. ||x|| = 1`, initialized at the L2
/// solution. Returns the final iterate and the convergence trace; when the
/// iteration limit is hit, the best iterate by L1 objective is returned with
/// `converged = false`.
pub fn admm_solve(a: &SparseSystem, params: &AdmmParams) -> (Vec<f64>, AdmmDiagnostics) {
    let m = a.rows();
    let n = a.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0xada11ce5);

    let eta = params.eta_safety * spectral_norm_sq(a, 1e-10, params.seed ^ 0x5bec);
    let mut x = smallest_singular_vector(a, 1e-12, params.seed ^ 0x51f)
        .unwrap_or_else(|_| random_unit(&mut rng, n));

    let mut e = vec![0.0; m];
    let mut lambda = vec![0.0; m];
    let mut beta = params.beta0;
    let sqrt_m = (m as f64).sqrt();

    let mut diag = AdmmDiagnostics::default();
    let mut best: (Vec<f64>, f64) = (x.clone(), f64::INFINITY);

    for k in 0..params.max_iter {
        let ax = a.matvec(&x);
        let u: Vec<f64> = ax
            .iter()
            .zip(lambda.iter())
            .map(|(p, l)| p + l / beta)
            .collect();
        e = shrink(&u, 1.0 / beta);

        let x_new = match update_x(&x, &e, &lambda, beta, a, eta) {
            Ok(v) => v,
            Err(SolverError::ZeroGradientPoint(_)) => {
                // restart from a perturbed previous iterate
                let mut p: Vec<f64> = x
                    .iter()
                    .map(|v| v + 1e-6 * rng.random_range(-1.0..1.0))
                    .collect();
                let np = norm2(&p);
                for v in &mut p {
                    *v /= np;
                }
                p
            }
            Err(other) => unreachable!("update_x only fails on zero gradient: {other}"),
        };

        let ax_new = a.matvec(&x_new);
        let primal_vec: Vec<f64> = ax_new
            .iter()
            .zip(e.iter())
            .map(|(p, q)| p - q)
            .collect();
        for (l, r) in lambda.iter_mut().zip(primal_vec.iter()) {
            *l += beta * r;
        }

        let primal = norm2(&primal_vec);
        let objective: f64 = ax_new.iter().map(|v| v.abs()).sum();
        let dx = x
            .iter()
            .zip(x_new.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();

        diag.trace.push(IterationRecord {
            iteration: k,
            beta,
            primal_residual: primal,
            l1_objective: objective,
            x_norm_error: (norm2(&x_new) - 1.0).abs(),
        });

        if objective < best.1 {
            best = (x_new.clone(), objective);
        }
        x = x_new;
        beta = (params.rho * beta).min(params.beta_max);

        if primal / sqrt_m < params.tol_primal && dx < params.tol_change {
            diag.converged = true;
            diag.iterations = k + 1;
            return (x, diag);
        }
    }

    diag.converged = false;
    diag.iterations = params.max_iter;
    (best.0, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{RowBlockProvenance, SparseSystem};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    /// Dense matrix wrapped as a SparseSystem (3-row blocks over 3-col blocks).
    fn system_from_dense(m: &DMatrix<f64>) -> SparseSystem {
        assert_eq!(m.nrows() % 3, 0);
        assert_eq!(m.ncols() % 3, 0);
        let mut s = SparseSystem::new(m.ncols());
        for br in 0..m.nrows() / 3 {
            let blocks: Vec<(usize, Matrix3<f64>)> = (0..m.ncols() / 3)
                .map(|bc| {
                    (
                        bc,
                        Matrix3::from_fn(|r, c| m[(3 * br + r, 3 * bc + c)]),
                    )
                })
                .collect();
            s.push_block(RowBlockProvenance::Gauge, &blocks);
        }
        s.finalize();
        s
    }

    fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> SparseSystem {
        let rows = rows.div_ceil(3) * 3;
        let cols = cols.div_ceil(3) * 3;
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if rng.random_range(0.0..1.0) < density {
                    m[(r, c)] = rng.random_range(-1.0..1.0);
                }
            }
        }
        system_from_dense(&m)
    }

    #[test]
    fn spectral_norm_identity() {
        let s = system_from_dense(&DMatrix::identity(3, 3));
        assert_relative_eq!(spectral_norm_sq(&s, 1e-12, 0), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = 3.0;
        m[(1, 1)] = 1.0;
        let s = system_from_dense(&m);
        assert_relative_eq!(spectral_norm_sq(&s, 1e-12, 0), 9.0, epsilon = 1e-8);
    }

    #[test]
    fn spectral_norm_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_sparse(&mut rng, 51, 30, 0.2);
        let dense = s.to_dense();
        let svd = dense.svd(false, false);
        let sigma_max = svd
            .singular_values
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        let est = spectral_norm_sq(&s, 1e-12, 1);
        assert_relative_eq!(est, sigma_max * sigma_max, max_relative = 1e-3);
    }

    #[test]
    fn smallest_singular_vector_explicit_null() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 2.0;
        // third column is free
        let s = system_from_dense(&m);
        let v = smallest_singular_vector(&s, 1e-12, 0).unwrap();
        assert_relative_eq!(v[2].abs(), 1.0, epsilon = 1e-8);
        assert!(norm2(&s.matvec(&v)) < 1e-9);
    }

    #[test]
    fn smallest_singular_vector_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..5 {
            let s = random_sparse(&mut rng, 42, 21, 0.4);
            let v = smallest_singular_vector(&s, 1e-12, trial).unwrap();
            assert_relative_eq!(norm2(&v), 1.0, epsilon = 1e-12);
            let sigma = norm2(&s.matvec(&v));
            let dense = s.to_dense();
            let svd = dense.svd(false, false);
            let sigma_min = svd
                .singular_values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(
                (sigma - sigma_min).abs() < 1e-8,
                "trial {trial}: sigma {sigma} vs dense {sigma_min}"
            );
        }
    }

    #[test]
    fn shrink_examples() {
        assert_relative_eq!(shrink(&[2.0], 0.5)[0], 1.5);
        assert_relative_eq!(shrink(&[-0.3], 0.5)[0], 0.0);
        assert_relative_eq!(shrink(&[-2.0], 0.5)[0], -1.5);
    }

    #[test]
    fn shrink_matches_grid_oracle() {
        // sample on the 1e-4 lattice so the grid argmin is exact
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let u = (rng.random_range(-2.0..2.0f64) / 1e-4).round() * 1e-4;
            let eps = (rng.random_range(0.0..1.0f64) / 1e-4).round() * 1e-4;
            let ours = shrink(&[u], eps)[0];
            let mut best = (f64::INFINITY, 0.0);
            for i in -30_000..=30_000i64 {
                let e = i as f64 * 1e-4;
                let f = eps * e.abs() + 0.5 * (e - u) * (e - u);
                if f < best.0 {
                    best = (f, e);
                }
            }
            assert!(
                (ours - best.1).abs() < 1e-6,
                "u={u} eps={eps} ours={ours} grid={}",
                best.1
            );
        }
    }

    #[test]
    fn update_x_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = random_sparse(&mut rng, 12, 6, 0.5);
        let x = random_unit(&mut rng, 6);
        let e = s.matvec(&x);
        let lambda = vec![0.0; s.rows()];
        let out = update_x(&x, &e, &lambda, 1.0, &s, 10.0).unwrap();
        for (a, b) in x.iter().zip(out.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_x_output_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let s = random_sparse(&mut rng, 12, 6, 0.5);
        for _ in 0..20 {
            let x = random_unit(&mut rng, 6);
            let e: Vec<f64> = (0..s.rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lambda: Vec<f64> = (0..s.rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eta = 1.05 * spectral_norm_sq(&s, 1e-10, 0);
            let out = update_x(&x, &e, &lambda, 0.5, &s, eta).unwrap();
            assert_relative_eq!(norm2(&out), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn admm_full_iteration_fixed_point_on_null_vector() {
        // x exactly in the null space, e = Ax = 0, lambda = 0: one iteration
        // leaves everything unchanged
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 2.0;
        let s = system_from_dense(&m);
        let x = vec![0.0, 0.0, 1.0];
        let e = vec![0.0; 3];
        let lambda = vec![0.0; 3];
        let beta = 1e-6;

        let u: Vec<f64> = s
            .matvec(&x)
            .iter()
            .zip(lambda.iter())
            .map(|(p, l)| p + l / beta)
            .collect();
        let e_next = shrink(&u, 1.0 / beta);
        for (a, b) in e.iter().zip(e_next.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
        let eta = 1.05 * spectral_norm_sq(&s, 1e-12, 0);
        let x_next = update_x(&x, &e_next, &lambda, beta, &s, eta).unwrap();
        for (a, b) in x.iter().zip(x_next.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn admm_matches_l2_on_clean_system() {
        // a system with an exact 1-d null space
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 9;
        let truth = DVector::from_vec(random_unit(&mut rng, n));
        // rows orthogonal to truth: r - (r.t)t
        let mut m = DMatrix::zeros(30, n);
        for r in 0..30 {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rv = DVector::from_vec(row);
            let proj = &rv - &truth * truth.dot(&rv);
            for c in 0..n {
                m[(r, c)] = proj[c];
            }
        }
        let s = system_from_dense(&m);
        let params = AdmmParams::default();
        let (x, diag) = admm_solve(&s, &params);
        assert!(diag.converged);
        let l2 = smallest_singular_vector(&s, 1e-12, params.seed ^ 0x51f).unwrap();
        let dot: f64 = x.iter().zip(l2.iter()).map(|(a, b)| a * b).sum();
        let sign = dot.signum();
        for (a, b) in x.iter().zip(l2.iter()) {
            assert!((a - sign * b).abs() < 1e-6);
        }
    }

    #[test]
    fn admm_l1_objective_not_worse_than_l2_with_outlier_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 9;
        let truth = DVector::from_vec(random_unit(&mut rng, n));
        let rows = 60;
        let mut m = DMatrix::zeros(rows, n);
        for r in 0..rows {
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rv = DVector::from_vec(row);
            if r % 5 == 0 {
                // outlier row: not orthogonal to the truth
                for c in 0..n {
                    m[(r, c)] = rv[c];
                }
            } else {
                let proj = &rv - &truth * truth.dot(&rv);
                for c in 0..n {
                    m[(r, c)] = proj[c];
                }
            }
        }
        let s = system_from_dense(&m);
        let params = AdmmParams {
            rho: 1.1,
            ..AdmmParams::default()
        };
        let (x, _) = admm_solve(&s, &params);
        let l2 = smallest_singular_vector(&s, 1e-12, params.seed ^ 0x51f).unwrap();
        assert!(s.residual_l1(&x) <= s.residual_l1(&l2) + 1e-12);
        // and the L1 answer should hug the planted direction more closely
        let align = |v: &[f64]| {
            v.iter()
                .zip(truth.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .abs()
        };
        assert!(align(&x) >= align(&l2));
    }

    #[test]
    fn admm_beta_schedule_and_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = random_sparse(&mut rng, 30, 9, 0.4);
        let params = AdmmParams {
            rho: 1.1,
            max_iter: 500,
            tol_primal: 0.0, // force a full run
            ..AdmmParams::default()
        };
        let (_, diag) = admm_solve(&s, &params);
        let mut expected = params.beta0;
        for rec in &diag.trace {
            assert_eq!(rec.beta, expected, "iteration {}", rec.iteration);
            assert!(rec.x_norm_error <= 1e-10);
            expected = (params.rho * expected).min(params.beta_max);
        }
        assert!(!diag.converged);
    }

    proptest! {
        #[test]
        fn shrink_is_nonexpansive(
            u in proptest::collection::vec(-10.0..10.0f64, 1..20),
            v in proptest::collection::vec(-10.0..10.0f64, 1..20),
            eps in 0.0..5.0f64,
        ) {
            let len = u.len().min(v.len());
            let su = shrink(&u[..len], eps);
            let sv = shrink(&v[..len], eps);
            let d_in: f64 = u[..len].iter().zip(&v[..len]).map(|(a, b)| (a - b) * (a - b)).sum();
            let d_out: f64 = su.iter().zip(&sv).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }
    }
}
