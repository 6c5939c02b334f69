//! Offline entropy-regularized matching.
//!
//! The program, for edge values `v` (a `km × m` matrix), regularizer `δ > 0`
//! and load `k`:
//!
//! ```text
//! max_x  Σ_{i,j} x_{i,j} v_{i,j} − δ Σ_{i,j} x_{i,j} ln x_{i,j}
//! s.t.   Σ_i x_{i,j} ≤ k   for every surrogate j
//!        Σ_j x_{i,j} ≤ 1   for every replica i
//! ```
//!
//! Dualizing the surrogate capacities with prices `α ≥ 0` leaves per-row
//! subproblems with closed-form maximizers: the row is the exponential
//! weights vector `x_{i,j} ∝ exp((v_{i,j} − α_j)/δ)` whenever its
//! unconstrained mass `Σ_j exp((v_{i,j} − α_j)/δ − 1)` reaches one, and the
//! interior point `x_{i,j} = exp((v_{i,j} − α_j)/δ − 1)` otherwise. The dual
//! is smooth and convex, so projected gradient descent with backtracking on
//! `α` recovers the optimum; the gradient is simply `k − Σ_i x_{i,j}(α)`.

use crate::error::Error;
use crate::matching::Mat;
use crate::Result;

/// Solution of the regularized matching program.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Optimal surrogate prices (non-negative).
    pub alpha: Vec<f64>,
    /// Optimal assignment marginals; every row is a (sub-)probability vector.
    pub primal: Mat,
    /// Optimal objective value.
    pub opt: f64,
    pub iterations: u64,
}

/// Per-row maximizer and its objective contribution for fixed prices.
fn row_solution(values: &[f64], alpha: &[f64], delta: f64, row: &mut [f64]) -> f64 {
    let mut emax = f64::NEG_INFINITY;
    for (j, v) in values.iter().enumerate() {
        let e = (v - alpha[j]) / delta;
        row[j] = e;
        if e > emax {
            emax = e;
        }
    }
    let mut sum = 0.0;
    for e in row.iter() {
        sum += (e - emax).exp();
    }
    let lse = emax + sum.ln();
    if lse >= 1.0 {
        // Row constraint binds: exponential weights.
        for e in row.iter_mut() {
            *e = (*e - lse).exp();
        }
        delta * lse
    } else {
        // Interior row: mass below one.
        for e in row.iter_mut() {
            *e = (*e - 1.0).exp();
        }
        delta * (lse - 1.0).exp()
    }
}

/// Dual objective `g(α) = k Σ_j α_j + Σ_i rowval_i(α)` and the primal it
/// induces; also returns the dual gradient.
fn dual_eval(values: &Mat, alpha: &[f64], delta: f64, k: usize, primal: &mut Mat) -> (f64, Vec<f64>) {
    let m = values.cols();
    let mut g = k as f64 * alpha.iter().sum::<f64>();
    let mut colsum = vec![0.0f64; m];
    let mut row_buf = vec![0.0f64; m];
    for i in 0..values.rows() {
        g += row_solution(values.row(i), alpha, delta, &mut row_buf);
        for (j, x) in row_buf.iter().enumerate() {
            primal.set(i, j, *x);
            colsum[j] += x;
        }
    }
    let grad: Vec<f64> = colsum.iter().map(|c| k as f64 - c).collect();
    (g, grad)
}

/// Primal objective of a feasible `x`.
pub fn regularized_objective(values: &Mat, x: &Mat, delta: f64) -> f64 {
    let mut obj = 0.0;
    for i in 0..values.rows() {
        for j in 0..values.cols() {
            let xi = x.get(i, j);
            if xi > 0.0 {
                obj += xi * values.get(i, j) - delta * xi * xi.ln();
            }
        }
    }
    obj
}

/// Solve the entropy-regularized matching program to (relative) accuracy
/// around `1e-9` in the objective.
pub fn solve_offline(values: &Mat, delta: f64, k: usize) -> Result<DualSolution> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "regularizer {delta} must be positive"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("load k must be at least 1".into()));
    }
    if values.rows() != k * values.cols() {
        return Err(Error::InvalidInput(format!(
            "value matrix must be (k*m) x m, got {}x{} with k={k}",
            values.rows(),
            values.cols()
        )));
    }
    let m = values.cols();
    let mut alpha = vec![0.0f64; m];
    let mut primal = Mat::zeros(values.rows(), m);
    let (mut g, mut grad) = dual_eval(values, &alpha, delta, k, &mut primal);

    let mut step = delta; // curvature of the dual scales like rows/δ
    let tol = 1e-11 * (1.0 + k as f64);
    let max_iters = 400_000u64;
    let mut iters = 0u64;
    let mut trial = Mat::zeros(values.rows(), m);
    loop {
        // Projected-gradient residual doubles as the KKT check: at a solution
        // either α_j = 0 and the column has slack, or the column is tight.
        let residual = alpha
            .iter()
            .zip(&grad)
            .map(|(a, d)| (a - (a - d).max(0.0)).abs())
            .fold(0.0f64, f64::max);
        if residual <= tol || iters >= max_iters {
            break;
        }
        // Backtracking line search on the projected step.
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = alpha
                .iter()
                .zip(&grad)
                .map(|(a, d)| (a - step * d).max(0.0))
                .collect();
            let (g_cand, grad_cand) = dual_eval(values, &cand, delta, k, &mut trial);
            let dist2: f64 = cand
                .iter()
                .zip(&alpha)
                .map(|(c, a)| (c - a) * (c - a))
                .sum();
            let linear: f64 = cand
                .iter()
                .zip(&alpha)
                .zip(&grad)
                .map(|((c, a), d)| d * (c - a))
                .sum();
            if g_cand <= g + linear + dist2 / (2.0 * step) + 1e-15 * g.abs() {
                alpha = cand;
                g = g_cand;
                grad = grad_cand;
                std::mem::swap(&mut primal, &mut trial);
                step *= 1.25;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step underflow: gradient is numerically flat
        }
        iters += 1;
    }
    if iters >= max_iters {
        return Err(Error::SolverFailure(format!(
            "dual descent did not converge within {max_iters} iterations"
        )));
    }

    let opt = regularized_objective(values, &primal, delta);
    Ok(DualSolution {
        alpha,
        primal,
        opt,
        iterations: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_matrix(rows: usize, cols: usize, c: f64) -> Mat {
        Mat::from_rows(vec![vec![c; cols]; rows]).unwrap()
    }

    #[test]
    fn single_surrogate_collapses() {
        let values = Mat::from_rows(vec![vec![0.3], vec![0.7], vec![0.5]]).unwrap();
        let sol = solve_offline(&values, 0.1, 3).unwrap();
        for i in 0..3 {
            assert!((sol.primal.get(i, 0) - 1.0).abs() < 1e-9);
        }
        assert!((sol.opt - 1.5).abs() < 1e-8, "opt {}", sol.opt);
    }

    #[test]
    fn constant_values_give_uniform_rows() {
        let (m, k, c, delta) = (3usize, 2usize, 0.4f64, 0.15f64);
        let values = constant_matrix(k * m, m, c);
        let sol = solve_offline(&values, delta, k).unwrap();
        let expect = (k * m) as f64 * c + delta * (k * m) as f64 * (m as f64).ln();
        assert!(
            (sol.opt - expect).abs() < 1e-7 * expect,
            "opt {} vs {expect}",
            sol.opt
        );
        for i in 0..k * m {
            for j in 0..m {
                assert!((sol.primal.get(i, j) - 1.0 / m as f64).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rows_follow_exponential_weights_in_prices() {
        let values = Mat::from_rows(vec![
            vec![0.9, 0.1],
            vec![0.8, 0.3],
            vec![0.2, 0.7],
            vec![0.4, 0.6],
        ])
        .unwrap();
        let delta = 0.1;
        let sol = solve_offline(&values, delta, 2).unwrap();
        // recompute each row from (v, alpha) and compare
        for i in 0..4 {
            let weights: Vec<f64> = (0..2)
                .map(|j| ((values.get(i, j) - sol.alpha[j]) / delta).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            for j in 0..2 {
                let resid = (sol.primal.get(i, j) - weights[j] / total).abs();
                assert!(resid < 1e-8, "row {i} residual {resid}");
            }
        }
        // every column exactly at capacity (rows all bind here)
        for j in 0..2 {
            let col: f64 = (0..4).map(|i| sol.primal.get(i, j)).sum();
            assert!((col - 2.0).abs() < 1e-6, "column {j} mass {col}");
        }
    }

    #[test]
    fn opt_no_less_than_uniform_lower_bound() {
        let values = Mat::from_rows(vec![
            vec![0.13, 0.87, 0.44],
            vec![0.31, 0.29, 0.66],
            vec![0.95, 0.05, 0.51],
            vec![0.62, 0.48, 0.12],
            vec![0.77, 0.33, 0.59],
            vec![0.21, 0.84, 0.40],
        ])
        .unwrap();
        let delta = 0.2;
        let sol = solve_offline(&values, delta, 2).unwrap();
        let bound = delta * 6.0 * 3.0f64.ln();
        assert!(sol.opt >= bound, "opt {} below uniform bound {bound}", sol.opt);
    }

    #[test]
    fn rejects_bad_shapes_and_params() {
        let values = constant_matrix(4, 2, 0.5);
        assert!(solve_offline(&values, 0.0, 2).is_err());
        assert!(solve_offline(&values, 0.1, 3).is_err());
    }
}
