//! Independent numeric concave maximizers used as oracles against the
//! closed-form and dual-route solutions.

use crate::error::Error;
use crate::matching::Mat;
use crate::Result;

/// Maximize `Σ_j v_j x_j + reg·H(x)` over the probability simplex by mirror
/// ascent (multiplicative updates). Independent of the closed-form softmax
/// route: it never forms `exp(v/reg)` directly.
pub fn simplex_entropy_argmax(v: &[f64], reg: f64, tol: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("empty objective".into()));
    }
    if reg <= 0.0 {
        return Err(Error::InvalidParameter("regularizer must be positive".into()));
    }
    let m = v.len();
    let mut x = vec![1.0 / m as f64; m];
    let step = 0.5 / reg.max(1.0);
    for _ in 0..200_000 {
        // gradient of v·x − reg Σ x ln x is v − reg(ln x + 1)
        let mut next: Vec<f64> = x
            .iter()
            .zip(v)
            .map(|(xi, vi)| {
                let g = vi - reg * (xi.max(1e-300).ln() + 1.0);
                xi.max(1e-300) * (step * g).exp()
            })
            .collect();
        let total: f64 = next.iter().sum();
        for n in next.iter_mut() {
            *n /= total;
        }
        let diff = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        x = next;
        if diff < tol {
            return Ok(x);
        }
    }
    Err(Error::SolverFailure(
        "mirror ascent did not converge".into(),
    ))
}

fn project_capped_simplex(z: &mut [f64], cap: f64) {
    // Euclidean projection onto {x ≥ 0, Σ x ≤ cap}.
    let mut positive_sum: f64 = z.iter().map(|v| v.max(0.0)).sum();
    if positive_sum <= cap {
        for v in z.iter_mut() {
            *v = v.max(0.0);
        }
        return;
    }
    let mut sorted: Vec<f64> = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - cap) / (i + 1) as f64;
        if i + 1 == sorted.len() || sorted[i + 1] <= t {
            theta = t;
            break;
        }
    }
    positive_sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - theta).max(0.0);
        positive_sum += *v;
    }
    let _ = positive_sum;
}

/// Dykstra projection onto the transportation polytope
/// `{x ≥ 0, Σ_j x_ij ≤ 1 ∀i, Σ_i x_ij ≤ k ∀j}`.
fn project_polytope(x: &mut Mat, k: usize, cycles: usize) {
    let rows = x.rows();
    let cols = x.cols();
    let mut p = Mat::zeros(rows, cols); // correction for the row set
    let mut q = Mat::zeros(rows, cols); // correction for the column set
    let mut buf_row = vec![0.0f64; cols];
    let mut buf_col = vec![0.0f64; rows];
    for _ in 0..cycles {
        // project x + p onto the row constraints
        for i in 0..rows {
            for j in 0..cols {
                buf_row[j] = x.get(i, j) + p.get(i, j);
            }
            let before = buf_row.clone();
            project_capped_simplex(&mut buf_row, 1.0);
            for j in 0..cols {
                p.set(i, j, before[j] - buf_row[j]);
                x.set(i, j, buf_row[j]);
            }
        }
        // project x + q onto the column constraints
        for j in 0..cols {
            for i in 0..rows {
                buf_col[i] = x.get(i, j) + q.get(i, j);
            }
            let before = buf_col.clone();
            project_capped_simplex(&mut buf_col, k as f64);
            for i in 0..rows {
                q.set(i, j, before[i] - buf_col[i]);
                x.set(i, j, buf_col[i]);
            }
        }
    }
}

/// Entropy-regularized matching optimum by projected gradient ascent on the
/// primal variables, with Dykstra projections onto the matching polytope.
/// This is the independent check of the dual-route solver.
pub fn projected_gradient_opt(values: &Mat, delta: f64, k: usize) -> Result<f64> {
    if delta <= 0.0 || k == 0 || values.rows() != k * values.cols() {
        return Err(Error::InvalidInput("bad maximizer inputs".into()));
    }
    let rows = values.rows();
    let cols = values.cols();
    let objective = |x: &Mat| -> f64 {
        let mut obj = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let xi = x.get(i, j);
                if xi > 0.0 {
                    obj += xi * values.get(i, j) - delta * xi * xi.ln();
                }
            }
        }
        obj
    };

    let mut x = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            x.set(i, j, 1.0 / cols as f64);
        }
    }
    let mut obj = objective(&x);
    let mut step = delta;
    let mut stale = 0usize;
    for _ in 0..60_000 {
        let mut cand = x.clone();
        for i in 0..rows {
            for j in 0..cols {
                let g = values.get(i, j) - delta * (x.get(i, j).max(1e-300).ln() + 1.0);
                cand.set(i, j, x.get(i, j) + step * g);
            }
        }
        project_polytope(&mut cand, k, 40);
        let cand_obj = objective(&cand);
        if cand_obj > obj + 1e-14 {
            let improvement = cand_obj - obj;
            x = cand;
            obj = cand_obj;
            step = (step * 1.1).min(10.0 * delta);
            if improvement < 1e-12 * (1.0 + obj.abs()) {
                stale += 1;
                if stale > 30 {
                    break;
                }
            } else {
                stale = 0;
            }
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::offline::solve_offline;
    use crate::verify::oracles::exact_exp_weights;

    #[test]
    fn mirror_ascent_recovers_softmax() {
        let v = [0.3, 0.9, 0.55];
        let lambda = 6.0;
        let closed = exact_exp_weights(&v, lambda).unwrap();
        let numeric = simplex_entropy_argmax(&v, 1.0 / lambda, 1e-13).unwrap();
        for (a, b) in closed.iter().zip(&numeric) {
            assert!((a - b).abs() < 1e-8, "softmax {a} vs mirror {b}");
        }
    }

    #[test]
    fn capped_simplex_projection() {
        let mut z = vec![0.9, 0.5, -0.2];
        project_capped_simplex(&mut z, 1.0);
        let sum: f64 = z.iter().sum();
        assert!(sum <= 1.0 + 1e-12);
        assert!(z.iter().all(|v| *v >= 0.0));
        // already feasible input is clamped only
        let mut y = vec![0.2, 0.3];
        project_capped_simplex(&mut y, 1.0);
        assert_eq!(y, vec![0.2, 0.3]);
    }

    #[test]
    fn primal_route_matches_dual_route() {
        let values = Mat::from_rows(vec![
            vec![0.83, 0.42],
            vec![0.55, 0.61],
            vec![0.34, 0.97],
            vec![0.71, 0.48],
        ])
        .unwrap();
        let delta = 0.2;
        let dual = solve_offline(&values, delta, 2).unwrap();
        let primal = projected_gradient_opt(&values, delta, 2).unwrap();
        assert!(
            (dual.opt - primal).abs() < 1e-6,
            "dual {} vs primal {primal}",
            dual.opt
        );
    }
}
