//! Tiny dense solvers used by the geometry code. Dimensions are at most a
//! few dozen, so clarity wins over speed.

use nalgebra::{DMatrix, DVector};

/// Point of minimum norm in the convex hull of `points`, with its convex
/// weights. Away-step Frank-Wolfe with exact line search.
pub fn min_norm_in_hull(points: &[DVector<f64>]) -> (DVector<f64>, Vec<f64>) {
    let k = points.len();
    assert!(k > 0, "empty hull");
    let mut w = vec![0.0; k];
    let start = (0..k)
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .unwrap();
    w[start] = 1.0;
    let mut x = points[start].clone();
    let scale = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(1e-300);

    for _ in 0..100_000 {
        let dots: Vec<f64> = points.iter().map(|p| p.dot(&x)).collect();
        let s = (0..k).min_by(|&a, &b| dots[a].total_cmp(&dots[b])).unwrap();
        let xx = x.norm_squared();
        let fw_gap = xx - dots[s];
        if fw_gap <= 1e-15 * scale {
            break;
        }
        let a = (0..k)
            .filter(|&i| w[i] > 0.0)
            .max_by(|&a, &b| dots[a].total_cmp(&dots[b]))
            .unwrap();
        let away_gap = dots[a] - xx;
        // direction and the largest feasible step along it
        let (dir, max_step, toward) = if fw_gap >= away_gap {
            (&points[s] - &x, 1.0, Some(s))
        } else {
            let wa = w[a];
            (&x - &points[a], wa / (1.0f64 - wa).max(1e-300), None)
        };
        let dd = dir.norm_squared();
        if dd == 0.0 {
            break;
        }
        let step = (-x.dot(&dir) / dd).clamp(0.0, max_step);
        if step == 0.0 {
            break;
        }
        x += step * &dir;
        match toward {
            Some(s) => {
                for wi in w.iter_mut() {
                    *wi *= 1.0 - step;
                }
                w[s] += step;
            }
            None => {
                for wi in w.iter_mut() {
                    *wi *= 1.0 + step;
                }
                w[a] -= step;
                if w[a] < 1e-15 {
                    w[a] = 0.0;
                }
            }
        }
    }
    (x, w)
}

/// Nonnegative least squares `min ||A z - b||, z >= 0` (Lawson-Hanson).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = a.ncols();
    let mut z = DVector::zeros(k);
    let mut passive = vec![false; k];
    let tol = 1e-12 * (1.0 + a.norm() * b.norm());

    for _ in 0..(3 * k + 10) {
        let grad = a.transpose() * (b - a * &z);
        let candidate = (0..k)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let s = solve_subset(a, b, &idx);
            if idx.iter().zip(s.iter()).all(|(_, &v)| v > 0.0) {
                z.fill(0.0);
                for (&i, &v) in idx.iter().zip(s.iter()) {
                    z[i] = v;
                }
                break;
            }
            // step back to the boundary of the feasible region
            let mut alpha = 1.0f64;
            for (&i, &v) in idx.iter().zip(s.iter()) {
                if v <= 0.0 {
                    alpha = alpha.min(z[i] / (z[i] - v));
                }
            }
            for (&i, &v) in idx.iter().zip(s.iter()) {
                z[i] += alpha * (v - z[i]);
                if z[i] <= 1e-15 {
                    z[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    z
}

fn solve_subset(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(idx);
    let ata = sub.transpose() * &sub;
    let atb = sub.transpose() * b;
    // tiny ridge keeps parallel rays solvable
    let ridge = 1e-14 * (1.0 + ata.diagonal().amax());
    let reg = &ata + DMatrix::identity(idx.len(), idx.len()) * ridge;
    reg.clone()
        .cholesky()
        .map(|c| c.solve(&atb))
        .unwrap_or_else(|| reg.lu().solve(&atb).unwrap_or_else(|| DVector::zeros(idx.len())))
}

/// `min 0.5 m'Qm + q'm` over `m >= 0` for symmetric positive definite `Q`.
pub fn nonneg_qp(q_mat: &DMatrix<f64>, q: &DVector<f64>) -> DVector<f64> {
    let k = q.len();
    let ridge = 1e-13 * (1.0 + q_mat.diagonal().amax());
    let reg = q_mat + DMatrix::identity(k, k) * ridge;
    let chol = reg.cholesky().expect("dual QP matrix must be positive definite");
    // with Q = L L', the objective is 0.5 ||L' m + L^{-1} q||^2 + const
    let l = chol.l();
    let rhs = -l
        .solve_lower_triangular(q)
        .expect("triangular factor is nonsingular");
    nnls(&l.transpose(), &rhs)
}
