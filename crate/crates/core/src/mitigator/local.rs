//! Feasible sequential quadratic programming on the probability simplex.
//!
//! Each iteration solves the quadratic model
//! `min g·d + ½ dᵀBd` subject to `x + d` on the simplex with a primal
//! active-set method, backtracks along `d` until the Armijo condition
//! holds and refreshes `B` with a damped BFGS update. Gradients are
//! forward differences of the exact objective. Every iterate is feasible:
//! `x + t·d` is a convex combination of two simplex points.

#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub fd_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LocalOutcome {
    pub point: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NonFinite;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const STATIONARY_STEP: f64 = 1e-14;

pub(crate) fn minimize<F, O>(
    f: F,
    x0: Vec<f64>,
    settings: LocalSettings,
    mut on_iterate: O,
) -> Result<LocalOutcome, NonFinite>
where
    F: Fn(&[f64]) -> f64,
    O: FnMut(&[f64]),
{
    let n = x0.len();
    let mut x = renormalize(x0);
    let mut fx = finite(f(&x))?;
    let mut g = gradient(&f, &x, fx, settings.fd_step)?;
    let mut b = identity(n);
    let mut b_is_identity = true;
    let mut first_update = true;
    on_iterate(&x);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        iterations += 1;
        let y = solve_simplex_qp(&b, &g, &x);
        let d: Vec<f64> = y.iter().zip(&x).map(|(yi, xi)| yi - xi).collect();
        if d.iter().all(|v| v.abs() < STATIONARY_STEP) {
            converged = true;
            break;
        }
        let slope = dot(&g, &d);

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let xt = renormalize(x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect());
            let ft = f(&xt);
            if ft.is_finite() && ft <= fx + ARMIJO * t * slope.min(0.0) && ft <= fx {
                accepted = Some((xt, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if b_is_identity {
                break;
            }
            b = identity(n);
            b_is_identity = true;
            first_update = true;
            continue;
        };

        let g_new = gradient(&f, &x_new, f_new, settings.fd_step)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, c)| a - c).collect();
        let mut yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, c)| a - c).collect();
        let mean = yv.iter().sum::<f64>() / n as f64;
        yv.iter_mut().for_each(|v| *v -= mean);
        if update_bfgs(&mut b, &s, &yv, first_update) {
            b_is_identity = false;
            first_update = false;
        }

        let delta = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        on_iterate(&x);
        if delta.abs() < settings.tolerance {
            converged = true;
            break;
        }
    }

    Ok(LocalOutcome {
        point: x,
        converged,
        iterations,
    })
}

fn finite(v: f64) -> Result<f64, NonFinite> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NonFinite)
    }
}

fn gradient<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    fx: f64,
    h: f64,
) -> Result<Vec<f64>, NonFinite> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fi = f(&probe);
            probe[i] = x[i];
            finite((fi - fx) / h)
        })
        .collect()
}

/// Clamps rounding-level negatives and rescales to unit sum.
fn renormalize(mut x: Vec<f64>) -> Vec<f64> {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Powell-damped BFGS update; keeps `b` positive definite. On the first
/// update the matrix is rescaled to the observed curvature. Returns false
/// when the step carries no curvature information.
fn update_bfgs(b: &mut [Vec<f64>], s: &[f64], y: &[f64], first: bool) -> bool {
    let sy = dot(s, y);
    if first && sy > 0.0 {
        let scale = dot(y, y) / sy;
        if scale.is_finite() && scale > 0.0 {
            for (i, row) in b.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { scale } else { 0.0 };
                }
            }
        }
    }
    let bs = mat_vec(b, s);
    let sbs = dot(s, &bs);
    if !(sbs > 1e-300) {
        return false;
    }
    let (r, sr) = if sy >= 0.2 * sbs {
        (y.to_vec(), sy)
    } else {
        let theta = 0.8 * sbs / (sbs - sy);
        let r: Vec<f64> = y
            .iter()
            .zip(&bs)
            .map(|(yi, bsi)| theta * yi + (1.0 - theta) * bsi)
            .collect();
        let sr = dot(s, &r);
        (r, sr)
    };
    if !(sr > 0.0) || r.iter().any(|v| !v.is_finite()) {
        return false;
    }
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
    true
}

/// Minimizes `g·(y - x) + ½ (y - x)ᵀ B (y - x)` over the simplex with a
/// primal active-set method started at the feasible point `x`. `B` must be
/// positive definite.
pub(crate) fn solve_simplex_qp(b: &[Vec<f64>], g: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut y = x.to_vec();
    let mut active: Vec<bool> = y.iter().map(|v| *v <= 0.0).collect();
    let max_steps = 20 * n + 50;

    for _ in 0..max_steps {
        let model_grad: Vec<f64> = {
            let diff: Vec<f64> = y.iter().zip(x).map(|(a, c)| a - c).collect();
            let bd = mat_vec(b, &diff);
            g.iter().zip(&bd).map(|(gi, bi)| gi + bi).collect()
        };
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let Some((p_free, nu)) = equality_step(b, &model_grad, &free) else {
            break;
        };
        let scale = 1.0 + model_grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if p_free.iter().all(|v| v.abs() <= 1e-13) {
            // Stationary on the current face: check bound multipliers.
            let release = (0..n)
                .filter(|&i| active[i])
                .map(|i| (i, model_grad[i] - nu))
                .filter(|(_, mu)| *mu < -1e-12 * scale)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, _)) => active[i] = false,
                None => break,
            }
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            if p_free[k] < 0.0 {
                let limit = -y[i] / p_free[k];
                if limit < step {
                    step = limit;
                    blocking = Some(i);
                }
            }
        }
        for (k, &i) in free.iter().enumerate() {
            y[i] += step * p_free[k];
        }
        if let Some(i) = blocking {
            y[i] = 0.0;
            active[i] = true;
        }
    }
    renormalize(y)
}

/// Solves the face-restricted equality QP
/// `B_FF p + grad_F = ν·1, Σ p = 0` for the free set `F`.
fn equality_step(b: &[Vec<f64>], grad: &[f64], free: &[usize]) -> Option<(Vec<f64>, f64)> {
    let m = free.len();
    if m == 0 {
        return None;
    }
    let size = m + 1;
    let mut a = vec![vec![0.0; size + 1]; size];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[r][c] = b[i][j];
        }
        a[r][m] = -1.0;
        a[r][size] = -grad[i];
    }
    for c in 0..m {
        a[m][c] = 1.0;
    }
    let sol = gaussian_solve(a)?;
    Some((sol[..m].to_vec(), sol[m]))
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gaussian_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..=n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

const PATTERN_START: f64 = 1.0 / 16.0;
const PATTERN_MIN: f64 = 1e-10;
const PATTERN_MAX_EVALUATIONS: usize = 20_000;

/// Compass search that moves mass between pairs of coordinates, halving
/// the step when no move helps. Needs no gradient, so it gets past the
/// kinks where the quadratic model stalls. Never increases `f`.
pub(crate) fn pattern_search<F>(f: F, mut x: Vec<f64>) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = x.len();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return x;
    }
    let mut step = PATTERN_START;
    let mut evaluations = 0;
    while step >= PATTERN_MIN && evaluations < PATTERN_MAX_EVALUATIONS {
        let mut improved = false;
        for from in 0..n {
            for to in 0..n {
                let t = step.min(x[from]);
                if from == to || t <= 0.0 {
                    continue;
                }
                let mut y = x.clone();
                y[from] -= t;
                y[to] += t;
                let fy = f(&y);
                evaluations += 1;
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> LocalSettings {
        LocalSettings {
            max_iterations: 1000,
            tolerance: 1e-12,
            fd_step: 1e-7,
        }
    }

    #[test]
    fn qp_projects_onto_simplex_with_identity() {
        // With B = I and x = 0-gradient offset, the QP solution is the
        // Euclidean projection of x - g.
        let x = [0.2, 0.3, 0.5];
        let g = [0.5, -0.2, 0.1];
        let y = solve_simplex_qp(&identity(3), &g, &x);
        // projection of [-0.3, 0.5, 0.4]: drop first, shift others by 0.05
        let expected = [0.0, 0.55, 0.45];
        for (a, e) in y.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn qp_can_release_bounds() {
        let x = [1.0, 0.0, 0.0];
        let g = [1.0, 0.0, 0.0];
        let y = solve_simplex_qp(&identity(3), &g, &x);
        // projection of [0, 0, 0] onto simplex is uniform
        for v in &y {
            assert!((v - 1.0 / 3.0).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn minimizes_a_quadratic_with_interior_optimum() {
        let target = [0.1, 0.6, 0.3];
        let f = |w: &[f64]| {
            w.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2))
                .sum::<f64>()
        };
        let out = minimize(f, vec![0.8, 0.1, 0.1], settings(), |_| {}).unwrap();
        assert!(out.converged);
        assert!(f(&out.point) < 1e-10);
        for (a, b) in out.point.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5, "{:?}", out.point);
        }
    }

    #[test]
    fn reaches_boundary_optimum_exactly() {
        let f = |w: &[f64]| (w[0] - 1.5).powi(2) + w[1].powi(2) + w[2].powi(2);
        let out = minimize(f, vec![0.2, 0.5, 0.3], settings(), |_| {}).unwrap();
        assert!((out.point[0] - 1.0).abs() < 1e-9, "{:?}", out.point);
    }

    #[test]
    fn iterates_stay_feasible() {
        let f = |w: &[f64]| (w[0] - 0.7).powi(2) + 3.0 * (w[1] - 0.5).powi(2) + w[3].powi(4);
        let mut visited = Vec::new();
        minimize(f, vec![0.1, 0.2, 0.3, 0.4], settings(), |x| {
            visited.push(x.to_vec())
        })
        .unwrap();
        assert!(visited.len() > 1);
        for x in visited {
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let f = |_: &[f64]| f64::NAN;
        assert_eq!(
            minimize(f, vec![0.5, 0.5], settings(), |_| {}).unwrap_err(),
            NonFinite
        );
    }

    #[test]
    fn pattern_search_crosses_a_kink() {
        // |x0 - 0.38| + 0.1 * |x0 - 0.4|: minimum at the kink x0 = 0.38.
        let f = |w: &[f64]| (w[0] - 0.38).abs() + 0.1 * (w[0] - 0.4).abs();
        let x = pattern_search(f, vec![0.4, 0.6]);
        assert!((x[0] - 0.38).abs() < 1e-8, "{x:?}");
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pattern_search_stays_feasible_at_a_vertex() {
        let f = |w: &[f64]| -w[2];
        let x = pattern_search(f, vec![0.2, 0.3, 0.5]);
        assert!(x.iter().all(|&v| v >= 0.0));
        assert!((x[2] - 1.0).abs() < 1e-12, "{x:?}");
    }
}
