//! Box-constrained QP path smoothing: projected gradient descent with
//! Barzilai-Borwein steps and a monotone backtracking safeguard, plus a
//! brute-force active-set reference used to verify optimality.

use super::{CoarsePath, CorridorBox, PlannerError};
use nalgebra::{DMatrix, DVector, Vector2};

/// Smoothed path and solver diagnostics.
#[derive(Debug, Clone)]
pub struct SmoothPath {
    pub points: Vec<Vector2<f64>>,
    pub objective_value: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit with KKT residual above 1e-4.
    pub converged: bool,
    /// Infinity norm of the unit-step projected-gradient residual.
    pub kkt_residual: f64,
    /// Objective after the initial projection, then after every accepted
    /// iterate; non-increasing by construction.
    pub objective_trace: Vec<f64>,
}

const MAX_ITERS: usize = 10_000;
const STEP_TOL: f64 = 1e-7;
const KKT_TOL: f64 = 1e-4;

/// Smoothness and length objective: f_s sums squared second differences,
/// f_l sums squared segment lengths, f_total = λ1 f_s + λ2 f_l.
pub fn eval_objective(points: &[Vector2<f64>], lambda1: f64, lambda2: f64) -> (f64, f64, f64) {
    let n = points.len();
    let mut f_s = 0.0;
    for i in 0..n.saturating_sub(2) {
        let rx = points[i].x + points[i + 2].x - 2.0 * points[i + 1].x;
        let ry = points[i].y + points[i + 2].y - 2.0 * points[i + 1].y;
        f_s += rx * rx + ry * ry;
    }
    let mut f_l = 0.0;
    for i in 0..n.saturating_sub(1) {
        let dx = points[i].x - points[i + 1].x;
        let dy = points[i].y - points[i + 1].y;
        f_l += dx * dx + dy * dy;
    }
    (f_s, f_l, lambda1 * f_s + lambda2 * f_l)
}

/// Gradient of the objective with respect to every point; endpoint entries
/// are zeroed because they are pinned.
fn gradient(points: &[Vector2<f64>], lambda1: f64, lambda2: f64) -> Vec<Vector2<f64>> {
    let n = points.len();
    let mut g = vec![Vector2::zeros(); n];
    for i in 0..n.saturating_sub(2) {
        let r = points[i] + points[i + 2] - 2.0 * points[i + 1];
        g[i] += 2.0 * lambda1 * r;
        g[i + 1] -= 4.0 * lambda1 * r;
        g[i + 2] += 2.0 * lambda1 * r;
    }
    for i in 0..n.saturating_sub(1) {
        let d = points[i] - points[i + 1];
        g[i] += 2.0 * lambda2 * d;
        g[i + 1] -= 2.0 * lambda2 * d;
    }
    g[0] = Vector2::zeros();
    g[n - 1] = Vector2::zeros();
    g
}

fn project(points: &mut [Vector2<f64>], corridor: &[CorridorBox]) {
    for (i, b) in corridor.iter().enumerate() {
        let p = &mut points[i + 1];
        p.x = p.x.clamp(b.x_lo, b.x_hi);
        p.y = p.y.clamp(b.y_lo, b.y_hi);
    }
}

pub fn smooth_path(
    coarse: &CoarsePath,
    corridor: &[CorridorBox],
    lambda1: f64,
    lambda2: f64,
) -> Result<SmoothPath, PlannerError> {
    let n = coarse.states.len();
    if n < 2 {
        return Err(PlannerError::InvalidInput(
            "smoothing needs at least two states".into(),
        ));
    }
    if corridor.len() != n - 2 {
        return Err(PlannerError::InvalidInput(format!(
            "corridor has {} boxes for {} interior vertices",
            corridor.len(),
            n - 2
        )));
    }

    let mut x: Vec<Vector2<f64>> = coarse.states.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    project(&mut x, corridor);

    if n == 2 {
        let (_, _, f) = eval_objective(&x, lambda1, lambda2);
        return Ok(SmoothPath {
            points: x,
            objective_value: f,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            objective_trace: vec![f],
        });
    }

    // Spectral bound of the Hessian: 16 λ1 from the second-difference term
    // plus 4 λ2 from the length term.
    let alpha0 = 1.0 / (16.0 * lambda1 + 4.0 * lambda2);
    let mut alpha = alpha0;
    let mut f_cur = eval_objective(&x, lambda1, lambda2).2;
    let mut g = gradient(&x, lambda1, lambda2);
    let mut prev: Option<(Vec<Vector2<f64>>, Vec<Vector2<f64>>)> = None;
    let mut iterations = 0;
    let mut converged_by_step = false;
    let mut objective_trace = vec![f_cur];

    while iterations < MAX_ITERS {
        iterations += 1;
        if let Some((px, pg)) = &prev {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 1..n - 1 {
                let s = x[i] - px[i];
                let y = g[i] - pg[i];
                ss += s.dot(&s);
                sy += s.dot(&y);
            }
            alpha = if sy > 1e-18 {
                (ss / sy).clamp(alpha0 * 1e-4, alpha0 * 1e6)
            } else {
                alpha0
            };
        }

        // Backtracking keeps descent monotone even on non-monotone BB steps.
        let mut step = alpha;
        let mut z;
        let mut f_z;
        let mut halvings = 0;
        loop {
            z = x.clone();
            for i in 1..n - 1 {
                z[i] -= step * g[i];
            }
            project(&mut z, corridor);
            f_z = eval_objective(&z, lambda1, lambda2).2;
            if f_z <= f_cur || halvings >= 60 {
                break;
            }
            step *= 0.5;
            halvings += 1;
        }
        if f_z > f_cur {
            // Numerically stationary; no descent direction remains.
            converged_by_step = true;
            break;
        }
        debug_assert!(f_z <= f_cur + 1e-12, "objective increased: {f_cur} -> {f_z}");

        let mut max_delta = 0.0f64;
        for i in 1..n - 1 {
            max_delta = max_delta.max((z[i].x - x[i].x).abs());
            max_delta = max_delta.max((z[i].y - x[i].y).abs());
        }
        let g_next = gradient(&z, lambda1, lambda2);
        prev = Some((std::mem::replace(&mut x, z), std::mem::replace(&mut g, g_next)));
        f_cur = f_z;
        objective_trace.push(f_cur);
        if max_delta < STEP_TOL {
            converged_by_step = true;
            break;
        }
    }

    // Unit-step projected gradient residual.
    let g_final = gradient(&x, lambda1, lambda2);
    let mut proj_pt = x.clone();
    for i in 1..n - 1 {
        proj_pt[i] -= g_final[i];
    }
    project(&mut proj_pt, corridor);
    let mut kkt = 0.0f64;
    for i in 1..n - 1 {
        kkt = kkt.max((proj_pt[i].x - x[i].x).abs());
        kkt = kkt.max((proj_pt[i].y - x[i].y).abs());
    }

    Ok(SmoothPath {
        points: x,
        objective_value: f_cur,
        iterations,
        converged: converged_by_step || kkt <= KKT_TOL,
        kkt_residual: kkt,
        objective_trace,
    })
}

/// Independent reference solver: per-axis brute force over every combination
/// of active bounds, solving each equality-constrained system and keeping the
/// KKT-consistent solution. Exponential in the number of interior points; use
/// only for small instances.
pub fn smooth_path_reference_active_set(
    coarse: &CoarsePath,
    corridor: &[CorridorBox],
    lambda1: f64,
    lambda2: f64,
) -> Vec<Vector2<f64>> {
    let n = coarse.states.len();
    assert!(n >= 2 && n <= 8, "reference solver is for small instances");
    assert_eq!(corridor.len(), n.saturating_sub(2));

    // Full-coordinate quadratic form Q so that f(z) = z' Q z per axis.
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n.saturating_sub(2) {
        let idx = [i, i + 1, i + 2];
        let w = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                q[(idx[a], idx[b])] += lambda1 * w[a] * w[b];
            }
        }
    }
    for i in 0..n - 1 {
        let idx = [i, i + 1];
        let w = [1.0, -1.0];
        for a in 0..2 {
            for b in 0..2 {
                q[(idx[a], idx[b])] += lambda2 * w[a] * w[b];
            }
        }
    }

    let solve_axis = |z0: &[f64], lo: &[f64], hi: &[f64]| -> Vec<f64> {
        let m = n - 2;
        if m == 0 {
            return z0.to_vec();
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        // Each interior variable is free (0), at lower (1), or at upper (2).
        let combos = 3usize.pow(m as u32);
        for combo in 0..combos {
            let mut state = vec![0u8; m];
            let mut c = combo;
            for s in state.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let mut z = z0.to_vec();
            let free: Vec<usize> = (0..m).filter(|&j| state[j] == 0).collect();
            for j in 0..m {
                match state[j] {
                    1 => z[j + 1] = lo[j],
                    2 => z[j + 1] = hi[j],
                    _ => {}
                }
            }
            if !free.is_empty() {
                // Solve 2 Q_ff u_f = -2 Q_f,rest z_rest for the free block.
                let k = free.len();
                let mut a = DMatrix::<f64>::zeros(k, k);
                let mut b = DVector::<f64>::zeros(k);
                for (r, &fj) in free.iter().enumerate() {
                    let row = fj + 1;
                    for (cix, &fk) in free.iter().enumerate() {
                        a[(r, cix)] = q[(row, fk + 1)];
                    }
                    let mut rhs = 0.0;
                    for col in 0..n {
                        if free.iter().any(|&fk| fk + 1 == col) {
                            continue;
                        }
                        rhs -= q[(row, col)] * z[col];
                    }
                    b[r] = rhs;
                }
                let Some(sol) = a.lu().solve(&b) else { continue };
                for (r, &fj) in free.iter().enumerate() {
                    z[fj + 1] = sol[r];
                }
            }
            // Feasibility of free variables.
            let feasible = (0..m).all(|j| {
                state[j] != 0 || (z[j + 1] >= lo[j] - 1e-9 && z[j + 1] <= hi[j] + 1e-9)
            });
            if !feasible {
                continue;
            }
            // KKT sign conditions on the active bounds.
            let grad_at = |j: usize, z: &[f64]| -> f64 {
                (0..n).map(|col| 2.0 * q[(j, col)] * z[col]).sum()
            };
            let kkt_ok = (0..m).all(|j| match state[j] {
                1 => grad_at(j + 1, &z) >= -1e-7,
                2 => grad_at(j + 1, &z) <= 1e-7,
                _ => true,
            });
            if !kkt_ok {
                continue;
            }
            let f: f64 = {
                let zv = DVector::from_column_slice(&z);
                (zv.transpose() * &q * &zv)[(0, 0)]
            };
            if best.as_ref().map_or(true, |(bf, _)| f < *bf) {
                best = Some((f, z));
            }
        }
        best.expect("active-set enumeration found no KKT point").1
    };

    let xs: Vec<f64> = coarse.states.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = coarse.states.iter().map(|p| p.y).collect();
    let x_lo: Vec<f64> = corridor.iter().map(|b| b.x_lo).collect();
    let x_hi: Vec<f64> = corridor.iter().map(|b| b.x_hi).collect();
    let y_lo: Vec<f64> = corridor.iter().map(|b| b.y_lo).collect();
    let y_hi: Vec<f64> = corridor.iter().map(|b| b.y_hi).collect();
    let zx = solve_axis(&xs, &x_lo, &x_hi);
    let zy = solve_axis(&ys, &y_lo, &y_hi);
    zx.into_iter()
        .zip(zy)
        .map(|(x, y)| Vector2::new(x, y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Pose2;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loose_boxes(n: usize) -> Vec<CorridorBox> {
        vec![
            CorridorBox { x_lo: -100.0, x_hi: 100.0, y_lo: -100.0, y_hi: 100.0 };
            n
        ]
    }

    #[test]
    fn objective_hand_sums() {
        let collinear = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(2.0, 0.0),
        ];
        let (f_s, f_l, f_t) = eval_objective(&collinear, 10.0, 1.0);
        assert_relative_eq!(f_s, 0.0);
        assert_relative_eq!(f_l, 2.0);
        assert_relative_eq!(f_t, 2.0);

        let bent = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(2.0, 0.0),
        ];
        let (f_s, f_l, _) = eval_objective(&bent, 10.0, 1.0);
        assert_relative_eq!(f_s, 4.0);
        assert_relative_eq!(f_l, 4.0);

        let single = [Vector2::new(0.0, 0.0), Vector2::new(3.0, 0.0)];
        let (f_s, f_l, _) = eval_objective(&single, 10.0, 1.0);
        assert_relative_eq!(f_s, 0.0);
        assert_relative_eq!(f_l, 9.0);
    }

    #[test]
    fn collinear_equally_spaced_is_stationary() {
        let coarse = CoarsePath {
            states: (0..5).map(|i| Pose2::new(i as f64, 2.0, 0.0)).collect(),
        };
        let out = smooth_path(&coarse, &loose_boxes(3), 10.0, 1.0).unwrap();
        for (p, s) in out.points.iter().zip(&coarse.states) {
            assert!((p.x - s.x).abs() < 1e-6 && (p.y - s.y).abs() < 1e-6);
        }
        assert!(out.converged);
    }

    #[test]
    fn middle_point_hits_lower_bound() {
        let coarse = CoarsePath {
            states: vec![
                Pose2::new(0.0, 0.0, 0.0),
                Pose2::new(1.0, 1.0, 0.0),
                Pose2::new(2.0, 0.0, 0.0),
            ],
        };
        let boxes = vec![CorridorBox { x_lo: 0.0, x_hi: 2.0, y_lo: 0.2, y_hi: 1.0 }];
        let out = smooth_path(&coarse, &boxes, 10.0, 1.0).unwrap();
        assert_relative_eq!(out.points[1].x, 1.0, epsilon = 1e-6);
        assert_relative_eq!(out.points[1].y, 0.2, epsilon = 1e-9);
        assert!(out.converged);
    }

    #[test]
    fn endpoints_are_pinned_bitwise() {
        let coarse = CoarsePath {
            states: vec![
                Pose2::new(0.123456789, -0.987654321, 0.0),
                Pose2::new(1.0, 3.0, 0.0),
                Pose2::new(2.0, -1.0, 0.0),
                Pose2::new(3.5, 0.5, 0.0),
            ],
        };
        let out = smooth_path(&coarse, &loose_boxes(2), 10.0, 1.0).unwrap();
        assert_eq!(out.points[0].x.to_bits(), coarse.states[0].x.to_bits());
        assert_eq!(out.points[0].y.to_bits(), coarse.states[0].y.to_bits());
        assert_eq!(out.points[3].x.to_bits(), coarse.states[3].x.to_bits());
        assert_eq!(out.points[3].y.to_bits(), coarse.states[3].y.to_bits());
    }

    #[test]
    fn descent_property_from_feasible_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.gen_range(3..9);
            let states: Vec<Pose2> = (0..n)
                .map(|i| {
                    Pose2::new(
                        i as f64 + rng.gen_range(-0.3..0.3),
                        rng.gen_range(-1.0..1.0),
                        0.0,
                    )
                })
                .collect();
            let boxes: Vec<CorridorBox> = states[1..n - 1]
                .iter()
                .map(|p| CorridorBox {
                    x_lo: p.x - rng.gen_range(0.01..0.5),
                    x_hi: p.x + rng.gen_range(0.01..0.5),
                    y_lo: p.y - rng.gen_range(0.01..0.5),
                    y_hi: p.y + rng.gen_range(0.01..0.5),
                })
                .collect();
            let coarse = CoarsePath { states };
            let pts: Vec<Vector2<f64>> =
                coarse.states.iter().map(|p| Vector2::new(p.x, p.y)).collect();
            let f_in = eval_objective(&pts, 10.0, 1.0).2;
            let out = smooth_path(&coarse, &boxes, 10.0, 1.0).unwrap();
            assert!(out.objective_value <= f_in + 1e-12);
            // Feasibility within tolerance.
            for (i, b) in boxes.iter().enumerate() {
                assert!(b.contains(out.points[i + 1].x, out.points[i + 1].y, 1e-6));
            }
        }
    }

    #[test]
    fn matches_active_set_reference_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let n = rng.gen_range(3..7);
            let states: Vec<Pose2> = (0..n)
                .map(|i| {
                    Pose2::new(
                        i as f64 * 0.8 + rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.8..0.8),
                        0.0,
                    )
                })
                .collect();
            let boxes: Vec<CorridorBox> = states[1..n - 1]
                .iter()
                .map(|p| CorridorBox {
                    x_lo: p.x - rng.gen_range(0.02..0.6),
                    x_hi: p.x + rng.gen_range(0.02..0.6),
                    y_lo: p.y - rng.gen_range(0.02..0.6),
                    y_hi: p.y + rng.gen_range(0.02..0.6),
                })
                .collect();
            let coarse = CoarsePath { states };
            let ours = smooth_path(&coarse, &boxes, 10.0, 1.0).unwrap();
            let reference = smooth_path_reference_active_set(&coarse, &boxes, 10.0, 1.0);
            for (a, b) in ours.points.iter().zip(&reference) {
                assert!(
                    (a.x - b.x).abs() < 1e-5 && (a.y - b.y).abs() < 1e-5,
                    "trial {trial}: ours {a:?} reference {b:?}"
                );
            }
        }
    }
}
