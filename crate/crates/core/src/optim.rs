//! Derivative-free minimizers used by the fusion weight searches and the
//! covariance-union solver: a grid-seeded golden-section search and a plain
//! Nelder-Mead simplex.

/// Minimize `f` on `[lo, hi]`: a coarse grid scan picks the bracketing cell
/// (the trace objectives are occasionally multimodal), then golden-section
/// refines it to `tol`. Returns the argmin.
pub fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize, tol: f64) -> f64 {
    debug_assert!(grid >= 3);
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..grid {
        let v = f(lo + step * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = lo + step * best_i.saturating_sub(1) as f64;
    let b = lo + step * (best_i + 1).min(grid - 1) as f64;
    let x = golden_section(&f, a, b, tol);
    if f(x) <= best_v {
        x
    } else {
        lo + step * best_i as f64
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead with the standard coefficients (reflect 1, expand 2, contract
/// 0.5, shrink 0.5). `step` sets the initial simplex edge per coordinate.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: usize,
    f_tol: f64,
) -> NelderMeadResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1.0 { step * v[i].abs() } else { step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if (values[worst] - values[best]).abs() <= f_tol * (1.0 + values[best].abs()) {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; n];
        for &idx in order.iter().take(n) {
            for j in 0..n {
                centroid[j] += simplex[idx][j] / n as f64;
            }
        }

        let point_at = |coef: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + coef * (centroid[j] - simplex[worst][j]))
                .collect()
        };

        let reflected = point_at(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = point_at(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = if fr < values[worst] {
                point_at(0.5)
            } else {
                point_at(-0.5)
            };
            let fc = f(&contracted);
            if fc < values[worst].min(fr) {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                // shrink toward the best vertex
                for idx in 0..=n {
                    if idx == best {
                        continue;
                    }
                    for j in 0..n {
                        simplex[idx][j] = simplex[best][j] + 0.5 * (simplex[idx][j] - simplex[best][j]);
                    }
                    values[idx] = f(&simplex[idx]);
                }
            }
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    NelderMeadResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        converged,
    }
}
