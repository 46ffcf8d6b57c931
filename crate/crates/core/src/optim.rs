//! Derivative-free and quasi-Newton optimizers used by the estimators.

/// Nelder-Mead simplex minimizer.
///
/// Standard reflection/expansion/contraction coefficients, simplex seeded
/// around `x0` with per-coordinate steps. Returns (argmin, min).
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    if n == 0 {
        return (vec![], f(&[]));
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 {
            step * v[i].abs()
        } else {
            step
        };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        // order ascending by value
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = idx[0];
        let worst = idx[n];
        let second_worst = idx[n.saturating_sub(1)];

        if (fv[worst] - fv[best]).abs() <= tol * (1.0 + fv[best].abs()) {
            break;
        }

        // centroid of all but worst
        let mut centroid = vec![0.0; n];
        for &i in idx.iter().take(n) {
            for k in 0..n {
                centroid[k] += simplex[i][k] / n as f64;
            }
        }

        let reflect: Vec<f64> = (0..n)
            .map(|k| centroid[k] + (centroid[k] - simplex[worst][k]))
            .collect();
        let fr = f(&reflect);

        if fr < fv[best] {
            let expand: Vec<f64> = (0..n)
                .map(|k| centroid[k] + 2.0 * (centroid[k] - simplex[worst][k]))
                .collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[worst] = expand;
                fv[worst] = fe;
            } else {
                simplex[worst] = reflect;
                fv[worst] = fr;
            }
        } else if fr < fv[second_worst] {
            simplex[worst] = reflect;
            fv[worst] = fr;
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|k| centroid[k] + 0.5 * (simplex[worst][k] - centroid[k]))
                .collect();
            let fc = f(&contract);
            if fc < fv[worst] {
                simplex[worst] = contract;
                fv[worst] = fc;
            } else {
                // shrink toward best
                let best_pt = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    for k in 0..n {
                        simplex[i][k] = best_pt[k] + 0.5 * (simplex[i][k] - best_pt[k]);
                    }
                    fv[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    (simplex[best].clone(), fv[best])
}

pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// BFGS minimizer with backtracking Armijo line search.
///
/// `fg` returns (value, gradient). The inverse Hessian approximation starts
/// at the identity and is refreshed whenever the curvature condition fails.
pub fn bfgs<F: Fn(&[f64]) -> (f64, Vec<f64>)>(
    fg: F,
    x0: &[f64],
    grad_tol: f64,
    max_iter: usize,
) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x);
    let mut h_inv = identity(n);

    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let gnorm = norm(&g);
        if gnorm < grad_tol {
            return BfgsResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: it,
                converged: true,
            };
        }
        // direction d = -H g
        let mut d = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                d[i] -= h_inv[i * n + j] * g[j];
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // not a descent direction; reset
            h_inv = identity(n);
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        let (mut fx_new, mut g_new) = (fx, g.clone());
        let mut x_new = x.clone();
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            let (fv, gv) = fg(&x_new);
            if fv.is_finite() && fv <= fx + 1e-4 * alpha * slope {
                fx_new = fv;
                g_new = gv;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return BfgsResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: it,
                converged: gnorm < grad_tol,
            };
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let yv: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            // BFGS inverse update: H = (I - s y'/sy) H (I - y s'/sy) + s s'/sy
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h_inv[i * n + j] * yv[j];
                }
            }
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i * n + j] += rho * rho * (sy + yhy) * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        } else {
            h_inv = identity(n);
        }
        x = x_new;
        fx = fx_new;
        g = g_new;
    }
    let gnorm = norm(&g);
    BfgsResult {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations,
        converged: gnorm < grad_tol,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
