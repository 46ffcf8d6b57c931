//! Gauss-Legendre and Gauss-Hermite rules.
//!
//! Nodes are computed by Newton iteration on the orthogonal-polynomial
//! recurrences, so no tables are embedded and any order is available.

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-style initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pd(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate f over [a, b] with an n-point Gauss-Legendre rule.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let (xs, ws) = gauss_legendre(n);
    let c = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    xs.iter()
        .zip(&ws)
        .map(|(&x, &w)| w * f(mid + c * x))
        .sum::<f64>()
        * c
}

/// Gauss-Hermite nodes and weights for weight exp(-x^2) on the real line.
///
/// With the substitution c = mu + sqrt(2) sigma s this integrates Gaussian
/// mixtures exactly in the polynomial part of the integrand.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut x = 0.0;
    for i in 0..m {
        // standard initial guesses (largest root first), then Newton
        x = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => x - 1.14 * nf.powf(0.426) / x,
            2 => 1.86 * x - 0.86 * nodes[n - 1],
            3 => 1.91 * x - 0.91 * nodes[n - 2],
            _ => 2.0 * x - nodes[n - i + 1],
        };
        let mut dp = 0.0;
        for _ in 0..200 {
            let (p, d) = hermite_pd(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-14 * x.abs().max(1.0) {
                break;
            }
        }
        // weight for orthonormal recurrence: w = 2 / (H'_n)^2
        let w = 2.0 / (dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = hermite_pd(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

/// Orthonormal Hermite function value/derivative at x (weight exp(-x^2)).
fn hermite_pd(n: usize, x: f64) -> (f64, f64) {
    let pi_quarter = std::f64::consts::PI.powf(-0.25);
    let mut p0 = pi_quarter;
    let mut p1 = std::f64::consts::SQRT_2 * x * pi_quarter;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = x * (2.0 / kf).sqrt() * p1 - ((kf - 1.0) / kf).sqrt() * p0;
        p0 = p1;
        p1 = p2;
    }
    let d = (2.0 * n as f64).sqrt() * p0;
    (p1, d)
}
