//! One-dimensional Gauss and Gauss–Lobatto rules on the reference interval [0,1].

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Largest number of points accepted by the rule constructors.
pub const MAX_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointSet {
    Gauss,
    GaussLobatto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: PointSet,
}

impl QuadRule1D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial P_n and its derivative at x in [-1,1].
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1); not used at the endpoints
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn check_count(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::InvalidArgument(format!(
            "{what} rule needs at least {min} point(s), got {n}"
        )));
    }
    if n > MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "{what} rule with {n} points exceeds the supported maximum of {MAX_POINTS}"
        )));
    }
    Ok(())
}

/// n-point Gauss–Legendre rule mapped to [0,1].
pub fn gauss_rule(n: usize) -> Result<QuadRule1D> {
    check_count(n, 1, "Gauss")?;
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Chebyshev-like initial guess, descending from +1
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // node i on [-1,1] is +x; its mirror is -x
        points[n - 1 - i] = 0.5 * (1.0 + x);
        points[i] = 0.5 * (1.0 - x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.5;
    }
    Ok(QuadRule1D {
        points,
        weights,
        kind: PointSet::Gauss,
    })
}

/// n-point Gauss–Lobatto rule on [0,1], endpoints included.
pub fn gauss_lobatto_rule(n: usize) -> Result<QuadRule1D> {
    check_count(n, 2, "Gauss-Lobatto")?;
    let m = n - 1;
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let w_end = 2.0 / (n as f64 * m as f64);
    points[0] = 0.0;
    points[m] = 1.0;
    weights[0] = 0.5 * w_end;
    weights[m] = 0.5 * w_end;
    // interior nodes are the roots of P_m'; Newton on q(x) = P_m'(x) using
    // q'(x) = (2x P_m' - m(m+1) P_m) / (1 - x^2)
    for i in 1..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * i as f64 / m as f64).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre(m, x);
            let ddp = (2.0 * x * dp - (m * (m + 1)) as f64 * p) / (1.0 - x * x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                break;
            }
        }
        let (p, _) = legendre(m, x);
        let w = w_end / (p * p);
        points[m - i] = 0.5 * (1.0 + x);
        points[i] = 0.5 * (1.0 - x);
        weights[i] = 0.5 * w;
        weights[m - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.5;
    }
    Ok(QuadRule1D {
        points,
        weights,
        kind: PointSet::GaussLobatto,
    })
}

/// Rule of the given kind with n points.
pub fn rule(kind: PointSet, n: usize) -> Result<QuadRule1D> {
    match kind {
        PointSet::Gauss => gauss_rule(n),
        PointSet::GaussLobatto => gauss_lobatto_rule(n),
    }
}
