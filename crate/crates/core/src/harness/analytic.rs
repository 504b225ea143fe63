//! Standing-wave solution of the acoustic system on the unit box and the
//! pressure error against it.

use std::f64::consts::PI;

use crate::basis::{even_odd_decompose, lagrange_matrix, MatrixKind};
use crate::error::{Error, Result};
use crate::operator::{AcousticOperator, StateVector};
use crate::quadrature::gauss_rule;
use crate::tensor::{apply_all_dirs, KernelClass, KernelTally, Shape};

/// Vibrating mode `m` with wave speed `c` and density `rho`: p vanishes on
/// the boundary of [0,1]^d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSolution {
    pub dim: usize,
    pub m: u32,
    pub c: f64,
    pub rho: f64,
}

impl ModeSolution {
    pub fn new(dim: usize, m: u32, c: f64, rho: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) || m == 0 || !(c > 0.0) || !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mode solution needs dim 2 or 3, m >= 1, c, rho > 0 (got {dim}, {m}, {c}, {rho})"
            )));
        }
        Ok(ModeSolution { dim, m, c, rho })
    }

    pub fn omega(&self) -> f64 {
        self.c * self.m as f64 * PI * (self.dim as f64).sqrt()
    }

    /// (v, p) at point x and time t.
    pub fn eval(&self, x: [f64; 3], t: f64) -> ([f64; 3], f64) {
        analytic_solution(x, t, self.m, self.c, self.rho, self.dim)
    }
}

pub fn analytic_solution(x: [f64; 3], t: f64, m: u32, c: f64, rho: f64, dim: usize) -> ([f64; 3], f64) {
    let km = m as f64 * PI;
    let omega = c * km * (dim as f64).sqrt();
    let s: Vec<f64> = (0..dim).map(|i| (km * x[i]).sin()).collect();
    let p = (omega * t).cos() * s.iter().product::<f64>();
    let amp = -km / (rho * omega) * (omega * t).sin();
    let mut v = [0.0; 3];
    for (i, vi) in v.iter_mut().enumerate().take(dim) {
        let others: f64 = (0..dim).filter(|&j| j != i).map(|j| s[j]).product();
        *vi = amp * (km * x[i]).cos() * others;
    }
    (v, p)
}

/// Nodal interpolation of the mode at time t into the GL basis.
pub fn interpolate_initial(op: &AcousticOperator, sol: &ModeSolution, t: f64) -> StateVector {
    let dim = op.dim();
    let n = op.k() + 1;
    let nb = n.pow(dim as u32);
    let nodes = &op.basis.gl_nodes;
    let mut u = op.zero_state();
    let el = u.element_len();
    for e in 0..op.n_elements() {
        for a in 0..nb {
            let mut xi = [0.0; 3];
            let mut r = a;
            for x in xi.iter_mut().take(dim) {
                *x = nodes[r % n];
                r /= n;
            }
            let (v, p) = sol.eval(op.mesh.map(e, xi), t);
            for (i, vi) in v.iter().enumerate().take(dim) {
                u.data[e * el + i * nb + a] = *vi;
            }
            u.data[e * el + dim * nb + a] = p;
        }
    }
    u
}

/// L2 norm of p_h - p over the mesh with k+3 Gauss points per direction.
pub fn l2_pressure_error(op: &AcousticOperator, state: &StateVector, sol: &ModeSolution, t: f64) -> Result<f64> {
    if !state.same_layout(&op.zero_state()) {
        return Err(Error::Shape("state does not match the operator".into()));
    }
    let dim = op.dim();
    let n = op.k() + 1;
    let nq = n + 2;
    let rule = gauss_rule(nq)?;
    let interp = even_odd_decompose(&lagrange_matrix(&op.basis.gl_nodes, &rule.points, MatrixKind::Value)?)?;
    let nb = n.pow(dim as u32);
    let nqd = nq.pow(dim as u32);
    let el = state.element_len();
    let mut vals = vec![0.0; nqd];
    let mut tmp = vec![0.0; nqd];
    let mut tally = KernelTally::default();
    let mut sum = 0.0;
    for e in 0..op.n_elements() {
        let p = &state.data[e * el + dim * nb..e * el + (dim + 1) * nb];
        apply_all_dirs(
            &interp,
            p,
            Shape::cube(dim, n),
            &mut vals,
            &mut tmp,
            KernelClass::CellEval,
            &mut tally,
        );
        for (q, ph) in vals.iter().enumerate() {
            let mut xi = [0.0; 3];
            let mut w = 1.0;
            let mut r = q;
            for x in xi.iter_mut().take(dim) {
                *x = rule.points[r % nq];
                w *= rule.weights[r % nq];
                r /= nq;
            }
            let j = op.mesh.jacobian(e, xi);
            let det = if dim == 2 {
                j[0][0] * j[1][1] - j[0][1] * j[1][0]
            } else {
                j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                    + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
            };
            let (_, pe) = sol.eval(op.mesh.map(e, xi), t);
            sum += det * w * (ph - pe).powi(2);
        }
    }
    Ok(sum.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cartesian, deform, BoundaryKind, Material};
    use crate::operator::FluxParams;
    use rand::{Rng, SeedableRng};

    fn op(n: usize, dim: usize, k: usize, amp: f64) -> AcousticOperator {
        let mut mesh = build_cartesian(n, dim, BoundaryKind::SoundSoft).unwrap();
        if amp > 0.0 {
            mesh = deform(&mesh, amp).unwrap();
        }
        let mat = Material::uniform(mesh.n_elements(), 1.0, 1.0).unwrap();
        let flux = FluxParams::hdg(&mesh, &mat, 1.0).unwrap();
        AcousticOperator::with_point_sets(mesh, k, mat, flux, &[k + 1]).unwrap()
    }

    #[test]
    fn initial_and_boundary_values() {
        let s = ModeSolution::new(3, 2, 1.5, 0.8).unwrap();
        let (v, p) = s.eval([0.3, 0.1, 0.7], 0.0);
        assert_eq!(v, [0.0; 3]);
        let expect = (2.0 * PI * 0.3).sin() * (2.0 * PI * 0.1).sin() * (2.0 * PI * 0.7).sin();
        assert!((p - expect).abs() < 1e-15);
        for x in [[0.0, 0.4, 0.2], [0.5, 1.0, 0.3], [0.2, 0.6, 0.0]] {
            assert!(s.eval(x, 0.37).1.abs() < 1e-14);
        }
    }

    #[test]
    fn satisfies_the_wave_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for dim in 2..=3 {
            let (m, c, rho) = (3u32, 1.3, 0.7);
            let km = m as f64 * PI;
            let w = c * km * (dim as f64).sqrt();
            for _ in 0..100 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                let t: f64 = rng.gen_range(0.0..2.0);
                let s = |i: usize| (km * x[i]).sin();
                let co = |i: usize| (km * x[i]).cos();
                let prod_except = |skip: &[usize]| (0..dim).filter(|j| !skip.contains(j)).map(s).product::<f64>();
                // dp/dt + c^2 rho div v
                let dpdt = -w * (w * t).sin() * prod_except(&[]);
                let mut div = 0.0;
                for i in 0..dim {
                    div += -km / (rho * w) * (w * t).sin() * (-km * s(i)) * prod_except(&[i]);
                    // rho dv_i/dt + dp/dx_i
                    let dvdt = -km / (rho * w) * w * (w * t).cos() * co(i) * prod_except(&[i]);
                    let dpdx = (w * t).cos() * km * co(i) * prod_except(&[i]);
                    assert!((rho * dvdt + dpdx).abs() < 1e-12);
                }
                assert!((dpdt + c * c * rho * div).abs() < 1e-12);
                // and the closed form agrees with the evaluator
                let (_, p) = analytic_solution(x, t, m, c, rho, dim);
                assert!((p - (w * t).cos() * prod_except(&[])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_state_error_is_the_norm_of_p() {
        for dim in 2..=3 {
            let o = op(2, dim, 2, 0.03);
            let s = ModeSolution::new(dim, 1, 1.0, 1.0).unwrap();
            let t = 0.1;
            let e = l2_pressure_error(&o, &o.zero_state(), &s, t).unwrap();
            let expect = (s.omega() * t).cos().abs() * 0.5f64.powf(dim as f64 / 2.0);
            // the deformed map keeps the domain, so the integral is exact up to quadrature
            assert!((e - expect).abs() < 1e-6, "{e} vs {expect}");
        }
        let o = op(3, 2, 3, 0.0);
        let s = ModeSolution::new(2, 1, 1.0, 1.0).unwrap();
        let e = l2_pressure_error(&o, &o.zero_state(), &s, 0.0).unwrap();
        assert!((e - 0.5).abs() < 1e-10);
    }

    #[test]
    fn interpolation_error_decreases_with_degree() {
        let s = ModeSolution::new(2, 1, 1.0, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=4 {
            let o = op(3, 2, k, 0.02);
            let u = interpolate_initial(&o, &s, 0.2);
            let e = l2_pressure_error(&o, &u, &s, 0.2).unwrap();
            assert!(e < last, "k={k}: {e} >= {last}");
            last = e;
        }
    }

    #[test]
    fn vanishing_pressure_is_captured() {
        let s = ModeSolution::new(2, 1, 1.0, 1.0).unwrap();
        let t = 0.5 * PI / s.omega();
        let o = op(2, 2, 3, 0.0);
        let u = interpolate_initial(&o, &s, t);
        assert!(l2_pressure_error(&o, &u, &s, t).unwrap() <= 1e-12);
    }
}
