//! Dense reference assembly of M, K and the element-local derivative
//! matrices by direct quadrature over pairs of basis functions. Shares no
//! code with the sum-factorization kernels; used to validate them on small
//! meshes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{Material, Mesh};
use crate::operator::FluxParams;
use crate::quadrature::{gauss_lobatto_rule, gauss_rule};

/// Largest system the oracle agrees to assemble.
pub const MAX_DENSE_DOFS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct DenseOperators {
    pub dim: usize,
    pub k: usize,
    pub n_elements: usize,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// per element: M_e^{-1} * integral N^T S N
    pub local_d: Vec<DMatrix<f64>>,
}

fn lagrange(nodes: &[f64], j: usize, x: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != j)
        .map(|(_, &xm)| (x - xm) / (nodes[j] - xm))
        .product()
}

fn lagrange_deriv(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..nodes.len() {
        if i == j {
            continue;
        }
        let mut p = 1.0 / (nodes[j] - nodes[i]);
        for (m, &xm) in nodes.iter().enumerate() {
            if m != j && m != i {
                p *= (x - xm) / (nodes[j] - xm);
            }
        }
        s += p;
    }
    s
}

/// Value and reference gradient of the tensor basis function `a` at xi.
fn basis_eval(nodes: &[f64], dim: usize, a: usize, xi: &[f64; 3]) -> (f64, [f64; 3]) {
    let n = nodes.len();
    let mut idx = [0; 3];
    let mut r = a;
    for i in idx.iter_mut().take(dim) {
        *i = r % n;
        r /= n;
    }
    let vals: Vec<f64> = (0..dim).map(|l| lagrange(nodes, idx[l], xi[l])).collect();
    let ders: Vec<f64> = (0..dim).map(|l| lagrange_deriv(nodes, idx[l], xi[l])).collect();
    let mut g = [0.0; 3];
    for (m, gm) in g.iter_mut().enumerate().take(dim) {
        *gm = (0..dim).map(|l| if l == m { ders[l] } else { vals[l] }).product();
    }
    (vals.iter().product(), g)
}

fn jac(mesh: &Mesh, e: usize, xi: &[f64; 3]) -> DMatrix<f64> {
    let d = mesh.dim;
    let j = mesh.jacobian(e, *xi);
    DMatrix::from_fn(d, d, |r, c| j[r][c])
}

/// Physical gradients of all basis functions at one point, plus det J.
fn phys_basis(mesh: &Mesh, nodes: &[f64], e: usize, xi: &[f64; 3]) -> Result<(Vec<f64>, Vec<[f64; 3]>, f64)> {
    let d = mesh.dim;
    let j = jac(mesh, e, xi);
    let det = j.determinant();
    let jinv = j
        .try_inverse()
        .ok_or_else(|| Error::Geometry(format!("singular Jacobian in element {e}")))?;
    let nb = nodes.len().pow(d as u32);
    let mut v = Vec::with_capacity(nb);
    let mut g = Vec::with_capacity(nb);
    for a in 0..nb {
        let (val, gr) = basis_eval(nodes, d, a, xi);
        let mut pg = [0.0; 3];
        for (i, p) in pg.iter_mut().enumerate().take(d) {
            // d phi / d x_i = sum_m d phi / d xi_m * d xi_m / d x_i
            *p = (0..d).map(|m| gr[m] * jinv[(m, i)]).sum();
        }
        v.push(val);
        g.push(pg);
    }
    Ok((v, g, det))
}

fn tensor_points(dim: usize, pts: &[f64], wts: &[f64]) -> Vec<([f64; 3], f64)> {
    let n = pts.len();
    (0..n.pow(dim as u32))
        .map(|q| {
            let mut xi = [0.0; 3];
            let mut w = 1.0;
            let mut r = q;
            for x in xi.iter_mut().take(dim) {
                *x = pts[r % n];
                w *= wts[r % n];
                r /= n;
            }
            (xi, w)
        })
        .collect()
}

/// Reference point on local face `local` with tangential coordinates taken
/// from the face tensor index q.
fn face_xi(dim: usize, local: usize, pts: &[f64], wts: &[f64], q: usize) -> ([f64; 3], f64) {
    let dir = local / 2;
    let n = pts.len();
    let mut xi = [0.0; 3];
    xi[dir] = (local % 2) as f64;
    let mut w = 1.0;
    let mut r = q;
    for (l, x) in xi.iter_mut().enumerate().take(dim) {
        if l != dir {
            *x = pts[r % n];
            w *= wts[r % n];
            r /= n;
        }
    }
    (xi, w)
}

pub fn assemble_dense(mesh: &Mesh, k: usize, material: &Material, flux: &FluxParams) -> Result<DenseOperators> {
    let d = mesh.dim;
    let comps = d + 1;
    let n = k + 1;
    let nb = n.pow(d as u32);
    let el = comps * nb;
    let n_el = mesh.n_elements();
    let n_dof = n_el * el;
    if n_dof > MAX_DENSE_DOFS {
        return Err(Error::Refused(format!(
            "dense assembly of {n_dof} unknowns exceeds the limit of {MAX_DENSE_DOFS}"
        )));
    }
    if material.c.len() != n_el || flux.tau.len() != mesh.faces.len() {
        return Err(Error::Shape("material or flux does not match the mesh".into()));
    }
    let nodes = gauss_lobatto_rule(n)?.points;
    let g = gauss_rule(n)?;
    let qpts = tensor_points(d, &g.points, &g.weights);
    let dof = |e: usize, c: usize, a: usize| e * el + c * nb + a;

    let mut mass = DMatrix::zeros(n_dof, n_dof);
    let mut stiff = DMatrix::zeros(n_dof, n_dof);
    let mut local_d = Vec::with_capacity(n_el);
    for e in 0..n_el {
        let (rho, c) = (material.rho[e], material.c[e]);
        let (ia, ib) = (1.0 / rho, c * c * rho);
        let mut me = DMatrix::zeros(el, el);
        let mut ae = DMatrix::zeros(el, el);
        for (xi, w) in &qpts {
            let (v, gr, det) = phys_basis(mesh, &nodes, e, xi)?;
            let jxw = det * w;
            for a in 0..nb {
                for b in 0..nb {
                    let m = jxw * v[a] * v[b];
                    for cc in 0..comps {
                        me[(cc * nb + a, cc * nb + b)] += m;
                    }
                    for i in 0..d {
                        // velocity i row against pressure column, and pressure row against velocity i
                        let strong = jxw * v[a] * gr[b][i];
                        let weak = jxw * gr[a][i] * v[b];
                        stiff[(dof(e, i, a), dof(e, d, b))] += 0.5 * ia * (strong - weak);
                        stiff[(dof(e, d, a), dof(e, i, b))] += 0.5 * ib * (strong - weak);
                        ae[(i * nb + a, d * nb + b)] += ia * strong;
                        ae[(d * nb + a, i * nb + b)] += ib * strong;
                    }
                }
            }
        }
        for r in 0..el {
            for s in 0..el {
                mass[(e * el + r, e * el + s)] = me[(r, s)];
            }
        }
        let lu = me.lu();
        local_d.push(
            lu.solve(&ae)
                .ok_or_else(|| Error::Internal("singular element mass matrix".into()))?,
        );
    }

    // face terms, each face visited from both sides
    let nf = n.pow(d as u32 - 1);
    for (f, face) in mesh.faces.iter().enumerate() {
        let mut sides = vec![(face.minus, face.plus)];
        if let Some(p) = face.plus {
            sides.push((p, Some(face.minus)));
        }
        let nb_el = face.plus.map_or(face.minus.element, |p| p.element);
        let cbar = 0.5 * (material.c[face.minus.element] + material.c[nb_el]);
        let rbar = 0.5 * (material.rho[face.minus.element] + material.rho[nb_el]);
        let tau = flux.tau[f];
        for (own, other) in sides {
            let eo = own.element;
            let (co, ro) = (material.c[eo], material.rho[eo]);
            for q in 0..nf {
                let (xi, w) = face_xi(d, own.local, &g.points, &g.weights, q);
                let j = jac(mesh, eo, &xi);
                let det = j.determinant();
                let jinv = j
                    .try_inverse()
                    .ok_or_else(|| Error::Geometry("singular Jacobian".into()))?;
                let dir = own.local / 2;
                let sign = if own.local % 2 == 1 { 1.0 } else { -1.0 };
                let gdir: Vec<f64> = (0..d).map(|i| jinv[(dir, i)]).collect();
                let len = gdir.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nrm: Vec<f64> = gdir.iter().map(|x| sign * x / len).collect();
                let fjxw = det * len * w;
                let phi_o: Vec<f64> = (0..nb).map(|a| basis_eval(&nodes, d, a, &xi).0).collect();
                let other_vals = other.map(|o| {
                    let (xo, _) = face_xi(d, o.local, &g.points, &g.weights, q);
                    (
                        o.element,
                        (0..nb).map(|a| basis_eval(&nodes, d, a, &xo).0).collect::<Vec<f64>>(),
                    )
                });
                // integrand for unit traces: returns per test component the value of u_hat - F(u_own)/2
                let integrand = |vo: &[f64], po: f64, vx: &[f64], px: f64| -> Vec<f64> {
                    let vno: f64 = vo.iter().zip(&nrm).map(|(a, b)| a * b).sum();
                    let vnx: f64 = vx.iter().zip(&nrm).map(|(a, b)| a * b).sum();
                    let mut ph = 0.5 * (po + px) / rbar;
                    let mut fp = 0.5 * cbar * cbar * rbar * (vno + vnx);
                    if flux.stabilized {
                        ph += (vno - vnx) / (2.0 * rbar * tau);
                        fp += 0.5 * cbar * cbar * rbar * tau * (po - px);
                    }
                    let mut out: Vec<f64> = nrm.iter().map(|ni| ph * ni - 0.5 * po / ro * ni).collect();
                    out.push(fp - 0.5 * co * co * ro * vno);
                    out
                };
                for tc in 0..comps {
                    for b in 0..nb {
                        // unit trace in own element
                        let mut vo = vec![0.0; d];
                        let mut po = 0.0;
                        if tc < d {
                            vo[tc] = phi_o[b];
                        } else {
                            po = phi_o[b];
                        }
                        let (vx, px) = if other.is_some() {
                            (vec![0.0; d], 0.0)
                        } else {
                            (vo.clone(), -po)
                        };
                        let gv = integrand(&vo, po, &vx, px);
                        for (rc, gval) in gv.iter().enumerate() {
                            for a in 0..nb {
                                stiff[(dof(eo, rc, a), dof(eo, tc, b))] += fjxw * phi_o[a] * gval;
                            }
                        }
                        if let Some((ex, phi_x)) = &other_vals {
                            let mut vx = vec![0.0; d];
                            let mut px = 0.0;
                            if tc < d {
                                vx[tc] = phi_x[b];
                            } else {
                                px = phi_x[b];
                            }
                            let gv = integrand(&vec![0.0; d], 0.0, &vx, px);
                            for (rc, gval) in gv.iter().enumerate() {
                                for a in 0..nb {
                                    stiff[(dof(eo, rc, a), dof(*ex, tc, b))] += fjxw * phi_o[a] * gval;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(DenseOperators {
        dim: d,
        k,
        n_elements: n_el,
        mass,
        stiffness: stiff,
        local_d,
    })
}

impl DenseOperators {
    pub fn n_dofs(&self) -> usize {
        self.mass.nrows()
    }

    pub fn element_len(&self) -> usize {
        (self.dim + 1) * (self.k + 1).pow(self.dim as u32)
    }

    pub fn apply_k(&self, u: &[f64]) -> Vec<f64> {
        (&self.stiffness * DVector::from_column_slice(u)).as_slice().to_vec()
    }

    pub fn apply_mass(&self, u: &[f64]) -> Vec<f64> {
        (&self.mass * DVector::from_column_slice(u)).as_slice().to_vec()
    }

    pub fn solve_mass(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.mass
            .clone()
            .cholesky()
            .map(|c| c.solve(&DVector::from_column_slice(r)).as_slice().to_vec())
            .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))
    }

    /// Block-diagonal application of the local derivative matrices.
    pub fn apply_local_d(&self, u: &[f64]) -> Vec<f64> {
        let el = self.element_len();
        let mut out = vec![0.0; u.len()];
        for (e, de) in self.local_d.iter().enumerate() {
            let x = DVector::from_column_slice(&u[e * el..(e + 1) * el]);
            out[e * el..(e + 1) * el].copy_from_slice((de * x).as_slice());
        }
        out
    }

    /// M sum_j coeffs[j] D^j u.
    pub fn taylor_sum(&self, u: &[f64], coeffs: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; u.len()];
        let mut cur = u.to_vec();
        for (j, &c) in coeffs.iter().enumerate() {
            if j > 0 {
                cur = self.apply_local_d(&cur);
            }
            for (a, x) in acc.iter_mut().zip(&cur) {
                *a += c * x;
            }
        }
        self.apply_mass(&acc)
    }

    /// -M^{-1} K as a dense matrix.
    pub fn evolution_matrix(&self) -> Result<DMatrix<f64>> {
        let chol = self
            .mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
        Ok(-chol.solve(&self.stiffness))
    }
}
