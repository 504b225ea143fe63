//! Per-quadrature-point geometry: inverse Jacobians, JxW, face normals.

use crate::basis::check_degree;
use crate::error::{Error, Result};
use crate::mesh::{det, inverse, Mesh};
use crate::quadrature::gauss_rule;

/// Geometry of all elements at one tensor Gauss point set.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub n: usize,
    pub n_q: usize,
    /// [element][q][m * dim + i] = (J^-1)_{m i} = d xi_m / d x_i
    pub inv_jac: Vec<f64>,
    /// [element][q] = det J * tensor weight
    pub jxw: Vec<f64>,
}

impl CellGeometry {
    #[inline]
    pub fn inv_jac_of(&self, e: usize, dim: usize) -> &[f64] {
        let s = self.n_q * dim * dim;
        &self.inv_jac[e * s..(e + 1) * s]
    }

    #[inline]
    pub fn jxw_of(&self, e: usize) -> &[f64] {
        &self.jxw[e * self.n_q..(e + 1) * self.n_q]
    }
}

/// Face geometry seen from the minus element, at (k+1)^(dim-1) Gauss points.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub n_q: usize,
    /// [face][q][i], unit outward normal of the minus element
    pub normal: Vec<f64>,
    /// [face][q]
    pub jxw: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeometryCache {
    pub dim: usize,
    pub k: usize,
    /// indexed by Gauss point count; only requested sets are present
    cells: Vec<Option<CellGeometry>>,
    pub faces: FaceGeometry,
    pub cartesian: Vec<bool>,
}

/// Gauss point counts used by degree-k evaluation when every second
/// derivative is degree-reduced: k+1, k-1, k-3, ... down to 1.
pub fn every_second_point_sets(k: usize) -> Vec<usize> {
    let mut v = vec![k + 1];
    let mut n = k + 1;
    while n > 1 {
        n = n.saturating_sub(2).max(1);
        v.push(n);
    }
    v
}

/// Reference coordinates of the tensor Gauss points of a cell (dir 0 fastest).
pub fn tensor_points(dim: usize, pts: &[f64]) -> Vec<[f64; 3]> {
    let n = pts.len();
    let total = n.pow(dim as u32);
    (0..total)
        .map(|q| {
            let mut xi = [0.0; 3];
            let mut r = q;
            for x in xi.iter_mut().take(dim) {
                *x = pts[r % n];
                r /= n;
            }
            xi
        })
        .collect()
}

/// Reference point on local face `local` for face-tensor index `q`.
pub fn face_point(dim: usize, local: usize, pts: &[f64], q: usize) -> [f64; 3] {
    let dir = local / 2;
    let n = pts.len();
    let mut xi = [0.0; 3];
    xi[dir] = (local % 2) as f64;
    let mut r = q;
    for (l, x) in xi.iter_mut().enumerate().take(dim) {
        if l != dir {
            *x = pts[r % n];
            r /= n;
        }
    }
    xi
}

fn cell_geometry(mesh: &Mesh, n: usize) -> Result<CellGeometry> {
    let dim = mesh.dim;
    let rule = gauss_rule(n)?;
    let pts = tensor_points(dim, &rule.points);
    let wts: Vec<f64> = tensor_points(dim, &rule.weights)
        .iter()
        .map(|w| w[..dim].iter().product())
        .collect();
    let n_q = pts.len();
    let n_el = mesh.n_elements();
    let mut inv_jac = Vec::with_capacity(n_el * n_q * dim * dim);
    let mut jxw = Vec::with_capacity(n_el * n_q);
    for e in 0..n_el {
        for (q, xi) in pts.iter().enumerate() {
            let j = mesh.jacobian(e, *xi);
            let dj = det(&j, dim);
            if !(dj > 0.0) {
                return Err(Error::Geometry(format!(
                    "non-positive Jacobian determinant {dj} in element {e}"
                )));
            }
            let inv = inverse(&j, dim);
            for row in inv.iter().take(dim) {
                inv_jac.extend_from_slice(&row[..dim]);
            }
            jxw.push(dj * wts[q]);
        }
    }
    Ok(CellGeometry { n, n_q, inv_jac, jxw })
}

fn face_geometry(mesh: &Mesh, n: usize) -> Result<FaceGeometry> {
    let dim = mesh.dim;
    let rule = gauss_rule(n)?;
    let n_q = n.pow(dim as u32 - 1);
    let mut normal = Vec::with_capacity(mesh.faces.len() * n_q * dim);
    let mut jxw = Vec::with_capacity(mesh.faces.len() * n_q);
    for face in &mesh.faces {
        let (e, local) = (face.minus.element, face.minus.local);
        let dir = local / 2;
        let sign = if local % 2 == 1 { 1.0 } else { -1.0 };
        for q in 0..n_q {
            let xi = face_point(dim, local, &rule.points, q);
            let w = face_point(dim, local, &rule.weights, q);
            let wq: f64 = (0..dim).filter(|&l| l != dir).map(|l| w[l]).product();
            let j = mesh.jacobian(e, xi);
            let dj = det(&j, dim);
            if !(dj > 0.0) {
                return Err(Error::Geometry(format!("non-positive Jacobian on face of element {e}")));
            }
            let inv = inverse(&j, dim);
            let g = &inv[dir];
            let len = (0..dim).map(|i| g[i] * g[i]).sum::<f64>().sqrt();
            for &gi in g.iter().take(dim) {
                normal.push(sign * gi / len);
            }
            jxw.push(dj * len * wq);
        }
    }
    Ok(FaceGeometry { n_q, normal, jxw })
}

/// Geometry for degree k at the Gauss point sets of the every-second
/// reduction schedule.
pub fn precompute_geometry(mesh: &Mesh, k: usize) -> Result<GeometryCache> {
    precompute_geometry_with(mesh, k, &every_second_point_sets(k))
}

/// Geometry for degree k at the main set plus the given extra Gauss point counts.
pub fn precompute_geometry_with(mesh: &Mesh, k: usize, point_sets: &[usize]) -> Result<GeometryCache> {
    check_degree(k)?;
    let mut cells = vec![None; k + 2];
    for &n in point_sets.iter().chain(std::iter::once(&(k + 1))) {
        if n == 0 || n > k + 1 {
            return Err(Error::InvalidArgument(format!("point set {n} outside 1..={}", k + 1)));
        }
        if cells[n].is_none() {
            cells[n] = Some(cell_geometry(mesh, n)?);
        }
    }
    Ok(GeometryCache {
        dim: mesh.dim,
        k,
        cells,
        faces: face_geometry(mesh, k + 1)?,
        cartesian: mesh.cartesian.clone(),
    })
}

impl GeometryCache {
    /// Main cell geometry at k+1 Gauss points.
    pub fn main(&self) -> &CellGeometry {
        self.cells[self.k + 1].as_ref().expect("main point set")
    }

    pub fn cell(&self, n: usize) -> Result<&CellGeometry> {
        self.cells
            .get(n)
            .and_then(|c| c.as_ref())
            .ok_or_else(|| Error::Config(format!("geometry at {n} Gauss points was not precomputed")))
    }

    pub fn has_cell(&self, n: usize) -> bool {
        self.cell(n).is_ok()
    }

    pub fn n_elements(&self) -> usize {
        self.main().jxw.len() / self.main().n_q
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        self.main().jxw_of(e).iter().sum()
    }
}
