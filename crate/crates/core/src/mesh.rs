//! Structured quadrilateral/hexahedral meshes of the unit square/cube with
//! multilinear element maps.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// p = 0 imposed weakly through a mirrored exterior state
    SoundSoft,
    Periodic,
}

/// Element-local face id: `2*dir + side`, side 0 at xi_dir = 0, side 1 at xi_dir = 1.
pub type LocalFace = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceSide {
    pub element: usize,
    pub local: LocalFace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub minus: FaceSide,
    /// `None` on sound-soft boundary faces
    pub plus: Option<FaceSide>,
    /// index permutation of the plus trace; structured meshes are always aligned (0)
    pub orientation: u8,
    pub boundary: Option<BoundaryKind>,
}

impl Face {
    pub fn dir(&self) -> usize {
        self.minus.local / 2
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub n_per_dim: usize,
    pub boundary: BoundaryKind,
    pub vertices: Vec<[f64; 3]>,
    /// 2^dim vertex ids per element; bit l of the slot index is the offset along direction l
    pub elements: Vec<[usize; 8]>,
    pub faces: Vec<Face>,
    /// (face id, 0 = minus / 1 = plus) for each of the 2*dim local faces
    pub element_faces: Vec<[(usize, u8); 6]>,
    pub cartesian: Vec<bool>,
}

fn check_dim(dim: usize) -> Result<()> {
    if !(2..=3).contains(&dim) {
        return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
    }
    Ok(())
}

/// Uniform mesh of [0,1]^dim with `n_per_dim^dim` elements.
pub fn build_cartesian(n_per_dim: usize, dim: usize, boundary: BoundaryKind) -> Result<Mesh> {
    check_dim(dim)?;
    if n_per_dim == 0 {
        return Err(Error::InvalidArgument("n_per_dim must be at least 1".into()));
    }
    let n = n_per_dim;
    let nv = n + 1;
    let n_vert = nv.pow(dim as u32);
    let mut vertices = Vec::with_capacity(n_vert);
    for id in 0..n_vert {
        let mut x = [0.0; 3];
        let mut r = id;
        for xl in x.iter_mut().take(dim) {
            *xl = (r % nv) as f64 / n as f64;
            r /= nv;
        }
        vertices.push(x);
    }
    let n_el = n.pow(dim as u32);
    let coords = |e: usize| {
        let mut c = [0usize; 3];
        let mut r = e;
        for cl in c.iter_mut().take(dim) {
            *cl = r % n;
            r /= n;
        }
        c
    };
    let index = |c: [usize; 3]| (0..dim).rev().fold(0, |acc, l| acc * n + c[l]);
    let vindex = |c: [usize; 3]| (0..dim).rev().fold(0, |acc, l| acc * nv + c[l]);

    let mut elements = Vec::with_capacity(n_el);
    for e in 0..n_el {
        let c = coords(e);
        let mut ev = [0usize; 8];
        for (slot, v) in ev.iter_mut().enumerate().take(1 << dim) {
            let mut vc = c;
            for (l, vcl) in vc.iter_mut().enumerate().take(dim) {
                *vcl += (slot >> l) & 1;
            }
            *v = vindex(vc);
        }
        elements.push(ev);
    }

    let mut faces = Vec::new();
    let mut element_faces = vec![[(usize::MAX, 0u8); 6]; n_el];
    for dir in 0..dim {
        for e in 0..n_el {
            let c = coords(e);
            let high = 2 * dir + 1;
            let low = 2 * dir;
            if c[dir] + 1 < n || boundary == BoundaryKind::Periodic {
                let mut nc = c;
                nc[dir] = (c[dir] + 1) % n;
                let nb = index(nc);
                let periodic = c[dir] + 1 == n;
                let id = faces.len();
                faces.push(Face {
                    minus: FaceSide {
                        element: e,
                        local: high,
                    },
                    plus: Some(FaceSide {
                        element: nb,
                        local: low,
                    }),
                    orientation: 0,
                    boundary: periodic.then_some(BoundaryKind::Periodic),
                });
                element_faces[e][high] = (id, 0);
                element_faces[nb][low] = (id, 1);
            } else {
                let id = faces.len();
                faces.push(Face {
                    minus: FaceSide {
                        element: e,
                        local: high,
                    },
                    plus: None,
                    orientation: 0,
                    boundary: Some(BoundaryKind::SoundSoft),
                });
                element_faces[e][high] = (id, 0);
            }
            if c[dir] == 0 && boundary == BoundaryKind::SoundSoft {
                let id = faces.len();
                faces.push(Face {
                    minus: FaceSide { element: e, local: low },
                    plus: None,
                    orientation: 0,
                    boundary: Some(BoundaryKind::SoundSoft),
                });
                element_faces[e][low] = (id, 0);
            }
        }
    }

    Ok(Mesh {
        dim,
        n_per_dim,
        boundary,
        vertices,
        elements,
        faces,
        element_faces,
        cartesian: vec![true; n_el],
    })
}

/// Default deformation amplitude for a mesh with `n_per_dim` elements per direction.
pub fn default_amplitude(n_per_dim: usize) -> f64 {
    0.05 / n_per_dim as f64
}

/// Displaces every interior vertex by `amplitude * prod_j sin(pi x_j)` in each
/// coordinate; boundary vertices stay fixed.
pub fn deform(mesh: &Mesh, amplitude: f64) -> Result<Mesh> {
    let limit = 0.5 / mesh.n_per_dim as f64;
    if !(0.0..limit).contains(&amplitude) {
        return Err(Error::InvalidArgument(format!(
            "deformation amplitude {amplitude} outside [0, {limit})"
        )));
    }
    let dim = mesh.dim;
    let mut out = mesh.clone();
    for x in out.vertices.iter_mut() {
        let on_boundary = x[..dim].iter().any(|&c| c <= 0.0 || c >= 1.0);
        if on_boundary {
            continue;
        }
        let s: f64 = x[..dim].iter().map(|&c| (std::f64::consts::PI * c).sin()).product();
        for c in x[..dim].iter_mut() {
            *c += amplitude * s;
        }
    }
    for e in 0..out.n_elements() {
        out.cartesian[e] = out.is_axis_aligned_box(e);
        // corners and center of every element must keep a positive Jacobian
        let mut probes: Vec<[f64; 3]> = (0..1usize << dim)
            .map(|s| {
                let mut xi = [0.0; 3];
                for (l, v) in xi.iter_mut().enumerate().take(dim) {
                    *v = ((s >> l) & 1) as f64;
                }
                xi
            })
            .collect();
        probes.push([0.5; 3]);
        for xi in probes {
            if det(&out.jacobian(e, xi), dim) <= 0.0 {
                return Err(Error::Geometry(format!("element {e} inverted by deformation")));
            }
        }
    }
    Ok(out)
}

pub(crate) fn det(j: &[[f64; 3]; 3], dim: usize) -> f64 {
    if dim == 2 {
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    } else {
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    }
}

/// Inverse of the leading dim x dim block.
pub(crate) fn inverse(j: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    let d = det(j, dim);
    let mut inv = [[0.0; 3]; 3];
    if dim == 2 {
        inv[0][0] = j[1][1] / d;
        inv[0][1] = -j[0][1] / d;
        inv[1][0] = -j[1][0] / d;
        inv[1][1] = j[0][0] / d;
    } else {
        for r in 0..3 {
            for c in 0..3 {
                let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                inv[r][c] = (j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1]) / d;
            }
        }
    }
    inv
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_vertices_per_element(&self) -> usize {
        1 << self.dim
    }

    /// Multilinear map of element `e` at reference point `xi`.
    pub fn map(&self, e: usize, xi: [f64; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for slot in 0..self.n_vertices_per_element() {
            let mut w = 1.0;
            for (l, &xl) in xi.iter().enumerate().take(self.dim) {
                w *= if (slot >> l) & 1 == 1 { xl } else { 1.0 - xl };
            }
            let v = &self.vertices[self.elements[e][slot]];
            for i in 0..self.dim {
                x[i] += w * v[i];
            }
        }
        x
    }

    /// J[i][j] = dx_i / dxi_j
    pub fn jacobian(&self, e: usize, xi: [f64; 3]) -> [[f64; 3]; 3] {
        let mut jac = [[0.0; 3]; 3];
        for slot in 0..self.n_vertices_per_element() {
            let v = &self.vertices[self.elements[e][slot]];
            for j in 0..self.dim {
                let mut w = 1.0;
                for (l, &xl) in xi.iter().enumerate().take(self.dim) {
                    let bit = (slot >> l) & 1 == 1;
                    w *= if l == j {
                        if bit {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if bit {
                        xl
                    } else {
                        1.0 - xl
                    };
                }
                for i in 0..self.dim {
                    jac[i][j] += w * v[i];
                }
            }
        }
        if self.dim == 2 {
            jac[2][2] = 1.0;
        }
        jac
    }

    fn is_axis_aligned_box(&self, e: usize) -> bool {
        let v0 = self.vertices[self.elements[e][0]];
        let vl = self.vertices[self.elements[e][self.n_vertices_per_element() - 1]];
        (0..self.n_vertices_per_element()).all(|slot| {
            let v = self.vertices[self.elements[e][slot]];
            (0..self.dim).all(|l| {
                let want = if (slot >> l) & 1 == 1 { vl[l] } else { v0[l] };
                v[l] == want
            })
        })
    }

    /// Shortest element edge length.
    pub fn h_min(&self) -> f64 {
        let mut h = f64::INFINITY;
        for ev in &self.elements {
            for slot in 0..self.n_vertices_per_element() {
                for l in 0..self.dim {
                    if (slot >> l) & 1 == 0 {
                        let a = self.vertices[ev[slot]];
                        let b = self.vertices[ev[slot | (1 << l)]];
                        let len = (0..self.dim).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
                        h = h.min(len);
                    }
                }
            }
        }
        h
    }

    pub fn n_interior_faces(&self) -> usize {
        self.faces.iter().filter(|f| f.plus.is_some()).count()
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.faces.len() - self.n_interior_faces()
    }
}

/// Element-wise constant material.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub c: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Material {
    pub fn uniform(n_elements: usize, c: f64, rho: f64) -> Result<Self> {
        Self::new(vec![c; n_elements], vec![rho; n_elements])
    }

    pub fn new(c: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if c.len() != rho.len() {
            return Err(Error::Shape("material arrays differ in length".into()));
        }
        if c.iter().chain(&rho).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(
                "speed of sound and density must be positive".into(),
            ));
        }
        Ok(Material { c, rho })
    }

    pub fn c_max(&self) -> f64 {
        self.c.iter().copied().fold(0.0, f64::max)
    }
}
