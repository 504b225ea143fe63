//! Matrix-free DG operators for linear acoustics: the derivative operator K
//! (cell and face integrals with the HDG flux), the mass matrix and its
//! inverse, and the element-local spatial operator S.
//!
//! K is applied in split form,
//!   K u = 1/2 (w, S u) - 1/2 (S^T w, u) + <w, u_hat - 1/2 F(u-)>,
//! with F(u) = (p/rho n, c^2 rho v.n), so that M dU/dt = -K U.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use crate::basis::ElementBasis;
use crate::error::{Error, Result};
use crate::geometry::{every_second_point_sets, precompute_geometry_with, GeometryCache};
use crate::mesh::{BoundaryKind, Material, Mesh};
use crate::tensor::{apply_all_dirs, apply_chain, kernel, KernelClass, KernelCounter, KernelTally, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTag {
    /// Lagrange basis on Gauss-Lobatto nodes (global storage)
    GL,
    /// collocated on Gauss points
    G,
}

/// Degrees of freedom laid out as `[element][component][node]`, components
/// ordered v_1..v_d, p and nodes with direction 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub dim: usize,
    pub k: usize,
    pub n_elements: usize,
    pub basis: BasisTag,
    pub data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(dim: usize, k: usize, n_elements: usize) -> Self {
        let len = n_elements * (dim + 1) * (k + 1).pow(dim as u32);
        StateVector {
            dim,
            k,
            n_elements,
            basis: BasisTag::GL,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(dim: usize, k: usize, n_elements: usize, data: Vec<f64>) -> Result<Self> {
        let mut s = Self::zeros(dim, k, 0);
        s.n_elements = n_elements;
        if data.len() != n_elements * s.element_len() {
            return Err(Error::Shape(format!(
                "state of length {} does not match {} elements of {} values",
                data.len(),
                n_elements,
                s.element_len()
            )));
        }
        s.data = data;
        Ok(s)
    }

    pub fn n_components(&self) -> usize {
        self.dim + 1
    }

    pub fn nodes_per_component(&self) -> usize {
        (self.k + 1).pow(self.dim as u32)
    }

    pub fn element_len(&self) -> usize {
        self.n_components() * self.nodes_per_component()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn element(&self, e: usize) -> &[f64] {
        let l = self.element_len();
        &self.data[e * l..(e + 1) * l]
    }

    pub fn component(&self, e: usize, c: usize) -> &[f64] {
        let n = self.nodes_per_component();
        &self.element(e)[c * n..(c + 1) * n]
    }

    pub fn same_layout(&self, o: &StateVector) -> bool {
        self.dim == o.dim && self.k == o.k && self.n_elements == o.n_elements && self.data.len() == o.data.len()
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// self += a * x
    pub fn axpy(&mut self, a: f64, x: &StateVector) {
        self.data
            .par_iter_mut()
            .zip(x.data.par_iter())
            .for_each(|(y, x)| *y += a * x);
    }
}

/// HDG stabilization per face. With `stabilized == false` only the central
/// part of the flux is used.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxParams {
    pub tau: Vec<f64>,
    pub stabilized: bool,
}

impl FluxParams {
    /// tau = scale / (c rho) with face-averaged material.
    pub fn hdg(mesh: &Mesh, material: &Material, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau scale must be positive, got {scale}"
            )));
        }
        check_material(mesh, material)?;
        let tau = (0..mesh.faces.len())
            .map(|f| {
                let (c, rho) = face_material(mesh, material, f);
                scale / (c * rho)
            })
            .collect();
        Ok(FluxParams { tau, stabilized: true })
    }

    pub fn central(mesh: &Mesh) -> Self {
        FluxParams {
            tau: vec![1.0; mesh.faces.len()],
            stabilized: false,
        }
    }
}

fn check_material(mesh: &Mesh, material: &Material) -> Result<()> {
    if material.c.len() != mesh.n_elements() {
        return Err(Error::Shape(format!(
            "material has {} entries for {} elements",
            material.c.len(),
            mesh.n_elements()
        )));
    }
    Ok(())
}

/// Arithmetic mean of the two adjacent elements' material.
pub fn face_material(mesh: &Mesh, material: &Material, f: usize) -> (f64, f64) {
    let face = &mesh.faces[f];
    let a = face.minus.element;
    let b = face.plus.map_or(a, |s| s.element);
    (
        0.5 * (material.c[a] + material.c[b]),
        0.5 * (material.rho[a] + material.rho[b]),
    )
}

/// Velocity and pressure of one trace.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Trace {
    pub v: [f64; 3],
    pub p: f64,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// HDG numerical flux seen from the side with unit normal `n`. Returns the
/// velocity-equation flux vector in `v` and the pressure-equation flux in `p`.
/// `tau = None` drops the stabilization terms.
pub fn hdg_flux(minus: Trace, plus: Trace, n: [f64; 3], c: f64, rho: f64, tau: Option<f64>) -> Trace {
    let vn_m = dot(&minus.v, &n);
    let vn_p = dot(&plus.v, &n);
    let mut p_hat = 0.5 * (minus.p + plus.p) / rho;
    let mut flux_p = 0.5 * c * c * rho * (vn_m + vn_p);
    if let Some(tau) = tau {
        p_hat += (vn_m - vn_p) / (2.0 * rho * tau);
        flux_p += 0.5 * c * c * rho * tau * (minus.p - plus.p);
    }
    Trace {
        v: [p_hat * n[0], p_hat * n[1], p_hat * n[2]],
        p: flux_p,
    }
}

/// Node indices of local face `local` inside an element tensor of extent n,
/// ordered like the face quadrature points.
pub fn face_node_indices(dim: usize, n: usize, local: usize) -> Vec<usize> {
    let dir = local / 2;
    let fixed = (local % 2) * (n - 1);
    let stride = |l: usize| n.pow(l as u32);
    let nf = n.pow(dim as u32 - 1);
    (0..nf)
        .map(|q| {
            let mut r = q;
            let mut idx = fixed * stride(dir);
            for l in (0..dim).filter(|&l| l != dir) {
                idx += (r % n) * stride(l);
                r /= n;
            }
            idx
        })
        .collect()
}

/// Per-task work buffers.
struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    vals: Vec<f64>,
    grads: Vec<f64>,
    tally: KernelTally,
}

impl Scratch {
    fn new(dim: usize, n: usize) -> Self {
        let nq = n.pow(dim as u32);
        let comps = dim + 1;
        Scratch {
            a: vec![0.0; nq],
            b: vec![0.0; nq],
            c: vec![0.0; nq],
            d: vec![0.0; comps * nq],
            vals: vec![0.0; comps * nq],
            grads: vec![0.0; comps * dim * nq],
            tally: KernelTally::default(),
        }
    }
}

/// Number of whole-mesh operator applications, for checking per-step budgets.
#[derive(Debug, Default)]
pub struct ApplicationCounts {
    pub k: AtomicU64,
    pub inverse_mass: AtomicU64,
    pub tck: AtomicU64,
}

impl ApplicationCounts {
    /// (K, inverse mass, Taylor sum)
    pub fn read(&self) -> (u64, u64, u64) {
        (
            self.k.load(Ordering::Relaxed),
            self.inverse_mass.load(Ordering::Relaxed),
            self.tck.load(Ordering::Relaxed),
        )
    }

    pub fn reset(&self) {
        self.k.store(0, Ordering::Relaxed);
        self.inverse_mass.store(0, Ordering::Relaxed);
        self.tck.store(0, Ordering::Relaxed);
    }
}

/// Everything needed to apply the discrete operators on one mesh at degree k.
pub struct AcousticOperator {
    pub mesh: Mesh,
    pub geometry: GeometryCache,
    pub material: Material,
    pub basis: ElementBasis,
    pub flux: FluxParams,
    pub counter: KernelCounter,
    pub applications: ApplicationCounts,
    face_nodes: Vec<Vec<usize>>,
    face_buffer: Mutex<Vec<f64>>,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for AcousticOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AcousticOperator")
            .field("dim", &self.mesh.dim)
            .field("k", &self.basis.k)
            .field("elements", &self.mesh.n_elements())
            .finish()
    }
}

impl AcousticOperator {
    /// Operator with geometry for the main Gauss set and the every-second
    /// reduction sets.
    pub fn new(mesh: Mesh, k: usize, material: Material, flux: FluxParams) -> Result<Self> {
        let sets = every_second_point_sets(k);
        Self::with_point_sets(mesh, k, material, flux, &sets)
    }

    pub fn with_point_sets(mesh: Mesh, k: usize, material: Material, flux: FluxParams, sets: &[usize]) -> Result<Self> {
        let geometry = precompute_geometry_with(&mesh, k, sets)?;
        Self::with_geometry(mesh, geometry, material, flux)
    }

    pub fn with_geometry(mesh: Mesh, geometry: GeometryCache, material: Material, flux: FluxParams) -> Result<Self> {
        check_material(&mesh, &material)?;
        if geometry.dim != mesh.dim || geometry.n_elements() != mesh.n_elements() {
            return Err(Error::Shape("geometry does not belong to this mesh".into()));
        }
        if flux.tau.len() != mesh.faces.len() {
            return Err(Error::Shape(format!(
                "flux parameters for {} faces, mesh has {}",
                flux.tau.len(),
                mesh.faces.len()
            )));
        }
        if flux.stabilized && flux.tau.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("tau must be positive".into()));
        }
        let k = geometry.k;
        let basis = ElementBasis::new(k)?;
        let dim = mesh.dim;
        let face_nodes = (0..2 * dim).map(|l| face_node_indices(dim, k + 1, l)).collect();
        let buf_len = mesh.faces.len() * 2 * (dim + 1) * (k + 1).pow(dim as u32 - 1);
        Ok(AcousticOperator {
            mesh,
            geometry,
            material,
            basis,
            flux,
            counter: KernelCounter::new(),
            applications: ApplicationCounts::default(),
            face_nodes,
            face_buffer: Mutex::new(vec![0.0; buf_len]),
            pool: None,
        })
    }

    /// Runs the element sweeps on a dedicated pool of `threads` workers.
    pub fn set_threads(&mut self, threads: usize) -> Result<()> {
        if threads == 0 {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        self.pool = Some(pool);
        Ok(())
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    pub fn k(&self) -> usize {
        self.basis.k
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_elements() * (self.dim() + 1) * (self.k() + 1).pow(self.dim() as u32)
    }

    pub fn zero_state(&self) -> StateVector {
        StateVector::zeros(self.dim(), self.k(), self.n_elements())
    }

    pub(crate) fn check_state(&self, s: &StateVector) -> Result<()> {
        if s.basis != BasisTag::GL {
            return Err(Error::Contract("operator input must be stored in the GL basis".into()));
        }
        if s.dim != self.dim() || s.k != self.k() || s.n_elements != self.n_elements() || s.data.len() != self.n_dofs()
        {
            return Err(Error::Shape(
                "state does not match the operator's mesh or degree".into(),
            ));
        }
        Ok(())
    }

    fn prepare_output(&self, dst: &mut StateVector) {
        if !dst.same_layout(&self.zero_state()) {
            *dst = self.zero_state();
        }
        dst.basis = BasisTag::GL;
    }

    /// dst = K src.
    pub fn apply_k(&self, src: &StateVector, dst: &mut StateVector) -> Result<()> {
        self.check_state(src)?;
        self.prepare_output(dst);
        let mut guard = self
            .face_buffer
            .lock()
            .map_err(|_| Error::Internal("face buffer poisoned".into()))?;
        let buf: &mut Vec<f64> = &mut guard;
        self.applications.k.fetch_add(1, Ordering::Relaxed);
        self.install(|| {
            self.face_pass(src, buf);
            self.cell_pass(src, buf, dst);
        });
        Ok(())
    }

    /// Pass 1: for every face, both sides' integrands JxW (u_hat - F(u)/2)
    /// at the face quadrature points, `[face][side][component][q]`.
    fn face_pass(&self, src: &StateVector, buf: &mut [f64]) {
        let dim = self.dim();
        let n = self.k() + 1;
        let comps = dim + 1;
        let nf = n.pow(dim as u32 - 1);
        let fshape = Shape::cube(dim - 1, n);
        let fg = &self.geometry.faces;
        buf.par_chunks_mut(2 * comps * nf).enumerate().for_each_init(
            || Scratch::new(dim, n),
            |s, (f, out)| {
                let face = &self.mesh.faces[f];
                let (cbar, rbar) = face_material(&self.mesh, &self.material, f);
                let tau = self.flux.stabilized.then_some(self.flux.tau[f]);
                // traces at face quadrature points: minus in s.vals, plus in s.d
                let (a, b, t) = (&mut s.a, &mut s.b, &mut s.tally);
                self.trace(src, face.minus.element, face.minus.local, fshape, &mut s.vals, a, b, t);
                if let Some(p) = face.plus {
                    self.trace(src, p.element, p.local, fshape, &mut s.d, a, b, t);
                }
                let em = face.minus.element;
                let (cm, rm) = (self.material.c[em], self.material.rho[em]);
                let (cp, rp) = face
                    .plus
                    .map_or((cm, rm), |p| (self.material.c[p.element], self.material.rho[p.element]));
                for q in 0..nf {
                    let mut nrm = [0.0; 3];
                    nrm[..dim].copy_from_slice(&fg.normal[(f * nf + q) * dim..(f * nf + q + 1) * dim]);
                    let w = fg.jxw[f * nf + q];
                    let mut um = Trace::default();
                    for i in 0..dim {
                        um.v[i] = s.vals[i * nf + q];
                    }
                    um.p = s.vals[dim * nf + q];
                    let up = if face.plus.is_some() {
                        let mut t = Trace::default();
                        for i in 0..dim {
                            t.v[i] = s.d[i * nf + q];
                        }
                        t.p = s.d[dim * nf + q];
                        t
                    } else {
                        debug_assert_eq!(face.boundary, Some(BoundaryKind::SoundSoft));
                        Trace { v: um.v, p: -um.p }
                    };
                    let fm = hdg_flux(um, up, nrm, cbar, rbar, tau);
                    let half_vn = 0.5 * cm * cm * rm * dot(&um.v, &nrm);
                    for i in 0..dim {
                        out[i * nf + q] = w * (fm.v[i] - 0.5 * um.p / rm * nrm[i]);
                    }
                    out[dim * nf + q] = w * (fm.p - half_vn);
                    if face.plus.is_some() {
                        let np = [-nrm[0], -nrm[1], -nrm[2]];
                        let fp = hdg_flux(up, um, np, cbar, rbar, tau);
                        let o = comps * nf;
                        for i in 0..dim {
                            out[o + i * nf + q] = w * (fp.v[i] - 0.5 * up.p / rp * np[i]);
                        }
                        out[o + dim * nf + q] = w * (fp.p - 0.5 * cp * cp * rp * dot(&up.v, &np));
                    }
                }
                self.counter.merge(&s.tally);
                s.tally = KernelTally::default();
            },
        );
    }

    /// Interpolates the face-node coefficients of all components of element
    /// `e` on local face `local` to the face Gauss points.
    #[allow(clippy::too_many_arguments)]
    fn trace(
        &self,
        src: &StateVector,
        e: usize,
        local: usize,
        fshape: Shape,
        out: &mut [f64],
        a: &mut [f64],
        b: &mut [f64],
        tally: &mut KernelTally,
    ) {
        let nf = fshape.len();
        let nodes = &self.face_nodes[local];
        for c in 0..=self.dim() {
            let u = src.component(e, c);
            for (x, &i) in a[..nf].iter_mut().zip(nodes) {
                *x = u[i];
            }
            apply_all_dirs(
                &self.basis.gl_to_g,
                &a[..nf],
                fshape,
                &mut out[c * nf..(c + 1) * nf],
                b,
                KernelClass::FaceEval,
                tally,
            );
        }
    }

    /// Pass 2: cell integrals plus the lifted face integrands of pass 1.
    fn cell_pass(&self, src: &StateVector, buf: &[f64], dst: &mut StateVector) {
        let dim = self.dim();
        let n = self.k() + 1;
        let comps = dim + 1;
        let nq = n.pow(dim as u32);
        let nf = n.pow(dim as u32 - 1);
        let shape = Shape::cube(dim, n);
        let fshape = Shape::cube(dim - 1, n);
        let basis = &self.basis;
        let geo = self.geometry.main();
        let el_len = comps * nq;
        dst.data.par_chunks_mut(el_len).enumerate().for_each_init(
            || Scratch::new(dim, n),
            |s, (e, out)| {
                let u_e = src.element(e);
                let t = &mut s.tally;
                for c in 0..comps {
                    let u = &u_e[c * nq..(c + 1) * nq];
                    apply_all_dirs(
                        &basis.gl_to_g,
                        u,
                        shape,
                        &mut s.vals[c * nq..(c + 1) * nq],
                        &mut s.a,
                        KernelClass::CellEval,
                        t,
                    );
                    for m in 0..dim {
                        let mut chain = [(&basis.gl_to_g, KernelClass::CellEval); 3];
                        chain[m] = (&basis.gl_deriv_at_g, KernelClass::CellDeriv);
                        let g = &mut s.grads[(c * dim + m) * nq..(c * dim + m + 1) * nq];
                        apply_chain(&chain[..dim], u, shape, g, &mut s.a, t);
                    }
                }
                let a = 1.0 / self.material.rho[e];
                let b = self.material.c[e] * self.material.c[e] * self.material.rho[e];
                let ij = geo.inv_jac_of(e, dim);
                let jxw = geo.jxw_of(e);
                let (vals, grads, tv) = (&s.vals, &mut s.grads, &mut s.d);
                for q in 0..nq {
                    let w = jxw[q];
                    let ji = &ij[q * dim * dim..(q + 1) * dim * dim];
                    let mut div = 0.0;
                    for i in 0..dim {
                        let mut dp = 0.0;
                        for m in 0..dim {
                            dp += grads[(dim * dim + m) * nq + q] * ji[m * dim + i];
                            div += grads[(i * dim + m) * nq + q] * ji[m * dim + i];
                        }
                        tv[i * nq + q] = 0.5 * a * dp * w;
                    }
                    tv[dim * nq + q] = 0.5 * b * div * w;
                    // reference-space fluxes tested against grad w
                    let p = vals[dim * nq + q];
                    for m in 0..dim {
                        let mut pv = 0.0;
                        for i in 0..dim {
                            grads[(i * dim + m) * nq + q] = -0.5 * a * p * w * ji[m * dim + i];
                            pv += ji[m * dim + i] * vals[i * nq + q];
                        }
                        grads[(dim * dim + m) * nq + q] = -0.5 * b * w * pv;
                    }
                }
                let deriv_t = &basis.level(n).deriv_t;
                for c in 0..comps {
                    let o = &mut out[c * nq..(c + 1) * nq];
                    apply_all_dirs(
                        &basis.gl_to_g_t,
                        &s.d[c * nq..(c + 1) * nq],
                        shape,
                        o,
                        &mut s.a,
                        KernelClass::CellEval,
                        t,
                    );
                    for m in 0..dim {
                        let g = &s.grads[(c * dim + m) * nq..(c * dim + m + 1) * nq];
                        kernel(deriv_t, g, shape, m, &mut s.b, m > 0, KernelClass::CellDeriv, t);
                    }
                    apply_all_dirs(
                        &basis.gl_to_g_t,
                        &s.b,
                        shape,
                        &mut s.c,
                        &mut s.a,
                        KernelClass::CellEval,
                        t,
                    );
                    for (x, y) in o.iter_mut().zip(&s.c) {
                        *x += y;
                    }
                }
                for local in 0..2 * dim {
                    let (f, side) = self.mesh.element_faces[e][local];
                    let base = (f * 2 + side as usize) * comps * nf;
                    let nodes = &self.face_nodes[local];
                    for c in 0..comps {
                        let fb = &buf[base + c * nf..base + (c + 1) * nf];
                        apply_all_dirs(
                            &basis.gl_to_g_t,
                            fb,
                            fshape,
                            &mut s.b[..nf],
                            &mut s.c,
                            KernelClass::FaceEval,
                            t,
                        );
                        let o = &mut out[c * nq..(c + 1) * nq];
                        for (&i, y) in nodes.iter().zip(&s.b[..nf]) {
                            o[i] += y;
                        }
                    }
                }
                self.counter.merge(t);
                *t = KernelTally::default();
            },
        );
    }

    /// dst = M src, with M = S^T diag(JxW) S per element.
    pub fn apply_mass(&self, src: &StateVector, dst: &mut StateVector) -> Result<()> {
        self.check_state(src)?;
        self.prepare_output(dst);
        let b = &self.basis;
        self.element_sweep(src, dst, |s, u, o, jxw, shape, t| {
            apply_all_dirs(&b.gl_to_g, u, shape, &mut s.b, &mut s.a, KernelClass::CellEval, t);
            for (x, w) in s.b.iter_mut().zip(jxw) {
                *x *= w;
            }
            apply_all_dirs(&b.gl_to_g_t, &s.b, shape, o, &mut s.a, KernelClass::CellEval, t);
        });
        Ok(())
    }

    /// dst = M^{-1} src, with M^{-1} = S^{-1} diag(JxW)^{-1} S^{-T} per element.
    pub fn apply_inverse_mass(&self, src: &StateVector, dst: &mut StateVector) -> Result<()> {
        self.check_state(src)?;
        self.prepare_output(dst);
        self.applications.inverse_mass.fetch_add(1, Ordering::Relaxed);
        let b = &self.basis;
        self.element_sweep(src, dst, |s, u, o, jxw, shape, t| {
            apply_all_dirs(&b.g_to_gl_t, u, shape, &mut s.b, &mut s.a, KernelClass::CellEval, t);
            for (x, w) in s.b.iter_mut().zip(jxw) {
                *x /= w;
            }
            apply_all_dirs(&b.g_to_gl, &s.b, shape, o, &mut s.a, KernelClass::CellEval, t);
        });
        Ok(())
    }

    /// In-place variant of [`Self::apply_inverse_mass`].
    pub fn apply_inverse_mass_in_place(&self, x: &mut StateVector) -> Result<()> {
        self.check_state(x)?;
        self.applications.inverse_mass.fetch_add(1, Ordering::Relaxed);
        let b = &self.basis;
        let dim = self.dim();
        let n = self.k() + 1;
        let nq = n.pow(dim as u32);
        let shape = Shape::cube(dim, n);
        let geo = self.geometry.main();
        self.install(|| {
            x.data.par_chunks_mut((dim + 1) * nq).enumerate().for_each_init(
                || Scratch::new(dim, n),
                |s, (e, el)| {
                    let jxw = geo.jxw_of(e);
                    for c in 0..=dim {
                        let o = &mut el[c * nq..(c + 1) * nq];
                        apply_all_dirs(
                            &b.g_to_gl_t,
                            o,
                            shape,
                            &mut s.b,
                            &mut s.a,
                            KernelClass::CellEval,
                            &mut s.tally,
                        );
                        for (x, w) in s.b.iter_mut().zip(jxw) {
                            *x /= w;
                        }
                        apply_all_dirs(
                            &b.g_to_gl,
                            &s.b,
                            shape,
                            o,
                            &mut s.a,
                            KernelClass::CellEval,
                            &mut s.tally,
                        );
                    }
                    self.counter.merge(&s.tally);
                    s.tally = KernelTally::default();
                },
            )
        });
        Ok(())
    }

    /// One low-storage stage update fused with the inverse mass: with
    /// g = M^{-1} kx per element, r = u + adt g (if given) from the old u,
    /// then u += bdt g.
    pub fn inverse_mass_lsrk_update(
        &self,
        kx: &StateVector,
        u: &mut StateVector,
        r: Option<&mut StateVector>,
        bdt: f64,
        adt: f64,
    ) -> Result<()> {
        self.check_state(kx)?;
        self.check_state(u)?;
        self.applications.inverse_mass.fetch_add(1, Ordering::Relaxed);
        let b = &self.basis;
        let dim = self.dim();
        let n = self.k() + 1;
        let nq = n.pow(dim as u32);
        let el = (dim + 1) * nq;
        let shape = Shape::cube(dim, n);
        let geo = self.geometry.main();
        let body = |s: &mut Scratch, e: usize, ue: &mut [f64], re: Option<&mut [f64]>| {
            let jxw = geo.jxw_of(e);
            let ke = kx.element(e);
            for c in 0..=dim {
                apply_all_dirs(
                    &b.g_to_gl_t,
                    &ke[c * nq..(c + 1) * nq],
                    shape,
                    &mut s.b,
                    &mut s.a,
                    KernelClass::CellEval,
                    &mut s.tally,
                );
                for (x, w) in s.b.iter_mut().zip(jxw) {
                    *x /= w;
                }
                apply_all_dirs(
                    &b.g_to_gl,
                    &s.b,
                    shape,
                    &mut s.vals[c * nq..(c + 1) * nq],
                    &mut s.a,
                    KernelClass::CellEval,
                    &mut s.tally,
                );
            }
            let g = &s.vals[..el];
            match re {
                Some(re) => {
                    for ((x, y), gi) in ue.iter_mut().zip(re.iter_mut()).zip(g) {
                        *y = *x + adt * gi;
                        *x += bdt * gi;
                    }
                }
                None => {
                    for (x, gi) in ue.iter_mut().zip(g) {
                        *x += bdt * gi;
                    }
                }
            }
            self.counter.merge(&s.tally);
            s.tally = KernelTally::default();
        };
        self.install(|| match r {
            Some(r) => {
                if !r.same_layout(u) {
                    *r = self.zero_state();
                }
                u.data
                    .par_chunks_mut(el)
                    .zip(r.data.par_chunks_mut(el))
                    .enumerate()
                    .for_each_init(|| Scratch::new(dim, n), |s, (e, (ue, re))| body(s, e, ue, Some(re)))
            }
            None => u
                .data
                .par_chunks_mut(el)
                .enumerate()
                .for_each_init(|| Scratch::new(dim, n), |s, (e, ue)| body(s, e, ue, None)),
        });
        Ok(())
    }

    /// Applies a per-component element kernel `f(scratch, in, out, jxw, shape, tally)`.
    fn element_sweep<F>(&self, src: &StateVector, dst: &mut StateVector, f: F)
    where
        F: Fn(&mut Scratch, &[f64], &mut [f64], &[f64], Shape, &mut KernelTally) + Sync,
    {
        let dim = self.dim();
        let n = self.k() + 1;
        let nq = n.pow(dim as u32);
        let shape = Shape::cube(dim, n);
        let geo = self.geometry.main();
        self.install(|| {
            dst.data.par_chunks_mut((dim + 1) * nq).enumerate().for_each_init(
                || Scratch::new(dim, n),
                |s, (e, out)| {
                    let u_e = src.element(e);
                    let jxw = geo.jxw_of(e);
                    let mut t = KernelTally::default();
                    for c in 0..=dim {
                        f(
                            s,
                            &u_e[c * nq..(c + 1) * nq],
                            &mut out[c * nq..(c + 1) * nq],
                            jxw,
                            shape,
                            &mut t,
                        );
                    }
                    self.counter.merge(&t);
                },
            )
        });
    }

    /// Element-local S on collocated values at `n` Gauss points of element
    /// `e`: velocity rows get (1/rho) grad p, the pressure row c^2 rho div v.
    /// `grads` needs room for (dim+1)*dim*n^dim values.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn local_s_into(
        &self,
        e: usize,
        n: usize,
        vals: &[f64],
        out: &mut [f64],
        grads: &mut [f64],
        tally: &mut KernelTally,
    ) -> Result<()> {
        let dim = self.dim();
        let nq = n.pow(dim as u32);
        let comps = dim + 1;
        if n == 1 {
            out[..comps * nq].fill(0.0);
            return Ok(());
        }
        let geo = self.geometry.cell(n)?;
        if n > self.k() + 1 {
            return Err(Error::Config(format!("{n} Gauss points exceed degree {}", self.k())));
        }
        let deriv = &self.basis.level(n).deriv;
        let shape = Shape::cube(dim, n);
        for c in 0..comps {
            for m in 0..dim {
                kernel(
                    deriv,
                    &vals[c * nq..(c + 1) * nq],
                    shape,
                    m,
                    &mut grads[(c * dim + m) * nq..(c * dim + m + 1) * nq],
                    false,
                    KernelClass::CellDeriv,
                    tally,
                );
            }
        }
        let a = 1.0 / self.material.rho[e];
        let b = self.material.c[e] * self.material.c[e] * self.material.rho[e];
        let ij = geo.inv_jac_of(e, dim);
        for q in 0..nq {
            let ji = &ij[q * dim * dim..(q + 1) * dim * dim];
            let mut div = 0.0;
            for i in 0..dim {
                let mut dp = 0.0;
                for m in 0..dim {
                    dp += grads[(dim * dim + m) * nq + q] * ji[m * dim + i];
                    div += grads[(i * dim + m) * nq + q] * ji[m * dim + i];
                }
                out[i * nq + q] = a * dp;
            }
            out[dim * nq + q] = b * div;
        }
        Ok(())
    }

    /// S applied to one element's collocated values at `n` Gauss points per
    /// direction, layout `[component][q]`.
    pub fn apply_local_s(&self, e: usize, n: usize, values_g: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim();
        let nq = n.pow(dim as u32);
        if values_g.len() != (dim + 1) * nq {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                (dim + 1) * nq,
                values_g.len()
            )));
        }
        if e >= self.n_elements() {
            return Err(Error::Shape(format!("element {e} out of range")));
        }
        let mut out = vec![0.0; (dim + 1) * nq];
        let mut grads = vec![0.0; (dim + 1) * dim * nq];
        let mut t = KernelTally::default();
        self.local_s_into(e, n, values_g, &mut out, &mut grads, &mut t)?;
        self.counter.merge(&t);
        Ok(out)
    }

    #[cfg(test)]
    pub(crate) fn face_buffer_snapshot(&self, src: &StateVector) -> Vec<f64> {
        let mut buf = self.face_buffer.lock().unwrap();
        self.face_pass(src, &mut buf);
        buf.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cartesian, deform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(n: usize, dim: usize, k: usize, bk: BoundaryKind, amp: f64) -> AcousticOperator {
        let mut mesh = build_cartesian(n, dim, bk).unwrap();
        if amp > 0.0 {
            mesh = deform(&mesh, amp).unwrap();
        }
        let mat = Material::uniform(mesh.n_elements(), 1.0, 1.0).unwrap();
        let flux = FluxParams::hdg(&mesh, &mat, 1.0).unwrap();
        AcousticOperator::new(mesh, k, mat, flux).unwrap()
    }

    fn random_state(op: &AcousticOperator, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = op.zero_state();
        s.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        s
    }

    #[test]
    fn flux_examples() {
        let n = [0.6, 0.8, 0.0];
        let t = Trace {
            v: [0.3, -0.2, 0.0],
            p: 0.7,
        };
        let f = hdg_flux(t, t, n, 2.0, 3.0, Some(0.4));
        for i in 0..2 {
            assert!((f.v[i] - 0.7 / 3.0 * n[i]).abs() < 1e-15);
        }
        assert!((f.p - 4.0 * 3.0 * (0.3 * 0.6 - 0.2 * 0.8)).abs() < 1e-14);

        let z = hdg_flux(Trace::default(), Trace::default(), n, 1.0, 1.0, Some(1.0));
        assert_eq!(z, Trace::default());

        let (c, rho) = (2.0, 0.5);
        let pm = Trace { v: [0.0; 3], p: 1.0 };
        let f = hdg_flux(pm, Trace::default(), n, c, rho, Some(1.0 / (c * rho)));
        assert!((f.p - c / 2.0).abs() < 1e-15);
        for i in 0..3 {
            assert!((f.v[i] - n[i] / (2.0 * rho)).abs() < 1e-15);
        }
    }

    #[test]
    fn face_nodes_lie_on_the_face() {
        let n = 4;
        for dim in 2..=3 {
            for local in 0..2 * dim {
                let idx = face_node_indices(dim, n, local);
                assert_eq!(idx.len(), n.pow(dim as u32 - 1));
                for &i in &idx {
                    let coord = (i / n.pow((local / 2) as u32)) % n;
                    assert_eq!(coord, (local % 2) * (n - 1));
                }
            }
        }
    }

    #[test]
    fn free_stream_preservation() {
        for dim in 2..=3 {
            let o = op(3, dim, 3, BoundaryKind::Periodic, 0.03);
            let mut s = o.zero_state();
            let nq = s.nodes_per_component();
            for e in 0..o.n_elements() {
                let l = s.element_len();
                s.data[e * l + dim * nq..(e + 1) * l].fill(1.7);
            }
            let mut r = o.zero_state();
            o.apply_k(&s, &mut r).unwrap();
            assert!(r.max_abs() < 1e-11, "dim {dim}: {}", r.max_abs());
        }
    }

    #[test]
    fn mass_inverse_round_trip() {
        for dim in 2..=3 {
            let o = op(2, dim, 3, BoundaryKind::SoundSoft, 0.1);
            let u = random_state(&o, 3);
            let mut mu = o.zero_state();
            let mut back = o.zero_state();
            o.apply_mass(&u, &mut mu).unwrap();
            o.apply_inverse_mass(&mu, &mut back).unwrap();
            let err = u
                .data
                .iter()
                .zip(&back.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
            o.apply_inverse_mass_in_place(&mut mu).unwrap();
            assert_eq!(mu.data, back.data);
        }
    }

    #[test]
    fn unit_element_constant_mass() {
        let o = op(1, 2, 2, BoundaryKind::SoundSoft, 0.0);
        let mut u = o.zero_state();
        u.data.fill(1.0);
        let mut mu = o.zero_state();
        o.apply_mass(&u, &mut mu).unwrap();
        // M * 1 integrates each basis function; these sum to the volume
        let nq = 9;
        for c in 0..3 {
            let s: f64 = mu.data[c * nq..(c + 1) * nq].iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn contract_and_shape_errors() {
        let o = op(2, 2, 2, BoundaryKind::SoundSoft, 0.0);
        let mut s = o.zero_state();
        s.basis = BasisTag::G;
        let mut r = o.zero_state();
        assert!(matches!(o.apply_k(&s, &mut r), Err(Error::Contract(_))));
        let bad = StateVector::zeros(2, 3, 4);
        assert!(matches!(o.apply_k(&bad, &mut r), Err(Error::Shape(_))));
        assert!(StateVector::from_data(2, 1, 1, vec![0.0; 5]).is_err());
    }

    #[test]
    fn local_s_of_linear_pressure() {
        let o = op(1, 2, 2, BoundaryKind::SoundSoft, 0.0);
        let g = &o.basis.gauss;
        let mut vals = vec![0.0; 27];
        for q in 0..9 {
            vals[18 + q] = g[q % 3];
        }
        let out = o.apply_local_s(0, 3, &vals).unwrap();
        for q in 0..9 {
            assert!((out[q] - 1.0).abs() < 1e-13);
            assert!(out[9 + q].abs() < 1e-13);
            assert!(out[18 + q].abs() < 1e-13);
        }
        let zero = o.apply_local_s(0, 3, &[2.5; 27]).unwrap();
        assert!(zero.iter().all(|x| x.abs() < 1e-12));
        assert!(matches!(o.apply_local_s(0, 2, &[0.0; 12]), Err(Error::Config(_))));
    }

    #[test]
    fn face_pass_reads_only_face_nodes() {
        for dim in 2..=3 {
            let o = op(2, dim, 3, BoundaryKind::SoundSoft, 0.1);
            let u = random_state(&o, 11);
            let reference = o.face_buffer_snapshot(&u);
            // poison every coefficient that is not on some face
            let mut poisoned = u.clone();
            let nq = u.nodes_per_component();
            let mut on_face = vec![false; nq];
            for l in 0..2 * dim {
                for &i in &face_node_indices(dim, 4, l) {
                    on_face[i] = true;
                }
            }
            let faces_per_comp = on_face.iter().filter(|&&b| b).count();
            assert!(faces_per_comp < nq);
            for (j, x) in poisoned.data.iter_mut().enumerate() {
                if !on_face[j % nq] {
                    *x = f64::NAN;
                }
            }
            let got = o.face_buffer_snapshot(&poisoned);
            assert_eq!(reference, got);
        }
    }

    #[test]
    fn central_flux_is_skew() {
        // U^T K U vanishes on periodic meshes without stabilization
        for dim in 2..=3 {
            let mut mesh = build_cartesian(2, dim, BoundaryKind::Periodic).unwrap();
            mesh = deform(&mesh, 0.05).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let n_el = mesh.n_elements();
            let (c0, r0) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let c = vec![c0; n_el];
            let rho = vec![r0; n_el];
            let mat = Material::new(c.clone(), rho.clone()).unwrap();
            let flux = FluxParams::central(&mesh);
            let o = AcousticOperator::new(mesh, 2, mat, flux).unwrap();
            let u = random_state(&o, 2);
            let mut ku = o.zero_state();
            o.apply_k(&u, &mut ku).unwrap();
            // energy inner product weights velocity by rho and pressure by 1/(c^2 rho)
            let nq = u.nodes_per_component();
            let mut e = 0.0;
            let mut scale = 0.0;
            for el in 0..n_el {
                for comp in 0..=dim {
                    let wgt = if comp < dim {
                        rho[el]
                    } else {
                        1.0 / (c[el] * c[el] * rho[el])
                    };
                    for j in 0..nq {
                        let i = (el * (dim + 1) + comp) * nq + j;
                        e += wgt * u.data[i] * ku.data[i];
                        scale += (wgt * u.data[i] * ku.data[i]).abs();
                    }
                }
            }
            assert!(e.abs() < 1e-12 * scale.max(1.0), "dim {dim}: {e} vs {scale}");
        }
    }
}
