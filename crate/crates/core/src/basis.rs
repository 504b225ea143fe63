//! Lagrange interpolation/derivative matrices, their even-odd decomposition,
//! projections between Gauss-collocated bases of different degree, and the
//! Gauss–Lobatto/Gauss basis change.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_lobatto_rule, gauss_rule, PointSet};

/// Highest polynomial degree accepted by the discretization.
pub const MAX_DEGREE: usize = 12;

/// Half-length bound for even-odd scratch buffers (13 points -> 7).
const HALF_CAP: usize = MAX_DEGREE / 2 + 2;
/// lines processed together by the interleaved kernel
const TILE: usize = 32;

thread_local! {
    static TILE_SCRATCH: std::cell::RefCell<Vec<f64>> =
        std::cell::RefCell::new(vec![0.0; 2 * HALF_CAP * TILE + 4 * TILE]);
}

#[inline(always)]
fn gather(src: &[f64], base: usize, stride: usize, out: &mut [f64]) {
    if stride == 1 {
        out.copy_from_slice(&src[base..base + out.len()]);
    } else {
        for (t, v) in out.iter_mut().enumerate() {
            *v = src[base + t * stride];
        }
    }
}

#[inline(always)]
fn scatter(dst: &mut [f64], base: usize, stride: usize, vals: &[f64], add: bool) {
    if stride == 1 {
        let d = &mut dst[base..base + vals.len()];
        if add {
            d.iter_mut().zip(vals).for_each(|(x, v)| *x += v);
        } else {
            d.copy_from_slice(vals);
        }
    } else if add {
        for (t, v) in vals.iter().enumerate() {
            dst[base + t * stride] += v;
        }
    } else {
        for (t, v) in vals.iter().enumerate() {
            dst[base + t * stride] = *v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Value,
    Derivative,
}

/// Dense 1-D matrix, row-major, `rows` evaluation points by `cols` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix1D {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
    pub kind: MatrixKind,
    pub node_set: Option<PointSet>,
    pub eval_set: Option<PointSet>,
}

impl BasisMatrix1D {
    pub fn from_rows(rows: usize, cols: usize, entries: Vec<f64>, kind: MatrixKind) -> Self {
        assert_eq!(entries.len(), rows * cols);
        BasisMatrix1D {
            rows,
            cols,
            entries,
            kind,
            node_set: None,
            eval_set: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = 1.0;
        }
        Self::from_rows(n, n, e, MatrixKind::Value)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut e = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                e[j * self.rows + i] = self.get(i, j);
            }
        }
        BasisMatrix1D {
            rows: self.cols,
            cols: self.rows,
            entries: e,
            kind: self.kind,
            node_set: self.eval_set,
            eval_set: self.node_set,
        }
    }

    pub fn matmul(&self, other: &BasisMatrix1D) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut e = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            for j in 0..other.cols {
                e[i * other.cols + j] = (0..self.cols).map(|l| self.get(i, l) * other.get(l, j)).sum();
            }
        }
        Self::from_rows(self.rows, other.cols, e, self.kind)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }

    fn from_dmatrix(m: &DMatrix<f64>, kind: MatrixKind) -> Self {
        let mut e = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                e.push(m[(i, j)]);
            }
        }
        Self::from_rows(m.nrows(), m.ncols(), e, kind)
    }

    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Shape("cannot invert a non-square matrix".into()));
        }
        let inv = self
            .to_dmatrix()
            .try_inverse()
            .ok_or_else(|| Error::Internal("singular 1-D basis matrix".into()))?;
        let mut out = Self::from_dmatrix(&inv, self.kind);
        out.node_set = self.eval_set;
        out.eval_set = self.node_set;
        Ok(out)
    }
}

/// Value (or derivative) of the j-th Lagrange polynomial on `nodes` at `x`.
fn lagrange_value(nodes: &[f64], j: usize, x: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != j)
        .map(|(_, &xm)| (x - xm) / (nodes[j] - xm))
        .product()
}

fn lagrange_derivative(nodes: &[f64], j: usize, x: f64) -> f64 {
    let n = nodes.len();
    let mut sum = 0.0;
    for m in (0..n).filter(|&m| m != j) {
        let mut term = 1.0 / (nodes[j] - nodes[m]);
        for l in (0..n).filter(|&l| l != j && l != m) {
            term *= (x - nodes[l]) / (nodes[j] - nodes[l]);
        }
        sum += term;
    }
    sum
}

/// Matrix with entry (i,j) = L_j(x_i) or L_j'(x_i) for the Lagrange basis on `nodes`.
pub fn lagrange_matrix(nodes: &[f64], eval_points: &[f64], kind: MatrixKind) -> Result<BasisMatrix1D> {
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("empty node set".into()));
    }
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            if (nodes[a] - nodes[b]).abs() < 1e-14 {
                return Err(Error::InvalidArgument(format!(
                    "duplicate Lagrange nodes at positions {a} and {b}"
                )));
            }
        }
    }
    let n = nodes.len();
    let mut e = Vec::with_capacity(eval_points.len() * n);
    for &x in eval_points {
        for j in 0..n {
            e.push(match kind {
                MatrixKind::Value => lagrange_value(nodes, j, x),
                MatrixKind::Derivative => lagrange_derivative(nodes, j, x),
            });
        }
    }
    Ok(BasisMatrix1D::from_rows(eval_points.len(), n, e, kind))
}

fn labelled(nodes: PointSet, eval: PointSet, mut m: BasisMatrix1D) -> BasisMatrix1D {
    m.node_set = Some(nodes);
    m.eval_set = Some(eval);
    m
}

/// Symmetry-split form of a 1-D matrix whose row and column point sets are
/// both symmetric about 0.5: `M[r-1-i][c-1-j] = parity * M[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvenOddMatrix {
    pub rows: usize,
    pub cols: usize,
    /// +1 for value-type matrices, -1 for derivative-type ones.
    pub parity: f64,
    /// ceil(rows/2) x ceil(cols/2), row-major
    pub even_block: Vec<f64>,
    /// ceil(rows/2) x floor(cols/2), row-major
    pub odd_block: Vec<f64>,
}

pub fn even_odd_decompose(m: &BasisMatrix1D) -> Result<EvenOddMatrix> {
    let (r, c) = (m.rows, m.cols);
    if r.div_ceil(2) > HALF_CAP || c.div_ceil(2) > HALF_CAP {
        return Err(Error::Unsupported(format!(
            "{r}x{c} matrix exceeds the even-odd kernel size limit"
        )));
    }
    let scale = m.entries.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    let mismatch =
        |s: f64| (0..r).any(|i| (0..c).any(|j| (m.get(r - 1 - i, c - 1 - j) - s * m.get(i, j)).abs() > 1e-11 * scale));
    let parity = if !mismatch(1.0) {
        1.0
    } else if !mismatch(-1.0) {
        -1.0
    } else {
        return Err(Error::Unsupported(
            "even-odd decomposition needs point sets symmetric about 0.5".into(),
        ));
    };
    let (rh, ch, cf) = (r.div_ceil(2), c.div_ceil(2), c / 2);
    let mut even_block = vec![0.0; rh * ch];
    let mut odd_block = vec![0.0; rh * cf];
    for i in 0..rh {
        for j in 0..cf {
            let (a, b) = (m.get(i, j), m.get(i, c - 1 - j));
            even_block[i * ch + j] = 0.5 * (a + b);
            odd_block[i * cf + j] = 0.5 * (a - b);
        }
        if c % 2 == 1 {
            even_block[i * ch + cf] = m.get(i, cf);
        }
    }
    Ok(EvenOddMatrix {
        rows: r,
        cols: c,
        parity,
        even_block,
        odd_block,
    })
}

impl EvenOddMatrix {
    /// Applies the matrix to the strided line `src[s0 + j*ss]` and writes (or
    /// adds into) `dst[d0 + i*ds]`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn apply_line(&self, src: &[f64], s0: usize, ss: usize, dst: &mut [f64], d0: usize, ds: usize, add: bool) {
        let (r, c) = (self.rows, self.cols);
        let (rh, ch, cf) = (r.div_ceil(2), c.div_ceil(2), c / 2);
        let mut xe = [0.0f64; HALF_CAP];
        let mut xo = [0.0f64; HALF_CAP];
        for j in 0..cf {
            let a = src[s0 + j * ss];
            let b = src[s0 + (c - 1 - j) * ss];
            xe[j] = a + b;
            xo[j] = a - b;
        }
        if c % 2 == 1 {
            xe[cf] = src[s0 + cf * ss];
        }
        for i in 0..rh {
            let erow = &self.even_block[i * ch..(i + 1) * ch];
            let orow = &self.odd_block[i * cf..(i + 1) * cf];
            let mut e = 0.0;
            for j in 0..ch {
                e += erow[j] * xe[j];
            }
            let mut o = 0.0;
            for j in 0..cf {
                o += orow[j] * xo[j];
            }
            let lo = e + o;
            let hi = self.parity * (e - o);
            let il = d0 + i * ds;
            let ih = d0 + (r - 1 - i) * ds;
            if add {
                dst[il] += lo;
                if r - 1 - i != i {
                    dst[ih] += hi;
                }
            } else {
                dst[il] = lo;
                if r - 1 - i != i {
                    dst[ih] = hi;
                }
            }
        }
    }

    /// Applies the matrix to `n_lines` lines at once. Line `t` starts at
    /// `t * line_stride` in `src` / `t * dst_line_stride` in `dst`; entries
    /// of a line are `elem_stride` / `dst_elem_stride` apart. Lines are
    /// processed in tiles so the arithmetic runs over contiguous buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_lines(
        &self,
        src: &[f64],
        n_lines: usize,
        line_stride: usize,
        elem_stride: usize,
        dst: &mut [f64],
        dst_line_stride: usize,
        dst_elem_stride: usize,
        add: bool,
    ) {
        TILE_SCRATCH.with(|buf| {
            let mut buf = buf.borrow_mut();
            let (r, c) = (self.rows, self.cols);
            let (rh, ch, cf) = (r.div_ceil(2), c.div_ceil(2), c / 2);
            let (xe, rest) = buf.split_at_mut(HALF_CAP * TILE);
            let (xo, rest) = rest.split_at_mut(HALF_CAP * TILE);
            let (e, rest) = rest.split_at_mut(TILE);
            let (o, rest) = rest.split_at_mut(TILE);
            let (ta, tb) = rest.split_at_mut(TILE);
            let mut t0 = 0;
            while t0 < n_lines {
                let w = TILE.min(n_lines - t0);
                let sb = t0 * line_stride;
                for j in 0..cf {
                    gather(src, sb + j * elem_stride, line_stride, &mut ta[..w]);
                    gather(src, sb + (c - 1 - j) * elem_stride, line_stride, &mut tb[..w]);
                    let xej = &mut xe[j * TILE..j * TILE + w];
                    let xoj = &mut xo[j * TILE..j * TILE + w];
                    for (((pe, po), x), y) in xej.iter_mut().zip(xoj.iter_mut()).zip(ta.iter()).zip(tb.iter()) {
                        *pe = x + y;
                        *po = x - y;
                    }
                }
                if c % 2 == 1 {
                    gather(
                        src,
                        sb + cf * elem_stride,
                        line_stride,
                        &mut xe[cf * TILE..cf * TILE + w],
                    );
                }
                let (e, o) = (&mut e[..w], &mut o[..w]);
                let db = t0 * dst_line_stride;
                for i in 0..rh {
                    e.fill(0.0);
                    o.fill(0.0);
                    for j in 0..ch {
                        let m = self.even_block[i * ch + j];
                        for (acc, x) in e.iter_mut().zip(&xe[j * TILE..j * TILE + w]) {
                            *acc += m * x;
                        }
                    }
                    for j in 0..cf {
                        let m = self.odd_block[i * cf + j];
                        for (acc, x) in o.iter_mut().zip(&xo[j * TILE..j * TILE + w]) {
                            *acc += m * x;
                        }
                    }
                    let p = self.parity;
                    for (a, b) in e.iter_mut().zip(o.iter_mut()) {
                        let (x, y) = (*a, *b);
                        *a = x + y;
                        *b = p * (x - y);
                    }
                    scatter(dst, db + i * dst_elem_stride, dst_line_stride, e, add);
                    let ih = r - 1 - i;
                    if ih != i {
                        scatter(dst, db + ih * dst_elem_stride, dst_line_stride, o, add);
                    }
                }
                t0 += w;
            }
        });
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        self.apply_line(x, 0, 1, &mut y, 0, 1, false);
        y
    }
}

/// L2 projection between Gauss-collocated Lagrange bases of degree
/// `k_from` and `k_to < k_from` on [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix1D {
    pub k_from: usize,
    pub k_to: usize,
    pub matrix: BasisMatrix1D,
}

pub fn projection_matrix(k_from: usize, k_to: usize) -> Result<ProjectionMatrix1D> {
    if k_to >= k_from {
        return Err(Error::InvalidArgument(format!(
            "projection target degree {k_to} must be below source degree {k_from}"
        )));
    }
    let from = gauss_rule(k_from + 1)?;
    let to = gauss_rule(k_to + 1)?;
    let quad = gauss_rule(k_from.max(k_to) + 1)?;
    let phi_to = lagrange_matrix(&to.points, &quad.points, MatrixKind::Value)?.to_dmatrix();
    let phi_from = lagrange_matrix(&from.points, &quad.points, MatrixKind::Value)?.to_dmatrix();
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(quad.weights.clone()));
    let mass_to = phi_to.transpose() * &w * &phi_to;
    let mixed = phi_to.transpose() * &w * &phi_from;
    let p = mass_to
        .lu()
        .solve(&mixed)
        .ok_or_else(|| Error::Internal("singular target mass matrix".into()))?;
    let matrix = labelled(
        PointSet::Gauss,
        PointSet::Gauss,
        BasisMatrix1D::from_dmatrix(&p, MatrixKind::Value),
    );
    Ok(ProjectionMatrix1D { k_from, k_to, matrix })
}

pub fn check_degree(k: usize) -> Result<()> {
    if k == 0 || k > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree {k} outside the supported range 1..={MAX_DEGREE}"
        )));
    }
    Ok(())
}

/// GL->G evaluation matrix and its inverse G->GL for degree k.
pub fn basis_change_matrices(k: usize) -> Result<(BasisMatrix1D, BasisMatrix1D)> {
    check_degree(k)?;
    let gl = gauss_lobatto_rule(k + 1)?;
    let g = gauss_rule(k + 1)?;
    let gl_to_g = labelled(
        PointSet::GaussLobatto,
        PointSet::Gauss,
        lagrange_matrix(&gl.points, &g.points, MatrixKind::Value)?,
    );
    let g_to_gl = gl_to_g.inverse()?;
    Ok((gl_to_g, g_to_gl))
}

/// Everything the operators need for one Gauss point count on the collocated side.
#[derive(Debug, Clone)]
pub struct GaussLevel {
    pub n: usize,
    /// collocation derivative on n Gauss points
    pub deriv: EvenOddMatrix,
    pub deriv_t: EvenOddMatrix,
}

/// The complete set of 1-D matrices used for a degree-k discretization.
#[derive(Debug, Clone)]
pub struct ElementBasis {
    pub k: usize,
    pub n: usize,
    pub gl_nodes: Vec<f64>,
    pub gauss: Vec<f64>,
    pub gauss_weights: Vec<f64>,
    /// GL coefficients -> values at Gauss points
    pub gl_to_g: EvenOddMatrix,
    pub gl_to_g_t: EvenOddMatrix,
    pub g_to_gl: EvenOddMatrix,
    pub g_to_gl_t: EvenOddMatrix,
    /// derivative of the GL basis at Gauss points
    pub gl_deriv_at_g: EvenOddMatrix,
    /// levels[n] for Gauss point counts 1..=k+1 (index 0 unused)
    pub levels: Vec<Option<GaussLevel>>,
    /// projections[from][to], Gauss point counts, to < from
    projections: Vec<Vec<Option<EvenOddMatrix>>>,
    /// interpolation from `from` to `to > from` Gauss points
    prolongations: Vec<Vec<Option<EvenOddMatrix>>>,
}

impl ElementBasis {
    pub fn new(k: usize) -> Result<Self> {
        check_degree(k)?;
        let n = k + 1;
        let gl = gauss_lobatto_rule(n)?;
        let g = gauss_rule(n)?;
        let (s, s_inv) = basis_change_matrices(k)?;
        let d_gl = lagrange_matrix(&gl.points, &g.points, MatrixKind::Derivative)?;
        let mut levels = vec![None];
        for m in 1..=n {
            let pts = gauss_rule(m)?.points;
            let dm = lagrange_matrix(&pts, &pts, MatrixKind::Derivative)?;
            levels.push(Some(GaussLevel {
                n: m,
                deriv: even_odd_decompose(&dm)?,
                deriv_t: even_odd_decompose(&dm.transpose())?,
            }));
        }
        let mut projections = vec![vec![None; n + 1]; n + 1];
        let mut prolongations = vec![vec![None; n + 1]; n + 1];
        for from in 1..=n {
            for to in 1..from {
                let p = projection_matrix(from - 1, to - 1)?;
                projections[from][to] = Some(even_odd_decompose(&p.matrix)?);
                let src = gauss_rule(to)?.points;
                let dst = gauss_rule(from)?.points;
                let up = lagrange_matrix(&src, &dst, MatrixKind::Value)?;
                prolongations[to][from] = Some(even_odd_decompose(&up)?);
            }
        }
        Ok(ElementBasis {
            k,
            n,
            gl_nodes: gl.points,
            gauss: g.points,
            gauss_weights: g.weights,
            gl_to_g: even_odd_decompose(&s)?,
            gl_to_g_t: even_odd_decompose(&s.transpose())?,
            g_to_gl: even_odd_decompose(&s_inv)?,
            g_to_gl_t: even_odd_decompose(&s_inv.transpose())?,
            gl_deriv_at_g: even_odd_decompose(&d_gl)?,
            levels,
            projections,
            prolongations,
        })
    }

    pub fn level(&self, n: usize) -> &GaussLevel {
        self.levels[n].as_ref().expect("Gauss level within 1..=k+1")
    }

    pub fn projection(&self, from: usize, to: usize) -> &EvenOddMatrix {
        self.projections[from][to].as_ref().expect("projection to fewer points")
    }

    pub fn prolongation(&self, from: usize, to: usize) -> &EvenOddMatrix {
        self.prolongations[from][to]
            .as_ref()
            .expect("prolongation to more points")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn lagrange_cardinality() {
        let g = gauss_rule(5).unwrap();
        let m = lagrange_matrix(&g.points, &g.points, MatrixKind::Value).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(m.get(i, j), if i == j { 1.0 } else { 0.0 }, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn linear_basis_at_gauss_points() {
        let g = gauss_rule(2).unwrap();
        let m = lagrange_matrix(&[0.0, 1.0], &g.points, MatrixKind::Value).unwrap();
        let (a, b) = (0.5 + 3f64.sqrt() / 6.0, 0.5 - 3f64.sqrt() / 6.0);
        let expect = [a, b, b, a];
        assert!(max_diff(&m.entries, &expect) < 1e-15);
        let d = lagrange_matrix(&[0.0, 1.0], &[0.1, 0.37, 2.0], MatrixKind::Derivative).unwrap();
        for i in 0..3 {
            assert_eq!((d.get(i, 0), d.get(i, 1)), (-1.0, 1.0));
        }
    }

    #[test]
    fn duplicate_nodes_rejected() {
        let r = lagrange_matrix(&[0.0, 0.5, 0.5], &[0.1], MatrixKind::Value);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn row_sums() {
        for n in 2..=13 {
            let gl = gauss_lobatto_rule(n).unwrap();
            let g = gauss_rule(n).unwrap();
            let v = lagrange_matrix(&gl.points, &g.points, MatrixKind::Value).unwrap();
            let d = lagrange_matrix(&gl.points, &g.points, MatrixKind::Derivative).unwrap();
            for i in 0..n {
                let sv: f64 = (0..n).map(|j| v.get(i, j)).sum();
                let sd: f64 = (0..n).map(|j| d.get(i, j)).sum();
                assert_abs_diff_eq!(sv, 1.0, epsilon = 1e-13);
                assert_abs_diff_eq!(sd, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn even_odd_examples() {
        let id = BasisMatrix1D::identity(5);
        let eo = even_odd_decompose(&id).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(eo.apply(&x), x.to_vec());

        let g = gauss_rule(2).unwrap();
        let m = lagrange_matrix(&[0.0, 1.0], &g.points, MatrixKind::Value).unwrap();
        let y = even_odd_decompose(&m).unwrap().apply(&[1.0, 1.0]);
        assert!(max_diff(&y, &[1.0, 1.0]) < 1e-15);
    }

    #[test]
    fn even_odd_rejects_asymmetric_points() {
        let m = lagrange_matrix(&[0.0, 0.3, 1.0], &[0.1, 0.2], MatrixKind::Value).unwrap();
        assert!(matches!(even_odd_decompose(&m), Err(Error::Unsupported(_))));
    }

    #[test]
    fn even_odd_matches_dense_for_all_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=MAX_DEGREE {
            let n = k + 1;
            let gl = gauss_lobatto_rule(n).unwrap();
            let g = gauss_rule(n).unwrap();
            let mats = [
                lagrange_matrix(&gl.points, &g.points, MatrixKind::Value).unwrap(),
                lagrange_matrix(&gl.points, &g.points, MatrixKind::Derivative).unwrap(),
                lagrange_matrix(&g.points, &g.points, MatrixKind::Derivative).unwrap(),
                lagrange_matrix(&g.points, &gl.points, MatrixKind::Value)
                    .unwrap()
                    .transpose(),
            ];
            for m in &mats {
                let eo = even_odd_decompose(m).unwrap();
                for _ in 0..100 {
                    let x: Vec<f64> = (0..m.cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    assert!(max_diff(&eo.apply(&x), &m.apply(&x)) < 1e-12, "k={k}");
                }
            }
        }
    }

    #[test]
    fn projection_examples() {
        // constants survive
        let p = projection_matrix(4, 2).unwrap();
        let y = p.matrix.apply(&[1.0; 5]);
        assert!(max_diff(&y, &[1.0; 3]) < 1e-13);

        // x^2 onto linears is x - 1/6
        let p = projection_matrix(3, 1).unwrap();
        let from = gauss_rule(4).unwrap();
        let to = gauss_rule(2).unwrap();
        let x2: Vec<f64> = from.points.iter().map(|x| x * x).collect();
        let y = p.matrix.apply(&x2);
        let expect: Vec<f64> = to.points.iter().map(|x| x - 1.0 / 6.0).collect();
        assert!(max_diff(&y, &expect) < 1e-13);

        assert!(matches!(projection_matrix(2, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(projection_matrix(1, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn projection_reproduces_lower_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k_from in 1..=MAX_DEGREE {
            for k_to in 0..k_from {
                let p = projection_matrix(k_from, k_to).unwrap();
                let from = gauss_rule(k_from + 1).unwrap();
                let to = gauss_rule(k_to + 1).unwrap();
                let coef: Vec<f64> = (0..=k_to).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let poly = |x: f64| coef.iter().rev().fold(0.0, |acc, c| acc * x + c);
                let src: Vec<f64> = from.points.iter().map(|&x| poly(x)).collect();
                let expect: Vec<f64> = to.points.iter().map(|&x| poly(x)).collect();
                assert!(max_diff(&p.matrix.apply(&src), &expect) < 1e-12, "{k_from}->{k_to}");
            }
        }
    }

    #[test]
    fn basis_change_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=MAX_DEGREE {
            let (s, si) = basis_change_matrices(k).unwrap();
            let prod = si.matmul(&s);
            assert!(
                max_diff(&prod.entries, &BasisMatrix1D::identity(k + 1).entries) < 1e-13,
                "k={k}"
            );
            let ones = s.apply(&vec![1.0; k + 1]);
            assert!(max_diff(&ones, &vec![1.0; k + 1]) < 1e-13);
            // polynomial values at GL nodes survive GL->G->GL
            let gl = gauss_lobatto_rule(k + 1).unwrap();
            let coef: Vec<f64> = (0..=k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vals: Vec<f64> = gl
                .points
                .iter()
                .map(|&x| coef.iter().rev().fold(0.0, |a, c| a * x + c))
                .collect();
            let back = si.apply(&s.apply(&vals));
            assert!(max_diff(&back, &vals) < 1e-12);
        }
        assert!(basis_change_matrices(0).is_err());
        assert!(basis_change_matrices(13).is_err());
    }
}
