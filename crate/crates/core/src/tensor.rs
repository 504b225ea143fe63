//! Sum-factorization kernels: one 1-D matrix applied along one direction of a
//! d-dimensional coefficient tensor. Direction 0 varies fastest.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::basis::{ElementBasis, EvenOddMatrix};
use crate::error::{Error, Result};

/// Arithmetic of one even-odd line application with `cols` inputs and
/// `rows` outputs: additions/subtractions, multiplications, and fused
/// multiply-adds counted twice. Equals the per-line factor of
/// [`crate::cost::cost_tensorial`] for square matrices.
pub fn flops_per_line(rows: usize, cols: usize) -> u64 {
    let fma = if cols >= 2 { rows * (cols - 2) / 2 } else { 0 };
    (cols + 2 * rows + 2 * fma) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelClass {
    CellEval,
    CellDeriv,
    FaceEval,
}

/// Per-task tally of kernel invocations; merged into a [`KernelCounter`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct KernelTally {
    pub cell_eval: u64,
    pub cell_deriv: u64,
    pub face_eval: u64,
    pub flops: u64,
}

impl KernelTally {
    #[inline]
    pub fn record(&mut self, class: KernelClass, lines: usize, rows: usize, cols: usize) {
        match class {
            KernelClass::CellEval => self.cell_eval += 1,
            KernelClass::CellDeriv => self.cell_deriv += 1,
            KernelClass::FaceEval => self.face_eval += 1,
        }
        self.flops += lines as u64 * flops_per_line(rows, cols);
    }

    pub fn cell_calls(&self) -> u64 {
        self.cell_eval + self.cell_deriv
    }

    pub fn face_calls(&self) -> u64 {
        self.face_eval
    }

    pub fn merge(&mut self, o: &KernelTally) {
        self.cell_eval += o.cell_eval;
        self.cell_deriv += o.cell_deriv;
        self.face_eval += o.face_eval;
        self.flops += o.flops;
    }
}

/// Shared counter; tallies are merged once per element so parallel sweeps
/// only touch the atomics at task granularity.
#[derive(Debug, Default)]
pub struct KernelCounter {
    enabled: AtomicBool,
    cell_eval: AtomicU64,
    cell_deriv: AtomicU64,
    face_eval: AtomicU64,
    flops: AtomicU64,
}

impl KernelCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::Relaxed);
    }

    pub fn enabled(&self) -> bool {
        self.enabled.load(Ordering::Relaxed)
    }

    #[inline]
    pub fn merge(&self, t: &KernelTally) {
        if !self.enabled() {
            return;
        }
        self.cell_eval.fetch_add(t.cell_eval, Ordering::Relaxed);
        self.cell_deriv.fetch_add(t.cell_deriv, Ordering::Relaxed);
        self.face_eval.fetch_add(t.face_eval, Ordering::Relaxed);
        self.flops.fetch_add(t.flops, Ordering::Relaxed);
    }

    pub fn read(&self) -> KernelTally {
        KernelTally {
            cell_eval: self.cell_eval.load(Ordering::Relaxed),
            cell_deriv: self.cell_deriv.load(Ordering::Relaxed),
            face_eval: self.face_eval.load(Ordering::Relaxed),
            flops: self.flops.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.cell_eval.store(0, Ordering::Relaxed);
        self.cell_deriv.store(0, Ordering::Relaxed);
        self.face_eval.store(0, Ordering::Relaxed);
        self.flops.store(0, Ordering::Relaxed);
    }
}

/// Extents of a tensor with up to three directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub dim: usize,
    pub ext: [usize; 3],
}

impl Shape {
    pub fn cube(dim: usize, n: usize) -> Self {
        let mut ext = [1; 3];
        ext[..dim].fill(n);
        Shape { dim, ext }
    }

    pub fn len(&self) -> usize {
        self.ext[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with(&self, dir: usize, n: usize) -> Self {
        let mut s = *self;
        s.ext[dir] = n;
        s
    }
}

/// One line through a square matrix of compile-time size N.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn line_fixed<const N: usize>(
    m: &EvenOddMatrix,
    src: &[f64],
    s0: usize,
    ss: usize,
    dst: &mut [f64],
    d0: usize,
    ds: usize,
    add: bool,
) {
    let h = N.div_ceil(2);
    let f = N / 2;
    let eb = &m.even_block[..h * h];
    let ob = &m.odd_block[..h * f];
    let mut xe = [0.0f64; N];
    let mut xo = [0.0f64; N];
    for j in 0..f {
        let a = src[s0 + j * ss];
        let b = src[s0 + (N - 1 - j) * ss];
        xe[j] = a + b;
        xo[j] = a - b;
    }
    if N % 2 == 1 {
        xe[f] = src[s0 + f * ss];
    }
    for i in 0..h {
        let mut e = 0.0;
        for j in 0..h {
            e += eb[i * h + j] * xe[j];
        }
        let mut o = 0.0;
        for j in 0..f {
            o += ob[i * f + j] * xo[j];
        }
        let ih = N - 1 - i;
        if add {
            dst[d0 + i * ds] += e + o;
            if ih != i {
                dst[d0 + ih * ds] += m.parity * (e - o);
            }
        } else {
            dst[d0 + i * ds] = e + o;
            if ih != i {
                dst[d0 + ih * ds] = m.parity * (e - o);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn lines_fixed<const N: usize>(m: &EvenOddMatrix, src: &[f64], dst: &mut [f64], inner: usize, outer: usize, add: bool) {
    let block = inner * N;
    for o in 0..outer {
        let s = &src[o * block..(o + 1) * block];
        let d = &mut dst[o * block..(o + 1) * block];
        for i in 0..inner {
            line_fixed::<N>(m, s, i, inner, d, i, inner, add);
        }
    }
}

/// Raw kernel: applies `m` along `dir` of `src` (shape `shape`) into `dst`,
/// whose extent in `dir` is `m.rows`. Returns the number of lines processed.
#[inline]
pub fn apply_dir(m: &EvenOddMatrix, src: &[f64], shape: Shape, dir: usize, dst: &mut [f64], add: bool) -> usize {
    debug_assert_eq!(shape.ext[dir], m.cols);
    let inner: usize = shape.ext[..dir].iter().product();
    let outer: usize = shape.ext[dir + 1..shape.dim].iter().product();
    let in_block = inner * m.cols;
    let out_block = inner * m.rows;
    if m.rows == m.cols {
        macro_rules! fixed {
            ($($n:literal)*) => {
                match m.rows {
                    $($n => return { lines_fixed::<$n>(m, src, dst, inner, outer, add); inner * outer },)*
                    _ => {}
                }
            };
        }
        fixed!(1 2 3 4 5 6 7 8 9 10 11 12 13);
    }
    if inner == 1 {
        m.apply_lines(src, outer, m.cols, 1, dst, m.rows, 1, add);
    } else {
        for o in 0..outer {
            let s = &src[o * in_block..(o + 1) * in_block];
            let d = &mut dst[o * out_block..(o + 1) * out_block];
            m.apply_lines(s, inner, 1, inner, d, 1, inner, add);
        }
    }
    inner * outer
}

/// Kernel call with bookkeeping.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn kernel(
    m: &EvenOddMatrix,
    src: &[f64],
    shape: Shape,
    dir: usize,
    dst: &mut [f64],
    add: bool,
    class: KernelClass,
    tally: &mut KernelTally,
) -> Shape {
    let lines = apply_dir(m, src, shape, dir, dst, add);
    tally.record(class, lines, m.rows, m.cols);
    shape.with(dir, m.rows)
}

/// Applies the same square-or-rectangular matrix along every direction,
/// ping-ponging through `tmp`; result lands in `dst`.
pub fn apply_all_dirs(
    m: &EvenOddMatrix,
    src: &[f64],
    shape: Shape,
    dst: &mut [f64],
    tmp: &mut [f64],
    class: KernelClass,
    tally: &mut KernelTally,
) -> Shape {
    apply_per_dir(&[m, m, m][..shape.dim], src, shape, dst, tmp, class, tally)
}

/// Applies `mats[dir]` along each direction in turn, result in `dst`.
pub fn apply_per_dir(
    mats: &[&EvenOddMatrix],
    src: &[f64],
    shape: Shape,
    dst: &mut [f64],
    tmp: &mut [f64],
    class: KernelClass,
    tally: &mut KernelTally,
) -> Shape {
    let mut chain = [(mats[0], class); 3];
    for (c, m) in chain.iter_mut().zip(mats) {
        c.0 = m;
    }
    apply_chain(&chain[..shape.dim], src, shape, dst, tmp, tally)
}

/// Applies `chain[dir].0` along direction `dir` for every direction, each
/// call tallied under its own class. `dst` and `tmp` must hold the largest
/// intermediate tensor.
pub fn apply_chain(
    chain: &[(&EvenOddMatrix, KernelClass)],
    src: &[f64],
    shape: Shape,
    dst: &mut [f64],
    tmp: &mut [f64],
    tally: &mut KernelTally,
) -> Shape {
    match shape.dim {
        1 => kernel(chain[0].0, src, shape, 0, dst, false, chain[0].1, tally),
        2 => {
            let s = kernel(chain[0].0, src, shape, 0, tmp, false, chain[0].1, tally);
            kernel(chain[1].0, tmp, s, 1, dst, false, chain[1].1, tally)
        }
        3 => {
            let s = kernel(chain[0].0, src, shape, 0, dst, false, chain[0].1, tally);
            let s = kernel(chain[1].0, dst, s, 1, tmp, false, chain[1].1, tally);
            kernel(chain[2].0, tmp, s, 2, dst, false, chain[2].1, tally)
        }
        _ => unreachable!("dimension 1..=3"),
    }
}

/// Owned d-dimensional tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementTensor {
    pub values: Vec<f64>,
    pub shape: Shape,
}

impl ElementTensor {
    pub fn new(values: Vec<f64>, extents: &[usize]) -> Result<Self> {
        if extents.is_empty() || extents.len() > 3 {
            return Err(Error::Shape(format!("unsupported tensor rank {}", extents.len())));
        }
        let mut ext = [1; 3];
        ext[..extents.len()].copy_from_slice(extents);
        let shape = Shape {
            dim: extents.len(),
            ext,
        };
        if shape.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill extents {:?}",
                values.len(),
                extents
            )));
        }
        Ok(ElementTensor { values, shape })
    }

    pub fn extents(&self) -> &[usize] {
        &self.shape.ext[..self.shape.dim]
    }
}

/// Mode-`direction` product with the matrix.
pub fn apply_1d(
    matrix: &EvenOddMatrix,
    input: &ElementTensor,
    direction: usize,
    out_extent: usize,
) -> Result<ElementTensor> {
    if direction >= input.shape.dim {
        return Err(Error::Shape(format!("direction {direction} out of range")));
    }
    if matrix.cols != input.shape.ext[direction] || matrix.rows != out_extent {
        return Err(Error::Shape(format!(
            "{}x{} matrix cannot map extent {} to {} along direction {direction}",
            matrix.rows, matrix.cols, input.shape.ext[direction], out_extent
        )));
    }
    let out_shape = input.shape.with(direction, out_extent);
    let mut out = vec![0.0; out_shape.len()];
    apply_dir(matrix, &input.values, input.shape, direction, &mut out, false);
    Ok(ElementTensor {
        values: out,
        shape: out_shape,
    })
}

fn check_cube(t: &ElementTensor, n: usize, what: &str) -> Result<()> {
    if t.extents().iter().any(|&e| e != n) {
        return Err(Error::Shape(format!(
            "{what}: expected extent {n} in every direction, got {:?}",
            t.extents()
        )));
    }
    Ok(())
}

/// Values at the tensor Gauss points of a field given by GL coefficients
/// (d kernel calls).
pub fn interpolate_to_gauss(
    coeffs_gl: &ElementTensor,
    basis: &ElementBasis,
    tally: &mut KernelTally,
) -> Result<ElementTensor> {
    check_cube(coeffs_gl, basis.n, "interpolate_to_gauss")?;
    let shape = coeffs_gl.shape;
    let mut out = vec![0.0; shape.len()];
    let mut tmp = vec![0.0; shape.len()];
    apply_all_dirs(
        &basis.gl_to_g,
        &coeffs_gl.values,
        shape,
        &mut out,
        &mut tmp,
        KernelClass::CellEval,
        tally,
    );
    Ok(ElementTensor { values: out, shape })
}

/// Reference-coordinate partial derivatives of a Gauss-collocated field
/// (one kernel call per direction).
pub fn gradient_collocated(
    values_g: &ElementTensor,
    basis: &ElementBasis,
    tally: &mut KernelTally,
) -> Result<Vec<ElementTensor>> {
    let n = values_g.shape.ext[0];
    if n == 0 || n > basis.n {
        return Err(Error::Shape(format!("no collocation level with {n} points")));
    }
    check_cube(values_g, n, "gradient_collocated")?;
    let lvl = basis.level(n);
    Ok((0..values_g.shape.dim)
        .map(|dir| {
            let mut out = vec![0.0; values_g.shape.len()];
            kernel(
                &lvl.deriv,
                &values_g.values,
                values_g.shape,
                dir,
                &mut out,
                false,
                KernelClass::CellDeriv,
                tally,
            );
            ElementTensor {
                values: out,
                shape: values_g.shape,
            }
        })
        .collect())
}
