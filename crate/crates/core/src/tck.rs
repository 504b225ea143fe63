//! Taylor–Cauchy–Kowalevski evaluation: the element-local Taylor sum
//! sum_j c_j S^j u computed on collocated Gauss values, optionally with the
//! derivative fields projected to lower degree as the sum proceeds.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::{AcousticOperator, StateVector};
use crate::tensor::{apply_all_dirs, flops_per_line, KernelClass, KernelTally, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReductionPolicy {
    None,
    /// drop one degree after every derivative
    EveryStep,
    /// drop two degrees after every second derivative
    #[default]
    EverySecond,
    /// drop three degrees after every third derivative
    EveryThird,
}

impl ReductionPolicy {
    /// (period in derivative levels, degrees dropped)
    fn step(self) -> Option<(usize, usize)> {
        match self {
            ReductionPolicy::None => None,
            ReductionPolicy::EveryStep => Some((1, 1)),
            ReductionPolicy::EverySecond => Some((2, 2)),
            ReductionPolicy::EveryThird => Some((3, 3)),
        }
    }

    /// Gauss point counts at which geometry is needed for degree k.
    pub fn point_sets(self, k: usize) -> Vec<usize> {
        let mut v: Vec<usize> = TckPlan::new(k, k, self)
            .ops
            .iter()
            .filter_map(|op| match op {
                TckOp::Derive { n } => Some(*n),
                _ => None,
            })
            .collect();
        v.push(k + 1);
        v.sort_unstable_by(|a, b| b.cmp(a));
        v.dedup();
        v
    }
}

impl std::str::FromStr for ReductionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReductionPolicy::None),
            "every" | "every_step" => Ok(ReductionPolicy::EveryStep),
            "second" | "every_second" => Ok(ReductionPolicy::EverySecond),
            "third" | "every_third" => Ok(ReductionPolicy::EveryThird),
            _ => Err(Error::Config(format!("unknown reduction policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TckOp {
    /// acc[n] += c_j * current
    Accumulate { j: usize, n: usize },
    /// current = S current at n points
    Derive { n: usize },
    /// L2 projection of current to fewer points
    Project { from: usize, to: usize },
    /// acc[to] += interpolation of acc[from]
    Prolong { from: usize, to: usize },
}

/// The sequence of element-local operations for `levels` derivative levels
/// at degree k; shared by the evaluator and the cost model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TckPlan {
    pub k: usize,
    pub levels: usize,
    pub ops: Vec<TckOp>,
}

impl TckPlan {
    pub fn new(k: usize, levels: usize, policy: ReductionPolicy) -> Self {
        let mut n = k + 1;
        let mut ops = vec![TckOp::Accumulate { j: 0, n }];
        let mut sets = vec![n];
        for j in 1..=levels {
            if n == 1 {
                // derivatives of constants vanish
                break;
            }
            ops.push(TckOp::Derive { n });
            if let Some((period, drop)) = policy.step() {
                // a projection only pays off if another derivative follows
                if j % period == 0 && j < levels {
                    let to = n.saturating_sub(drop).max(1);
                    ops.push(TckOp::Project { from: n, to });
                    n = to;
                    sets.push(n);
                }
            }
            ops.push(TckOp::Accumulate { j, n });
        }
        for w in sets.windows(2).rev() {
            ops.push(TckOp::Prolong { from: w[1], to: w[0] });
        }
        TckPlan { k, levels, ops }
    }

    /// FLOPs of one element evaluation with `dim + 1` components, counting
    /// the basis change in and the weighted integration out.
    pub fn flops(&self, dim: usize) -> u64 {
        let n0 = self.k + 1;
        let comps = (dim + 1) as u64;
        let mut f = 2 * dim as u64 * square_kernel_flops(n0, dim);
        for op in &self.ops {
            f += match *op {
                TckOp::Accumulate { .. } => 0,
                TckOp::Derive { n } => dim as u64 * square_kernel_flops(n, dim),
                TckOp::Project { from, to } | TckOp::Prolong { from, to } => rect_flops(from, to, dim),
            };
        }
        comps * f
    }

    /// Kernel calls per scalar component.
    pub fn kernel_calls(&self, dim: usize) -> u64 {
        let per_op = self
            .ops
            .iter()
            .filter(|op| !matches!(op, TckOp::Accumulate { .. }))
            .count() as u64;
        (2 + per_op) * dim as u64
    }
}

fn square_kernel_flops(n: usize, dim: usize) -> u64 {
    n.pow(dim as u32 - 1) as u64 * flops_per_line(n, n)
}

/// All directions of an (n_to x n_from) matrix applied to an n_from^dim tensor.
fn rect_flops(from: usize, to: usize, dim: usize) -> u64 {
    (0..dim)
        .map(|l| (to.pow(l as u32) * from.pow((dim - 1 - l) as u32)) as u64 * flops_per_line(to, from))
        .sum()
}

/// Taylor weights of the plain scheme: c_j = (-1)^j dt^(j+1) / (j+1)!, j = 0..=levels.
pub fn ader_coefficients(dt: f64, levels: usize) -> Vec<f64> {
    let mut c = Vec::with_capacity(levels + 1);
    let mut term = dt;
    for j in 0..=levels {
        c.push(term);
        term *= -dt / (j + 2) as f64;
    }
    c
}

/// Weights of the shifted sum applied to W = M^{-1} K U:
/// c'_m = (-1)^(m+1) dt^(m+2) / (m+2)!, m = 0..=levels.
pub fn ader_hdg_coefficients(dt: f64, levels: usize) -> Vec<f64> {
    ader_coefficients(dt, levels + 1)[1..].to_vec()
}

struct TckScratch {
    cur: Vec<f64>,
    nxt: Vec<f64>,
    grads: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// acc[n], `(dim+1) * n^dim` values each
    acc: Vec<Vec<f64>>,
}

impl TckScratch {
    fn new(dim: usize, n: usize) -> Self {
        let nq = n.pow(dim as u32);
        let comps = dim + 1;
        TckScratch {
            cur: vec![0.0; comps * nq],
            nxt: vec![0.0; comps * nq],
            grads: vec![0.0; comps * dim * nq],
            a: vec![0.0; nq],
            b: vec![0.0; nq],
            acc: (0..=n).map(|m| vec![0.0; comps * m.pow(dim as u32)]).collect(),
        }
    }
}

/// Returns M sum_j coeffs[j] S^j U, element by element, in GL test-function
/// layout. `coeffs.len() - 1` derivative levels are taken.
pub fn tck_evaluate(
    op: &AcousticOperator,
    state: &StateVector,
    coeffs: &[f64],
    policy: ReductionPolicy,
) -> Result<StateVector> {
    let mut out = op.zero_state();
    tck_evaluate_into(op, state, coeffs, policy, &mut out)?;
    Ok(out)
}

pub fn tck_evaluate_into(
    op: &AcousticOperator,
    state: &StateVector,
    coeffs: &[f64],
    policy: ReductionPolicy,
    out: &mut StateVector,
) -> Result<()> {
    op.check_state(state)?;
    op.applications.tck.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    if coeffs.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one Taylor coefficient is required".into(),
        ));
    }
    let plan = TckPlan::new(op.k(), coeffs.len() - 1, policy);
    for o in &plan.ops {
        if let TckOp::Derive { n } = o {
            op.geometry.cell(*n)?;
        }
    }
    if !out.same_layout(state) {
        *out = op.zero_state();
    }
    out.basis = state.basis;
    let dim = op.dim();
    let n0 = op.k() + 1;
    let comps = dim + 1;
    let nq0 = n0.pow(dim as u32);
    let basis = &op.basis;
    let geo = op.geometry.main();
    let failed = std::sync::atomic::AtomicBool::new(false);
    op.install(|| {
        out.data.par_chunks_mut(comps * nq0).enumerate().for_each_init(
            || TckScratch::new(dim, n0),
            |s, (e, o)| {
                let mut t = KernelTally::default();
                let u = state.element(e);
                let shape0 = Shape::cube(dim, n0);
                for c in 0..comps {
                    apply_all_dirs(
                        &basis.gl_to_g,
                        &u[c * nq0..(c + 1) * nq0],
                        shape0,
                        &mut s.cur[c * nq0..(c + 1) * nq0],
                        &mut s.a,
                        KernelClass::CellEval,
                        &mut t,
                    );
                }
                let mut first_touch = [true; crate::basis::MAX_DEGREE + 2];
                for step in &plan.ops {
                    match *step {
                        TckOp::Accumulate { j, n } => {
                            let len = comps * n.pow(dim as u32);
                            let acc = &mut s.acc[n][..len];
                            if std::mem::take(&mut first_touch[n]) {
                                for (a, x) in acc.iter_mut().zip(&s.cur[..len]) {
                                    *a = coeffs[j] * x;
                                }
                            } else {
                                for (a, x) in acc.iter_mut().zip(&s.cur[..len]) {
                                    *a += coeffs[j] * x;
                                }
                            }
                        }
                        TckOp::Derive { n } => {
                            if op.local_s_into(e, n, &s.cur, &mut s.nxt, &mut s.grads, &mut t).is_err() {
                                failed.store(true, std::sync::atomic::Ordering::Relaxed);
                                return;
                            }
                            std::mem::swap(&mut s.cur, &mut s.nxt);
                        }
                        TckOp::Project { from, to } => {
                            let (nf, nt) = (from.pow(dim as u32), to.pow(dim as u32));
                            for c in 0..comps {
                                apply_all_dirs(
                                    basis.projection(from, to),
                                    &s.cur[c * nf..(c + 1) * nf],
                                    Shape::cube(dim, from),
                                    &mut s.b,
                                    &mut s.a,
                                    KernelClass::CellEval,
                                    &mut t,
                                );
                                // intermediates exceed the target size, so go through b
                                s.nxt[c * nt..(c + 1) * nt].copy_from_slice(&s.b[..nt]);
                            }
                            std::mem::swap(&mut s.cur, &mut s.nxt);
                        }
                        TckOp::Prolong { from, to } => {
                            let (nf, nt) = (from.pow(dim as u32), to.pow(dim as u32));
                            for c in 0..comps {
                                apply_all_dirs(
                                    basis.prolongation(from, to),
                                    &s.acc[from][c * nf..(c + 1) * nf],
                                    Shape::cube(dim, from),
                                    &mut s.b[..nt],
                                    &mut s.a,
                                    KernelClass::CellEval,
                                    &mut t,
                                );
                                for (a, x) in s.acc[to][c * nt..(c + 1) * nt].iter_mut().zip(&s.b[..nt]) {
                                    *a += x;
                                }
                            }
                        }
                    }
                }
                let jxw = geo.jxw_of(e);
                for c in 0..comps {
                    let acc = &mut s.acc[n0][c * nq0..(c + 1) * nq0];
                    for (a, w) in acc.iter_mut().zip(jxw) {
                        *a *= w;
                    }
                    apply_all_dirs(
                        &basis.gl_to_g_t,
                        acc,
                        shape0,
                        &mut o[c * nq0..(c + 1) * nq0],
                        &mut s.a,
                        KernelClass::CellEval,
                        &mut t,
                    );
                }
                op.counter.merge(&t);
            },
        )
    });
    if failed.into_inner() {
        return Err(Error::Config("geometry for a reduced Gauss set is missing".into()));
    }
    Ok(())
}
