//! Analytic operation counts per element and time step.
//!
//! Kernel calls are counted per scalar component; FLOP figures cover all
//! `d + 1` components of one element.

use serde::Serialize;

use crate::basis::check_degree;
use crate::error::{Error, Result};
use crate::tck::{ReductionPolicy, TckPlan};

/// FLOPs of one even-odd tensor kernel with k+1 points over a
/// δ-dimensional tensor.
pub fn cost_tensorial(k: usize, delta: usize) -> u64 {
    let n = (k + 1) as u64;
    let fma = if k >= 1 { ((k - 1) * (k + 1) / 2) as u64 } else { 0 };
    (2 * n + n + 2 * fma) * n.pow(delta.saturating_sub(1) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct KernelCalls {
    pub cell: u64,
    pub face: u64,
}

impl std::ops::Add for KernelCalls {
    type Output = KernelCalls;
    fn add(self, o: KernelCalls) -> KernelCalls {
        KernelCalls {
            cell: self.cell + o.cell,
            face: self.face + o.face,
        }
    }
}

impl std::ops::Mul<u64> for KernelCalls {
    type Output = KernelCalls;
    fn mul(self, s: u64) -> KernelCalls {
        KernelCalls {
            cell: self.cell * s,
            face: self.face * s,
        }
    }
}

impl std::fmt::Display for KernelCalls {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.face == 0 {
            write!(f, "{} C", self.cell)
        } else {
            write!(f, "{} C + {} F", self.cell, self.face)
        }
    }
}

/// Kernel calls per scalar component for one application of each operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelCallTable {
    pub mass: KernelCalls,
    pub stiffness: KernelCalls,
    /// Taylor sum with k-1 derivative levels
    pub tck: KernelCalls,
}

fn check_dim(d: usize) -> Result<()> {
    if !(2..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {d}")));
    }
    Ok(())
}

pub fn kernel_call_table(k: usize, d: usize) -> Result<KernelCallTable> {
    check_degree(k)?;
    check_dim(d)?;
    let d = d as u64;
    Ok(KernelCallTable {
        mass: KernelCalls { cell: 2 * d, face: 0 },
        stiffness: KernelCalls {
            cell: d * d + 4 * d,
            face: 4 * (d * d - d),
        },
        tck: KernelCalls {
            cell: tck_calls(k, d, k as u64 - 1),
            face: 0,
        },
    })
}

fn tck_calls(_k: usize, d: u64, levels: u64) -> u64 {
    2 * d + d * levels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CostScheme {
    /// Taylor sum over k derivative levels fed through one K
    Ader,
    /// first derivative from the global operator, k-1 local levels
    AderHdg,
    Rk {
        stages: usize,
    },
}

impl CostScheme {
    /// Derivative levels of the local Taylor sum, if any.
    pub fn tck_levels(self, k: usize) -> Option<usize> {
        match self {
            CostScheme::Ader => Some(k),
            CostScheme::AderHdg => Some(k - 1),
            CostScheme::Rk { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub k: usize,
    pub d: usize,
    pub scheme: CostScheme,
    pub c_mass: u64,
    pub c_stiffness: u64,
    /// nominal Taylor sum without degree reduction
    pub c_tck: u64,
    /// Taylor sum with every-second degree reduction
    pub c_tck_reduced: u64,
    pub c_scheme_total: u64,
    /// total with the reduced Taylor sum
    pub c_scheme_total_reduced: u64,
    /// kernel calls per scalar component per time step
    pub calls: KernelCalls,
}

/// Taylor-sum FLOPs for all components of one element.
pub fn tck_cost(k: usize, d: usize, levels: usize, policy: ReductionPolicy) -> u64 {
    TckPlan::new(k, levels, policy).flops(d)
}

pub fn scheme_cost(k: usize, d: usize, scheme: CostScheme) -> Result<CostReport> {
    let table = kernel_call_table(k, d)?;
    let comps = (d + 1) as u64;
    let cell = cost_tensorial(k, d);
    let face = cost_tensorial(k, d - 1);
    let price = |c: KernelCalls| comps * (c.cell * cell + c.face * face);
    let c_mass = price(table.mass);
    let c_stiffness = price(table.stiffness);
    let (c_tck, c_tck_reduced, total, calls) = match scheme {
        CostScheme::Rk { stages } => {
            if stages == 0 {
                return Err(Error::InvalidArgument("RK scheme needs at least one stage".into()));
            }
            let s = stages as u64;
            (0, 0, s * (c_mass + c_stiffness), (table.mass + table.stiffness) * s)
        }
        CostScheme::Ader | CostScheme::AderHdg => {
            let levels = scheme.tck_levels(k).unwrap_or(0);
            let tck = KernelCalls {
                cell: tck_calls(k, d as u64, levels as u64),
                face: 0,
            };
            let c_tck = price(tck);
            let reduced = tck_cost(k, d, levels, ReductionPolicy::EverySecond);
            let (m, kk) = if scheme == CostScheme::Ader { (2, 1) } else { (3, 2) };
            let total = m * c_mass + kk * c_stiffness + c_tck;
            let calls = table.mass * m + table.stiffness * kk + tck;
            (c_tck, reduced, total, calls)
        }
    };
    Ok(CostReport {
        k,
        d,
        scheme,
        c_mass,
        c_stiffness,
        c_tck,
        c_tck_reduced,
        c_scheme_total: total,
        c_scheme_total_reduced: total - c_tck + c_tck_reduced,
        calls,
    })
}
