//! Explicit time integration of M dU/dt = -K U: Butcher-tableau Runge–Kutta,
//! two-register low-storage Runge–Kutta, and ADER with the local Taylor sum.

use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostScheme;
use crate::error::{Error, Result};
use crate::mesh::{Material, Mesh};
use crate::operator::{AcousticOperator, StateVector};
use crate::tck::{ader_coefficients, ader_hdg_coefficients, tck_evaluate_into, ReductionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SchemeKind {
    Rk4Classic,
    Lsrk45,
    Lsrk59,
    Ader,
    AderHdg,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Rk4Classic,
        SchemeKind::Lsrk45,
        SchemeKind::Lsrk59,
        SchemeKind::Ader,
        SchemeKind::AderHdg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Rk4Classic => "rk4",
            SchemeKind::Lsrk45 => "lsrk45",
            SchemeKind::Lsrk59 => "lsrk59",
            SchemeKind::Ader => "ader",
            SchemeKind::AderHdg => "ader-hdg",
        }
    }

    pub fn cost_scheme(self) -> CostScheme {
        match self {
            SchemeKind::Rk4Classic => CostScheme::Rk { stages: 4 },
            SchemeKind::Lsrk45 => CostScheme::Rk { stages: 5 },
            SchemeKind::Lsrk59 => CostScheme::Rk { stages: 9 },
            SchemeKind::Ader => CostScheme::Ader,
            SchemeKind::AderHdg => CostScheme::AderHdg,
        }
    }

    pub fn is_ader(self) -> bool {
        matches!(self, SchemeKind::Ader | SchemeKind::AderHdg)
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" | "rk4_classic" => Ok(SchemeKind::Rk4Classic),
            "lsrk45" => Ok(SchemeKind::Lsrk45),
            "lsrk59" => Ok(SchemeKind::Lsrk59),
            "ader" => Ok(SchemeKind::Ader),
            "ader-hdg" | "ader_hdg" => Ok(SchemeKind::AderHdg),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    pub courant: f64,
    pub degree_reduction: ReductionPolicy,
    pub merged_vector_update: bool,
}

impl SchemeConfig {
    pub fn new(scheme: SchemeKind, courant: f64) -> Result<Self> {
        if !(courant > 0.0 && courant.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Courant number must be positive, got {courant}"
            )));
        }
        Ok(SchemeConfig {
            scheme,
            courant,
            degree_reduction: ReductionPolicy::EverySecond,
            merged_vector_update: true,
        })
    }
}

impl Serialize for ReductionPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            ReductionPolicy::None => "none",
            ReductionPolicy::EveryStep => "every",
            ReductionPolicy::EverySecond => "second",
            ReductionPolicy::EveryThird => "third",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let s = b.len();
        if a.len() != s || a.iter().enumerate().any(|(j, row)| row.len() != j) {
            return Err(Error::InvalidArgument(
                "tableau must be explicit (strictly lower triangular)".into(),
            ));
        }
        if (b.iter().sum::<f64>() - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidArgument("tableau weights must sum to one".into()));
        }
        let c = a.iter().map(|row| row.iter().sum()).collect();
        Ok(ButcherTableau { a, b, c })
    }

    pub fn classic_rk4() -> Self {
        Self::new(
            vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        )
        .expect("classic tableau is valid")
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Two-register scheme of Kennedy, Carpenter and Lewis: per stage
/// K = f(r); r = u + a_i dt K; u += b_i dt K.
#[derive(Debug, Clone, PartialEq)]
pub struct LowStorageScheme {
    /// subdiagonal coefficients, one fewer than stages
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: usize,
}

impl LowStorageScheme {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// RK4(3)5[2R+]C
    pub fn lsrk45() -> Self {
        LowStorageScheme {
            a: vec![
                970286171893.0 / 4311952581923.0,
                6584761158862.0 / 12103376702013.0,
                2251764453980.0 / 15575788980749.0,
                26877169314380.0 / 34165994151039.0,
            ],
            b: vec![
                1153189308089.0 / 22510343858157.0,
                1772645290293.0 / 4653164025191.0,
                -1672844663538.0 / 4480602732383.0,
                2114624349019.0 / 3568978502595.0,
                5198255086312.0 / 14908931495163.0,
            ],
            c: vec![
                0.0,
                0.225_022_458_725_713_03,
                0.595_272_619_591_743_9,
                0.576_752_375_860_735_7,
                0.845_495_878_172_714_4,
            ],
            order: 4,
        }
    }

    /// RK5(4)9[2R+]S
    pub fn lsrk59() -> Self {
        LowStorageScheme {
            a: vec![
                1107026461565.0 / 5417078080134.0,
                38141181049399.0 / 41724347789894.0,
                493273079041.0 / 11940823631197.0,
                1851571280403.0 / 6147804934346.0,
                11782306865191.0 / 62590030070788.0,
                9452544825720.0 / 13648368537481.0,
                4435885630781.0 / 26285702406235.0,
                2357909744247.0 / 11371140753790.0,
            ],
            b: vec![
                2274579626619.0 / 23610510767302.0,
                693987741272.0 / 12394497460941.0,
                -347131529483.0 / 15096185902911.0,
                1144057200723.0 / 32081666971178.0,
                1562491064753.0 / 11797114684756.0,
                13113619727965.0 / 44346030145118.0,
                393957816125.0 / 7825732611452.0,
                720647959663.0 / 6565743875477.0,
                3559252274877.0 / 14424734981077.0,
            ],
            c: vec![
                0.0,
                0.204_358_594_280_704_2,
                1.010_460_468_593_480_4,
                0.193_638_990_016_610_8,
                0.430_510_532_192_718_34,
                0.353_241_058_507_320_4,
                0.990_019_099_755_157_5,
                0.761_910_034_343_581_2,
                0.850_853_893_487_101_3,
            ],
            order: 5,
        }
    }

    /// Equivalent Butcher tableau, for order checks.
    pub fn to_butcher(&self) -> ButcherTableau {
        let s = self.stages();
        let mut a = vec![vec![]; s];
        for (i, row) in a.iter_mut().enumerate().skip(1) {
            *row = (0..i)
                .map(|j| if j == i - 1 { self.a[i - 1] } else { self.b[j] })
                .collect();
        }
        ButcherTableau::new(a, self.b.clone()).expect("low-storage tableau is explicit")
    }
}

/// dt = Cr h_min / (c_max k^1.5).
pub fn compute_dt(courant: f64, mesh: &Mesh, material: &Material, k: usize) -> Result<f64> {
    dt_from(courant, mesh.h_min(), material.c_max(), k)
}

pub fn dt_from(courant: f64, h_min: f64, c_max: f64, k: usize) -> Result<f64> {
    if !(courant > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Courant number must be positive, got {courant}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("degree must be at least 1".into()));
    }
    Ok(courant * h_min / (c_max * (k as f64).powf(1.5)))
}

/// Reusable registers for stepping one operator with one scheme.
pub struct Stepper<'a> {
    pub op: &'a AcousticOperator,
    pub config: SchemeConfig,
    tableau: Option<ButcherTableau>,
    low_storage: Option<LowStorageScheme>,
    registers: Vec<StateVector>,
}

impl<'a> Stepper<'a> {
    pub fn new(op: &'a AcousticOperator, config: SchemeConfig) -> Result<Self> {
        let k = op.k();
        let (tableau, low_storage, n_reg) = match config.scheme {
            SchemeKind::Rk4Classic => (Some(ButcherTableau::classic_rk4()), None, 1 + 4),
            SchemeKind::Lsrk45 => (None, Some(LowStorageScheme::lsrk45()), 2),
            SchemeKind::Lsrk59 => (None, Some(LowStorageScheme::lsrk59()), 2),
            SchemeKind::Ader => (None, None, 2),
            SchemeKind::AderHdg => (None, None, 3),
        };
        if config.scheme.is_ader() {
            let levels = config.scheme.cost_scheme().tck_levels(k).unwrap_or(0);
            for n in crate::tck::TckPlan::new(k, levels, config.degree_reduction)
                .ops
                .iter()
                .filter_map(|o| match o {
                    crate::tck::TckOp::Derive { n } => Some(*n),
                    _ => None,
                })
            {
                op.geometry.cell(n)?;
            }
        }
        Ok(Stepper {
            op,
            config,
            tableau,
            low_storage,
            registers: (0..n_reg).map(|_| op.zero_state()).collect(),
        })
    }

    /// Number of state-sized vectors held besides the solution itself.
    pub fn register_count(&self) -> usize {
        self.registers.len()
    }

    pub fn dt(&self) -> Result<f64> {
        compute_dt(self.config.courant, &self.op.mesh, &self.op.material, self.op.k())
    }

    pub fn step(&mut self, u: &mut StateVector, dt: f64) -> Result<()> {
        self.op.check_state(u)?;
        match self.config.scheme {
            SchemeKind::Rk4Classic => {
                let t = self.tableau.clone().expect("tableau");
                rk_step_with(self.op, u, dt, &t, &mut self.registers)
            }
            SchemeKind::Lsrk45 | SchemeKind::Lsrk59 => {
                let s = self.low_storage.as_ref().expect("scheme");
                let (r, rest) = self.registers.split_at_mut(1);
                lsrk_step_with(
                    self.op,
                    u,
                    dt,
                    s,
                    self.config.merged_vector_update,
                    &mut r[0],
                    &mut rest[0],
                )
            }
            SchemeKind::Ader | SchemeKind::AderHdg => ader_step_with(
                self.op,
                u,
                dt,
                self.config.scheme,
                self.config.degree_reduction,
                &mut self.registers,
            ),
        }
    }

    /// Advances `steps` steps of size dt, failing on non-finite values.
    pub fn run(&mut self, u: &mut StateVector, dt: f64, steps: usize) -> Result<()> {
        for i in 0..steps {
            self.step(u, dt)?;
            if (i + 1) % 64 == 0 && !u.is_finite() {
                return Err(Error::Numerical(format!("non-finite state after {} steps", i + 1)));
            }
        }
        if !u.is_finite() {
            return Err(Error::Numerical("non-finite state".into()));
        }
        Ok(())
    }
}

/// out = M^{-1} K x, evaluated as K then the inverse mass in place.
fn minv_k(op: &AcousticOperator, x: &StateVector, out: &mut StateVector) -> Result<()> {
    op.apply_k(x, out)?;
    op.apply_inverse_mass_in_place(out)
}

fn rk_step_with(
    op: &AcousticOperator,
    u: &mut StateVector,
    dt: f64,
    t: &ButcherTableau,
    regs: &mut [StateVector],
) -> Result<()> {
    let s = t.stages();
    let (stage, ks) = regs.split_at_mut(1);
    let stage = &mut stage[0];
    // ks[j] holds M^{-1} K of stage j, so the stage derivative is -ks[j]
    for j in 0..s {
        stage.data.copy_from_slice(&u.data);
        for (l, &a) in t.a[j].iter().enumerate() {
            if a != 0.0 {
                stage.axpy(-dt * a, &ks[l]);
            }
        }
        minv_k(op, stage, &mut ks[j])?;
    }
    for (j, &b) in t.b.iter().enumerate() {
        u.axpy(-dt * b, &ks[j]);
    }
    Ok(())
}

/// One explicit Runge–Kutta step with a general tableau.
pub fn rk_step(op: &AcousticOperator, state: &StateVector, dt: f64, t: &ButcherTableau) -> Result<StateVector> {
    let mut u = state.clone();
    let mut regs: Vec<StateVector> = (0..=t.stages()).map(|_| op.zero_state()).collect();
    rk_step_with(op, &mut u, dt, t, &mut regs)?;
    Ok(u)
}

#[allow(clippy::too_many_arguments)]
fn lsrk_step_with(
    op: &AcousticOperator,
    u: &mut StateVector,
    dt: f64,
    s: &LowStorageScheme,
    merged: bool,
    r: &mut StateVector,
    kbuf: &mut StateVector,
) -> Result<()> {
    let stages = s.stages();
    r.data.copy_from_slice(&u.data);
    for i in 0..stages {
        op.apply_k(r, kbuf)?;
        // the stage derivative is -M^{-1} K r
        let bdt = -s.b[i] * dt;
        let last = i + 1 == stages;
        let adt = if last { 0.0 } else { -s.a[i] * dt };
        if merged {
            op.inverse_mass_lsrk_update(kbuf, u, (!last).then_some(&mut *r), bdt, adt)?;
        } else {
            op.apply_inverse_mass_in_place(kbuf)?;
            if !last {
                r.data
                    .par_iter_mut()
                    .zip(u.data.par_iter())
                    .zip(kbuf.data.par_iter())
                    .for_each(|((y, x), g)| *y = *x + adt * g);
            }
            u.data
                .par_iter_mut()
                .zip(kbuf.data.par_iter())
                .for_each(|(x, g)| *x += bdt * g);
        }
    }
    Ok(())
}

/// One low-storage Runge–Kutta step.
pub fn lsrk_step(
    op: &AcousticOperator,
    state: &StateVector,
    dt: f64,
    scheme: &LowStorageScheme,
    merged: bool,
) -> Result<StateVector> {
    let mut u = state.clone();
    let mut r = op.zero_state();
    let mut k = op.zero_state();
    lsrk_step_with(op, &mut u, dt, scheme, merged, &mut r, &mut k)?;
    Ok(u)
}

fn ader_step_with(
    op: &AcousticOperator,
    u: &mut StateVector,
    dt: f64,
    variant: SchemeKind,
    policy: ReductionPolicy,
    regs: &mut [StateVector],
) -> Result<()> {
    let k = op.k();
    match variant {
        SchemeKind::Ader => {
            let (t, rest) = regs.split_at_mut(1);
            let (t, g) = (&mut t[0], &mut rest[0]);
            tck_evaluate_into(op, u, &ader_coefficients(dt, k), policy, t)?;
            op.apply_inverse_mass_in_place(t)?;
            minv_k(op, t, g)?;
            u.axpy(-1.0, g);
        }
        SchemeKind::AderHdg => {
            let (w, rest) = regs.split_at_mut(1);
            let (t, g) = rest.split_at_mut(1);
            let (w, t, g) = (&mut w[0], &mut t[0], &mut g[0]);
            minv_k(op, u, w)?;
            tck_evaluate_into(op, w, &ader_hdg_coefficients(dt, k - 1), policy, t)?;
            op.apply_inverse_mass_in_place(t)?;
            minv_k(op, t, g)?;
            u.data
                .par_iter_mut()
                .zip(w.data.par_iter().zip(g.data.par_iter()))
                .for_each(|(x, (wi, gi))| *x -= dt * wi + gi);
        }
        _ => return Err(Error::InvalidArgument(format!("{variant} is not an ADER variant"))),
    }
    Ok(())
}

/// One ADER step; `variant` is [`SchemeKind::Ader`] or [`SchemeKind::AderHdg`].
pub fn ader_step(
    op: &AcousticOperator,
    state: &StateVector,
    dt: f64,
    variant: SchemeKind,
    policy: ReductionPolicy,
) -> Result<StateVector> {
    let mut u = state.clone();
    let mut regs: Vec<StateVector> = (0..3).map(|_| op.zero_state()).collect();
    ader_step_with(op, &mut u, dt, variant, policy, &mut regs)?;
    Ok(u)
}

/// Parameters of the critical Courant number search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CourantSearch {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub steps: usize,
    pub growth_limit: f64,
}

impl Default for CourantSearch {
    fn default() -> Self {
        CourantSearch {
            lower: 0.01,
            upper: 2.0,
            width: 0.01,
            steps: 1000,
            growth_limit: 10.0,
        }
    }
}

/// Whether `steps` steps at Courant number `courant` keep the state norm
/// within `growth_limit` times its initial value. Stops early once the bound
/// is exceeded.
pub fn is_stable(
    op: &AcousticOperator,
    config: SchemeConfig,
    initial: &StateVector,
    search: &CourantSearch,
) -> Result<bool> {
    let mut stepper = Stepper::new(op, config)?;
    let dt = stepper.dt()?;
    let n0 = initial.norm();
    let mut u = initial.clone();
    for i in 0..search.steps {
        stepper.step(&mut u, dt)?;
        if (i + 1) % 20 == 0 || i + 1 == search.steps {
            let n = u.norm();
            if !n.is_finite() || n > search.growth_limit * n0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Bisection for the largest stable Courant number.
pub fn find_critical_courant(
    op: &AcousticOperator,
    config: SchemeConfig,
    initial: &StateVector,
    search: &CourantSearch,
) -> Result<f64> {
    let with = |cr: f64| SchemeConfig { courant: cr, ..config };
    if !is_stable(op, with(search.lower), initial, search)? {
        return Err(Error::Search(format!(
            "unstable already at Courant number {}",
            search.lower
        )));
    }
    if is_stable(op, with(search.upper), initial, search)? {
        return Err(Error::Search(format!(
            "no instability found up to Courant number {}",
            search.upper
        )));
    }
    let (mut lo, mut hi) = (search.lower, search.upper);
    while hi - lo > search.width {
        let mid = 0.5 * (lo + hi);
        if is_stable(op, with(mid), initial, search)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
