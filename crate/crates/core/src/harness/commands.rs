//! Harness commands. Every command returns flat records sharing one CSV
//! header plus a short human-readable summary.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::cost::{scheme_cost, tck_cost};
use crate::error::{Error, Result};
use crate::harness::analytic::{interpolate_initial, l2_pressure_error, ModeSolution};
use crate::harness::config::{Command, RunConfig};
use crate::operator::AcousticOperator;
use crate::tck::ReductionPolicy;
use crate::time::{compute_dt, find_critical_courant, CourantSearch, SchemeKind, Stepper};

pub const CSV_HEADER: &str =
    "command,dim,degree,elements,scheme,courant,steps,dofs,wall_s,dofs_per_s,model_flops,l2_err,cr_crit";

/// One measurement. `model_flops` covers all elements and the `steps`
/// reported; for `opcount` rows it is per element and step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub command: String,
    pub dim: usize,
    pub degree: usize,
    pub elements: Option<usize>,
    pub scheme: Option<String>,
    pub courant: Option<f64>,
    pub steps: Option<u64>,
    pub dofs: Option<u64>,
    pub wall_s: Option<f64>,
    pub dofs_per_s: Option<f64>,
    pub model_flops: Option<u64>,
    pub l2_err: Option<f64>,
    pub cr_crit: Option<f64>,
}

impl BenchRecord {
    fn new(command: Command, dim: usize, degree: usize) -> Self {
        BenchRecord {
            command: command.name().to_string(),
            dim,
            degree,
            elements: None,
            scheme: None,
            courant: None,
            steps: None,
            dofs: None,
            wall_s: None,
            dofs_per_s: None,
            model_flops: None,
            l2_err: None,
            cr_crit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<BenchRecord>,
    pub summary: String,
}

/// Model FLOPs of one time step of one element under the given reduction.
pub fn model_flops_per_element(k: usize, d: usize, scheme: SchemeKind, policy: ReductionPolicy) -> Result<u64> {
    let r = scheme_cost(k, d, scheme.cost_scheme())?;
    Ok(match scheme.cost_scheme().tck_levels(k) {
        Some(levels) => r.c_scheme_total - r.c_tck + tck_cost(k, d, levels, policy),
        None => r.c_scheme_total,
    })
}

/// Pairwise orders log2(e_coarse / e_fine).
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn mode_of(cfg: &RunConfig) -> Result<ModeSolution> {
    ModeSolution::new(cfg.dim, cfg.mode, cfg.c, cfg.rho)
}

/// Runs the mode problem to `end_time` on an `elements`^d mesh; the step is
/// shortened so that an integer number of steps lands on the end time.
pub fn simulate(cfg: &RunConfig, op: &AcousticOperator, scheme: SchemeKind, command: Command) -> Result<BenchRecord> {
    let sol = mode_of(cfg)?;
    let dt_max = compute_dt(cfg.courant, &op.mesh, &op.material, op.k())?;
    let steps = (cfg.end_time / dt_max - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.end_time / steps as f64;
    let mut u = interpolate_initial(op, &sol, 0.0);
    let mut stepper = Stepper::new(op, cfg.scheme_config(scheme, cfg.courant)?)?;
    let start = Instant::now();
    stepper.run(&mut u, dt, steps)?;
    let wall = start.elapsed().as_secs_f64();
    let err = l2_pressure_error(op, &u, &sol, cfg.end_time)?;
    if !err.is_finite() {
        return Err(Error::Numerical("non-finite pressure error".into()));
    }
    let per_el = model_flops_per_element(op.k(), op.dim(), scheme, cfg.reduction)?;
    let mut r = BenchRecord::new(command, op.dim(), op.k());
    r.elements = Some(op.n_elements());
    r.scheme = Some(scheme.name().to_string());
    r.courant = Some(cfg.courant);
    r.steps = Some(steps as u64);
    r.dofs = Some(op.n_dofs() as u64);
    r.wall_s = Some(wall);
    r.dofs_per_s = Some(op.n_dofs() as f64 * steps as f64 / wall.max(1e-12));
    r.model_flops = Some(per_el * op.n_elements() as u64 * steps as u64);
    r.l2_err = Some(err);
    Ok(r)
}

pub fn cmd_run(cfg: &RunConfig) -> Result<Report> {
    let op = cfg.build_operator(cfg.elements)?;
    let mut records = Vec::new();
    let mut summary = String::new();
    for &s in &cfg.schemes {
        let r = simulate(cfg, &op, s, Command::Run)?;
        summary += &format!(
            "{s}: {} steps, L2 pressure error {:.3e}, {:.3} s\n",
            r.steps.unwrap_or(0),
            r.l2_err.unwrap_or(f64::NAN),
            r.wall_s.unwrap_or(0.0)
        );
        records.push(r);
    }
    Ok(Report { records, summary })
}

pub fn cmd_convergence(cfg: &RunConfig) -> Result<Report> {
    let mut records = Vec::new();
    let mut summary = String::new();
    for &s in &cfg.schemes {
        let mut errs = Vec::new();
        summary += &format!(
            "{s}, degree {}:\n  elements        dofs     L2 error   order\n",
            cfg.degree
        );
        for level in 0..cfg.levels {
            let n = cfg.elements << level;
            let op = cfg.build_operator(n)?;
            let r = simulate(cfg, &op, s, Command::Convergence)?;
            let e = r.l2_err.unwrap_or(f64::NAN);
            let order = errs
                .last()
                .map(|&p: &f64| format!("{:.2}", (p / e).log2()))
                .unwrap_or_default();
            summary += &format!("  {:>8} {:>11} {:>12.4e} {:>7}\n", n, op.n_dofs(), e, order);
            errs.push(e);
            records.push(r);
        }
    }
    Ok(Report { records, summary })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Wall time of `steps` steps, median over `repeats` runs after `warmup`
/// steps.
pub fn time_steps(op: &AcousticOperator, cfg: &RunConfig, scheme: SchemeKind, steps: usize) -> Result<(f64, u64)> {
    let sol = mode_of(cfg)?;
    let mut u = interpolate_initial(op, &sol, 0.0);
    let mut stepper = Stepper::new(op, cfg.scheme_config(scheme, cfg.courant)?)?;
    let dt = stepper.dt()?;
    op.counter.set_enabled(false);
    stepper.run(&mut u, dt, cfg.warmup)?;
    let mut times = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        stepper.run(&mut u, dt, steps)?;
        times.push(start.elapsed().as_secs_f64());
    }
    // one counted step for the kernel FLOP tally
    op.counter.reset();
    op.counter.set_enabled(true);
    stepper.step(&mut u, dt)?;
    let counted = op.counter.read().flops;
    op.counter.set_enabled(false);
    Ok((median(times), counted))
}

pub fn cmd_throughput(cfg: &RunConfig) -> Result<Report> {
    let op = cfg.build_operator(cfg.elements)?;
    let steps = cfg.steps.unwrap_or(100);
    let mut records = Vec::new();
    let mut summary = format!(
        "{}D, degree {}, {} elements, {} dofs, {} steps (median of {})\n",
        cfg.dim,
        cfg.degree,
        op.n_elements(),
        op.n_dofs(),
        steps,
        cfg.repeats
    );
    for &s in &cfg.schemes {
        let (wall, counted) = time_steps(&op, cfg, s, steps)?;
        let per_el = model_flops_per_element(op.k(), op.dim(), s, cfg.reduction)?;
        let mut r = BenchRecord::new(Command::Throughput, op.dim(), op.k());
        r.elements = Some(op.n_elements());
        r.scheme = Some(s.name().to_string());
        r.courant = Some(cfg.courant);
        r.steps = Some(steps as u64);
        r.dofs = Some(op.n_dofs() as u64);
        r.wall_s = Some(wall);
        r.dofs_per_s = Some(op.n_dofs() as f64 * steps as f64 / wall.max(1e-12));
        r.model_flops = Some(per_el * op.n_elements() as u64 * steps as u64);
        summary += &format!(
            "  {:<9} {:>10.4e} s/step {:>10.3e} dofs/s  kernel FLOPs/step {} (model {})\n",
            s.name(),
            wall / steps as f64,
            r.dofs_per_s.unwrap_or(0.0),
            counted,
            per_el * op.n_elements() as u64
        );
        records.push(r);
    }
    Ok(Report { records, summary })
}

pub fn cmd_opcount(cfg: &RunConfig) -> Result<Report> {
    let mut records = Vec::new();
    let mut summary =
        String::from(" d  k        C_M        C_K   C_TCK(k-1) C_TCK(k-1,red)     ADER  ADER-HDG   RK(s=5)  ADER<RK\n");
    let schemes = [
        SchemeKind::Ader,
        SchemeKind::AderHdg,
        SchemeKind::Lsrk45,
        SchemeKind::Lsrk59,
        SchemeKind::Rk4Classic,
    ];
    for d in 2..=3 {
        for k in 1..=crate::basis::MAX_DEGREE {
            let hdg = scheme_cost(k, d, crate::cost::CostScheme::AderHdg)?;
            let ader = model_flops_per_element(k, d, SchemeKind::Ader, ReductionPolicy::None)?;
            let rk5 = model_flops_per_element(k, d, SchemeKind::Lsrk45, ReductionPolicy::None)?;
            summary += &format!(
                "{:>2} {:>2} {:>10} {:>10} {:>12} {:>14} {:>8} {:>9} {:>9}  {}\n",
                d,
                k,
                hdg.c_mass,
                hdg.c_stiffness,
                hdg.c_tck,
                hdg.c_tck_reduced,
                ader,
                hdg.c_scheme_total,
                rk5,
                if ader < rk5 && hdg.c_scheme_total < rk5 {
                    "yes"
                } else {
                    "no"
                }
            );
            for s in schemes {
                let mut r = BenchRecord::new(Command::Opcount, d, k);
                r.scheme = Some(s.name().to_string());
                r.model_flops = Some(model_flops_per_element(k, d, s, cfg.reduction)?);
                records.push(r);
            }
        }
    }
    let t = crate::cost::kernel_call_table(cfg.degree, 3)?;
    summary += &format!(
        "kernel calls per component, d=3, k={}: M^-1 {}, K {}, TCK {}\n",
        cfg.degree, t.mass, t.stiffness, t.tck
    );
    Ok(Report { records, summary })
}

pub fn cmd_courant(cfg: &RunConfig) -> Result<Report> {
    let op = cfg.build_operator(cfg.elements)?;
    let sol = mode_of(cfg)?;
    let initial = interpolate_initial(&op, &sol, 0.0);
    let mut search = CourantSearch::default();
    if let Some(s) = cfg.steps {
        search.steps = s;
    }
    let mut records = Vec::new();
    let mut summary = String::new();
    for &s in &cfg.schemes {
        let start = Instant::now();
        let cr = find_critical_courant(&op, cfg.scheme_config(s, cfg.courant)?, &initial, &search)?;
        let mut r = BenchRecord::new(Command::Courant, op.dim(), op.k());
        r.elements = Some(op.n_elements());
        r.scheme = Some(s.name().to_string());
        r.steps = Some(search.steps as u64);
        r.dofs = Some(op.n_dofs() as u64);
        r.wall_s = Some(start.elapsed().as_secs_f64());
        r.cr_crit = Some(cr);
        summary += &format!("{:<9} Cr_crit = {:.3}\n", s.name(), cr);
        records.push(r);
    }
    Ok(Report { records, summary })
}

pub fn execute(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.command {
        Command::Run => cmd_run(cfg),
        Command::Convergence => cmd_convergence(cfg),
        Command::Throughput => cmd_throughput(cfg),
        Command::Opcount => cmd_opcount(cfg),
        Command::Courant => cmd_courant(cfg),
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))
        .map_err(|e| Error::Internal(format!("csv: {e}")))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Internal(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRecord>> {
    #[derive(serde::Deserialize)]
    struct Row {
        command: String,
        dim: usize,
        degree: usize,
        elements: Option<usize>,
        scheme: Option<String>,
        courant: Option<f64>,
        steps: Option<u64>,
        dofs: Option<u64>,
        wall_s: Option<f64>,
        dofs_per_s: Option<f64>,
        model_flops: Option<u64>,
        l2_err: Option<f64>,
        cr_crit: Option<f64>,
    }
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| Error::Config(format!("csv: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Config("unexpected CSV header".into()));
    }
    rd.deserialize::<Row>()
        .map(|row| {
            let r = row.map_err(|e| Error::Config(format!("csv: {e}")))?;
            Ok(BenchRecord {
                command: r.command,
                dim: r.dim,
                degree: r.degree,
                elements: r.elements,
                scheme: r.scheme.filter(|s| !s.is_empty()),
                courant: r.courant,
                steps: r.steps,
                dofs: r.dofs,
                wall_s: r.wall_s,
                dofs_per_s: r.dofs_per_s,
                model_flops: r.model_flops,
                l2_err: r.l2_err,
                cr_crit: r.cr_crit,
            })
        })
        .collect()
}

/// Writes the CSV to `cfg.output` (or `fallback`) and the JSON mirror if
/// requested.
pub fn write_outputs<W: Write>(cfg: &RunConfig, report: &Report, fallback: W) -> Result<()> {
    match &cfg.output {
        Some(p) => write_csv(&report.records, std::fs::File::create(p)?)?,
        None => write_csv(&report.records, fallback)?,
    }
    if let Some(p) = &cfg.json {
        let text = serde_json::to_string_pretty(&report.records).map_err(|e| Error::Internal(format!("json: {e}")))?;
        std::fs::write(p, text)?;
    }
    Ok(())
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Internal(_) => 2,
        Error::Search(_) => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cmd: Command) -> RunConfig {
        let mut c = RunConfig::new(cmd);
        c.elements = 4;
        c.degree = 2;
        c.end_time = 0.05;
        c
    }

    #[test]
    fn csv_round_trip() {
        let mut cfg = small(Command::Run);
        cfg.schemes = vec![SchemeKind::Lsrk45, SchemeKind::AderHdg];
        let rep = execute(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&rep.records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",,") || text.lines().nth(1).unwrap().ends_with(','));
        assert_eq!(read_csv(&buf[..]).unwrap(), rep.records);
    }

    #[test]
    fn throughput_identity_and_counted_flops() {
        let mut cfg = small(Command::Throughput);
        cfg.boundary = crate::mesh::BoundaryKind::Periodic;
        cfg.mode = 2;
        cfg.deform = 0.02;
        cfg.steps = Some(3);
        cfg.warmup = 1;
        cfg.schemes = vec![SchemeKind::Lsrk45, SchemeKind::Ader, SchemeKind::AderHdg];
        let rep = execute(&cfg).unwrap();
        for r in &rep.records {
            let expect = r.dofs.unwrap() as f64 * r.steps.unwrap() as f64 / r.wall_s.unwrap();
            assert!((r.dofs_per_s.unwrap() / expect - 1.0).abs() < 0.01);
        }
        let op = cfg.build_operator(cfg.elements).unwrap();
        for s in cfg.schemes.clone() {
            let (_, counted) = time_steps(&op, &cfg, s, 1).unwrap();
            let model = model_flops_per_element(cfg.degree, cfg.dim, s, cfg.reduction).unwrap();
            assert_eq!(counted, model * op.n_elements() as u64, "{s}");
        }
    }

    #[test]
    fn opcount_rows() {
        let rep = execute(&RunConfig::new(Command::Opcount)).unwrap();
        assert_eq!(rep.records.len(), 2 * 12 * 5);
        assert!(rep.summary.contains("21 C + 24 F"));
        assert!(!rep.summary.contains(" no\n"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 2);
        assert_eq!(exit_code(&Error::Search("x".into())), 3);
        let mut cfg = small(Command::Run);
        cfg.courant = 3.0;
        cfg.end_time = 500.0;
        let e = execute(&cfg).unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn observed_orders_of_a_sequence() {
        let o = observed_orders(&[1.0, 0.25, 0.0625]);
        assert_eq!(o, vec![2.0, 2.0]);
    }
}
