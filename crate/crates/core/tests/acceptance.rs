//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing the capture) and then asserts.
//!
//! The tests share one lock so that the timing comparison never competes
//! with the other tests for the CPU.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavekernel::basis::{basis_change_matrices, even_odd_decompose, lagrange_matrix, MatrixKind};
use wavekernel::cost::{scheme_cost, tck_cost, CostScheme};
use wavekernel::dense::{assemble_dense, DenseOperators};
use wavekernel::harness::commands::{cmd_convergence, cmd_courant, time_steps};
use wavekernel::harness::{interpolate_initial, Command, ModeSolution, RunConfig};
use wavekernel::mesh::{build_cartesian, default_amplitude, deform, BoundaryKind, Material};
use wavekernel::operator::{AcousticOperator, FluxParams, StateVector};
use wavekernel::quadrature::{gauss_lobatto_rule, gauss_rule};
use wavekernel::tck::{ader_coefficients, ader_hdg_coefficients, tck_evaluate, ReductionPolicy};
use wavekernel::tensor::{apply_all_dirs, apply_dir, KernelClass, KernelTally, Shape};
use wavekernel::time::{ader_step, CourantSearch, SchemeKind, Stepper};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: usize, what: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id} [{verdict}] {what}: {detail}");
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// 2^dim deformed mesh with random element-wise material.
fn small_problem(dim: usize, k: usize, seed: u64) -> (AcousticOperator, DenseOperators) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = deform(&build_cartesian(2, dim, BoundaryKind::SoundSoft).unwrap(), 0.1).unwrap();
    let n = mesh.n_elements();
    let c = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let rho = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mat = Material::new(c, rho).unwrap();
    let flux = FluxParams::hdg(&mesh, &mat, 1.0).unwrap();
    let dense = assemble_dense(&mesh, k, &mat, &flux).unwrap();
    let op = AcousticOperator::new(mesh, k, mat, flux).unwrap();
    (op, dense)
}

fn state(op: &AcousticOperator, data: Vec<f64>) -> StateVector {
    StateVector::from_data(op.dim(), op.k(), op.n_elements(), data).unwrap()
}

/// GL coefficients -> S at Gauss points through the matrix-free path -> GL.
fn local_s_in_gl(op: &AcousticOperator, e: usize, x: &[f64]) -> Vec<f64> {
    let dim = op.dim();
    let n = op.k() + 1;
    let nq = n.pow(dim as u32);
    let shape = Shape::cube(dim, n);
    let mut tmp = vec![0.0; nq];
    let mut t = KernelTally::default();
    let mut g = vec![0.0; x.len()];
    for c in 0..=dim {
        let r = c * nq..(c + 1) * nq;
        apply_all_dirs(
            &op.basis.gl_to_g,
            &x[r.clone()],
            shape,
            &mut g[r],
            &mut tmp,
            KernelClass::CellEval,
            &mut t,
        );
    }
    let s = op.apply_local_s(e, n, &g).unwrap();
    let mut out = vec![0.0; x.len()];
    for c in 0..=dim {
        let r = c * nq..(c + 1) * nq;
        apply_all_dirs(
            &op.basis.g_to_gl,
            &s[r.clone()],
            shape,
            &mut out[r],
            &mut tmp,
            KernelClass::CellEval,
            &mut t,
        );
    }
    out
}

#[test]
fn criterion_1_oracle_equivalence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let tol = 1e-11;
    let mut worst = [0.0f64; 6];
    let names = [
        "K",
        "inverse mass",
        "local S",
        "Taylor sum",
        "ader step",
        "ader-hdg step",
    ];
    for dim in 2..=3 {
        for k in 1..=3 {
            let (op, dense) = small_problem(dim, k, 100 * dim as u64 + k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(7 + k as u64);
            let dt = 0.05;
            let el = dense.element_len();
            let chol = dense.mass.clone().cholesky().unwrap();
            let solve = |r: &[f64]| chol.solve(&DVector::from_column_slice(r)).as_slice().to_vec();
            for _ in 0..20 {
                let x = random_vec(&mut rng, op.n_dofs());
                let u = state(&op, x.clone());

                let mut out = op.zero_state();
                op.apply_k(&u, &mut out).unwrap();
                worst[0] = worst[0].max(rel_err(&out.data, &dense.apply_k(&x)));

                op.apply_inverse_mass(&u, &mut out).unwrap();
                worst[1] = worst[1].max(rel_err(&out.data, &solve(&x)));

                let want = dense.apply_local_d(&x);
                for e in 0..op.n_elements() {
                    let got = local_s_in_gl(&op, e, &x[e * el..(e + 1) * el]);
                    worst[2] = worst[2].max(rel_err(&got, &want[e * el..(e + 1) * el]));
                }

                let coeffs = ader_coefficients(dt, k);
                let t = tck_evaluate(&op, &u, &coeffs, ReductionPolicy::None).unwrap();
                worst[3] = worst[3].max(rel_err(&t.data, &dense.taylor_sum(&x, &coeffs)));

                // U - M^{-1} K M^{-1} sum_j c_j M D^j U
                let step = ader_step(&op, &u, dt, SchemeKind::Ader, ReductionPolicy::None).unwrap();
                let y = solve(&dense.taylor_sum(&x, &coeffs));
                let g = solve(&dense.apply_k(&y));
                let want: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
                worst[4] = worst[4].max(rel_err(&step.data, &want));

                let step = ader_step(&op, &u, dt, SchemeKind::AderHdg, ReductionPolicy::None).unwrap();
                let w = solve(&dense.apply_k(&x));
                let y = solve(&dense.taylor_sum(&w, &ader_hdg_coefficients(dt, k - 1)));
                let g = solve(&dense.apply_k(&y));
                let want: Vec<f64> = (0..x.len()).map(|i| x[i] - dt * w[i] - g[i]).collect();
                worst[5] = worst[5].max(rel_err(&step.data, &want));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let pass = worst.iter().all(|&w| w <= tol) && secs < 60.0;
    report(1, "oracle equivalence", pass, &format!("{detail}; {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_2_kernel_call_counts() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dim = 3;
    let mut lines = Vec::new();
    let mut pass = true;
    for k in 1..=6 {
        let mesh = build_cartesian(2, dim, BoundaryKind::Periodic).unwrap();
        let n_el = mesh.n_elements() as u64;
        let mat = Material::uniform(mesh.n_elements(), 1.0, 1.0).unwrap();
        let flux = FluxParams::hdg(&mesh, &mat, 1.0).unwrap();
        let op = AcousticOperator::new(mesh, k, mat, flux).unwrap();
        let per = n_el * (dim as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let u = state(&op, random_vec(&mut rng, op.n_dofs()));
        let mut out = op.zero_state();
        op.counter.set_enabled(true);

        op.counter.reset();
        op.apply_inverse_mass(&u, &mut out).unwrap();
        let m = op.counter.read();
        op.counter.reset();
        op.apply_k(&u, &mut out).unwrap();
        let kk = op.counter.read();
        op.counter.reset();
        tck_evaluate(&op, &u, &ader_hdg_coefficients(0.01, k - 1), ReductionPolicy::None).unwrap();
        let t = op.counter.read();

        let got = [
            m.cell_calls(),
            m.face_calls(),
            kk.cell_calls(),
            kk.face_calls(),
            t.cell_calls(),
            t.face_calls(),
        ];
        let want = [6, 0, 21, 24, 6 + 3 * (k as u64 - 1), 0];
        let got: Vec<u64> = got.iter().map(|c| c / per).collect();
        pass &= got == want;
        lines.push(format!(
            "k={k}: M^-1 {} C, K {} C + {} F, TCK {} C",
            got[0], got[2], got[3], got[4]
        ));
    }
    report(2, "kernel-call counts, d=3", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_3_cost_ordering() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut bad = Vec::new();
    for d in 2..=3 {
        for k in 1..=12 {
            let rk = scheme_cost(k, d, CostScheme::Rk { stages: 5 }).unwrap().c_scheme_total;
            for s in [CostScheme::Ader, CostScheme::AderHdg] {
                let c = scheme_cost(k, d, s).unwrap();
                if c.c_scheme_total >= rk || c.c_scheme_total_reduced >= rk {
                    bad.push(format!("{s:?} k={k} d={d}"));
                }
            }
            // full k-level Taylor sum
            if k >= 3 && tck_cost(k, d, k, ReductionPolicy::EverySecond) >= tck_cost(k, d, k, ReductionPolicy::None) {
                bad.push(format!("reduction k={k} d={d}"));
            }
        }
    }
    let full = tck_cost(8, 3, 8, ReductionPolicy::None);
    let reduced = tck_cost(8, 3, 8, ReductionPolicy::EverySecond);
    let ratio = reduced as f64 / full as f64;
    let pass = bad.is_empty() && ratio <= 0.7;
    report(
        3,
        "cost-model ordering",
        pass,
        &format!("violations {:?}; reduced/full TCK at k=8, d=3: {ratio:.3}", bad),
    );
    assert!(pass);
}

#[test]
fn criterion_4_spatial_convergence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    for (k, levels, target, tol) in [(1, 4, 2.0, 0.3), (2, 3, 3.0, 0.3), (4, 3, 5.0, 0.4)] {
        let mut cfg = RunConfig::new(Command::Convergence);
        cfg.dim = 2;
        cfg.degree = k;
        cfg.elements = 8;
        cfg.levels = levels;
        cfg.courant = 0.1;
        cfg.end_time = 1.0;
        cfg.mode = 1;
        cfg.schemes = vec![SchemeKind::Lsrk45, SchemeKind::AderHdg];
        let rep = cmd_convergence(&cfg).unwrap();
        for s in &cfg.schemes {
            let errs: Vec<f64> = rep
                .records
                .iter()
                .filter(|r| r.scheme.as_deref() == Some(s.name()))
                .map(|r| r.l2_err.unwrap())
                .collect();
            let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
            pass &= orders.iter().all(|o| (o - target).abs() <= tol);
            let shown: Vec<String> = orders.iter().map(|o| format!("{o:.2}")).collect();
            lines.push(format!("{s} k={k} [{}]", shown.join(", ")));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 600.0;
    report(
        4,
        "spatial convergence orders",
        pass,
        &format!("{}; {secs:.0} s", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_5_critical_courant() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let expected = [(1, [0.44, 0.55, 0.18]), (4, [0.69, 0.87, 0.28])];
    let mut pass = true;
    let mut lines = Vec::new();
    for (k, reference) in expected {
        let mut cfg = RunConfig::new(Command::Courant);
        cfg.dim = 2;
        cfg.degree = k;
        cfg.elements = 8;
        cfg.deform = 0.0;
        cfg.mode = 1;
        cfg.schemes = vec![SchemeKind::Lsrk45, SchemeKind::Lsrk59, SchemeKind::Ader];
        let rep = cmd_courant(&cfg).unwrap();
        let cr: Vec<f64> = rep.records.iter().map(|r| r.cr_crit.unwrap()).collect();
        for (c, p) in cr.iter().zip(reference) {
            pass &= ((c - p) / p).abs() <= 0.15;
        }
        let ratio = cr[0] / cr[2];
        pass &= ((ratio - 2.4) / 2.4).abs() <= 0.2;
        lines.push(format!(
            "k={k} lsrk45 {:.3} lsrk59 {:.3} ader {:.3} (reference {:?}), ratio {ratio:.2}",
            cr[0], cr[1], cr[2], reference
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 900.0;
    report(
        5,
        "critical Courant numbers",
        pass,
        &format!("{}; {secs:.0} s", lines.join("; ")),
    );
    assert!(pass);
}

/// Least-squares slope of log(difference of successive solutions) against
/// log(dt) under dt halving on a fixed mesh.
fn richardson_slope(op: &AcousticOperator, cfg: &RunConfig, scheme: SchemeKind, courants: &[f64]) -> f64 {
    let sol = ModeSolution::new(op.dim(), cfg.mode, cfg.c, cfg.rho).unwrap();
    let k = op.k() as f64;
    let mut finals = Vec::new();
    let mut dts = Vec::new();
    for &cr in courants {
        let dt_max = cr * op.mesh.h_min() / (cfg.c * k.powf(1.5));
        let steps = (cfg.end_time / dt_max).ceil() as usize;
        let dt = cfg.end_time / steps as f64;
        let mut u = interpolate_initial(op, &sol, 0.0);
        let mut st = Stepper::new(op, cfg.scheme_config(scheme, cr).unwrap()).unwrap();
        st.run(&mut u, dt, steps).unwrap();
        finals.push(u.data);
        dts.push(dt);
    }
    let pts: Vec<(f64, f64)> = finals
        .windows(2)
        .zip(&dts)
        .map(|(w, dt)| {
            let d = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (dt.ln(), d.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_6_temporal_orders() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = RunConfig::new(Command::Run);
    cfg.dim = 2;
    cfg.degree = 2;
    cfg.end_time = 0.5;
    cfg.mode = 1;
    let op = cfg.build_operator(16).unwrap();
    let cases = [
        (SchemeKind::Lsrk45, vec![0.4, 0.2, 0.1, 0.05], 4.0, 0.3),
        (SchemeKind::Lsrk59, vec![0.4, 0.2, 0.1, 0.05], 5.0, 0.4),
        (SchemeKind::Ader, vec![0.16, 0.08, 0.04, 0.02], 3.0, 0.3),
    ];
    let mut pass = true;
    let mut lines = Vec::new();
    for (s, courants, target, tol) in cases {
        let slope = richardson_slope(&op, &cfg, s, &courants);
        let ok = (slope - target).abs() <= tol;
        pass &= ok;
        lines.push(format!(
            "{s} {slope:.2} (want {target} ± {tol}{})",
            if ok { "" } else { ", out of range" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    report(
        6,
        "temporal orders, k=2 on 16x16",
        pass,
        &format!("{}; {secs:.0} s", lines.join("; ")),
    );
    assert!(pass);
}

fn energy_norm(op: &AcousticOperator, u: &StateVector, mu: &mut StateVector) -> f64 {
    op.apply_mass(u, mu).unwrap();
    u.data.iter().zip(&mu.data).map(|(a, b)| a * b).sum::<f64>().sqrt()
}

#[test]
fn criterion_7_stability_and_free_stream() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = RunConfig::new(Command::Courant);
    cfg.dim = 2;
    cfg.degree = 2;
    cfg.elements = 8;
    cfg.deform = default_amplitude(8);
    cfg.mode = 1;
    cfg.schemes = SchemeKind::ALL.to_vec();
    let crit = cmd_courant(&cfg).unwrap();
    let op = cfg.build_operator(cfg.elements).unwrap();
    let sol = ModeSolution::new(2, 1, 1.0, 1.0).unwrap();
    let mut mu = op.zero_state();
    let mut pass = true;
    let mut lines = Vec::new();
    let steps = CourantSearch::default().steps;
    for (s, r) in cfg.schemes.iter().zip(&crit.records) {
        let cr = 0.9 * r.cr_crit.unwrap();
        let mut u = interpolate_initial(&op, &sol, 0.0);
        let n0 = energy_norm(&op, &u, &mut mu);
        let mut st = Stepper::new(&op, cfg.scheme_config(*s, cr).unwrap()).unwrap();
        let dt = st.dt().unwrap();
        let mut peak = n0;
        for _ in 0..steps / 10 {
            st.run(&mut u, dt, 10).unwrap();
            peak = peak.max(energy_norm(&op, &u, &mut mu));
        }
        let growth = peak / n0 - 1.0;
        pass &= growth < 0.01;
        lines.push(format!("{s} Cr {cr:.3} growth {growth:.1e}"));
    }

    let mut fs = 0.0f64;
    for dim in 2..=3 {
        let mesh = deform(&build_cartesian(3, dim, BoundaryKind::Periodic).unwrap(), 0.03).unwrap();
        let mat = Material::uniform(mesh.n_elements(), 1.3, 0.8).unwrap();
        let flux = FluxParams::hdg(&mesh, &mat, 1.0).unwrap();
        let op = AcousticOperator::new(mesh, 3, mat, flux).unwrap();
        let mut u = op.zero_state();
        let nq = u.nodes_per_component();
        let l = u.element_len();
        for e in 0..op.n_elements() {
            for c in 0..=dim {
                u.data[e * l + c * nq..e * l + (c + 1) * nq].fill(0.4 + 0.3 * c as f64);
            }
        }
        let mut r = op.zero_state();
        op.apply_k(&u, &mut r).unwrap();
        fs = fs.max(r.max_abs());
    }
    pass &= fs <= 1e-11;
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    report(
        7,
        "stability at 0.9 Cr_crit, free stream",
        pass,
        &format!("{}; free-stream residual {fs:.1e}; {secs:.0} s", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_8_throughput() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut pass = true;
    let mut lines = Vec::new();
    for (k, repeats) in [(2, 3), (4, 3), (8, 1)] {
        let mut cfg = RunConfig::new(Command::Throughput);
        cfg.dim = 3;
        cfg.degree = k;
        cfg.elements = 20;
        cfg.deform = default_amplitude(20);
        cfg.warmup = 1;
        cfg.repeats = repeats;
        let op = cfg.build_operator(cfg.elements).unwrap();
        let (rk, _) = time_steps(&op, &cfg, SchemeKind::Lsrk45, 1).unwrap();
        let (ader, _) = time_steps(&op, &cfg, SchemeKind::AderHdg, 1).unwrap();
        pass &= ader < rk;
        lines.push(format!("k={k} lsrk45 {rk:.3} s, ader-hdg {ader:.3} s per step"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    report(
        8,
        "throughput on 20^3 deformed, 3D",
        pass,
        &format!("{}; {secs:.0} s", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_9_basis_machinery() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut round_trip = 0.0f64;
    let mut even_odd = 0.0f64;
    for k in 1..=12 {
        let (s, s_inv) = basis_change_matrices(k).unwrap();
        let x = random_vec(&mut rng, k + 1);
        let back = s_inv.apply(&s.apply(&x));
        round_trip = round_trip.max(rel_err(&back, &x));

        let gl = gauss_lobatto_rule(k + 1).unwrap().points;
        let g = gauss_rule(k + 1).unwrap().points;
        let fine = gauss_rule(k + 3).unwrap().points;
        let mats = [
            lagrange_matrix(&gl, &g, MatrixKind::Value).unwrap(),
            lagrange_matrix(&gl, &g, MatrixKind::Derivative).unwrap(),
            lagrange_matrix(&g, &g, MatrixKind::Derivative).unwrap(),
            lagrange_matrix(&g, &fine, MatrixKind::Value).unwrap(),
            s_inv.clone(),
        ];
        for m in mats.iter().flat_map(|m| [m.clone(), m.transpose()]) {
            let eo = even_odd_decompose(&m).unwrap();
            let x = random_vec(&mut rng, m.cols);
            even_odd = even_odd.max(rel_err(&eo.apply(&x), &m.apply(&x)));
            // one tensor direction of a 3-D block against a plain loop
            let n = m.cols;
            let shape = Shape::cube(3, n);
            let src = random_vec(&mut rng, shape.len());
            for dir in 0..3 {
                let mut dst = vec![0.0; shape.with(dir, m.rows).len()];
                apply_dir(&eo, &src, shape, dir, &mut dst, false);
                let stride = n.pow(dir as u32);
                let mut want = vec![0.0; dst.len()];
                for (o, w) in want.iter_mut().enumerate() {
                    let lo = o % stride;
                    let i = (o / stride) % m.rows;
                    let hi = o / (stride * m.rows);
                    *w = (0..n).map(|j| m.get(i, j) * src[lo + stride * (j + n * hi)]).sum();
                }
                even_odd = even_odd.max(rel_err(&dst, &want));
            }
        }
    }

    // sum-factorized local derivative against the assembled one on a deformed element
    let mut alg = 0.0f64;
    for dim in 2..=3 {
        for k in 1..=4 {
            let (op, dense) = small_problem(dim, k, 900 + k as u64);
            let el = dense.element_len();
            let x = random_vec(&mut rng, el);
            for e in 0..op.n_elements() {
                let got = local_s_in_gl(&op, e, &x);
                let want = &dense.local_d[e] * DVector::from_column_slice(&x);
                alg = alg.max(rel_err(&got, want.as_slice()));
            }
        }
    }
    let pass = round_trip <= 1e-13 && even_odd <= 1e-12 && alg <= 1e-11;
    report(
        9,
        "basis machinery",
        pass,
        &format!("GL/G round trip {round_trip:.1e}, even-odd vs dense {even_odd:.1e}, sum-factorized vs assembled derivative {alg:.1e}"),
    );
    assert!(pass);
}
