//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing the summary; with `VHSIM_ACCEPTANCE_STRICT=1` any
//! failing criterion makes the exit status nonzero.

use std::f64::consts::{E, PI};
use std::time::Instant;

use vhsim::diagnostics::{check_host_budget, detect_outbreak, DiagnosticsSeries, ViolationKind, ViolationPolicy};
use vhsim::grid::{integrate_compact, SpatialField, Unit};
use vhsim::host::closed_form_s;
use vhsim::model::FieldInit;
use vhsim::scenario::{preset, Scenario, ScenarioConfig};
use vhsim::solver::{NoOutput, Solver};
use vhsim::spectral::{dirichlet_square, gradient_norm, persistence_criterion, principal_eigenvalue, SpectralOptions};

// tolerances
const IC_REL: f64 = 0.02;
const EQUILIBRIUM_REL: f64 = 1e-9;
const BUDGET_REL: f64 = 1e-6;
const CLOSED_FORM_REL: f64 = 1e-2;
const CLOSED_FORM_ORDER: f64 = 1.0;
const EXTINCTION_FRACTION: f64 = 1e-3;
const S_STAR_CHANGE: f64 = 1e-3;
const OUTBREAK_THRESHOLD: f64 = 1.0;
const EIGEN_REL: f64 = 1e-3;
const GRAD_REL: f64 = 0.01;
const DT_HALVING_REL: f64 = 0.01;
const H_HALVING_REL: f64 = 0.05;

struct Tally {
    passed: usize,
    failed: Vec<String>,
}

impl Tally {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(id.to_string());
        }
    }
}

fn info(id: &str, detail: String) {
    println!("INFO {id}: {detail}");
}

struct Run {
    scenario: Scenario,
    series: DiagnosticsSeries,
    exposure: Vec<Vec<f64>>,
    final_hosts: Vec<Vec<f64>>,
    seconds: f64,
}

fn run(cfg: &ScenarioConfig, dt: Option<f64>) -> Run {
    let scenario = cfg.build().expect("valid scenario");
    let mut state = scenario.initial.clone();
    let mut solver = match dt {
        Some(dt) => Solver::with_dt(&scenario.model, &state, cfg.solver.clone(), dt),
        None => Solver::new(&scenario.model, &state, cfg.solver.clone()),
    }
    .expect("solver");
    solver.track_exposure();
    let start = Instant::now();
    let series = solver
        .run(&mut state, ViolationPolicy::Warn, &mut NoOutput)
        .expect("run completes");
    let exposure = solver.exposure().expect("tracked").to_vec();
    Run {
        final_hosts: state.hosts.iter().map(|h| h.s.clone()).collect(),
        scenario,
        series,
        exposure,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn preset_to(name: &str, t_end: f64) -> ScenarioConfig {
    let mut c = preset(name).expect("bundled preset");
    c.solver.t_end_months = t_end;
    c.output.snapshot_times_months.retain(|&t| t <= t_end);
    c
}

/// `max_j ||S_j - S_j0 exp(-sigma_j int V_i)||_inf / ||S_j0||_inf`.
fn closed_form_error(r: &Run) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, s0) in r.scenario.initial.hosts.iter().enumerate() {
        let sigma = &r.scenario.model.params.sites[k].host_infection;
        let cf = closed_form_s(&s0.s, sigma, &r.exposure[k]);
        let scale = s0.s.iter().copied().fold(0.0, f64::max);
        let err = r.final_hosts[k]
            .iter()
            .zip(&cf)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    worst
}

/// Month-end totals in a fixed order with names: V_s, V_i, V, then S, E, I
/// per site.
fn final_totals(s: &DiagnosticsSeries) -> Vec<(String, f64)> {
    let l = s.last().expect("records");
    let mut out = vec![
        ("V_s".to_string(), l.vs_total),
        ("V_i".to_string(), l.vi_total),
        ("V".to_string(), l.v_total),
    ];
    for (k, st) in l.sites.iter().enumerate() {
        for (c, v) in [("S", st.s), ("E", st.e), ("I", st.i)] {
            out.push((format!("{c}_{}", s.labels[k]), v));
        }
    }
    out
}

fn worst_change(a: &DiagnosticsSeries, b: &DiagnosticsSeries) -> (String, f64) {
    final_totals(a)
        .into_iter()
        .zip(final_totals(b))
        .map(|((name, x), (_, y))| (name, (x - y).abs() / x.abs().max(f64::MIN_POSITIVE)))
        .fold((String::new(), 0.0), |acc, c| if c.1 > acc.1 { c } else { acc })
}

/// Changes relative to each quantity's own scale: initial total for S and
/// V, run peak for E, I and V_i.
fn worst_scaled_change(a: &DiagnosticsSeries, b: &DiagnosticsSeries) -> (String, f64) {
    let first = &a.records[0];
    let peak = |f: &dyn Fn(&vhsim::DiagnosticsRecord) -> f64| a.records.iter().map(f).fold(0.0, f64::max);
    let mut scales = vec![first.vs_total, peak(&|r| r.vi_total), first.v_total];
    for k in 0..a.labels.len() {
        scales.push(first.sites[k].s);
        scales.push(peak(&|r| r.sites[k].e));
        scales.push(peak(&|r| r.sites[k].i));
    }
    final_totals(a)
        .into_iter()
        .zip(final_totals(b))
        .zip(scales)
        .map(|(((name, x), (_, y)), s)| (name, (x - y).abs() / s))
        .fold((String::new(), 0.0), |acc, c| if c.1 > acc.1 { c } else { acc })
}

fn criterion_1(t: &mut Tally) {
    let base = preset("bluetongue_c10").expect("preset");
    let c0 = preset("bluetongue_c0").expect("preset");
    // A e 2 pi w over the plane, times the share inside the radius-5 disk
    let radius: f64 = 5.0;
    let bump = |a: f64| a * E * 2.0 * PI;
    let disk = |a: f64| bump(a) * (1.0 - (-radius * radius / 2.0).exp());
    let expected = [
        ("S1", 512.0, disk(30.0)),
        ("S2", 530.0, disk(31.0)),
        ("E1", 5.0, 0.01 * disk(30.0)),
        ("I1", 5.0, 0.01 * disk(30.0)),
        ("V_i", 5.0, 0.01 * disk(30.0)),
    ];
    let totals = |cfg: &ScenarioConfig| -> [f64; 5] {
        let sc = cfg.build().expect("valid");
        let h = sc.model.grid.h();
        let s1 = &sc.initial.hosts[0];
        let s2 = &sc.initial.hosts[1];
        [
            integrate_compact(&s1.s, h),
            integrate_compact(&s2.s, h),
            integrate_compact(&s1.e, h),
            integrate_compact(&s1.i, h),
            sc.initial.vi.values.iter().sum::<f64>() * h * h,
        ]
    };
    let coarse = totals(&base);
    let fine = totals(&base.with_cell_size(0.125));
    for (k, (name, table, exact)) in expected.iter().enumerate() {
        let rel = (coarse[k] - table).abs() / table;
        let err = (coarse[k] - exact).abs() / exact;
        let err_fine = (fine[k] - exact).abs() / exact;
        t.check(
            &format!("1.{name}"),
            rel <= IC_REL && err_fine <= err,
            format!(
                "total {:.4} vs table {table} (rel {rel:.2e}); quadrature error vs disk integral {exact:.4}: {err:.2e} at h, {err_fine:.2e} at h/4",
                coarse[k]
            ),
        );
    }
    // the x = 125 site of the C = 0 preset carries the same bump as S2
    let far = c0.build().expect("valid");
    let far_s = integrate_compact(&far.initial.hosts[2].s, far.model.grid.h());
    let rel = (far_s - 530.0).abs() / 530.0;
    t.check("1.S3", rel <= IC_REL, format!("x=125 site total {far_s:.4} vs table 530 (rel {rel:.2e})"));
}

fn criterion_2(t: &mut Tally) {
    let mut cfg = preset_to("bluetongue_c10", 12.0);
    for s in &mut cfg.sites {
        s.exposed = FieldInit::Constant { value_per_km2: 0.0 };
        s.infected = FieldInit::Constant { value_per_km2: 0.0 };
    }
    cfg.vectors.initial_infected = FieldInit::Constant { value_per_km2: 0.0 };
    let sc = cfg.build().expect("valid");
    let mut state = sc.initial.clone();
    let mut solver = Solver::new(&sc.model, &state, cfg.solver.clone()).expect("solver");
    let steps = solver.step_count();
    let mut worst_step: f64 = 0.0;
    let mut worst_drift: f64 = 0.0;
    let mut prev = state.vs.values.clone();
    for _ in 0..steps {
        solver.step(&mut state).expect("step");
        for ((v, p), vi) in state.vs.values.iter().zip(&prev).zip(&state.vi.values) {
            worst_step = worst_step.max((v - p).abs() / 1000.0);
            worst_drift = worst_drift.max((v - 1000.0).abs() / 1000.0);
            assert_eq!(*vi, 0.0);
        }
        prev.clone_from(&state.vs.values);
    }
    t.check(
        "2",
        worst_step <= EQUILIBRIUM_REL,
        format!("{steps} steps over 12 months: max per-step change {worst_step:.2e}, max drift {worst_drift:.2e}"),
    );
}

fn main() {
    let strict = std::env::var("VHSIM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut t = Tally {
        passed: 0,
        failed: Vec::new(),
    };

    criterion_1(&mut t);
    criterion_2(&mut t);

    // full preset runs: C = 0 and C = 10 to month 12, C = 20 over its
    // configured horizon
    let runs: Vec<(&str, Run)> = [
        ("bluetongue_c0", 12.0),
        ("bluetongue_c10", 12.0),
        ("bluetongue_c20", preset("bluetongue_c20").expect("preset").solver.t_end_months),
    ]
    .into_iter()
    .map(|(name, t_end)| (name, run(&preset_to(name, t_end), None)))
    .collect();
    for (name, r) in &runs {
        info(
            name,
            format!(
                "{} steps of dt = {:.6e} in {:.1} s",
                r.series.steps, r.series.dt, r.seconds
            ),
        );
    }

    for (name, r) in &runs {
        let bad: Vec<_> = r
            .series
            .violations
            .iter()
            .filter(|v| matches!(v.kind, ViolationKind::Negative | ViolationKind::AboveBound | ViolationKind::NonFinite))
            .collect();
        let vmax = r.series.records.iter().map(|x| x.v_max).fold(0.0, f64::max);
        let vmin = r.series.records.iter().map(|x| x.min_value).fold(f64::INFINITY, f64::min);
        t.check(
            &format!("3.{name}"),
            bad.is_empty(),
            format!("{} bound/sign violations; max V {vmax:.6}, min value {vmin:.3e}", bad.len()),
        );
    }

    for (name, r) in &runs {
        let res = check_host_budget(&r.series);
        let worst = res
            .iter()
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
            .expect("records");
        let [s0, e0, i0] = r.series.initial_host[worst.site];
        let total = s0 + e0 + i0;
        t.check(
            &format!("4.{name}"),
            res.iter().all(|x| x.residual >= -BUDGET_REL * {
                let [a, b, c] = r.series.initial_host[x.site];
                a + b + c
            }),
            format!(
                "worst site {}: lambda int E + delta int I = {:.4} vs initial total {total:.4} at t = {:.2}",
                r.series.labels[worst.site], worst.lhs, worst.t
            ),
        );
        let weighted_ok = res.iter().all(|x| !x.weighted_violated);
        let gap = res.iter().map(|x| x.identity_gap.abs()).fold(0.0, f64::max);
        info(
            &format!("4.{name}.weighted"),
            format!(
                "bound int(2 S0 + 2 E0 + I0) holds: {weighted_ok}; max |identity gap| {gap:.2e}"
            ),
        );
    }

    for (name, r) in &runs {
        let n = r
            .series
            .violations
            .iter()
            .filter(|v| v.kind == ViolationKind::SusceptibleIncrease)
            .count();
        t.check(
            &format!("5.{name}"),
            n == 0,
            format!("{n} steps with an increasing susceptible total (checked every step)"),
        );
    }

    criterion_6(&mut t, &runs[1].1);

    {
        let r = &runs[0].1;
        let s = &r.series;
        let last = s.last().expect("records");
        let mut worst = (String::new(), 0.0_f64);
        for k in 0..s.labels.len() {
            for (c, fin, pk) in [
                ("E", last.sites[k].e, s.records.iter().map(|x| x.sites[k].e).fold(0.0, f64::max)),
                ("I", last.sites[k].i, s.records.iter().map(|x| x.sites[k].i).fold(0.0, f64::max)),
            ] {
                // below 1e-12 hosts the compartment never held anyone
                if fin > 1e-12 && fin / pk > worst.1 {
                    worst = (format!("{c}_{}", s.labels[k]), fin / pk);
                }
            }
        }
        let vi_peak = s.records.iter().map(|x| x.vi_total).fold(0.0, f64::max);
        let vi_frac = last.vi_total / vi_peak;
        t.check(
            "7.extinction",
            worst.1 < EXTINCTION_FRACTION && vi_frac < EXTINCTION_FRACTION,
            format!(
                "t = {:.1}: worst host ratio {} = {:.2e}, V_i final/peak = {vi_frac:.2e}",
                last.t, worst.0, worst.1
            ),
        );
        let summary = vhsim::diagnostics::asymptotic_summary(s, 2.0).expect("summary");
        let s1 = &summary.sites[0];
        t.check(
            "7.s_star",
            s1.s_star > 0.0 && s1.relative_change < S_STAR_CHANGE,
            format!(
                "S*_1 = {:.4e}, relative change over the last 2 months {:.2e}",
                s1.s_star, s1.relative_change
            ),
        );
    }

    {
        let ev = |r: &Run| detect_outbreak(&r.series, OUTBREAK_THRESHOLD).expect("threshold");
        let onset = |r: &Run, x: f64| ev(r).into_iter().find(|e| e.center_km[0] == x).map(|e| e.onset_months);
        let c0 = &runs[0].1;
        for x in [50.0, 125.0] {
            let o = onset(c0, x);
            t.check(
                &format!("8.c0.x{x}"),
                o.is_none(),
                match o {
                    None => "no outbreak through t = 12".into(),
                    Some(t) => format!("outbreak onset at {t:.3} months"),
                },
            );
        }
        for (id, r, x, target, tol) in [
            ("8.c10.x50", &runs[1].1, 50.0, 2.0, 1.0),
            ("8.c20.x125", &runs[2].1, 125.0, 5.0, 1.5),
        ] {
            let o = onset(r, x);
            t.check(
                id,
                o.is_some_and(|o| (o - target).abs() <= tol),
                format!("onset {o:?} months, expected {target} +- {tol}"),
            );
        }
    }

    criterion_9(&mut t);
    criterion_10(&mut t, &runs[1].1);

    println!(
        "\n{} passed, {} failed{}",
        t.passed,
        t.failed.len(),
        if t.failed.is_empty() {
            String::new()
        } else {
            format!(": {}", t.failed.join(", "))
        }
    );
    if strict && !t.failed.is_empty() {
        std::process::exit(1);
    }
}

fn criterion_6(t: &mut Tally, c10: &Run) {
    let err = closed_form_error(c10);
    t.check(
        "6.default_dt",
        err <= CLOSED_FORM_REL,
        format!("relative L-inf error {err:.3e} at dt = {:.4e} over 12 months", c10.series.dt),
    );
    let cfg = preset_to("bluetongue_c10", 2.0);
    let dt0 = c10.series.dt;
    let errs: Vec<f64> = [1.0, 0.5, 0.25]
        .iter()
        .map(|f| closed_form_error(&run(&cfg, Some(dt0 * f))))
        .collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    t.check(
        "6.order",
        orders.iter().all(|&p| p >= CLOSED_FORM_ORDER),
        format!(
            "errors at dt, dt/2, dt/4 over 2 months: {}; observed orders {orders:.3?}",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

fn criterion_9(t: &mut Tally) {
    let half = 10.0;
    let (grid, mask) = dirichlet_square(half, 0.25).expect("square");
    let d = SpatialField::constant(&grid, 1.0, Unit::Diffusivity);
    let beta = SpatialField::constant(&grid, 1.0, Unit::PerMonth);
    let start = Instant::now();
    let opts = SpectralOptions {
        tolerance: 1e-10,
        ..Default::default()
    };
    let r = principal_eigenvalue(&grid, &d, &beta, &mask, &opts).expect("converges");
    let exact = 1.0 - PI * PI / (2.0 * half * half);
    let rel = (r.lambda1 - exact).abs() / exact;
    t.check(
        "9.eigenvalue",
        rel <= EIGEN_REL,
        format!(
            "lambda1 = {:.8} vs {exact:.8} (rel {rel:.2e}), {} iterations, {:.1} s",
            r.lambda1,
            r.iterations,
            start.elapsed().as_secs_f64()
        ),
    );

    let default = preset("bluetongue_c0").expect("preset").build().expect("valid");
    let p = persistence_criterion(&default.model.params.birth_rate, 1.0).expect("criterion");
    t.check(
        "9.persistence",
        (p.lhs - 9000.0).abs() < 1e-6 && (p.rhs - PI * PI / 2.0).abs() < 1e-12 && p.satisfied,
        format!("lhs {} > rhs {:.6}: {}", p.lhs, p.rhs, p.satisfied),
    );

    let phi = grid.field_from_fn(Unit::Dimensionless, |x, y| {
        if x.abs() < half && y.abs() < half {
            (PI * (x + half) / (2.0 * half)).sin() * (PI * (y + half) / (2.0 * half)).sin() / half
        } else {
            0.0
        }
    });
    let g = gradient_norm(&grid, &phi, &mask);
    let expected = PI / (2.0_f64.sqrt() * half);
    let rel = (g - expected).abs() / expected;
    t.check(
        "9.gradient_norm",
        rel <= GRAD_REL,
        format!("||grad phi|| = {g:.6} vs {expected:.6} (rel {rel:.2e})"),
    );
}

fn criterion_10(t: &mut Tally, c10: &Run) {
    let cfg = preset_to("bluetongue_c10", 12.0);
    let half_dt = run(&cfg, Some(c10.series.dt / 2.0));
    let (name, change) = worst_change(&c10.series, &half_dt.series);
    t.check(
        "10.dt",
        change < DT_HALVING_REL,
        format!("largest relative change of a month-12 total under dt/2: {name} {change:.3e}"),
    );
    let (sname, schange) = worst_scaled_change(&c10.series, &half_dt.series);
    info("10.dt.scaled", format!("largest change relative to the quantity's scale: {sname} {schange:.3e}"));

    let fine = run(&cfg.with_cell_size(cfg.domain.cell_size_km / 2.0), None);
    let (name, change) = worst_change(&c10.series, &fine.series);
    t.check(
        "10.h",
        change < H_HALVING_REL,
        format!("largest relative change of a month-12 total under h/2: {name} {change:.3e}"),
    );
    let (sname, schange) = worst_scaled_change(&c10.series, &fine.series);
    info(
        "10.h.scaled",
        format!(
            "largest change relative to the quantity's scale: {sname} {schange:.3e} ({:.1} s at h/2)",
            fine.seconds
        ),
    );
}
