//! Explicit operator-split time integration.
//!
//! One step of size `dt`, in this order:
//!
//! 1. reactions: incidence, vector logistic/infection terms and the host SEIR
//!    terms, forward Euler from the pre-step state;
//! 2. vector diffusion (explicit, zero flux at the walls);
//! 3. vector advection (first-order upwind);
//! 4. host diffusion on each mask, diffusive mode only.
//!
//! Each sub-step is a convex update under the stability limits below, so
//! nonnegativity and the sup bound on `V_s + V_i` carry over from one step
//! to the next.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsRecord, DiagnosticsSeries, Monitor, ViolationPolicy};
use crate::error::{Error, Result};
use crate::grid::integrate_compact;
use crate::host::{HostRates, MaskStencil};
use crate::model::{param_bounds, Model, SimState};
use crate::vector::{upwind_divergence, FaceDiffusivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HostMode {
    /// Hosts do not move; any number of sites.
    #[default]
    NRegionNondiffusive,
    /// Hosts diffuse inside their site with no-flux boundaries; two sites.
    TwoRegionDiffusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt_max_months: f64,
    pub cfl_safety: f64,
    pub t_end_months: f64,
    pub output_stride_steps: usize,
    #[serde(default)]
    pub mode: HostMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt_max_months: 0.01,
            cfl_safety: 0.9,
            t_end_months: 12.0,
            output_stride_steps: 10,
            mode: HostMode::NRegionNondiffusive,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::config(format!("cfl_safety must be in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.dt_max_months > 0.0) {
            return Err(Error::config(format!("dt_max must be positive, got {}", self.dt_max_months)));
        }
        if !(self.t_end_months >= 0.0) || !self.t_end_months.is_finite() {
            return Err(Error::config(format!("t_end must be nonnegative, got {}", self.t_end_months)));
        }
        if self.output_stride_steps == 0 {
            return Err(Error::config("output stride must be at least one step"));
        }
        Ok(())
    }
}

/// Largest stable `dt` for each process, already scaled by `cfl_safety`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityLimits {
    /// `(|w_x| + |w_y|) dt / h <= safety`
    pub advection: f64,
    /// `4 D_M dt / h^2 <= safety`
    pub diffusion: f64,
    /// `dt * max(beta*, lambda, delta, sigma V_max, alpha I_max + m* V_max) <= safety`
    pub reaction: f64,
}

impl StabilityLimits {
    pub fn compute(model: &Model, initial: &SimState, cfg: &SolverConfig) -> Result<StabilityLimits> {
        let b = param_bounds(&model.params)?;
        let h = model.grid.h();
        let s = cfg.cfl_safety;
        let [wx, wy] = model.params.velocity;
        let speed = wx.abs() + wy.abs();
        let advection = if speed > 0.0 { s * h / speed } else { f64::INFINITY };

        let mut d_max = b.d_max;
        if cfg.mode == HostMode::TwoRegionDiffusive {
            for sp in &model.params.sites {
                if let Some(d) = &sp.host_diffusivity {
                    for &v in d.susceptible_exposed.iter().chain(&d.infected) {
                        d_max = d_max.max(v);
                    }
                }
            }
        }
        let diffusion = s * h * h / (4.0 * d_max);

        let v_bound = b.capacity_bound().max(initial.total_vector().max());
        let host_bound = initial
            .hosts
            .iter()
            .flat_map(|hs| hs.s.iter().zip(&hs.e).zip(&hs.i).map(|((a, b), c)| a + b + c))
            .fold(0.0, f64::max);
        let mut rate = b.beta_star.max(model.params.incubation_rate).max(model.params.removal_rate);
        let mut alpha_max: f64 = 0.0;
        for sp in &model.params.sites {
            for &sigma in &sp.host_infection {
                rate = rate.max(sigma * v_bound);
            }
            for &alpha in &sp.vector_infection {
                alpha_max = alpha_max.max(alpha);
            }
        }
        rate = rate.max(alpha_max * host_bound + b.m_upper * v_bound);
        let reaction = if rate > 0.0 { s / rate } else { f64::INFINITY };
        Ok(StabilityLimits {
            advection,
            diffusion,
            reaction,
        })
    }

    pub fn dt_limit(&self) -> f64 {
        self.advection.min(self.diffusion).min(self.reaction)
    }

    fn check(&self, dt: f64) -> Result<()> {
        let slack = 1.0 + 1e-12;
        for (limit, which) in [
            (self.advection, "advection CFL"),
            (self.diffusion, "diffusion limit"),
            (self.reaction, "reaction limit"),
        ] {
            if dt > limit * slack {
                return Err(Error::Stability { dt, limit, which });
            }
        }
        Ok(())
    }
}

/// Time step actually used: `1/k` months with `k` the smallest integer that
/// satisfies both `dt_max` and the stability limits. Integer-month output
/// times therefore fall exactly on steps.
pub fn choose_dt(limits: &StabilityLimits, dt_max: f64) -> f64 {
    let target = limits.dt_limit().min(dt_max);
    let k = (1.0 / target - 1e-9).ceil().max(1.0);
    1.0 / k
}

/// Amounts exchanged during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub dt: f64,
    /// Vector mass that left through the outer boundary.
    pub outflow: f64,
    /// `dt * int (beta V - m V^2)` from the reaction sub-step.
    pub logistic_source: f64,
}

/// Receives records and snapshots during [`Solver::run`]. States are lent
/// read-only.
pub trait Observer {
    fn on_record(&mut self, _record: &DiagnosticsRecord) -> Result<()> {
        Ok(())
    }

    /// Times (months) at which [`Observer::on_snapshot`] should be called.
    fn snapshot_times(&self) -> Vec<f64> {
        Vec::new()
    }

    fn on_snapshot(&mut self, _state: &SimState, _model: &Model) -> Result<()> {
        Ok(())
    }

    /// Called once when the run ends, also when it aborts.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoOutput;

impl Observer for NoOutput {}

pub struct Solver<'m> {
    model: &'m Model,
    cfg: SolverConfig,
    limits: StabilityLimits,
    dt: f64,
    faces: FaceDiffusivity,
    host_stencils: Vec<Option<MaskStencil>>,
    div: Vec<f64>,
    scratch: Vec<f64>,
    host_scratch: Vec<HostRates>,
    exposure: Option<Vec<Vec<f64>>>,
}

impl<'m> Solver<'m> {
    /// Solver with `dt` chosen from the stability limits and `dt_max`.
    pub fn new(model: &'m Model, initial: &SimState, cfg: SolverConfig) -> Result<Solver<'m>> {
        cfg.validate()?;
        let limits = StabilityLimits::compute(model, initial, &cfg)?;
        let dt = choose_dt(&limits, cfg.dt_max_months);
        Solver::build(model, cfg, limits, dt)
    }

    /// Solver with a caller-chosen `dt`; [`Solver::step`] rejects it if it
    /// breaks a stability limit.
    pub fn with_dt(model: &'m Model, initial: &SimState, cfg: SolverConfig, dt: f64) -> Result<Solver<'m>> {
        cfg.validate()?;
        if !(dt > 0.0) {
            return Err(Error::config(format!("dt must be positive, got {dt}")));
        }
        let limits = StabilityLimits::compute(model, initial, &cfg)?;
        Solver::build(model, cfg, limits, dt)
    }

    fn build(model: &'m Model, cfg: SolverConfig, limits: StabilityLimits, dt: f64) -> Result<Solver<'m>> {
        let diffusive = cfg.mode == HostMode::TwoRegionDiffusive;
        if diffusive && model.sites.len() != 2 {
            return Err(Error::config(format!(
                "two_region_diffusive mode needs exactly two sites, got {}",
                model.sites.len()
            )));
        }
        model.validate(diffusive)?;
        let host_stencils = model
            .sites
            .iter()
            .zip(&model.params.sites)
            .map(|(site, sp)| match (&sp.host_diffusivity, diffusive) {
                (Some(d), true) => Some(MaskStencil::new(
                    &model.grid,
                    &site.mask,
                    &d.susceptible_exposed,
                    &d.infected,
                )),
                _ => None,
            })
            .collect();
        let n = model.grid.len();
        let host_scratch = model
            .sites
            .iter()
            .map(|s| HostRates {
                ds: vec![0.0; s.mask.len()],
                de: vec![0.0; s.mask.len()],
                di: vec![0.0; s.mask.len()],
            })
            .collect();
        Ok(Solver {
            model,
            faces: FaceDiffusivity::new(&model.grid, &model.params.diffusivity.values),
            cfg,
            limits,
            dt,
            host_stencils,
            div: vec![0.0; n],
            scratch: vec![0.0; n],
            host_scratch,
            exposure: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn limits(&self) -> &StabilityLimits {
        &self.limits
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Start accumulating `sum dt V_i` on every site's cells, using the
    /// same `V_i` the susceptible update sees.
    pub fn track_exposure(&mut self) {
        self.exposure = Some(self.model.sites.iter().map(|s| vec![0.0; s.mask.len()]).collect());
    }

    pub fn exposure(&self) -> Option<&[Vec<f64>]> {
        self.exposure.as_deref()
    }

    pub fn step(&mut self, state: &mut SimState) -> Result<StepReport> {
        self.limits.check(self.dt)?;
        let dt = self.dt;
        let model = self.model;
        let grid = &model.grid;
        let p = &model.params;
        let area = grid.cell_area();

        // (1) reactions, all from the pre-step state: incidence into
        // `scratch`, then hosts (read V_i), then vectors.
        for ((site, host), sp) in model.sites.iter().zip(&state.hosts).zip(&p.sites) {
            for (k, &c) in site.mask.cells().iter().enumerate() {
                self.scratch[c] = sp.vector_infection[k] * host.i[k] * state.vs.values[c];
            }
        }
        let lambda = p.incubation_rate;
        let delta = p.removal_rate;
        for (k, ((site, host), sp)) in model.sites.iter().zip(state.hosts.iter_mut()).zip(&p.sites).enumerate() {
            let mut acc = self.exposure.as_mut().map(|e| &mut e[k]);
            for (q, &c) in site.mask.cells().iter().enumerate() {
                let vi = state.vi.values[c];
                let (s, e, i) = (host.s[q], host.e[q], host.i[q]);
                let infection = sp.host_infection[q] * s * vi;
                host.s[q] = s - dt * infection;
                host.e[q] = e + dt * (infection - lambda * e);
                host.i[q] = i + dt * (lambda * e - delta * i);
                if let Some(acc) = acc.as_deref_mut() {
                    acc[q] += dt * vi;
                }
            }
        }
        let mut logistic = 0.0;
        for (((s, i), (beta, m)), f) in state
            .vs
            .values
            .iter_mut()
            .zip(state.vi.values.iter_mut())
            .zip(p.birth_rate.values.iter().zip(&p.mortality.values))
            .zip(self.scratch.iter_mut())
        {
            let (s_old, i_old) = (*s, *i);
            let v = s_old + i_old;
            logistic += beta * v - m * v * v;
            *s = s_old + dt * (beta * v - m * s_old * v - *f);
            *i = i_old + dt * (-m * i_old * v + *f);
            *f = 0.0;
        }

        // (2) vector diffusion
        let h = grid.h();
        for field in [&mut state.vs.values, &mut state.vi.values] {
            self.faces.apply(field, h, &mut self.div);
            for (u, d) in field.iter_mut().zip(&self.div) {
                *u += dt * d;
            }
        }

        // (3) vector advection
        let mut outflow = 0.0;
        if p.velocity != [0.0, 0.0] {
            for field in [&mut state.vs.values, &mut state.vi.values] {
                outflow += dt * upwind_divergence(grid, field, p.velocity, &mut self.div);
                for (u, d) in field.iter_mut().zip(&self.div) {
                    *u -= dt * d;
                }
            }
        }

        // (4) host diffusion
        for ((stencil, host), rates) in self.host_stencils.iter().zip(state.hosts.iter_mut()).zip(&mut self.host_scratch) {
            let Some(stencil) = stencil else { continue };
            for v in rates.ds.iter_mut().chain(rates.de.iter_mut()).chain(rates.di.iter_mut()) {
                *v = 0.0;
            }
            stencil.apply(host, h, dt, rates);
            for (x, d) in host.s.iter_mut().zip(&rates.ds) {
                *x += d;
            }
            for (x, d) in host.e.iter_mut().zip(&rates.de) {
                *x += d;
            }
            for (x, d) in host.i.iter_mut().zip(&rates.di) {
                *x += d;
            }
        }

        state.t += dt;
        Ok(StepReport {
            dt,
            outflow,
            logistic_source: logistic * area * dt,
        })
    }

    /// Number of steps needed to reach `t_end` from `t = 0`.
    pub fn step_count(&self) -> usize {
        (self.cfg.t_end_months / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Advances `state` to `t_end`, checking invariants after every step and
    /// emitting a record every `output_stride_steps` steps (and at the end).
    pub fn run(
        &mut self,
        state: &mut SimState,
        policy: ViolationPolicy,
        observer: &mut dyn Observer,
    ) -> Result<DiagnosticsSeries> {
        let result = self.run_inner(state, policy, observer);
        let finished = observer.finish();
        let series = result?;
        finished?;
        Ok(series)
    }

    fn run_inner(
        &mut self,
        state: &mut SimState,
        policy: ViolationPolicy,
        observer: &mut dyn Observer,
    ) -> Result<DiagnosticsSeries> {
        let model = self.model;
        let h = model.grid.h();
        let t0 = state.t;
        let mut series = DiagnosticsSeries {
            labels: model.sites.iter().map(|s| s.label.clone()).collect(),
            centers: model.sites.iter().map(|s| s.spec.center_km).collect(),
            initial_host: state.hosts.iter().map(|hs| hs.totals(h)).collect(),
            records: Vec::new(),
            violations: Vec::new(),
            dt: self.dt,
            steps: 0,
        };
        let mut monitor = Monitor::new(model, state, policy)?;
        let n_steps = self.step_count();
        let mut snapshot_steps: Vec<usize> = observer
            .snapshot_times()
            .into_iter()
            .filter(|&t| t >= 0.0 && t <= self.cfg.t_end_months + 1e-9)
            .map(|t| ((t / self.dt).round() as usize).min(n_steps))
            .collect();
        snapshot_steps.sort_unstable();
        snapshot_steps.dedup();
        let mut next_snapshot = snapshot_steps.iter().peekable();

        let outcome = (|| -> Result<()> {
            let rec = monitor.initial_record(state)?;
            observer.on_record(&rec)?;
            series.records.push(rec);
            if next_snapshot.peek() == Some(&&0) {
                next_snapshot.next();
                observer.on_snapshot(state, model)?;
            }
            let stride = self.cfg.output_stride_steps;
            for n in 1..=n_steps {
                let report = self.step(state)?;
                // t from the step index avoids drift from repeated addition
                state.t = t0 + n as f64 * self.dt;
                series.steps = n;
                let rec = monitor.after_step(n, state, report.dt, report.outflow, report.logistic_source)?;
                if n % stride == 0 || n == n_steps {
                    observer.on_record(&rec)?;
                    series.records.push(rec);
                }
                while next_snapshot.peek() == Some(&&n) {
                    next_snapshot.next();
                    observer.on_snapshot(state, model)?;
                }
            }
            Ok(())
        })();
        series.violations = monitor.into_violations();
        outcome.map(|_| series)
    }
}

/// Host totals `(S, E, I)` of one site.
pub fn site_totals(state: &SimState, site: usize, h: f64) -> [f64; 3] {
    let hs = &state.hosts[site];
    [
        integrate_compact(&hs.s, h),
        integrate_compact(&hs.e, h),
        integrate_compact(&hs.i, h),
    ]
}
