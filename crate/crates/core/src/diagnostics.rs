//! Runtime invariant checks and epidemiological summaries.
//!
//! The per-step checks (nonnegativity, the sup bound of the vector total,
//! monotone susceptible totals) run inside the stepper through [`Monitor`].
//! Series-level checks work on the recorded [`DiagnosticsSeries`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_bounds, Model, SimState};

/// Relative slack on the vector sup bound.
pub const BOUND_REL_TOL: f64 = 1e-9;
/// Nonnegativity slack relative to the problem scale.
pub const NEG_REL_TOL: f64 = 1e-12;
/// Allowed increase of a susceptible total between steps, relative to its
/// initial value.
pub const MONOTONE_REL_TOL: f64 = 1e-10;
/// Host budget slack relative to the initial host total.
pub const BUDGET_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViolationPolicy {
    /// Stop the run at the first violation.
    #[default]
    Abort,
    /// Record the violation and continue.
    Warn,
}

/// Violation flags for one state; `true` marks a violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub negative: bool,
    pub above_bound: bool,
    pub non_finite: bool,
    pub susceptible_increase: bool,
}

impl Flags {
    pub fn any(&self) -> bool {
        self.negative || self.above_bound || self.non_finite || self.susceptible_increase
    }

    fn merge(&mut self, other: Flags) {
        self.negative |= other.negative;
        self.above_bound |= other.above_bound;
        self.non_finite |= other.non_finite;
        self.susceptible_increase |= other.susceptible_increase;
    }
}

/// Limits used by [`check_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundLimits {
    /// `max{beta*/m_*, max V(., 0)}`.
    pub v_bound: f64,
    /// Most negative value tolerated.
    pub eps_neg: f64,
}

impl BoundLimits {
    pub fn new(model: &Model, initial: &SimState) -> Result<BoundLimits> {
        let bounds = param_bounds(&model.params)?;
        let v0 = initial.total_vector().max();
        let v_bound = bounds.capacity_bound().max(v0);
        let host_scale = initial
            .hosts
            .iter()
            .flat_map(|h| h.s.iter().chain(&h.e).chain(&h.i))
            .copied()
            .fold(0.0, f64::max);
        let scale = v_bound.max(host_scale).max(1.0);
        Ok(BoundLimits {
            v_bound,
            eps_neg: NEG_REL_TOL * scale,
        })
    }
}

/// Extremes seen by [`check_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub flags: Flags,
    pub min_value: f64,
    pub v_max: f64,
    pub vi_max: f64,
}

/// Nonnegativity of every field and `max (V_s + V_i) <= v_bound (1 + 1e-9)`.
pub fn check_bounds(state: &SimState, limits: &BoundLimits) -> BoundReport {
    let mut min_value = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    let mut vi_max = f64::NEG_INFINITY;
    let mut finite = true;
    for (&a, &b) in state.vs.values.iter().zip(&state.vi.values) {
        let v = a + b;
        finite &= v.is_finite();
        min_value = min_value.min(a).min(b);
        v_max = v_max.max(v);
        vi_max = vi_max.max(b);
    }
    for h in &state.hosts {
        for &x in h.s.iter().chain(&h.e).chain(&h.i) {
            finite &= x.is_finite();
            min_value = min_value.min(x);
        }
    }
    BoundReport {
        flags: Flags {
            negative: min_value < -limits.eps_neg,
            above_bound: v_max > limits.v_bound * (1.0 + BOUND_REL_TOL),
            non_finite: !finite,
            susceptible_increase: false,
        },
        min_value,
        v_max,
        vi_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SiteTotals {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub e_max: f64,
    pub i_max: f64,
    /// Running `lambda int int E + delta int int I`.
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub sites: Vec<SiteTotals>,
    pub vs_total: f64,
    pub vi_total: f64,
    pub v_total: f64,
    pub v_max: f64,
    pub vi_max: f64,
    /// Vector mass that left through the boundary so far.
    pub outflow: f64,
    /// Running `int int (beta V - m V^2)`.
    pub logistic_source: f64,
    pub min_value: f64,
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ViolationKind {
    Negative,
    AboveBound,
    NonFinite,
    SusceptibleIncrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub t: f64,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsSeries {
    pub labels: Vec<String>,
    pub centers: Vec<[f64; 2]>,
    /// `(S, E, I)` totals at `t = 0` for each site.
    pub initial_host: Vec<[f64; 3]>,
    pub records: Vec<DiagnosticsRecord>,
    pub violations: Vec<Violation>,
    pub dt: f64,
    /// Steps actually taken (records may be strided).
    pub steps: usize,
}

impl DiagnosticsSeries {
    pub fn last(&self) -> Option<&DiagnosticsRecord> {
        self.records.last()
    }

    pub fn site_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Site whose centre has the given x coordinate.
    pub fn site_at_x(&self, x: f64) -> Option<usize> {
        self.centers.iter().position(|c| (c[0] - x).abs() < 1e-9)
    }
}

/// Per-step invariant tracking and record assembly used by the stepper.
#[derive(Debug, Clone)]
pub struct Monitor {
    limits: BoundLimits,
    policy: ViolationPolicy,
    h: f64,
    lambda: f64,
    delta: f64,
    initial_s: Vec<f64>,
    last: Vec<SiteTotals>,
    outflow: f64,
    logistic: f64,
    flags: Flags,
    violations: Vec<Violation>,
}

impl Monitor {
    pub fn new(model: &Model, initial: &SimState, policy: ViolationPolicy) -> Result<Monitor> {
        let limits = BoundLimits::new(model, initial)?;
        let h = model.grid.h();
        let last: Vec<SiteTotals> = initial.hosts.iter().map(|hs| site_totals(hs, h, 0.0)).collect();
        Ok(Monitor {
            limits,
            policy,
            h,
            lambda: model.params.incubation_rate,
            delta: model.params.removal_rate,
            initial_s: last.iter().map(|s| s.s).collect(),
            last,
            outflow: 0.0,
            logistic: 0.0,
            flags: Flags::default(),
            violations: Vec::new(),
        })
    }

    pub fn limits(&self) -> &BoundLimits {
        &self.limits
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<Violation> {
        self.violations
    }

    /// Accounts for one completed step. `dt` is the step just taken; the
    /// host exposure uses the totals from before the step (left rule), which
    /// is what the explicit update conserves exactly.
    pub fn after_step(
        &mut self,
        step: usize,
        state: &SimState,
        dt: f64,
        outflow: f64,
        logistic: f64,
    ) -> Result<DiagnosticsRecord> {
        self.outflow += outflow;
        self.logistic += logistic;
        let mut totals = Vec::with_capacity(self.last.len());
        let mut s_increase = false;
        for (k, hs) in state.hosts.iter().enumerate() {
            let prev = self.last[k];
            let exposure = prev.exposure + dt * (self.lambda * prev.e + self.delta * prev.i);
            let cur = site_totals(hs, self.h, exposure);
            if cur.s > prev.s + MONOTONE_REL_TOL * self.initial_s[k] {
                s_increase = true;
            }
            totals.push(cur);
        }
        self.last = totals;
        let rec = self.record(step, state, s_increase);
        self.flags.merge(rec.flags);
        self.handle(&rec)?;
        Ok(rec)
    }

    /// Record for the current state without advancing the accumulators.
    pub fn initial_record(&mut self, state: &SimState) -> Result<DiagnosticsRecord> {
        let rec = self.record(0, state, false);
        self.handle(&rec)?;
        Ok(rec)
    }

    fn record(&self, step: usize, state: &SimState, s_increase: bool) -> DiagnosticsRecord {
        let report = check_bounds(state, &self.limits);
        let area = self.h * self.h;
        let vs_total = state.vs.values.iter().sum::<f64>() * area;
        let vi_total = state.vi.values.iter().sum::<f64>() * area;
        let mut flags = report.flags;
        flags.susceptible_increase = s_increase;
        DiagnosticsRecord {
            step,
            t: state.t,
            sites: self.last.clone(),
            vs_total,
            vi_total,
            v_total: vs_total + vi_total,
            v_max: report.v_max,
            vi_max: report.vi_max,
            outflow: self.outflow,
            logistic_source: self.logistic,
            min_value: report.min_value,
            flags,
        }
    }

    fn handle(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        let f = rec.flags;
        let mut found = Vec::new();
        if f.non_finite {
            found.push((ViolationKind::NonFinite, "non-finite value in state".to_string()));
        }
        if f.negative {
            found.push((
                ViolationKind::Negative,
                format!("minimum value {:e} below -{:e}", rec.min_value, self.limits.eps_neg),
            ));
        }
        if f.above_bound {
            found.push((
                ViolationKind::AboveBound,
                format!("max V = {} exceeds the bound {}", rec.v_max, self.limits.v_bound),
            ));
        }
        if f.susceptible_increase {
            found.push((ViolationKind::SusceptibleIncrease, "a susceptible total increased".to_string()));
        }
        for (kind, message) in found {
            self.violations.push(Violation {
                step: rec.step,
                t: rec.t,
                kind: kind.clone(),
                message: message.clone(),
            });
            if kind == ViolationKind::NonFinite {
                return Err(Error::NonFinite {
                    field: "state".into(),
                    t: rec.t,
                });
            }
            if self.policy == ViolationPolicy::Abort {
                return Err(Error::Invariant { t: rec.t, message });
            }
        }
        Ok(())
    }
}

fn site_totals(hs: &crate::model::HostState, h: f64, exposure: f64) -> SiteTotals {
    let [s, e, i] = hs.totals(h);
    SiteTotals {
        s,
        e,
        i,
        e_max: hs.e.iter().copied().fold(0.0, f64::max),
        i_max: hs.i.iter().copied().fold(0.0, f64::max),
        exposure,
    }
}

/// Host budget at one record for one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetResidual {
    pub site: usize,
    pub t: f64,
    /// `lambda int int E + delta int int I`.
    pub lhs: f64,
    /// `int (S0 + E0 + I0) - lhs`.
    pub residual: f64,
    /// `int (2 S0 + 2 E0 + I0) - lhs`, the bound obtained by adding the
    /// first two equations twice.
    pub weighted_residual: f64,
    /// `int (2 S0 + 2 E0 + I0) - int (2 S + 2 E + I)(t) - lhs`; zero up to
    /// roundoff for the explicit scheme.
    pub identity_gap: f64,
    pub violated: bool,
    pub weighted_violated: bool,
}

/// Evaluates `lambda int_0^t int E + delta int_0^t int I <= int (S0 + E0 + I0)`
/// at every record and site, with slack `BUDGET_REL_TOL` times the initial
/// host total. The weighted form is reported alongside.
pub fn check_host_budget(series: &DiagnosticsSeries) -> Vec<BudgetResidual> {
    let mut out = Vec::new();
    for rec in &series.records {
        for (k, st) in rec.sites.iter().enumerate() {
            let [s0, e0, i0] = series.initial_host[k];
            let total0 = s0 + e0 + i0;
            let weighted0 = 2.0 * s0 + 2.0 * e0 + i0;
            let tol = BUDGET_REL_TOL * total0.max(f64::MIN_POSITIVE);
            let residual = total0 - st.exposure;
            let weighted_residual = weighted0 - st.exposure;
            out.push(BudgetResidual {
                site: k,
                t: rec.t,
                lhs: st.exposure,
                residual,
                weighted_residual,
                identity_gap: weighted0 - (2.0 * st.s + 2.0 * st.e + st.i) - st.exposure,
                violated: residual < -tol,
                weighted_violated: weighted_residual < -BUDGET_REL_TOL * weighted0.max(f64::MIN_POSITIVE),
            });
        }
    }
    out
}

/// Consecutive record pairs where a site's S total increased beyond
/// `MONOTONE_REL_TOL` of its initial value: `(record index, site)`.
pub fn check_monotone_susceptibles(series: &DiagnosticsSeries) -> Result<Vec<(usize, usize)>> {
    if series.records.len() < 2 {
        return Err(Error::Domain("monotonicity check needs at least two records".into()));
    }
    let mut bad = Vec::new();
    for (n, pair) in series.records.windows(2).enumerate() {
        for k in 0..pair[0].sites.len() {
            let tol = MONOTONE_REL_TOL * series.initial_host[k][0];
            if pair[1].sites[k].s > pair[0].sites[k].s + tol {
                bad.push((n + 1, k));
            }
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutbreakEvent {
    pub site: String,
    pub center_km: [f64; 2],
    pub onset_months: f64,
    pub threshold_hosts: f64,
}

/// First time each site's infected total reaches `threshold`, linearly
/// interpolated between records. A site already at or above the threshold in
/// the first record gets onset at that record's time.
pub fn detect_outbreak(series: &DiagnosticsSeries, threshold: f64) -> Result<Vec<OutbreakEvent>> {
    if !(threshold > 0.0) {
        return Err(Error::config(format!("outbreak threshold must be positive, got {threshold}")));
    }
    let mut events = Vec::new();
    for k in 0..series.labels.len() {
        let mut prev: Option<(f64, f64)> = None;
        for rec in &series.records {
            let i = rec.sites[k].i;
            if i >= threshold {
                let onset = match prev {
                    None => rec.t,
                    Some((t0, i0)) => t0 + (threshold - i0) / (i - i0) * (rec.t - t0),
                };
                events.push(OutbreakEvent {
                    site: series.labels[k].clone(),
                    center_km: series.centers[k],
                    onset_months: onset,
                    threshold_hosts: threshold,
                });
                break;
            }
            prev = Some((rec.t, i));
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteAsymptotics {
    pub site: String,
    /// Final susceptible total, the estimate of the limit S*.
    pub s_star: f64,
    /// `|S(t_end) - S(t_end - window)| / S(t_end - window)`.
    pub relative_change: f64,
    pub converged: bool,
    pub e_final: f64,
    pub i_final: f64,
    pub e_peak: f64,
    pub i_peak: f64,
    pub e_max_final: f64,
    pub i_max_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSummary {
    pub t_end: f64,
    pub window_months: f64,
    pub sites: Vec<SiteAsymptotics>,
    pub vi_final: f64,
    pub vi_peak: f64,
    pub vi_max_final: f64,
    pub vi_max_peak: f64,
}

/// Relative change of the S totals below which a site counts as converged.
pub const ASYMPTOTIC_REL_CHANGE: f64 = 1e-3;

/// Terminal totals and the convergence verdict over the last `window`
/// months of the series.
pub fn asymptotic_summary(series: &DiagnosticsSeries, window: f64) -> Result<AsymptoticSummary> {
    let last = series
        .records
        .last()
        .ok_or_else(|| Error::Domain("asymptotic summary of an empty series".into()))?;
    let t_ref = last.t - window;
    let reference = series
        .records
        .iter()
        .rev()
        .find(|r| r.t <= t_ref + 1e-9)
        .unwrap_or(&series.records[0]);
    let peak = |f: &dyn Fn(&DiagnosticsRecord) -> f64| series.records.iter().map(f).fold(0.0, f64::max);
    let sites = (0..series.labels.len())
        .map(|k| {
            let s_end = last.sites[k].s;
            let s_ref = reference.sites[k].s;
            let relative_change = if s_ref > 0.0 {
                (s_end - s_ref).abs() / s_ref
            } else {
                0.0
            };
            SiteAsymptotics {
                site: series.labels[k].clone(),
                s_star: s_end,
                relative_change,
                converged: relative_change < ASYMPTOTIC_REL_CHANGE && reference.t < last.t,
                e_final: last.sites[k].e,
                i_final: last.sites[k].i,
                e_peak: peak(&|r| r.sites[k].e),
                i_peak: peak(&|r| r.sites[k].i),
                e_max_final: last.sites[k].e_max,
                i_max_final: last.sites[k].i_max,
            }
        })
        .collect();
    Ok(AsymptoticSummary {
        t_end: last.t,
        window_months: window,
        sites,
        vi_final: last.vi_total,
        vi_peak: peak(&|r| r.vi_total),
        vi_max_final: last.vi_max,
        vi_max_peak: peak(&|r| r.vi_max),
    })
}
