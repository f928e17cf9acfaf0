//! Scenario configuration (TOML), bundled presets and the run driver.
//!
//! Keys carry their units (`_km`, `_per_month`, ...). The vector velocity is
//! the transport velocity: the plume drifts along it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    asymptotic_summary, check_host_budget, check_monotone_susceptibles, detect_outbreak, AsymptoticSummary,
    DiagnosticsSeries, OutbreakEvent, Violation, ViolationPolicy,
};
use crate::error::{Error, Result};
use crate::grid::{validate_subregions, DomainSpec, SubregionSpec, Unit};
use crate::model::{
    build_initial_state, Coefficient, FieldInit, HostDiffusivity, HostInit, InitialConditions, Model, ModelParams,
    SimState, Site, SiteParams,
};
use crate::output::{self, RunWriter, SnapshotField};
use crate::solver::{HostMode, Solver, SolverConfig};
use crate::spectral::SpectralOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorConfig {
    pub diffusivity_km2_per_month: Coefficient,
    /// Drift velocity of the vector plume.
    pub transport_velocity_km_per_month: [f64; 2],
    pub birth_rate_per_month: Coefficient,
    pub mortality_km2_per_month_per_vector: Coefficient,
    pub initial_susceptible: FieldInit,
    pub initial_infected: FieldInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    /// Rate of leaving the exposed class (`lambda`).
    pub incubation_exit_rate_per_month: f64,
    /// Rate of leaving the infected class (`delta`).
    pub removal_rate_per_month: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub center_km: [f64; 2],
    pub radius_km: f64,
    /// `sigma_j`
    pub host_infection_rate_km2_per_month_per_vector: Coefficient,
    /// `alpha_j`
    pub vector_infection_rate_km2_per_month_per_host: Coefficient,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_diffusivity_se_km2_per_month: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_diffusivity_i_km2_per_month: Option<Coefficient>,
    pub susceptible: FieldInit,
    pub exposed: FieldInit,
    pub infected: FieldInit,
}

impl SiteConfig {
    pub fn subregion(&self) -> SubregionSpec {
        SubregionSpec {
            center_km: self.center_km,
            radius_km: self.radius_km,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub outbreak_threshold_hosts: f64,
    pub violation_policy: ViolationPolicy,
    pub asymptotic_window_months: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            outbreak_threshold_hosts: 1.0,
            violation_policy: ViolationPolicy::Abort,
            asymptotic_window_months: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Root directory; each run writes to `<dir>/<name>`.
    pub dir: PathBuf,
    pub snapshot_times_months: Vec<f64>,
    pub snapshot_fields: Vec<SnapshotField>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
            snapshot_times_months: Vec::new(),
            snapshot_fields: vec![SnapshotField::Vi, SnapshotField::S],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub domain: DomainSpec,
    pub vectors: VectorConfig,
    pub hosts: HostConfig,
    pub sites: Vec<SiteConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub spectral: SpectralOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A validated scenario: model and initial state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Model,
    pub initial: SimState,
}

pub const PRESET_NAMES: [&str; 3] = ["bluetongue_c0", "bluetongue_c10", "bluetongue_c20"];

fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "bluetongue_c0" => Some(include_str!("../presets/bluetongue_c0.toml")),
        "bluetongue_c10" => Some(include_str!("../presets/bluetongue_c10.toml")),
        "bluetongue_c20" => Some(include_str!("../presets/bluetongue_c20.toml")),
        _ => None,
    }
}

/// Bundled preset by name, parsed and validated.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let src = preset_source(name).ok_or_else(|| {
        Error::config(format!("unknown preset {name}; available: {}", PRESET_NAMES.join(", ")))
    })?;
    ScenarioConfig::from_toml_str(src, Path::new(name))
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml_str(&text, path)
}

/// Writes `config` as TOML.
pub fn write_config(config: &ScenarioConfig, path: &Path) -> Result<()> {
    fs::write(path, config.to_toml_string()?).map_err(|e| Error::io(path, e))
}

impl ScenarioConfig {
    /// Parses and validates; `origin` only labels errors.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<ScenarioConfig> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.build().map(|_| ())
    }

    pub fn is_diffusive(&self) -> bool {
        self.solver.mode == HostMode::TwoRegionDiffusive
    }

    /// Same scenario on a grid with cell size `h`.
    pub fn with_cell_size(&self, h: f64) -> ScenarioConfig {
        let mut c = self.clone();
        c.domain.cell_size_km = h;
        c
    }

    pub fn site_labels(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.subregion().label()).collect()
    }

    pub fn build(&self) -> Result<Scenario> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!("scenario name {:?} is not a valid directory name", self.name)));
        }
        self.solver.validate()?;
        let d = &self.diagnostics;
        if !(d.outbreak_threshold_hosts > 0.0) {
            return Err(Error::config("outbreak_threshold_hosts must be positive"));
        }
        if !(d.asymptotic_window_months > 0.0) {
            return Err(Error::config("asymptotic_window_months must be positive"));
        }
        if !(self.spectral.tolerance > 0.0) || self.spectral.max_iterations == 0 {
            return Err(Error::config("spectral tolerance and max_iterations must be positive"));
        }
        for &t in &self.output.snapshot_times_months {
            if !(t >= 0.0 && t <= self.solver.t_end_months) {
                return Err(Error::config(format!(
                    "snapshot time {t} outside [0, {}]",
                    self.solver.t_end_months
                )));
            }
        }
        if self.sites.is_empty() {
            return Err(Error::config("at least one site is required"));
        }

        let grid = self.domain.simulation_grid()?;
        let specs: Vec<SubregionSpec> = self.sites.iter().map(SiteConfig::subregion).collect();
        validate_subregions(&grid, &specs)?;
        let sites = specs
            .into_iter()
            .map(|s| Site::new(&grid, s))
            .collect::<Result<Vec<_>>>()?;
        let diffusive = self.is_diffusive();
        let site_params = self
            .sites
            .iter()
            .zip(&sites)
            .map(|(sc, site)| {
                let host_diffusivity = match (&sc.host_diffusivity_se_km2_per_month, &sc.host_diffusivity_i_km2_per_month) {
                    (Some(se), Some(i)) => Some(HostDiffusivity {
                        susceptible_exposed: se.sample_on(&grid, &site.mask),
                        infected: i.sample_on(&grid, &site.mask),
                    }),
                    (None, None) => None,
                    _ => {
                        return Err(Error::config(format!(
                            "site {}: give both host diffusivities or neither",
                            site.label
                        )))
                    }
                };
                Ok(SiteParams {
                    host_infection: sc.host_infection_rate_km2_per_month_per_vector.sample_on(&grid, &site.mask),
                    vector_infection: sc.vector_infection_rate_km2_per_month_per_host.sample_on(&grid, &site.mask),
                    host_diffusivity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let v = &self.vectors;
        let params = ModelParams {
            diffusivity: v.diffusivity_km2_per_month.sample(&grid, Unit::Diffusivity),
            velocity: v.transport_velocity_km_per_month,
            birth_rate: v.birth_rate_per_month.sample(&grid, Unit::PerMonth),
            mortality: v.mortality_km2_per_month_per_vector.sample(&grid, Unit::ContactRate),
            incubation_rate: self.hosts.incubation_exit_rate_per_month,
            removal_rate: self.hosts.removal_rate_per_month,
            sites: site_params,
        };
        let model = Model::new(grid, sites, params)?;
        if diffusive && model.sites.len() != 2 {
            return Err(Error::config(format!(
                "two_region_diffusive mode needs exactly two sites, got {}",
                model.sites.len()
            )));
        }
        model.validate(diffusive)?;

        let hosts: Vec<HostInit> = self
            .sites
            .iter()
            .map(|s| HostInit {
                susceptible: s.susceptible.clone(),
                exposed: s.exposed.clone(),
                infected: s.infected.clone(),
            })
            .collect();
        let vectors = InitialConditions {
            vector_susceptible: v.initial_susceptible.clone(),
            vector_infected: v.initial_infected.clone(),
        };
        let initial = build_initial_state(&model, &hosts, &vectors)?;
        Ok(Scenario {
            config: self.clone(),
            model,
            initial,
        })
    }
}

/// Budget verdicts per site over a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub site: String,
    /// `int (S0 + E0 + I0)`
    pub initial_total: f64,
    /// `int (2 S0 + 2 E0 + I0)`
    pub weighted_initial_total: f64,
    /// `lambda int int E + delta int int I` at the last record.
    pub lhs_final: f64,
    pub min_residual: f64,
    pub min_weighted_residual: f64,
    pub max_identity_gap: f64,
    pub bound_holds: bool,
    pub weighted_bound_holds: bool,
}

pub fn summarize_budget(series: &DiagnosticsSeries) -> Vec<BudgetSummary> {
    let residuals = check_host_budget(series);
    series
        .labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let [s0, e0, i0] = series.initial_host[k];
            let mine: Vec<_> = residuals.iter().filter(|r| r.site == k).collect();
            BudgetSummary {
                site: label.clone(),
                initial_total: s0 + e0 + i0,
                weighted_initial_total: 2.0 * s0 + 2.0 * e0 + i0,
                lhs_final: mine.last().map_or(0.0, |r| r.lhs),
                min_residual: mine.iter().map(|r| r.residual).fold(f64::INFINITY, f64::min),
                min_weighted_residual: mine.iter().map(|r| r.weighted_residual).fold(f64::INFINITY, f64::min),
                max_identity_gap: mine.iter().map(|r| r.identity_gap.abs()).fold(0.0, f64::max),
                bound_holds: mine.iter().all(|r| !r.violated),
                weighted_bound_holds: mine.iter().all(|r| !r.weighted_violated),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub grid_cells: [usize; 2],
    pub cell_size_km: f64,
    pub dt_months: f64,
    pub steps: usize,
    pub t_end_months: f64,
    pub monotone_failures: usize,
    pub violations: Vec<Violation>,
    pub outbreaks: Vec<OutbreakEvent>,
    pub budget: Vec<BudgetSummary>,
    pub summary: AsymptoticSummary,
}

impl RunReport {
    pub fn from_series(scenario: &Scenario, series: &DiagnosticsSeries) -> Result<RunReport> {
        let cfg = &scenario.config;
        let grid = &scenario.model.grid;
        Ok(RunReport {
            scenario: cfg.name.clone(),
            grid_cells: [grid.nx(), grid.ny()],
            cell_size_km: grid.h(),
            dt_months: series.dt,
            steps: series.steps,
            t_end_months: series.last().map_or(0.0, |r| r.t),
            monotone_failures: check_monotone_susceptibles(series)?.len(),
            violations: series.violations.clone(),
            outbreaks: detect_outbreak(series, cfg.diagnostics.outbreak_threshold_hosts)?,
            budget: summarize_budget(series),
            summary: asymptotic_summary(series, cfg.diagnostics.asymptotic_window_months)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub series: DiagnosticsSeries,
    pub report: RunReport,
}

/// Runs the scenario in memory without writing anything.
pub fn simulate(scenario: &Scenario) -> Result<(SimState, DiagnosticsSeries)> {
    let cfg = &scenario.config;
    let mut state = scenario.initial.clone();
    let mut solver = Solver::new(&scenario.model, &state, cfg.solver.clone())?;
    let series = solver.run(&mut state, cfg.diagnostics.violation_policy, &mut crate::solver::NoOutput)?;
    Ok((state, series))
}

/// Runs the scenario and writes its artifacts into `run_dir`, which is
/// created if its parent exists:
///
/// - `config.toml`: the resolved configuration;
/// - `diagnostics.csv`: one row per record;
/// - `snapshots/<field>_t<time>.csv`: grids at the configured times;
/// - `report.toml`: outbreaks, budget, asymptotics and violations.
///
/// Under the abort policy a run whose post-run checks fail (monotone
/// susceptibles in the non-diffusive mode, the weighted host budget) returns
/// an invariant error after writing the report.
pub fn run_scenario(scenario: &Scenario, run_dir: &Path) -> Result<RunOutcome> {
    let cfg = &scenario.config;
    match fs::create_dir(run_dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists && run_dir.is_dir() => {}
        Err(e) => return Err(Error::io(run_dir, e)),
    }
    write_config(cfg, &run_dir.join(output::CONFIG_FILE))?;

    let mut state = scenario.initial.clone();
    let mut solver = Solver::new(&scenario.model, &state, cfg.solver.clone())?;
    let mut writer = RunWriter::create(run_dir, &scenario.model, cfg)?;
    let series = solver.run(&mut state, cfg.diagnostics.violation_policy, &mut writer)?;

    let report = RunReport::from_series(scenario, &series)?;
    output::write_report(&report, &run_dir.join(output::REPORT_FILE))?;

    if cfg.diagnostics.violation_policy == ViolationPolicy::Abort {
        if !cfg.is_diffusive() && report.monotone_failures > 0 {
            return Err(Error::Invariant {
                t: report.t_end_months,
                message: format!("{} recorded increases of a susceptible total", report.monotone_failures),
            });
        }
        if let Some(b) = report.budget.iter().find(|b| !b.weighted_bound_holds) {
            return Err(Error::Invariant {
                t: report.t_end_months,
                message: format!("host budget exceeded at site {}", b.site),
            });
        }
    }
    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        series,
        report,
    })
}
