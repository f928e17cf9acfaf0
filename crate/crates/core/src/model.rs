//! Model coefficients, state, and initial-condition constructors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate_compact, Grid, Mask, SpatialField, SubregionSpec, Unit};

/// `A * exp(1 - |x - c|^2 / (2 w))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center_km: [f64; 2],
    pub width_km2: f64,
}

impl GaussianBump {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center_km[0];
        let dy = y - self.center_km[1];
        self.amplitude * (1.0 - (dx * dx + dy * dy) / (2.0 * self.width_km2)).exp()
    }

    /// Integral over the whole plane, `A e 2 pi w`.
    pub fn total(&self) -> f64 {
        self.amplitude * std::f64::consts::E * 2.0 * std::f64::consts::PI * self.width_km2
    }

    fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) {
            return Err(Error::config(format!("negative bump amplitude {}", self.amplitude)));
        }
        if !(self.width_km2 > 0.0) {
            return Err(Error::config(format!("bump width must be positive, got {}", self.width_km2)));
        }
        Ok(())
    }
}

/// Spatial profile of a model coefficient: either a plain number or a named
/// field constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Uniform(f64),
    Profile(Profile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `background + A exp(1 - |x - c|^2 / (2 w))`
    Gaussian {
        background: f64,
        amplitude: f64,
        center_km: [f64; 2],
        width_km2: f64,
    },
    /// `value_at_origin + g . (x - origin)`, evaluated at cell centres.
    Linear {
        value_at_origin: f64,
        gradient_per_km: [f64; 2],
    },
}

impl Coefficient {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Coefficient::Uniform(v) => *v,
            Coefficient::Profile(Profile::Gaussian {
                background,
                amplitude,
                center_km,
                width_km2,
            }) => {
                background
                    + GaussianBump {
                        amplitude: *amplitude,
                        center_km: *center_km,
                        width_km2: *width_km2,
                    }
                    .eval(x, y)
            }
            Coefficient::Profile(Profile::Linear {
                value_at_origin,
                gradient_per_km,
            }) => value_at_origin + gradient_per_km[0] * x + gradient_per_km[1] * y,
        }
    }

    pub fn sample(&self, grid: &Grid, unit: Unit) -> SpatialField {
        grid.field_from_fn(unit, |x, y| self.eval(x, y))
    }

    pub fn sample_on(&self, grid: &Grid, mask: &Mask) -> Vec<f64> {
        mask.cells()
            .iter()
            .map(|&c| {
                let (i, j) = grid.coords(c);
                let [x, y] = grid.cell_center(i, j);
                self.eval(x, y)
            })
            .collect()
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Uniform(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    #[serde(rename = "S")]
    Susceptible,
    #[serde(rename = "E")]
    Exposed,
    #[serde(rename = "I")]
    Infected,
}

/// Initializer for one compartment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldInit {
    Constant {
        value_per_km2: f64,
    },
    Gaussian {
        amplitude_per_km2: f64,
        center_km: [f64; 2],
        width_km2: f64,
    },
    /// `factor` times a host compartment of the named site. For host
    /// compartments `site` defaults to the compartment's own site.
    Scaled {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        site: Option<String>,
        compartment: Compartment,
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInit {
    pub susceptible: FieldInit,
    pub exposed: FieldInit,
    pub infected: FieldInit,
}

impl HostInit {
    fn get(&self, c: Compartment) -> &FieldInit {
        match c {
            Compartment::Susceptible => &self.susceptible,
            Compartment::Exposed => &self.exposed,
            Compartment::Infected => &self.infected,
        }
    }
}

/// Host diffusivities for the diffusive two-site mode, on mask cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HostDiffusivity {
    /// Shared by susceptible and exposed hosts.
    pub susceptible_exposed: Vec<f64>,
    pub infected: Vec<f64>,
}

/// Per-site coefficients stored on the site's mask cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteParams {
    /// Host infection rate `sigma_j`.
    pub host_infection: Vec<f64>,
    /// Vector infection rate `alpha_j`.
    pub vector_infection: Vec<f64>,
    pub host_diffusivity: Option<HostDiffusivity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub diffusivity: SpatialField,
    /// Transport velocity of the vectors (km/month). The plume moves along
    /// this vector.
    pub velocity: [f64; 2],
    pub birth_rate: SpatialField,
    pub mortality: SpatialField,
    /// Exit rate from the exposed class.
    pub incubation_rate: f64,
    pub removal_rate: f64,
    pub sites: Vec<SiteParams>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub d_min: f64,
    pub d_max: f64,
    pub beta_star: f64,
    pub m_lower: f64,
    pub m_upper: f64,
}

impl ParamBounds {
    /// `beta* / m_*`, the invariant-rectangle level of the vector equation.
    pub fn capacity_bound(&self) -> f64 {
        self.beta_star / self.m_lower
    }
}

/// Exact min/max of the vector coefficients over the grid.
pub fn param_bounds(params: &ModelParams) -> Result<ParamBounds> {
    let d_min = params.diffusivity.min();
    let d_max = params.diffusivity.max();
    let beta_min = params.birth_rate.min();
    let beta_star = params.birth_rate.max();
    let m_lower = params.mortality.min();
    let m_upper = params.mortality.max();
    if !(d_min > 0.0) || !d_max.is_finite() {
        return Err(Error::Assumption {
            label: "A2",
            message: format!("vector diffusivity must satisfy 0 < D_m <= D <= D_M, got D_m = {d_min}"),
        });
    }
    if !(beta_min >= 0.0) || !beta_star.is_finite() {
        return Err(Error::Assumption {
            label: "A5",
            message: format!("birth rate must be nonnegative and bounded, got min {beta_min}"),
        });
    }
    if !(m_lower > 0.0) || !m_upper.is_finite() {
        return Err(Error::Assumption {
            label: "A6",
            message: format!("m must be >= m_* > 0, got m_* = {m_lower}"),
        });
    }
    Ok(ParamBounds {
        d_min,
        d_max,
        beta_star,
        m_lower,
        m_upper,
    })
}

/// Logistic equilibrium `beta(x) / m(x)`.
pub fn carrying_capacity(params: &ModelParams) -> Result<SpatialField> {
    params.birth_rate.check_shape(&params.mortality)?;
    if params.mortality.values.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Assumption {
            label: "A6",
            message: "carrying capacity needs m > 0 everywhere".into(),
        });
    }
    let values = params
        .birth_rate
        .values
        .iter()
        .zip(&params.mortality.values)
        .map(|(b, m)| b / m)
        .collect();
    Ok(SpatialField {
        shape: params.birth_rate.shape,
        values,
        unit: Unit::VectorDensity,
    })
}

/// A host site: geometry, discrete mask and location label.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub spec: SubregionSpec,
    pub mask: Mask,
    pub label: String,
}

impl Site {
    pub fn new(grid: &Grid, spec: SubregionSpec) -> Result<Site> {
        let mask = Mask::disk(grid, &spec)?;
        let label = spec.label();
        Ok(Site { spec, mask, label })
    }
}

/// Grid, sites and coefficients of one model instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub grid: Grid,
    pub sites: Vec<Site>,
    pub params: ModelParams,
}

impl Model {
    pub fn new(grid: Grid, sites: Vec<Site>, params: ModelParams) -> Result<Model> {
        for f in [&params.diffusivity, &params.birth_rate, &params.mortality] {
            if f.shape != grid.shape {
                return Err(Error::GridMismatch {
                    expected: (grid.nx(), grid.ny()),
                    actual: (f.shape.nx, f.shape.ny),
                });
            }
        }
        if params.sites.len() != sites.len() {
            return Err(Error::config(format!(
                "{} site parameter sets for {} sites",
                params.sites.len(),
                sites.len()
            )));
        }
        for (k, a) in sites.iter().enumerate() {
            for b in sites.iter().skip(k + 1) {
                if !a.mask.is_disjoint(&b.mask) {
                    return Err(Error::config(format!("masks of {} and {} overlap", a.label, b.label)));
                }
            }
            let p = &params.sites[k];
            let n = a.mask.len();
            let diff_ok = p
                .host_diffusivity
                .as_ref()
                .is_none_or(|d| d.susceptible_exposed.len() == n && d.infected.len() == n);
            if p.host_infection.len() != n || p.vector_infection.len() != n || !diff_ok {
                return Err(Error::config(format!("site {} coefficients do not match its mask", a.label)));
            }
        }
        Ok(Model { grid, sites, params })
    }

    pub fn site_index(&self, label: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.label == label)
    }

    /// Checks the discretely checkable modelling assumptions.
    pub fn validate(&self, diffusive_hosts: bool) -> Result<ParamBounds> {
        let bounds = param_bounds(&self.params)?;
        let [cx, cy] = self.params.velocity;
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Assumption {
                label: "A3",
                message: "velocity must be finite".into(),
            });
        }
        let p = &self.params;
        if !(p.incubation_rate > 0.0) || !(p.removal_rate > 0.0) {
            return Err(Error::Assumption {
                label: "A9",
                message: format!(
                    "lambda and delta must be positive, got lambda = {}, delta = {}",
                    p.incubation_rate, p.removal_rate
                ),
            });
        }
        for (site, sp) in self.sites.iter().zip(&p.sites) {
            let sigma_min = sp.host_infection.iter().copied().fold(f64::INFINITY, f64::min);
            let alpha_min = sp.vector_infection.iter().copied().fold(f64::INFINITY, f64::min);
            if !(sigma_min > 0.0) || !(alpha_min > 0.0) {
                return Err(Error::Assumption {
                    label: "A10",
                    message: format!(
                        "site {}: sigma and alpha must be bounded below by a positive constant (min sigma {sigma_min}, min alpha {alpha_min})",
                        site.label
                    ),
                });
            }
            match (&sp.host_diffusivity, diffusive_hosts) {
                (Some(d), true) => {
                    let dmin = d
                        .susceptible_exposed
                        .iter()
                        .chain(&d.infected)
                        .copied()
                        .fold(f64::INFINITY, f64::min);
                    if !(dmin > 0.0) {
                        return Err(Error::Assumption {
                            label: "A8",
                            message: format!("site {}: host diffusivities must be >= D_* > 0", site.label),
                        });
                    }
                }
                (None, true) => {
                    return Err(Error::Assumption {
                        label: "A8",
                        message: format!("site {}: diffusive hosts need host diffusivities", site.label),
                    })
                }
                _ => {}
            }
        }
        Ok(bounds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostState {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub i: Vec<f64>,
}

impl HostState {
    pub fn zeros(n: usize) -> HostState {
        HostState {
            s: vec![0.0; n],
            e: vec![0.0; n],
            i: vec![0.0; n],
        }
    }

    pub fn compartment(&self, c: Compartment) -> &[f64] {
        match c {
            Compartment::Susceptible => &self.s,
            Compartment::Exposed => &self.e,
            Compartment::Infected => &self.i,
        }
    }

    /// `(S, E, I)` totals for grid spacing `h`.
    pub fn totals(&self, h: f64) -> [f64; 3] {
        [
            integrate_compact(&self.s, h),
            integrate_compact(&self.e, h),
            integrate_compact(&self.i, h),
        ]
    }
}

/// Vector densities on the full grid plus host densities on each site's mask
/// (compact, in mask order).
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub vs: SpatialField,
    pub vi: SpatialField,
    pub hosts: Vec<HostState>,
}

impl SimState {
    pub fn total_vector(&self) -> SpatialField {
        let values = self.vs.values.iter().zip(&self.vi.values).map(|(a, b)| a + b).collect();
        SpatialField {
            shape: self.vs.shape,
            values,
            unit: Unit::VectorDensity,
        }
    }

    /// Host compartment summed over all sites as a full-grid field.
    pub fn host_field(&self, model: &Model, c: Compartment) -> SpatialField {
        let mut out = model.grid.field(Unit::HostDensity);
        for (site, host) in model.sites.iter().zip(&self.hosts) {
            for (&cell, &v) in site.mask.cells().iter().zip(host.compartment(c)) {
                out.values[cell] += v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub vector_susceptible: FieldInit,
    pub vector_infected: FieldInit,
}

fn eval_direct(init: &FieldInit, grid: &Grid, cells: &[usize]) -> Option<Result<Vec<f64>>> {
    match init {
        FieldInit::Constant { value_per_km2 } => {
            if !(*value_per_km2 >= 0.0) {
                return Some(Err(Error::config(format!("negative initial value {value_per_km2}"))));
            }
            Some(Ok(vec![*value_per_km2; cells.len()]))
        }
        FieldInit::Gaussian {
            amplitude_per_km2,
            center_km,
            width_km2,
        } => {
            let bump = GaussianBump {
                amplitude: *amplitude_per_km2,
                center_km: *center_km,
                width_km2: *width_km2,
            };
            if let Err(e) = bump.validate() {
                return Some(Err(e));
            }
            Some(Ok(cells
                .iter()
                .map(|&c| {
                    let (i, j) = grid.coords(c);
                    let [x, y] = grid.cell_center(i, j);
                    bump.eval(x, y)
                })
                .collect()))
        }
        FieldInit::Scaled { .. } => None,
    }
}

/// Builds the state at `t = 0`. Host compartments are evaluated on mask
/// cells only; `Scaled` initializers may reference non-scaled host
/// compartments of any site (no chains).
pub fn build_initial_state(model: &Model, hosts: &[HostInit], vectors: &InitialConditions) -> Result<SimState> {
    let grid = &model.grid;
    if hosts.len() != model.sites.len() {
        return Err(Error::config(format!(
            "{} host initializers for {} sites",
            hosts.len(),
            model.sites.len()
        )));
    }
    for (site, init) in model.sites.iter().zip(hosts) {
        if let FieldInit::Gaussian { center_km, .. } = &init.susceptible {
            let d = (center_km[0] - site.spec.center_km[0]).hypot(center_km[1] - site.spec.center_km[1]);
            if d > site.spec.radius_km {
                return Err(Error::config(format!(
                    "site {}: susceptible bump centred at {:?} lies outside the subregion",
                    site.label, center_km
                )));
            }
        }
    }

    // pass 1: direct initializers
    let mut direct: Vec<[Option<Vec<f64>>; 3]> = Vec::with_capacity(hosts.len());
    for (site, init) in model.sites.iter().zip(hosts) {
        let mut slot: [Option<Vec<f64>>; 3] = [None, None, None];
        for (k, c) in COMPARTMENTS.iter().enumerate() {
            slot[k] = eval_direct(init.get(*c), grid, site.mask.cells()).transpose()?;
        }
        direct.push(slot);
    }

    let resolve = |own: usize, site: &Option<String>, c: Compartment| -> Result<&Vec<f64>> {
        let idx = match site {
            None => own,
            Some(label) => model
                .site_index(label)
                .ok_or_else(|| Error::config(format!("initializer references unknown site {label}")))?,
        };
        direct[idx][comp_index(c)]
            .as_ref()
            .ok_or_else(|| Error::config(format!("scaled initializer references another scaled compartment ({c:?})")))
    };

    // pass 2: scaled copies
    let mut states = Vec::with_capacity(hosts.len());
    for (k, (site, init)) in model.sites.iter().zip(hosts).enumerate() {
        let mut out: [Vec<f64>; 3] = Default::default();
        for (ci, c) in COMPARTMENTS.iter().enumerate() {
            out[ci] = match (&direct[k][ci], init.get(*c)) {
                (Some(v), _) => v.clone(),
                (
                    None,
                    FieldInit::Scaled {
                        site: src,
                        compartment,
                        factor,
                    },
                ) => {
                    if !(*factor >= 0.0) {
                        return Err(Error::config(format!("negative scale factor {factor}")));
                    }
                    let src_idx = src.as_ref().and_then(|l| model.site_index(l)).unwrap_or(k);
                    if src_idx != k {
                        return Err(Error::config(format!(
                            "site {}: host compartments can only copy from their own site",
                            site.label
                        )));
                    }
                    resolve(k, src, *compartment)?.iter().map(|v| v * factor).collect()
                }
                (None, _) => unreachable!(),
            };
        }
        let [s, e, i] = out;
        states.push(HostState { s, e, i });
    }

    let all: Vec<usize> = (0..grid.len()).collect();
    let vector_field = |init: &FieldInit| -> Result<SpatialField> {
        if let Some(v) = eval_direct(init, grid, &all) {
            return SpatialField::from_values(grid, v?, Unit::VectorDensity);
        }
        let FieldInit::Scaled {
            site,
            compartment,
            factor,
        } = init
        else {
            unreachable!()
        };
        if !(*factor >= 0.0) {
            return Err(Error::config(format!("negative scale factor {factor}")));
        }
        let label = site
            .as_ref()
            .ok_or_else(|| Error::config("vector initializer copying a host compartment must name a site"))?;
        let idx = model
            .site_index(label)
            .ok_or_else(|| Error::config(format!("initializer references unknown site {label}")))?;
        let src = states[idx].compartment(*compartment);
        let mut f = model.sites[idx].mask.scatter(src, Unit::VectorDensity);
        f.values.iter_mut().for_each(|v| *v *= factor);
        Ok(f)
    };
    let vs = vector_field(&vectors.vector_susceptible)?;
    let vi = vector_field(&vectors.vector_infected)?;

    Ok(SimState {
        t: 0.0,
        vs,
        vi,
        hosts: states,
    })
}

const COMPARTMENTS: [Compartment; 3] = [Compartment::Susceptible, Compartment::Exposed, Compartment::Infected];

fn comp_index(c: Compartment) -> usize {
    match c {
        Compartment::Susceptible => 0,
        Compartment::Exposed => 1,
        Compartment::Infected => 2,
    }
}
