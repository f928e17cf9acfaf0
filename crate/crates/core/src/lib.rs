//! Spatial vector-host epidemic simulator.
//!
//! Vectors (susceptible `V_s`, infected `V_i`) diffuse, drift with a
//! transport velocity and follow logistic dynamics over a rectangle. Hosts
//! (`S`, `E`, `I`) live on disjoint circular sites and are coupled to the
//! vectors through criss-cross infection terms. The crate provides the grid
//! and field types, an explicit operator-split solver with runtime invariant
//! checks, the principal-eigenvalue persistence test, scenario configs with
//! bundled presets, and the run artifacts (CSV, TOML report, plots).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod host;
pub mod model;
pub mod output;
pub mod scenario;
pub mod solver;
pub mod spectral;
pub mod vector;

pub use diagnostics::{DiagnosticsRecord, DiagnosticsSeries, ViolationPolicy};
pub use error::{Error, Result};
pub use grid::{BoundaryMode, DomainSpec, Grid, Mask, SpatialField, SubregionSpec, Unit};
pub use model::{Coefficient, Compartment, FieldInit, Model, ModelParams, SimState};
pub use scenario::{load_config, preset, run_scenario, write_config, Scenario, ScenarioConfig};
pub use solver::{HostMode, Solver, SolverConfig};
pub use spectral::{persistence_criterion, principal_eigenvalue, EigenResult, SpectralOptions};
