//! Vector right-hand sides: incidence, logistic reaction with infection
//! transfer, and the conservative transport operators.
//!
//! Transport operators are finite-volume divergences on the cell-centred
//! grid. Diffusion uses harmonic-mean face diffusivities and zero flux
//! through the outer boundary. Advection is first-order upwind; with
//! [`BoundaryMode::Outflow`] boundary faces carry the zero-gradient flux
//! `w . n u_b`, otherwise they are closed.

use crate::error::Result;
use crate::grid::{BoundaryMode, Grid, SpatialField, Unit};
use crate::model::{Model, SimState};

/// `f = alpha_j I_j V_s` on the cells of site `j`, zero off the sites.
pub fn incidence(state: &SimState, model: &Model) -> Result<SpatialField> {
    let mut f = model.grid.field(Unit::VectorDensity);
    for ((site, host), sp) in model.sites.iter().zip(&state.hosts).zip(&model.params.sites) {
        for (k, &c) in site.mask.cells().iter().enumerate() {
            f.values[c] = sp.vector_infection[k] * host.i[k] * state.vs.values[c];
        }
    }
    Ok(f)
}

/// Pointwise `(dV_s, dV_i)` of the vector reaction terms.
pub fn vector_reaction(state: &SimState, model: &Model, f: &SpatialField) -> Result<(SpatialField, SpatialField)> {
    let p = &model.params;
    state.vs.check_shape(&state.vi)?;
    state.vs.check_shape(f)?;
    state.vs.check_shape(&p.birth_rate)?;
    let n = state.vs.values.len();
    let mut dvs = Vec::with_capacity(n);
    let mut dvi = Vec::with_capacity(n);
    for c in 0..n {
        let vs = state.vs.values[c];
        let vi = state.vi.values[c];
        let v = vs + vi;
        let beta = p.birth_rate.values[c];
        let m = p.mortality.values[c];
        dvs.push(beta * v - m * vs * v - f.values[c]);
        dvi.push(-m * vi * v + f.values[c]);
    }
    let shape = state.vs.shape;
    Ok((
        SpatialField { shape, values: dvs, unit: Unit::VectorDensity },
        SpatialField { shape, values: dvi, unit: Unit::VectorDensity },
    ))
}

/// Harmonic-mean diffusivities on interior faces.
#[derive(Debug, Clone)]
pub struct FaceDiffusivity {
    nx: usize,
    ny: usize,
    /// Face between `(i, j)` and `(i + 1, j)` at `j * (nx - 1) + i`.
    x: Vec<f64>,
    /// Face between `(i, j)` and `(i, j + 1)` at `j * nx + i`.
    y: Vec<f64>,
}

pub(crate) fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

impl FaceDiffusivity {
    pub fn new(grid: &Grid, d: &[f64]) -> FaceDiffusivity {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut x = Vec::with_capacity((nx - 1) * ny);
        for j in 0..ny {
            for i in 0..nx - 1 {
                x.push(harmonic(d[j * nx + i], d[j * nx + i + 1]));
            }
        }
        let mut y = Vec::with_capacity(nx * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx {
                y.push(harmonic(d[j * nx + i], d[(j + 1) * nx + i]));
            }
        }
        FaceDiffusivity { nx, ny, x, y }
    }

    /// Writes `div(D grad u)` into `out`.
    pub(crate) fn apply(&self, u: &[f64], h: f64, out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let inv_h2 = 1.0 / (h * h);
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx {
                let c = row + i;
                let uc = u[c];
                let mut acc = 0.0;
                if i > 0 {
                    acc += self.x[j * (nx - 1) + i - 1] * (u[c - 1] - uc);
                }
                if i + 1 < nx {
                    acc += self.x[j * (nx - 1) + i] * (u[c + 1] - uc);
                }
                if j > 0 {
                    acc += self.y[(j - 1) * nx + i] * (u[c - nx] - uc);
                }
                if j + 1 < ny {
                    acc += self.y[j * nx + i] * (u[c + nx] - uc);
                }
                out[c] = acc * inv_h2;
            }
        }
    }
}

/// `div(D grad u)` with zero flux through the outer boundary.
pub fn diffusion_flux(field: &SpatialField, d: &SpatialField, grid: &Grid) -> Result<SpatialField> {
    field.check_shape(d)?;
    let faces = FaceDiffusivity::new(grid, &d.values);
    let mut out = vec![0.0; field.values.len()];
    faces.apply(&field.values, grid.h(), &mut out);
    Ok(SpatialField {
        shape: field.shape,
        values: out,
        unit: field.unit,
    })
}

/// Writes the upwind divergence `div(w u)` into `out` and returns the net
/// outward boundary flux `sum_boundary (w . n) u h` (per month).
pub(crate) fn upwind_divergence(grid: &Grid, u: &[f64], w: [f64; 2], out: &mut [f64]) -> f64 {
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    let open = grid.boundary == BoundaryMode::Outflow;
    let (wx, wy) = (w[0], w[1]);
    let (wxp, wxm) = (wx.max(0.0), wx.min(0.0));
    let (wyp, wym) = (wy.max(0.0), wy.min(0.0));
    let inv_h = 1.0 / h;
    let mut boundary = 0.0;
    for j in 0..ny {
        let row = j * nx;
        for i in 0..nx {
            let c = row + i;
            let uc = u[c];
            let west = if i > 0 {
                wxp * u[c - 1] + wxm * uc
            } else if open {
                wx * uc
            } else {
                0.0
            };
            let east = if i + 1 < nx {
                wxp * uc + wxm * u[c + 1]
            } else if open {
                wx * uc
            } else {
                0.0
            };
            let south = if j > 0 {
                wyp * u[c - nx] + wym * uc
            } else if open {
                wy * uc
            } else {
                0.0
            };
            let north = if j + 1 < ny {
                wyp * uc + wym * u[c + nx]
            } else if open {
                wy * uc
            } else {
                0.0
            };
            if open {
                if i == 0 {
                    boundary -= west;
                }
                if i + 1 == nx {
                    boundary += east;
                }
                if j == 0 {
                    boundary -= south;
                }
                if j + 1 == ny {
                    boundary += north;
                }
            }
            out[c] = (east - west + north - south) * inv_h;
        }
    }
    boundary * h
}

/// First-order upwind `div(w u)` for a constant transport velocity `w`.
pub fn advection_flux(field: &SpatialField, w: [f64; 2], grid: &Grid) -> Result<SpatialField> {
    let mut out = vec![0.0; field.values.len()];
    upwind_divergence(grid, &field.values, w, &mut out);
    Ok(SpatialField {
        shape: field.shape,
        values: out,
        unit: field.unit,
    })
}
