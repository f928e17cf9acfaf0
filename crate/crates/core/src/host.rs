//! Per-site SEIR right-hand sides.
//!
//! Host densities live on mask cells only. In the diffusive mode each site
//! diffuses on its own mask with zero flux across the staircase boundary of
//! the mask, so hosts never leave their site.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{HostState, Model, SimState};
use crate::vector::harmonic;

/// Per-cell rates `(dS, dE, dI)` on the mask of one site.
#[derive(Debug, Clone, PartialEq)]
pub struct HostRates {
    pub ds: Vec<f64>,
    pub de: Vec<f64>,
    pub di: Vec<f64>,
}

/// `dS = -sigma S V_i`, `dE = sigma S V_i - lambda E`, `dI = lambda E - delta I`.
pub fn host_reaction(state: &SimState, model: &Model, site: usize) -> Result<HostRates> {
    let sp = site_params(model, site)?;
    let mask = &model.sites[site].mask;
    let host = &state.hosts[site];
    let lambda = model.params.incubation_rate;
    let delta = model.params.removal_rate;
    let n = mask.len();
    let mut rates = HostRates {
        ds: Vec::with_capacity(n),
        de: Vec::with_capacity(n),
        di: Vec::with_capacity(n),
    };
    for (k, &c) in mask.cells().iter().enumerate() {
        let infection = sp.host_infection[k] * host.s[k] * state.vi.values[c];
        rates.ds.push(-infection);
        rates.de.push(infection - lambda * host.e[k]);
        rates.di.push(lambda * host.e[k] - delta * host.i[k]);
    }
    Ok(rates)
}

fn site_params(model: &Model, site: usize) -> Result<&crate::model::SiteParams> {
    model
        .params
        .sites
        .get(site)
        .ok_or_else(|| Error::Domain(format!("no site with index {site}")))
}

/// Interior faces of a mask in compact numbering, with face diffusivities.
#[derive(Debug, Clone)]
pub struct MaskStencil {
    /// `(a, b, D_se, D_i)` for each face between mask slots `a` and `b`.
    faces: Vec<(usize, usize, f64, f64)>,
    len: usize,
}

impl MaskStencil {
    pub fn new(grid: &Grid, mask: &crate::grid::Mask, d_se: &[f64], d_i: &[f64]) -> MaskStencil {
        let mut faces = Vec::new();
        for (a, &c) in mask.cells().iter().enumerate() {
            let (i, j) = grid.coords(c);
            // +x and +y neighbours only, so each face is listed once
            let east = (i + 1 < grid.nx()).then(|| c + 1);
            let north = (j + 1 < grid.ny()).then(|| c + grid.nx());
            for nb in [east, north].into_iter().flatten() {
                if let Some(b) = mask.slot(nb) {
                    faces.push((a, b, harmonic(d_se[a], d_se[b]), harmonic(d_i[a], d_i[b])));
                }
            }
        }
        MaskStencil { faces, len: mask.len() }
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Adds `dt * div(D grad u)` for S, E (shared diffusivity) and I.
    pub(crate) fn apply(&self, host: &HostState, h: f64, scale: f64, out: &mut HostRates) {
        let k = scale / (h * h);
        for &(a, b, dse, di) in &self.faces {
            let fs = k * dse * (host.s[b] - host.s[a]);
            let fe = k * dse * (host.e[b] - host.e[a]);
            let fi = k * di * (host.i[b] - host.i[a]);
            out.ds[a] += fs;
            out.ds[b] -= fs;
            out.de[a] += fe;
            out.de[b] -= fe;
            out.di[a] += fi;
            out.di[b] -= fi;
        }
    }
}

/// Diffusive increments (rates) for the hosts of one site.
pub fn host_diffusion(state: &SimState, model: &Model, site: usize) -> Result<HostRates> {
    let sp = site_params(model, site)?;
    let Some(d) = &sp.host_diffusivity else {
        return Err(Error::Domain(format!(
            "site {} has no host diffusivities; host diffusion needs the diffusive mode",
            model.sites[site].label
        )));
    };
    let mask = &model.sites[site].mask;
    let stencil = MaskStencil::new(&model.grid, mask, &d.susceptible_exposed, &d.infected);
    let n = stencil.len;
    let mut rates = HostRates {
        ds: vec![0.0; n],
        de: vec![0.0; n],
        di: vec![0.0; n],
    };
    stencil.apply(&state.hosts[site], model.grid.h(), 1.0, &mut rates);
    Ok(rates)
}

/// `S_j0 exp(-sigma_j * int_0^t V_i)` per mask cell, given the accumulated
/// time integral of `V_i` on the same cells.
pub fn closed_form_s(s0: &[f64], sigma: &[f64], vi_integral: &[f64]) -> Vec<f64> {
    s0.iter()
        .zip(sigma)
        .zip(vi_integral)
        .map(|((s, sg), iv)| s * (-sg * iv).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryMode, DomainSpec, SpatialField, SubregionSpec, Unit};
    use crate::model::{HostDiffusivity, ModelParams, Site, SiteParams};

    fn model(radius: f64, diffusive: bool) -> Model {
        let g = Grid::new(&DomainSpec {
            origin_km: [0.0, 0.0],
            extent_km: [10.0, 10.0],
            cell_size_km: 0.5,
            boundary_mode: BoundaryMode::Outflow,
        })
        .unwrap();
        let site = Site::new(&g, SubregionSpec { center_km: [5.25, 5.25], radius_km: radius }).unwrap();
        let n = site.mask.len();
        let params = ModelParams {
            diffusivity: SpatialField::constant(&g, 1.0, Unit::Diffusivity),
            velocity: [0.0, 0.0],
            birth_rate: SpatialField::constant(&g, 1.0, Unit::PerMonth),
            mortality: SpatialField::constant(&g, 0.001, Unit::ContactRate),
            incubation_rate: 4.0,
            removal_rate: 1.0,
            sites: vec![SiteParams {
                host_infection: vec![1.0; n],
                vector_infection: vec![0.005; n],
                host_diffusivity: diffusive.then(|| HostDiffusivity {
                    susceptible_exposed: vec![0.3; n],
                    infected: vec![0.2; n],
                }),
            }],
        };
        Model::new(g, vec![site], params).unwrap()
    }

    fn state(m: &Model, s: f64, e: f64, i: f64, vi: f64) -> SimState {
        let n = m.sites[0].mask.len();
        SimState {
            t: 0.0,
            vs: SpatialField::constant(&m.grid, 1000.0, Unit::VectorDensity),
            vi: SpatialField::constant(&m.grid, vi, Unit::VectorDensity),
            hosts: vec![HostState {
                s: vec![s; n],
                e: vec![e; n],
                i: vec![i; n],
            }],
        }
    }

    #[test]
    fn disease_free_equilibrium() {
        let m = model(2.0, false);
        let r = host_reaction(&state(&m, 50.0, 0.0, 0.0, 0.0), &m, 0).unwrap();
        assert!(r.ds.iter().chain(&r.de).chain(&r.di).all(|&v| v == 0.0));
    }

    #[test]
    fn infection_and_incubation_rates() {
        let m = model(2.0, false);
        let r = host_reaction(&state(&m, 100.0, 3.0, 0.0, 1.0), &m, 0).unwrap();
        assert_eq!(r.ds[0], -100.0);
        assert_eq!(r.de[0], 100.0 - 4.0 * 3.0);
        let r = host_reaction(&state(&m, 0.0, 10.0, 0.0, 0.0), &m, 0).unwrap();
        assert_eq!(r.di[0], 40.0);
    }

    #[test]
    fn compartment_identity() {
        let m = model(2.0, false);
        let st = state(&m, 37.0, 5.5, 2.25, 3.7);
        let r = host_reaction(&st, &m, 0).unwrap();
        for k in 0..r.ds.len() {
            let sum = r.ds[k] + r.de[k] + r.di[k];
            assert!((sum + 1.0 * st.hosts[0].i[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn host_diffusion_requires_diffusive_mode() {
        let m = model(2.0, false);
        assert!(host_diffusion(&state(&m, 1.0, 1.0, 1.0, 0.0), &m, 0).is_err());
    }

    #[test]
    fn host_diffusion_of_constant_and_conservation() {
        let m = model(2.0, true);
        let r = host_diffusion(&state(&m, 4.0, 2.0, 1.0, 0.0), &m, 0).unwrap();
        assert!(r.ds.iter().chain(&r.de).chain(&r.di).all(|&v| v == 0.0));

        let mut st = state(&m, 0.0, 0.0, 0.0, 0.0);
        for (k, v) in st.hosts[0].s.iter_mut().enumerate() {
            *v = (k as f64 * 0.37).sin().abs() * 10.0;
        }
        st.hosts[0].i = st.hosts[0].s.iter().map(|v| v * v).collect();
        let r = host_diffusion(&st, &m, 0).unwrap();
        let ts: f64 = r.ds.iter().sum();
        let ti: f64 = r.di.iter().sum();
        assert!(ts.abs() < 1e-12 && ti.abs() < 1e-10, "{ts} {ti}");
    }

    #[test]
    fn two_cell_heat_exchange() {
        let g = Grid::new(&DomainSpec {
            origin_km: [0.0, 0.0],
            extent_km: [4.0, 4.0],
            cell_size_km: 1.0,
            boundary_mode: BoundaryMode::Outflow,
        })
        .unwrap();
        let mask = crate::grid::Mask::from_predicate(&g, |x, y| y == 1.5 && (x == 1.5 || x == 2.5));
        assert_eq!(mask.len(), 2);
        let st = MaskStencil::new(&g, &mask, &[0.7, 0.7], &[0.7, 0.7]);
        assert_eq!(st.face_count(), 1);
        let host = HostState {
            s: vec![2.0, 5.0],
            e: vec![0.0, 0.0],
            i: vec![0.0, 0.0],
        };
        let mut r = HostRates {
            ds: vec![0.0; 2],
            de: vec![0.0; 2],
            di: vec![0.0; 2],
        };
        st.apply(&host, 1.0, 1.0, &mut r);
        assert!((r.ds[0] - 0.7 * 3.0).abs() < 1e-15);
        assert!((r.ds[1] + 0.7 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_identities() {
        assert_eq!(closed_form_s(&[3.0, 4.0], &[1.0, 1.0], &[0.0, 0.0]), vec![3.0, 4.0]);
        let s = closed_form_s(&[8.0], &[1.0], &[std::f64::consts::LN_2]);
        assert!((s[0] - 4.0).abs() < 1e-14);
    }
}
