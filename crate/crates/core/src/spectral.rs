//! Principal eigenvalue of `T u = div(D grad u) + beta u` with Dirichlet
//! data outside a mask, and the persistence criterion for the vector
//! population.
//!
//! The discrete operator uses the same harmonic-mean face diffusivities as
//! the transport code. Cells outside the mask are held at zero, so faces
//! between a mask cell and a non-mask cell (or the grid edge) contribute a
//! Dirichlet term. The operator is symmetric, and
//! `rayleigh_quotient(u) = <u, T u> / <u, u>` is exactly the discrete form of
//! `int (-D |grad u|^2 + beta u^2) / int u^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{integrate, BoundaryMode, DomainSpec, Grid, Mask, SpatialField, Unit};
use crate::vector::harmonic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Stop when successive Rayleigh quotients differ by less than
    /// `tolerance * max(1, |lambda|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tolerance: 1e-8,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda1: f64,
    /// Unit discrete L2 norm, positive on the mask, zero elsewhere.
    pub eigenfunction: SpatialField,
    pub iterations: usize,
    /// `||T u - lambda1 u||_2` (discrete L2).
    pub residual: f64,
}

/// `T` restricted to a mask, in compact numbering.
struct MaskedOperator {
    /// `(a, b, D_face)` for faces with both cells in the mask.
    inner: Vec<(usize, usize, f64)>,
    /// `sum D_face / h^2 - beta` over all faces of each cell, Dirichlet
    /// faces included, so `T u_a = -diag_a u_a + sum_inner D u_b / h^2`.
    diag: Vec<f64>,
    inv_h2: f64,
    cells: Vec<usize>,
}

impl MaskedOperator {
    fn new(grid: &Grid, d: &SpatialField, beta: &SpatialField, mask: &Mask) -> Result<MaskedOperator> {
        d.check_shape(beta)?;
        if d.shape != mask.shape() {
            return Err(Error::GridMismatch {
                expected: (grid.nx(), grid.ny()),
                actual: (d.shape.nx, d.shape.ny),
            });
        }
        if mask.is_empty() {
            return Err(Error::Domain("eigenvalue problem on an empty mask".into()));
        }
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        let mut inner = Vec::new();
        let mut diag = vec![0.0; mask.len()];
        for (a, &c) in mask.cells().iter().enumerate() {
            let dc = d.values[c];
            if !(dc > 0.0) {
                return Err(Error::Assumption {
                    label: "A2",
                    message: format!("diffusivity must be positive on the mask, got {dc}"),
                });
            }
            let (i, j) = grid.coords(c);
            let mut exterior = 0.0;
            for (k, nb) in grid.neighbors(i, j).into_iter().enumerate() {
                match nb.and_then(|n| mask.slot(n).map(|b| (n, b))) {
                    Some((n, b)) => {
                        // each interior face once, from the -x/-y side
                        if k == 1 || k == 3 {
                            inner.push((a, b, harmonic(dc, d.values[n])));
                        }
                    }
                    None => {
                        // the zero value sits at the centre of the outside
                        // cell; past the grid edge the ghost cell carries D
                        let dn = nb.map_or(dc, |n| d.values[n]);
                        exterior += harmonic(dc, dn);
                    }
                }
            }
            diag[a] = exterior;
        }
        let mut op = MaskedOperator {
            inner,
            diag,
            inv_h2,
            cells: mask.cells().to_vec(),
        };
        for (a, &c) in op.cells.iter().enumerate() {
            op.diag[a] = op.diag[a] * inv_h2 - beta.values[c];
        }
        for &(a, b, df) in &op.inner {
            op.diag[a] += df * inv_h2;
            op.diag[b] += df * inv_h2;
        }
        Ok(op)
    }

    /// `out = T u`.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        for (o, (x, dg)) in out.iter_mut().zip(u.iter().zip(&self.diag)) {
            *o = -dg * x;
        }
        for &(a, b, df) in &self.inner {
            let w = df * self.inv_h2;
            out[a] += w * u[b];
            out[b] += w * u[a];
        }
    }

    /// Gershgorin upper bound on `-T`'s spectrum: `max_a (diag_a + sum |offdiag|)`.
    fn shift(&self) -> f64 {
        let mut row = self.diag.clone();
        for &(a, b, df) in &self.inner {
            row[a] += df * self.inv_h2;
            row[b] += df * self.inv_h2;
        }
        row.into_iter().fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of the discrete `T` on `mask`, by power iteration on
/// `T + s I` with `s` the Gershgorin bound that makes the shifted operator
/// positive semidefinite.
pub fn principal_eigenvalue(
    grid: &Grid,
    d: &SpatialField,
    beta: &SpatialField,
    mask: &Mask,
    opts: &SpectralOptions,
) -> Result<EigenResult> {
    let op = MaskedOperator::new(grid, d, beta, mask)?;
    let n = op.cells.len();
    let shift = op.shift();
    let mut u = vec![1.0 / (n as f64).sqrt(); n];
    let mut tu = vec![0.0; n];
    let mut rho_prev = f64::NAN;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut rho = 0.0;
    while iterations < opts.max_iterations {
        iterations += 1;
        op.apply(&u, &mut tu);
        rho = dot(&u, &tu);
        change = (rho - rho_prev).abs();
        if change <= opts.tolerance * rho.abs().max(1.0) {
            break;
        }
        rho_prev = rho;
        for (x, t) in u.iter_mut().zip(&tu) {
            *x = t + shift * *x;
        }
        let norm = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
    }
    if !(change <= opts.tolerance * rho.abs().max(1.0)) {
        return Err(Error::NotConverged { iterations, change });
    }
    // u has unit Euclidean norm; rescale to unit discrete L2 (sum u^2 h^2 = 1)
    let h = grid.h();
    let residual_sq: f64 = u.iter().zip(&tu).map(|(x, t)| (t - rho * x).powi(2)).sum();
    let mut full = vec![0.0; grid.len()];
    for (&c, &x) in op.cells.iter().zip(&u) {
        full[c] = x / h;
    }
    Ok(EigenResult {
        lambda1: rho,
        eigenfunction: SpatialField {
            shape: grid.shape,
            values: full,
            unit: Unit::Dimensionless,
        },
        iterations,
        // ||.||_2 of (T u - lambda u) for the L2-normalised u
        residual: residual_sq.sqrt(),
    })
}

/// Discrete `int (-D |grad u|^2 + beta u^2) / int u^2` for `u` vanishing off
/// the mask.
pub fn rayleigh_quotient(grid: &Grid, u: &SpatialField, d: &SpatialField, beta: &SpatialField, mask: &Mask) -> Result<f64> {
    u.check_shape(d)?;
    let op = MaskedOperator::new(grid, d, beta, mask)?;
    let compact = mask.gather(u);
    let norm = dot(&compact, &compact);
    if !(norm > 0.0) {
        return Err(Error::Domain("Rayleigh quotient of the zero function".into()));
    }
    let mut tu = vec![0.0; compact.len()];
    op.apply(&compact, &mut tu);
    Ok(dot(&compact, &tu) / norm)
}

/// Discrete `||grad u||_2` over face differences, counting faces to the
/// zero values outside the mask.
pub fn gradient_norm(grid: &Grid, u: &SpatialField, mask: &Mask) -> f64 {
    let mut acc = 0.0;
    for &c in mask.cells() {
        let (i, j) = grid.coords(c);
        for (k, nb) in grid.neighbors(i, j).into_iter().enumerate() {
            let other = nb.filter(|&n| mask.contains(n));
            match other {
                Some(n) if k == 1 || k == 3 => acc += (u.values[c] - u.values[n]).powi(2),
                Some(_) => {}
                None => acc += u.values[c].powi(2),
            }
        }
    }
    // sum over faces of ((du)/h)^2 h^2
    acc.sqrt()
}

/// Grid and mask for the open square `(-half, half)^2`. Cell centres fall
/// on `+-half`, so the zeros held outside the mask sit exactly on the
/// square's boundary.
pub fn dirichlet_square(half: f64, h: f64) -> Result<(Grid, Mask)> {
    let cells = 2.0 * half / h;
    if !(half > 0.0) || (cells - cells.round()).abs() > 1e-9 * cells {
        return Err(Error::config(format!("side {} is not a multiple of h = {h}", 2.0 * half)));
    }
    let n = cells.round() as usize + 3;
    let origin = -half - 1.5 * h;
    let grid = Grid::new(&DomainSpec {
        origin_km: [origin, origin],
        extent_km: [n as f64 * h, n as f64 * h],
        cell_size_km: h,
        boundary_mode: BoundaryMode::ZeroFlux,
    })?;
    let eps = 1e-9 * h;
    let mask = Mask::from_predicate(&grid, |x, y| x.abs() < half - eps && y.abs() < half - eps);
    Ok((grid, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistenceCriterion {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// `int beta dx > pi^2 D_M / 2` over the grid.
pub fn persistence_criterion(beta: &SpatialField, d_max: f64) -> Result<PersistenceCriterion> {
    if beta.values.iter().any(|&b| !(b >= 0.0)) {
        return Err(Error::Assumption {
            label: "A5",
            message: "birth rate must be nonnegative".into(),
        });
    }
    let lhs = integrate(beta, None)?;
    let rhs = std::f64::consts::PI.powi(2) * d_max / 2.0;
    Ok(PersistenceCriterion {
        lhs,
        rhs,
        satisfied: lhs > rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square(half: f64, h: f64) -> (Grid, Mask) {
        dirichlet_square(half, h).unwrap()
    }

    #[test]
    fn small_square_matches_closed_form_discrete_eigenvalue() {
        // discrete Dirichlet Laplacian on n x n points: -(4/h^2) * 2 sin^2(pi h / 2L)
        let (g, m) = square(2.0, 0.5);
        assert_eq!(m.len(), 49);
        let d = SpatialField::constant(&g, 1.0, Unit::Diffusivity);
        let beta = SpatialField::constant(&g, 0.0, Unit::PerMonth);
        let r = principal_eigenvalue(&g, &d, &beta, &m, &SpectralOptions::default()).unwrap();
        let exact = -2.0 * 4.0 / 0.25 * (PI * 0.5 / 8.0).sin().powi(2);
        assert!((r.lambda1 - exact).abs() < 1e-7, "{} vs {exact}", r.lambda1);
        assert!(r.lambda1 < 0.0);
        assert!(r.residual < 1e-2);
    }

    #[test]
    fn shift_of_beta_shifts_eigenvalue() {
        let (g, m) = square(2.0, 0.5);
        let d = SpatialField::constant(&g, 1.0, Unit::Diffusivity);
        let beta = g.field_from_fn(Unit::PerMonth, |x, y| 1.0 + 0.2 * (x * y).cos());
        let shifted = SpatialField {
            values: beta.values.iter().map(|b| b + 0.75).collect(),
            ..beta.clone()
        };
        let opts = SpectralOptions {
            tolerance: 1e-12,
            ..Default::default()
        };
        let a = principal_eigenvalue(&g, &d, &beta, &m, &opts).unwrap();
        let b = principal_eigenvalue(&g, &d, &shifted, &m, &opts).unwrap();
        assert!((b.lambda1 - a.lambda1 - 0.75).abs() < 1e-8);
    }

    #[test]
    fn eigenfunction_positive_and_normalised() {
        let (g, m) = square(2.0, 0.5);
        let d = SpatialField::constant(&g, 1.0, Unit::Diffusivity);
        let beta = SpatialField::constant(&g, 1.0, Unit::PerMonth);
        let r = principal_eigenvalue(&g, &d, &beta, &m, &SpectralOptions::default()).unwrap();
        for &c in m.cells() {
            assert!(r.eigenfunction.values[c] > 0.0);
        }
        let l2: f64 = r.eigenfunction.values.iter().map(|v| v * v).sum::<f64>() * g.cell_area();
        assert!((l2 - 1.0).abs() < 1e-12);
        let q = rayleigh_quotient(&g, &r.eigenfunction, &d, &beta, &m).unwrap();
        assert!((q - r.lambda1).abs() < 1e-8);
    }

    #[test]
    fn zero_function_rejected() {
        let (g, m) = square(2.0, 0.5);
        let d = SpatialField::constant(&g, 1.0, Unit::Diffusivity);
        let z = g.field(Unit::Dimensionless);
        assert!(rayleigh_quotient(&g, &z, &d, &z, &m).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let (g, m) = square(2.0, 0.5);
        let d = SpatialField::constant(&g, 1.0, Unit::Diffusivity);
        let beta = SpatialField::constant(&g, 1.0, Unit::PerMonth);
        let opts = SpectralOptions {
            tolerance: 1e-15,
            max_iterations: 3,
        };
        assert!(matches!(
            principal_eigenvalue(&g, &d, &beta, &m, &opts),
            Err(Error::NotConverged { iterations: 3, .. })
        ));
    }

    #[test]
    fn persistence_cases() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let beta = SpatialField::constant(&g, 1.0, Unit::PerMonth);
        let p = persistence_criterion(&beta, 1.0).unwrap();
        assert_eq!(p.lhs, 9000.0);
        assert!((p.rhs - PI * PI / 2.0).abs() < 1e-15);
        assert!(p.satisfied);
        let zero = g.field(Unit::PerMonth);
        assert!(!persistence_criterion(&zero, 1.0).unwrap().satisfied);
        // the inequality is strict
        let d_eq = 9000.0 * 2.0 / (PI * PI);
        assert!(!persistence_criterion(&beta, d_eq * (1.0 + 1e-12)).unwrap().satisfied);
        assert!(persistence_criterion(&beta, d_eq * (1.0 - 1e-12)).unwrap().satisfied);
    }
}
