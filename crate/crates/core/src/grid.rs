//! Truncated computational domain, cell-centred grid, circular host
//! subregions and midpoint quadrature.
//!
//! Cells are indexed `(i, j)` with `i` along x and `j` along y; the flat
//! index is `j * nx + i` (x fastest). Cell `(i, j)` has its centre at
//! `origin + ((i + 0.5) h, (j + 0.5) h)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIVISIBILITY_TOL: f64 = 1e-9;
/// Smallest grid `Grid::new` will build.
const MIN_GRID_CELLS: usize = 2;
/// Smallest grid accepted for a simulation domain.
pub const MIN_DOMAIN_CELLS: usize = 4;

/// Boundary treatment for the vector transport operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Closed walls: no diffusive and no advective flux through the outer
    /// boundary.
    ZeroFlux,
    /// Zero diffusive flux, but upwind advective flux with zero-gradient
    /// ghost cells so the plume can leave through the downwind side.
    #[default]
    Outflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub origin_km: [f64; 2],
    pub extent_km: [f64; 2],
    pub cell_size_km: f64,
    #[serde(default)]
    pub boundary_mode: BoundaryMode,
}

impl DomainSpec {
    /// Builds the grid and additionally requires the simulation minimum of
    /// `MIN_DOMAIN_CELLS` cells per axis.
    pub fn simulation_grid(&self) -> Result<Grid> {
        let g = Grid::new(self)?;
        if g.nx() < MIN_DOMAIN_CELLS || g.ny() < MIN_DOMAIN_CELLS {
            return Err(Error::config(format!(
                "simulation domain needs at least {MIN_DOMAIN_CELLS} cells per axis, got {}x{}",
                g.nx(),
                g.ny()
            )));
        }
        Ok(g)
    }
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            origin_km: [0.0, 0.0],
            extent_km: [150.0, 60.0],
            cell_size_km: 0.5,
            boundary_mode: BoundaryMode::Outflow,
        }
    }
}

/// Grid dimensions, used to check that fields live on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    fn check(&self, other: &Shape) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny || self.h != other.h {
            return Err(Error::GridMismatch {
                expected: (self.nx, self.ny),
                actual: (other.nx, other.ny),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub origin: [f64; 2],
    pub shape: Shape,
    pub boundary: BoundaryMode,
}

fn cells_along(extent: f64, h: f64, axis: &str) -> Result<usize> {
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::config(format!("extent along {axis} must be positive, got {extent}")));
    }
    let ratio = extent / h;
    let n = ratio.round();
    if (ratio - n).abs() > DIVISIBILITY_TOL * ratio.max(1.0) {
        return Err(Error::config(format!(
            "extent {extent} km along {axis} is not an integer multiple of the cell size {h} km"
        )));
    }
    let n = n as usize;
    if n < MIN_GRID_CELLS {
        return Err(Error::config(format!(
            "grid needs at least {MIN_GRID_CELLS} cells along {axis}, got {n}"
        )));
    }
    Ok(n)
}

impl Grid {
    pub fn new(spec: &DomainSpec) -> Result<Grid> {
        let h = spec.cell_size_km;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::config(format!("cell size must be positive, got {h}")));
        }
        let nx = cells_along(spec.extent_km[0], h, "x")?;
        let ny = cells_along(spec.extent_km[1], h, "y")?;
        Ok(Grid {
            origin: spec.origin_km,
            shape: Shape { nx, ny, h },
            boundary: spec.boundary_mode,
        })
    }

    pub fn nx(&self) -> usize {
        self.shape.nx
    }

    pub fn ny(&self) -> usize {
        self.shape.ny
    }

    pub fn h(&self) -> f64 {
        self.shape.h
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn cell_area(&self) -> f64 {
        self.shape.cell_area()
    }

    pub fn area(&self) -> f64 {
        self.len() as f64 * self.cell_area()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.shape.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.shape.nx, idx / self.shape.nx)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.shape.h;
        [
            self.origin[0] + (i as f64 + 0.5) * h,
            self.origin[1] + (j as f64 + 0.5) * h,
        ]
    }

    /// Upper corner of the rectangle.
    pub fn upper(&self) -> [f64; 2] {
        [
            self.origin[0] + self.shape.nx as f64 * self.shape.h,
            self.origin[1] + self.shape.ny as f64 * self.shape.h,
        ]
    }

    /// Orthogonal neighbours of a cell, in the order -x, +x, -y, +y.
    /// `None` where the face is on the outer boundary.
    pub fn neighbors(&self, i: usize, j: usize) -> [Option<usize>; 4] {
        let Shape { nx, ny, .. } = self.shape;
        [
            (i > 0).then(|| self.index(i - 1, j)),
            (i + 1 < nx).then(|| self.index(i + 1, j)),
            (j > 0).then(|| self.index(i, j - 1)),
            (j + 1 < ny).then(|| self.index(i, j + 1)),
        ]
    }

    pub fn field(&self, unit: Unit) -> SpatialField {
        SpatialField::constant(self, 0.0, unit)
    }

    pub fn field_from_fn(&self, unit: Unit, f: impl Fn(f64, f64) -> f64) -> SpatialField {
        let mut values = Vec::with_capacity(self.len());
        for j in 0..self.ny() {
            for i in 0..self.nx() {
                let [x, y] = self.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        SpatialField {
            shape: self.shape,
            values,
            unit,
        }
    }
}

/// Physical unit attached to a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    VectorDensity,
    HostDensity,
    PerMonth,
    Diffusivity,
    ContactRate,
    Dimensionless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::VectorDensity => "vectors/km^2",
            Unit::HostDensity => "hosts/km^2",
            Unit::PerMonth => "1/month",
            Unit::Diffusivity => "km^2/month",
            Unit::ContactRate => "km^2/(month*individual)",
            Unit::Dimensionless => "1",
        })
    }
}

/// Scalar values on the cell centres of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialField {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl SpatialField {
    pub fn constant(grid: &Grid, value: f64, unit: Unit) -> SpatialField {
        SpatialField {
            shape: grid.shape,
            values: vec![value; grid.len()],
            unit,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>, unit: Unit) -> Result<SpatialField> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: (grid.nx(), grid.ny()),
                actual: (values.len(), 1),
            });
        }
        Ok(SpatialField {
            shape: grid.shape,
            values,
            unit,
        })
    }

    pub fn check_shape(&self, other: &SpatialField) -> Result<()> {
        self.shape.check(&other.shape)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.shape.nx + i]
    }
}

/// Circular host subregion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubregionSpec {
    pub center_km: [f64; 2],
    pub radius_km: f64,
}

impl SubregionSpec {
    /// Label derived from the centre, e.g. `x25_y30`. Sites are keyed by
    /// location rather than by ordinal.
    pub fn label(&self) -> String {
        format!("x{}_y{}", fmt_coord(self.center_km[0]), fmt_coord(self.center_km[1]))
    }

    fn gap(&self, other: &SubregionSpec) -> f64 {
        let dx = self.center_km[0] - other.center_km[0];
        let dy = self.center_km[1] - other.center_km[1];
        dx.hypot(dy) - self.radius_km - other.radius_km
    }
}

fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}").replace('.', "p").replace('-', "m")
    }
}

/// Checks the subregion list against the grid: each disk lies at least `2h`
/// inside the rectangle and distinct disks are separated by a positive gap.
pub fn validate_subregions(grid: &Grid, subs: &[SubregionSpec]) -> Result<()> {
    let lo = grid.origin;
    let hi = grid.upper();
    let margin = 2.0 * grid.h();
    for (k, s) in subs.iter().enumerate() {
        if !(s.radius_km > 0.0) {
            return Err(Error::config(format!("subregion {k}: radius must be positive")));
        }
        let [cx, cy] = s.center_km;
        let r = s.radius_km;
        if cx - r < lo[0] + margin || cx + r > hi[0] - margin || cy - r < lo[1] + margin || cy + r > hi[1] - margin {
            return Err(Error::config(format!(
                "subregion {k} centred at ({cx}, {cy}) with radius {r} is not inside the domain with a {margin} km margin"
            )));
        }
        for (l, t) in subs.iter().enumerate().skip(k + 1) {
            if s.gap(t) <= 0.0 {
                return Err(Error::config(format!(
                    "subregions {k} and {l} overlap or touch (gap {})",
                    s.gap(t)
                )));
            }
        }
    }
    Ok(())
}

/// Indicator of the cells belonging to one subregion.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Shape,
    /// Flat indices of member cells, ascending.
    cells: Vec<usize>,
    /// Position of each grid cell in `cells`, or `usize::MAX`.
    slot: Vec<usize>,
}

const NOT_IN_MASK: usize = usize::MAX;

impl Mask {
    /// Cells whose centres lie in the closed disk.
    pub fn disk(grid: &Grid, sub: &SubregionSpec) -> Result<Mask> {
        let [cx, cy] = sub.center_km;
        let r2 = sub.radius_km * sub.radius_km;
        let tol = 1e-12 * r2.max(1.0);
        let mask = Mask::from_predicate(grid, |x, y| {
            let dx = x - cx;
            let dy = y - cy;
            dx * dx + dy * dy <= r2 + tol
        });
        if mask.is_empty() {
            return Err(Error::config(format!(
                "subregion at ({cx}, {cy}) with radius {} contains no cell centre",
                sub.radius_km
            )));
        }
        Ok(mask)
    }

    pub fn from_predicate(grid: &Grid, pred: impl Fn(f64, f64) -> bool) -> Mask {
        let mut cells = Vec::new();
        let mut slot = vec![NOT_IN_MASK; grid.len()];
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let [x, y] = grid.cell_center(i, j);
                if pred(x, y) {
                    let idx = grid.index(i, j);
                    slot[idx] = cells.len();
                    cells.push(idx);
                }
            }
        }
        Mask {
            shape: grid.shape,
            cells,
            slot,
        }
    }

    /// Every cell of the grid.
    pub fn full(grid: &Grid) -> Mask {
        Mask::from_predicate(grid, |_, _| true)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.slot[idx] != NOT_IN_MASK
    }

    /// Position of a grid cell within the mask's compact storage.
    pub fn slot(&self, idx: usize) -> Option<usize> {
        let s = self.slot[idx];
        (s != NOT_IN_MASK).then_some(s)
    }

    pub fn area(&self) -> f64 {
        self.len() as f64 * self.shape.cell_area()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.cells.iter().all(|&c| !other.contains(c))
    }

    /// Scatter compact per-cell values into a full-grid field (zero elsewhere).
    pub fn scatter(&self, values: &[f64], unit: Unit) -> SpatialField {
        let mut out = vec![0.0; self.shape.len()];
        for (&c, &v) in self.cells.iter().zip(values) {
            out[c] = v;
        }
        SpatialField {
            shape: self.shape,
            values: out,
            unit,
        }
    }

    /// Gather the mask's cells from a full-grid field.
    pub fn gather(&self, field: &SpatialField) -> Vec<f64> {
        self.cells.iter().map(|&c| field.values[c]).collect()
    }
}

/// Midpoint quadrature `sum f_i h^2` over the masked cells, or over the whole
/// grid when `mask` is `None`.
pub fn integrate(field: &SpatialField, mask: Option<&Mask>) -> Result<f64> {
    let area = field.shape.cell_area();
    match mask {
        None => Ok(field.values.iter().sum::<f64>() * area),
        Some(m) => {
            m.shape.check(&field.shape)?;
            Ok(m.cells.iter().map(|&c| field.values[c]).sum::<f64>() * area)
        }
    }
}

/// Quadrature of compact per-cell values stored in mask order.
pub fn integrate_compact(values: &[f64], h: f64) -> f64 {
    values.iter().sum::<f64>() * h * h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(extent: [f64; 2], h: f64) -> DomainSpec {
        DomainSpec {
            origin_km: [0.0, 0.0],
            extent_km: extent,
            cell_size_km: h,
            boundary_mode: BoundaryMode::Outflow,
        }
    }

    #[test]
    fn default_grid_dimensions() {
        let g = Grid::new(&spec([150.0, 60.0], 0.5)).unwrap();
        assert_eq!((g.nx(), g.ny()), (300, 120));
        assert_eq!(g.cell_area(), 0.25);
    }

    #[test]
    fn coarse_grid() {
        let g = Grid::new(&spec([10.0, 10.0], 5.0)).unwrap();
        assert_eq!((g.nx(), g.ny()), (2, 2));
        // too coarse to host a simulation
        assert!(matches!(spec([10.0, 10.0], 5.0).simulation_grid(), Err(Error::Config(_))));
        assert!(spec([20.0, 20.0], 5.0).simulation_grid().is_ok());
    }

    #[test]
    fn non_divisible_extent_is_config_error() {
        let err = Grid::new(&spec([10.0, 10.0], 3.0)).unwrap_err();
        assert!(err.to_string().contains("integer multiple"), "{err}");
    }

    #[test]
    fn disk_area_close_to_analytic() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let m = Mask::disk(&g, &SubregionSpec { center_km: [25.0, 30.0], radius_km: 5.0 }).unwrap();
        let exact = std::f64::consts::PI * 25.0;
        assert!((m.area() - exact).abs() / exact < 0.03, "{}", m.area());
    }

    #[test]
    fn tiny_disk_on_a_cell_centre_has_one_cell() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let m = Mask::disk(&g, &SubregionSpec { center_km: [25.25, 30.25], radius_km: 0.1 }).unwrap();
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn disk_between_centres_is_empty() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let err = Mask::disk(&g, &SubregionSpec { center_km: [25.0, 30.0], radius_km: 0.1 }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bluetongue_sites_are_disjoint() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let a = SubregionSpec { center_km: [25.0, 30.0], radius_km: 5.0 };
        let b = SubregionSpec { center_km: [50.0, 30.0], radius_km: 5.0 };
        validate_subregions(&g, &[a.clone(), b.clone()]).unwrap();
        let ma = Mask::disk(&g, &a).unwrap();
        let mb = Mask::disk(&g, &b).unwrap();
        assert!(ma.is_disjoint(&mb));
    }

    #[test]
    fn overlapping_or_edge_subregions_rejected() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let a = SubregionSpec { center_km: [25.0, 30.0], radius_km: 5.0 };
        let touching = SubregionSpec { center_km: [35.0, 30.0], radius_km: 5.0 };
        assert!(validate_subregions(&g, &[a.clone(), touching]).is_err());
        let edge = SubregionSpec { center_km: [5.5, 30.0], radius_km: 5.0 };
        assert!(validate_subregions(&g, &[edge]).is_err());
    }

    #[test]
    fn constant_field_quadrature() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let f = SpatialField::constant(&g, 1000.0, Unit::VectorDensity);
        assert_eq!(integrate(&f, None).unwrap(), 9_000_000.0);
        let z = g.field(Unit::VectorDensity);
        assert_eq!(integrate(&z, None).unwrap(), 0.0);
    }

    #[test]
    fn mask_plus_complement_is_whole() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let f = g.field_from_fn(Unit::HostDensity, |x, y| (x * 0.1).sin().abs() + y * 0.01);
        let m = Mask::disk(&g, &SubregionSpec { center_km: [50.0, 30.0], radius_km: 5.0 }).unwrap();
        let comp = Mask::from_predicate(&g, |x, y| (x - 50.0).hypot(y - 30.0) > 5.0 + 1e-12 * 25.0);
        let total = integrate(&f, None).unwrap();
        let split = integrate(&f, Some(&m)).unwrap() + integrate(&f, Some(&comp)).unwrap();
        assert!((total - split).abs() <= 1e-10 * total);
        assert_eq!(m.len() + comp.len(), g.len());
    }

    #[test]
    fn mismatched_field_rejected() {
        let g = Grid::new(&DomainSpec::default()).unwrap();
        let g2 = Grid::new(&spec([150.0, 60.0], 1.0)).unwrap();
        let m = Mask::full(&g2);
        let f = g.field(Unit::HostDensity);
        assert!(matches!(integrate(&f, Some(&m)), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn site_labels() {
        let s = SubregionSpec { center_km: [125.0, 30.0], radius_km: 5.0 };
        assert_eq!(s.label(), "x125_y30");
        let s = SubregionSpec { center_km: [12.5, 30.0], radius_km: 5.0 };
        assert_eq!(s.label(), "x12p5_y30");
    }
}
