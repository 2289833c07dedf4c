//! Spherical Web Mercator projection, the regular metric grid laid over it,
//! Morton (Z-order) cell identifiers and point-to-point distances.
//!
//! Grid cells are square in projected meters. On the ground they shrink by
//! `cos(lat)`, so a 30 m cell at 38° N covers roughly 23.6 m × 23.6 m.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sphere radius of the Web Mercator projection (EPSG:3857).
pub const MERCATOR_RADIUS_M: f64 = 6_378_137.0;
/// Mean earth radius used for haversine distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Latitude at which the square Mercator extent ends: `atan(sinh(π))`.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;
/// Half width of the projected extent, `R·π`.
pub const MERCATOR_EXTENT_M: f64 = MERCATOR_RADIUS_M * PI;

const INDEX_BIAS: i64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let p = GeoPoint { lon, lat };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lon.is_finite() || !self.lat.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite coordinate ({}, {})",
                self.lon, self.lat
            )));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Domain(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !(-MAX_LATITUDE..=MAX_LATITUDE).contains(&self.lat) {
            return Err(Error::Domain(format!(
                "latitude {} outside the Mercator range ±{MAX_LATITUDE}",
                self.lat
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
}

impl ProjectedPoint {
    pub fn distance(&self, other: &ProjectedPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    cell_size: f64,
}

impl GridSpec {
    pub const DEFAULT_CELL_SIZE: f64 = 30.0;

    pub fn new(cell_size: f64) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Config(format!("cell size must be > 0, got {cell_size}")));
        }
        Ok(GridSpec { cell_size })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cell_size: Self::DEFAULT_CELL_SIZE,
        }
    }
}

/// Morton code of a grid cell. The grid indices are signed; they are shifted
/// by 2^31 before interleaving so every representable cell gets a distinct
/// unsigned code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u64);

impl CellId {
    pub fn from_indices(ix: i64, iy: i64) -> Result<Self> {
        let bx = ix + INDEX_BIAS;
        let by = iy + INDEX_BIAS;
        if !(0..=u32::MAX as i64).contains(&bx) || !(0..=u32::MAX as i64).contains(&by) {
            return Err(Error::Domain(format!(
                "grid index ({ix}, {iy}) outside the 32-bit biased range"
            )));
        }
        Ok(CellId(morton_encode(bx as u32, by as u32)))
    }

    /// Signed grid indices `(ix, iy)`.
    pub fn indices(&self) -> (i64, i64) {
        let (bx, by) = morton_decode(self.0);
        (bx as i64 - INDEX_BIAS, by as i64 - INDEX_BIAS)
    }

    pub fn code(&self) -> u64 {
        self.0
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for CellId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse().map(CellId)
    }
}

/// Spherical Web Mercator forward transform.
pub fn project(p: GeoPoint) -> Result<ProjectedPoint> {
    p.validate()?;
    let x = MERCATOR_RADIUS_M * p.lon.to_radians();
    let y = MERCATOR_RADIUS_M * p.lat.to_radians().tan().asinh();
    Ok(ProjectedPoint { x, y })
}

pub fn unproject(p: ProjectedPoint) -> GeoPoint {
    let lon = (p.x / MERCATOR_RADIUS_M).to_degrees();
    let lat = (2.0 * (p.y / MERCATOR_RADIUS_M).exp().atan() - PI / 2.0).to_degrees();
    GeoPoint { lon, lat }
}

pub fn cell_of(p: ProjectedPoint, grid: &GridSpec) -> Result<CellId> {
    if !(p.x.abs() <= MERCATOR_EXTENT_M + 1.0 && p.y.abs() <= MERCATOR_EXTENT_M + 1.0) {
        return Err(Error::Domain(format!(
            "projected point ({}, {}) outside the Mercator extent",
            p.x, p.y
        )));
    }
    let ix = (p.x / grid.cell_size).floor();
    let iy = (p.y / grid.cell_size).floor();
    // Guard the float -> int conversion before the exact range check.
    let limit = (1u64 << 33) as f64;
    if ix.abs() > limit || iy.abs() > limit {
        return Err(Error::Domain(format!("grid index ({ix}, {iy}) too large")));
    }
    CellId::from_indices(ix as i64, iy as i64)
}

/// Convenience: project then locate.
pub fn cell_of_geo(p: GeoPoint, grid: &GridSpec) -> Result<CellId> {
    cell_of(project(p)?, grid)
}

/// Center of the cell in projected space.
pub fn cell_center_projected(c: CellId, grid: &GridSpec) -> ProjectedPoint {
    let (ix, iy) = c.indices();
    ProjectedPoint {
        x: (ix as f64 + 0.5) * grid.cell_size,
        y: (iy as f64 + 0.5) * grid.cell_size,
    }
}

pub fn cell_centroid(c: CellId, grid: &GridSpec) -> GeoPoint {
    unproject(cell_center_projected(c, grid))
}

#[inline]
fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

#[inline]
fn compact_bits(v: u64) -> u32 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x >> 4)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x >> 8)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x >> 16)) & 0x0000_0000_FFFF_FFFF;
    x as u32
}

/// Interleave: bit k of `ix` lands on bit 2k, bit k of `iy` on bit 2k+1.
#[inline]
pub fn morton_encode(ix: u32, iy: u32) -> u64 {
    spread_bits(ix) | (spread_bits(iy) << 1)
}

#[inline]
pub fn morton_decode(code: u64) -> (u32, u32) {
    (compact_bits(code), compact_bits(code >> 1))
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// How pairwise distances between cells are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// Haversine distance between cell centroids.
    #[default]
    Haversine,
    /// Euclidean distance between cell centers in the Mercator plane.
    Plane,
}

/// Per-cell data cached for fast repeated distance evaluation. The haversine
/// branch evaluates the same expression as [`distance_m`], so both agree to
/// the last bit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DistanceAnchor {
    lon: f64,
    lat_rad: f64,
    cos_lat: f64,
    x: f64,
    y: f64,
}

impl DistanceAnchor {
    pub(crate) fn new(c: CellId, grid: &GridSpec) -> Self {
        let pp = cell_center_projected(c, grid);
        let g = unproject(pp);
        let lat_rad = g.lat.to_radians();
        DistanceAnchor {
            lon: g.lon,
            lat_rad,
            cos_lat: lat_rad.cos(),
            x: pp.x,
            y: pp.y,
        }
    }

    #[inline]
    pub(crate) fn distance(&self, other: &DistanceAnchor, metric: DistanceMetric) -> f64 {
        match metric {
            DistanceMetric::Haversine => {
                let dlat = other.lat_rad - self.lat_rad;
                let dlon = (other.lon - self.lon).to_radians();
                let h = (dlat / 2.0).sin().powi(2)
                    + self.cos_lat * other.cos_lat * (dlon / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
            }
            DistanceMetric::Plane => (self.x - other.x).hypot(self.y - other.y),
        }
    }
}

/// Distance between two cell centroids under `metric`.
pub fn cell_distance(a: CellId, b: CellId, grid: &GridSpec, metric: DistanceMetric) -> f64 {
    DistanceAnchor::new(a, grid).distance(&DistanceAnchor::new(b, grid), metric)
}
