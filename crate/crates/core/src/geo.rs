//! Rectangular discretization of a lat/lon box and Manhattan distances
//! between cell centers.
//!
//! Cell ids are row-major: `id = row * cols + col`, with row 0 at `lat_min`
//! and column 0 at `lon_min`. Degrees are converted to kilometers with an
//! equirectangular approximation taken at the region's mid-latitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::CellId;

/// Kilometers per degree of latitude (and of longitude at the equator).
pub const KM_PER_DEG: f64 = 111.32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn new(
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        let region = Region {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            rows,
            cols,
        };
        region.validate()?;
        Ok(region)
    }

    /// The San Francisco box used by the check-in and cab datasets, 25 rows
    /// of latitude by 10 columns of longitude.
    pub fn san_francisco() -> Self {
        Region {
            lat_min: 37.5500,
            lat_max: 37.8010,
            lon_min: -122.5153,
            lon_max: -122.3789,
            rows: 25,
            cols: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRegion("non-finite bound".into()));
        }
        if self.lat_min >= self.lat_max {
            return Err(Error::InvalidRegion(format!(
                "lat_min {} must be below lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        if self.lon_min >= self.lon_max {
            return Err(Error::InvalidRegion(format!(
                "lon_min {} must be below lon_max {}",
                self.lon_min, self.lon_max
            )));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidRegion("rows and cols must be positive".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    fn cell_height_deg(&self) -> f64 {
        (self.lat_max - self.lat_min) / self.rows as f64
    }

    fn cell_width_deg(&self) -> f64 {
        (self.lon_max - self.lon_min) / self.cols as f64
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    region: Region,
    centers: Vec<(f64, f64)>,
    km_per_deg_lat: f64,
    km_per_deg_lon: f64,
}

impl Grid {
    pub fn new(region: Region) -> Result<Self> {
        region.validate()?;
        let h = region.cell_height_deg();
        let w = region.cell_width_deg();
        let mut centers = Vec::with_capacity(region.n_cells());
        for row in 0..region.rows {
            for col in 0..region.cols {
                centers.push((
                    region.lat_min + (row as f64 + 0.5) * h,
                    region.lon_min + (col as f64 + 0.5) * w,
                ));
            }
        }
        let mid_lat = 0.5 * (region.lat_min + region.lat_max);
        Ok(Grid {
            region,
            centers,
            km_per_deg_lat: KM_PER_DEG,
            km_per_deg_lon: KM_PER_DEG * mid_lat.to_radians().cos(),
        })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn km_per_deg_lat(&self) -> f64 {
        self.km_per_deg_lat
    }

    pub fn km_per_deg_lon(&self) -> f64 {
        self.km_per_deg_lon
    }

    pub fn cell_center(&self, id: CellId) -> Option<(f64, f64)> {
        self.centers.get(id).copied()
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    /// `(row, col)` of a cell id.
    pub fn row_col(&self, id: CellId) -> (usize, usize) {
        (id / self.region.cols, id % self.region.cols)
    }

    pub fn cell_height_km(&self) -> f64 {
        self.region.cell_height_deg() * self.km_per_deg_lat
    }

    pub fn cell_width_km(&self) -> f64 {
        self.region.cell_width_deg() * self.km_per_deg_lon
    }

    /// Cell containing the point, or `None` when it falls outside the region.
    /// A point exactly on an internal cell edge belongs to the lower-index cell.
    pub fn quantize(&self, lat: f64, lon: f64) -> Option<CellId> {
        let r = &self.region;
        if !(lat >= r.lat_min && lat <= r.lat_max && lon >= r.lon_min && lon <= r.lon_max) {
            return None;
        }
        let row = axis_index(lat - r.lat_min, r.cell_height_deg(), r.rows);
        let col = axis_index(lon - r.lon_min, r.cell_width_deg(), r.cols);
        Some(row * r.cols + col)
    }

    pub fn manhattan_km(&self, a: CellId, b: CellId) -> Result<f64> {
        let n = self.n_cells();
        let (pa, pb) = match (self.cell_center(a), self.cell_center(b)) {
            (Some(pa), Some(pb)) => (pa, pb),
            (None, _) => return Err(Error::CellOutOfRange { id: a, n }),
            (_, None) => return Err(Error::CellOutOfRange { id: b, n }),
        };
        Ok(self.lat_km(pa.0, pb.0) + self.lon_km(pa.1, pb.1))
    }

    fn lat_km(&self, a: f64, b: f64) -> f64 {
        (a - b).abs() * self.km_per_deg_lat
    }

    fn lon_km(&self, a: f64, b: f64) -> f64 {
        (a - b).abs() * self.km_per_deg_lon
    }

    /// Pairwise Manhattan distances between all cell centers. The result
    /// remembers the row/column decomposition, which lets expected-cost
    /// queries run in `O(n + rows² + cols²)` instead of `O(n²)`.
    pub fn distance_matrix(&self) -> DistMatrix {
        let r = &self.region;
        let row_lat: Vec<f64> = (0..r.rows).map(|i| self.centers[i * r.cols].0).collect();
        let col_lon: Vec<f64> = (0..r.cols).map(|j| self.centers[j].1).collect();
        let row_km = pairwise(&row_lat, |a, b| self.lat_km(a, b));
        let col_km = pairwise(&col_lon, |a, b| self.lon_km(a, b));
        let split = AxisSplit {
            rows: r.rows,
            cols: r.cols,
            row_km,
            col_km,
        };
        let n = self.n_cells();
        let mut d = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                d[a * n + b] = split.distance(a, b);
            }
        }
        DistMatrix {
            n,
            d,
            split: Some(split),
        }
    }
}

fn axis_index(offset: f64, step: f64, count: usize) -> usize {
    // ceil - 1 sends exact edges to the lower cell; offset 0 clamps to 0.
    let idx = (offset / step).ceil() as isize - 1;
    idx.clamp(0, count as isize - 1) as usize
}

fn pairwise(coords: &[f64], dist: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let k = coords.len();
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = dist(coords[i], coords[j]);
        }
    }
    out
}

/// Distances that decompose as `row_km[r_a][r_b] + col_km[c_a][c_b]`.
#[derive(Debug, Clone)]
struct AxisSplit {
    rows: usize,
    cols: usize,
    row_km: Vec<f64>,
    col_km: Vec<f64>,
}

impl AxisSplit {
    fn distance(&self, a: CellId, b: CellId) -> f64 {
        let (ra, ca) = (a / self.cols, a % self.cols);
        let (rb, cb) = (b / self.cols, b % self.cols);
        self.row_km[ra * self.rows + rb] + self.col_km[ca * self.cols + cb]
    }

    fn expected_costs(&self, weights: &[f64], out: &mut [f64]) {
        let mut row_mass = vec![0.0; self.rows];
        let mut col_mass = vec![0.0; self.cols];
        for (rm, w) in row_mass.iter_mut().zip(weights.chunks_exact(self.cols)) {
            for (cm, &v) in col_mass.iter_mut().zip(w) {
                *rm += v;
                *cm += v;
            }
        }
        let row_cost = mix(&row_mass, &self.row_km);
        let col_cost = mix(&col_mass, &self.col_km);
        for (rc, o) in row_cost.iter().zip(out.chunks_exact_mut(self.cols)) {
            for (slot, &cc) in o.iter_mut().zip(&col_cost) {
                *slot = rc + cc;
            }
        }
    }
}

// cost[j] = Σ_i mass[i] * dist[i][j] for a symmetric k×k table.
fn mix(mass: &[f64], dist: &[f64]) -> Vec<f64> {
    let k = mass.len();
    let mut cost = vec![0.0; k];
    for (i, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let row = &dist[i * k..(i + 1) * k];
        for (c, &d) in cost.iter_mut().zip(row) {
            *c += m * d;
        }
    }
    cost
}

/// Symmetric matrix of kilometers with a zero diagonal.
#[derive(Debug, Clone)]
pub struct DistMatrix {
    n: usize,
    d: Vec<f64>,
    split: Option<AxisSplit>,
}

impl DistMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("distance matrix must be square".into()));
        }
        let d: Vec<f64> = rows.into_iter().flatten().collect();
        Self::validated(n, d)
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut d = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                d.push(f(i, j));
            }
        }
        Self::validated(n, d)
    }

    /// `n` points on a line, `spacing_km` apart.
    pub fn line(n: usize, spacing_km: f64) -> Self {
        Self::from_fn(n, |i, j| (i as f64 - j as f64).abs() * spacing_km)
            .expect("line distances are a valid metric")
    }

    fn validated(n: usize, d: Vec<f64>) -> Result<Self> {
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("d[{i}][{i}] must be 0")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "d[{i}][{j}] = {v} is not a finite non-negative distance"
                    )));
                }
                if v != d[j * n + i] {
                    return Err(Error::InvalidParameter(format!(
                        "distance matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(DistMatrix { n, d, split: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: CellId, b: CellId) -> f64 {
        self.d[a * self.n + b]
    }

    pub fn row(&self, a: CellId) -> &[f64] {
        &self.d[a * self.n..(a + 1) * self.n]
    }

    pub fn max(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Fills `out[z] = Σ_x weights[x] · d[x][z]` for every cell `z`.
    pub fn expected_costs(&self, weights: &[f64], out: &mut [f64]) {
        assert_eq!(weights.len(), self.n);
        assert_eq!(out.len(), self.n);
        if let Some(split) = &self.split {
            split.expected_costs(weights, out);
            return;
        }
        out.fill(0.0);
        for (x, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &d) in out.iter_mut().zip(self.row(x)) {
                *o += w * d;
            }
        }
    }

    /// Per-axis distance tables `(rows, cols, row_km, col_km)` when the
    /// matrix came from a grid, each stored row-major.
    pub(crate) fn axis_tables(&self) -> Option<(usize, usize, &[f64], &[f64])> {
        self.split
            .as_ref()
            .map(|s| (s.rows, s.cols, s.row_km.as_slice(), s.col_km.as_slice()))
    }

    /// Same matrix with the grid decomposition dropped; every cost query goes
    /// through the dense `O(n²)` path.
    pub fn dense(&self) -> Self {
        DistMatrix {
            n: self.n,
            d: self.d.clone(),
            split: None,
        }
    }
}
