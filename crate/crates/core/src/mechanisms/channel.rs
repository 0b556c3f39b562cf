use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::CellId;

const ROW_TOLERANCE: f64 = 1e-9;

/// Memoryless obfuscation channel: `get(x, z)` is the probability of
/// releasing `z` when the real cell is `x`. Rows are stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    n: usize,
    m: usize,
    rows: Vec<f64>,
    // Column-major copy; remapping and likelihood lookups read columns.
    cols: Vec<f64>,
}

impl Channel {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || data.len() != n * m {
            return Err(Error::ShapeMismatch(format!(
                "channel data has {} entries, expected {n}x{m}",
                data.len()
            )));
        }
        for (x, row) in data.chunks(m).enumerate() {
            if let Some(bad) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidDistribution(format!("row {x} has entry {bad}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidDistribution(format!("row {x} sums to {total}")));
            }
        }
        Ok(Self::from_raw(n, m, data))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch("channel rows have different lengths".into()));
        }
        Self::new(n, m, rows.into_iter().flatten().collect())
    }

    pub(crate) fn from_raw(n: usize, m: usize, rows: Vec<f64>) -> Self {
        let mut cols = vec![0.0; n * m];
        for x in 0..n {
            for z in 0..m {
                cols[z * n + x] = rows[x * m + z];
            }
        }
        Channel { n, m, rows, cols }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_raw(n, n, data)
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self::from_raw(n, m, vec![1.0 / m as f64; n * m])
    }

    pub fn n_inputs(&self) -> usize {
        self.n
    }

    pub fn n_outputs(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, x: CellId, z: CellId) -> f64 {
        self.rows[x * self.m + z]
    }

    pub fn row(&self, x: CellId) -> &[f64] {
        &self.rows[x * self.m..(x + 1) * self.m]
    }

    /// `f(z | ·)` as a vector over real cells: the likelihood of output `z`.
    pub fn column(&self, z: CellId) -> &[f64] {
        &self.cols[z * self.n..(z + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows.chunks(self.m).map(<[f64]>::to_vec).collect()
    }
}

/// `f = α·I + (1−α)/n · 1`: reveal the real cell with probability `α`,
/// otherwise report a cell drawn uniformly from the whole map.
pub fn location_hiding(alpha: f64, n: usize) -> Result<Channel> {
    check_alpha(alpha)?;
    let spread = (1.0 - alpha) / n as f64;
    let mut data = vec![spread; n * n];
    for i in 0..n {
        data[i * n + i] += alpha;
    }
    Ok(Channel::from_raw(n, n, data))
}

/// Location hiding where the fallback draw excludes the real cell.
pub fn location_hiding_exclusive(alpha: f64, n: usize) -> Result<Channel> {
    check_alpha(alpha)?;
    if n == 1 {
        return Ok(Channel::identity(1));
    }
    let spread = (1.0 - alpha) / (n - 1) as f64;
    let mut data = vec![spread; n * n];
    for i in 0..n {
        data[i * n + i] = alpha;
    }
    Ok(Channel::from_raw(n, n, data))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `f(z|x) ∝ exp(−ε·d(x, z))`, with `ε` in inverse kilometers.
pub fn exponential_mechanism(epsilon: f64, d: &DistMatrix) -> Result<Channel> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} must be >= 0")));
    }
    let n = d.n();
    let mut data = Vec::with_capacity(n * n);
    for x in 0..n {
        // d[x][x] = 0 keeps the largest weight at exactly 1, so no underflow
        // of the normalizer.
        let start = data.len();
        data.extend(d.row(x).iter().map(|&dist| (-epsilon * dist).exp()));
        let total: f64 = data[start..].iter().sum();
        data[start..].iter_mut().for_each(|v| *v /= total);
    }
    Ok(Channel::from_raw(n, n, data))
}

/// Parametric family used as the tentative channel before remapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BaseMechanism {
    LocationHiding {
        alpha: f64,
        #[serde(default)]
        exclusive: bool,
    },
    Exponential {
        epsilon: f64,
    },
}

impl BaseMechanism {
    pub fn channel(&self, d: &DistMatrix) -> Result<Channel> {
        match *self {
            BaseMechanism::LocationHiding {
                alpha,
                exclusive: false,
            } => location_hiding(alpha, d.n()),
            BaseMechanism::LocationHiding {
                alpha,
                exclusive: true,
            } => location_hiding_exclusive(alpha, d.n()),
            BaseMechanism::Exponential { epsilon } => exponential_mechanism(epsilon, d),
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            BaseMechanism::LocationHiding { alpha, .. } => alpha,
            BaseMechanism::Exponential { epsilon } => epsilon,
        }
    }
}
