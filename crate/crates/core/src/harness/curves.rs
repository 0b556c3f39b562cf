//! Privacy/quality tradeoff curves: per-user (Q_avg, P_AE) points averaged
//! over repetitions, interpolated onto a common quality-loss grid.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::harness::experiment::ResultRow;
use crate::metrics::Window;

pub const DEFAULT_POINTS: usize = 41;

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub q_grid: Vec<f64>,
    /// `None` where no user's Q range covers the grid point.
    pub mean: Vec<Option<f64>>,
    pub min: Vec<Option<f64>>,
    pub max: Vec<Option<f64>>,
    pub n_users: Vec<usize>,
    /// Per-user `(Q, P)` points, sorted by Q with equal Q merged.
    pub users: Vec<(String, Vec<(f64, f64)>)>,
}

/// Linear interpolation of `P` at `q`; `None` outside the points' Q range.
pub fn interpolate(points: &[(f64, f64)], q: f64) -> Option<f64> {
    let (first, last) = (points.first()?, points.last()?);
    if q < first.0 || q > last.0 {
        return None;
    }
    let i = points.partition_point(|p| p.0 < q);
    let hi = points[i];
    if hi.0 == q || i == 0 {
        return Some(hi.1);
    }
    let lo = points[i - 1];
    Some(lo.1 + (hi.1 - lo.1) * (q - lo.0) / (hi.0 - lo.0))
}

/// Builds the curve of one mechanism over one window. Rows of other windows
/// are ignored; rows of several mechanisms are an error.
pub fn interpolate_curves(
    rows: &[ResultRow],
    window: Window,
    q_min: f64,
    q_max: f64,
    n_points: usize,
) -> Result<TradeoffCurve> {
    if n_points < 2 || !(q_min < q_max) {
        return Err(Error::Config(format!(
            "need at least 2 grid points on an increasing range, got {n_points} on [{q_min}, {q_max}]"
        )));
    }
    let rows: Vec<&ResultRow> = rows.iter().filter(|r| r.window == window).collect();
    if let Some(other) = rows.iter().find(|r| r.mechanism != rows[0].mechanism) {
        return Err(Error::Config(format!(
            "rows mix mechanisms {} and {}",
            rows[0].mechanism, other.mechanism
        )));
    }

    // user -> param bits -> (ΣQ, ΣP, count); users keep first-seen order.
    let mut order: Vec<&str> = Vec::new();
    let mut sums: BTreeMap<&str, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in &rows {
        let per_user = sums.entry(&r.user).or_insert_with(|| {
            order.push(&r.user);
            BTreeMap::new()
        });
        let e = per_user.entry(r.param.to_bits()).or_insert((0.0, 0.0, 0));
        e.0 += r.qavg_km;
        e.1 += r.pae_km;
        e.2 += 1;
    }
    let users: Vec<(String, Vec<(f64, f64)>)> = order
        .iter()
        .map(|u| {
            let mut pts: Vec<(f64, f64)> = sums[u]
                .values()
                .map(|&(q, p, k)| (q / k as f64, p / k as f64))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (u.to_string(), merge_equal_q(pts))
        })
        .collect();

    let step = (q_max - q_min) / (n_points - 1) as f64;
    let q_grid: Vec<f64> = (0..n_points).map(|i| q_min + step * i as f64).collect();
    let mut curve = TradeoffCurve {
        mean: Vec::with_capacity(n_points),
        min: Vec::with_capacity(n_points),
        max: Vec::with_capacity(n_points),
        n_users: Vec::with_capacity(n_points),
        q_grid,
        users,
    };
    for &q in &curve.q_grid {
        let vals: Vec<f64> = curve.users.iter().filter_map(|(_, pts)| interpolate(pts, q)).collect();
        curve.n_users.push(vals.len());
        if vals.is_empty() {
            curve.mean.push(None);
            curve.min.push(None);
            curve.max.push(None);
        } else {
            curve.mean.push(Some(vals.iter().sum::<f64>() / vals.len() as f64));
            curve.min.push(vals.iter().copied().reduce(f64::min));
            curve.max.push(vals.iter().copied().reduce(f64::max));
        }
    }
    if curve.n_users.iter().all(|&k| k == 0) {
        return Err(Error::EmptyInput(format!(
            "no user's quality range intersects [{q_min}, {q_max}] km"
        )));
    }
    Ok(curve)
}

fn merge_equal_q(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for (q, p) in points {
        match out.last_mut() {
            Some(last) if last.0 == q => {
                last.1 += p;
                last.2 += 1;
            }
            _ => out.push((q, p, 1)),
        }
    }
    out.into_iter().map(|(q, p, k)| (q, p / k as f64)).collect()
}

impl TradeoffCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["q_km", "mean", "min", "max", "n_users"])?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..self.q_grid.len() {
            w.write_record([
                self.q_grid[i].to_string(),
                cell(self.mean[i]),
                cell(self.min[i]),
                cell(self.max[i]),
                self.n_users[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    /// Grid points where both curves are defined, as `(q, self, other)`.
    pub fn shared_points(&self, other: &TradeoffCurve) -> Vec<(f64, f64, f64)> {
        self.q_grid
            .iter()
            .zip(self.mean.iter().zip(&other.mean))
            .filter_map(|(&q, (a, b))| Some((q, (*a)?, (*b)?)))
            .collect()
    }
}
