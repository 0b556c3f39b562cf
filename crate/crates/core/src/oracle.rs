//! Brute-force references for tiny instances. Everything here enumerates
//! whole trace spaces and is guarded by hard size limits; it exists to
//! check the fast paths, not to run experiments.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::mechanisms::{Channel, RemapTable};
use crate::metrics::theoretical_qavg;
use crate::mobility::{MarkovModel, Profile};
use crate::CellId;

pub const MAX_ENUM_CELLS: usize = 4;
pub const MAX_ENUM_HORIZON: usize = 3;
pub const MAX_REMAP_OUTPUTS: usize = 6;

/// Explicit tables for a full-type mechanism `f(z^t | z^{1..t-1}, x^{1..t})`
/// over a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTypeLppm {
    n: usize,
    m: usize,
    horizon: usize,
    // tables[t] is indexed by (z history of length t, x history of length
    // t + 1, z) in row-major order.
    tables: Vec<Vec<f64>>,
}

fn encode(digits: &[usize], base: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * base + d)
}

fn decode(mut code: usize, base: usize, len: usize, out: &mut [usize]) {
    for slot in out[..len].iter_mut().rev() {
        *slot = code % base;
        code /= base;
    }
}

impl FullTypeLppm {
    fn table_len(n: usize, m: usize, t: usize) -> usize {
        m.pow(t as u32) * n.pow(t as u32 + 1) * m
    }

    pub fn new(n: usize, m: usize, horizon: usize, tables: Vec<Vec<f64>>) -> Result<Self> {
        check_size(n, m, horizon)?;
        if tables.len() != horizon {
            return Err(Error::ShapeMismatch(format!(
                "{} tables for horizon {horizon}",
                tables.len()
            )));
        }
        for (t, table) in tables.iter().enumerate() {
            if table.len() != Self::table_len(n, m, t) {
                return Err(Error::ShapeMismatch(format!("table {t} has the wrong size")));
            }
            for row in table.chunks(m) {
                let total: f64 = row.iter().sum();
                if row.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidDistribution(format!("table {t} row is not stochastic")));
                }
            }
        }
        Ok(FullTypeLppm {
            n,
            m,
            horizon,
            tables,
        })
    }

    /// Builds the tables from `f(z_hist, x_hist, z)`.
    pub fn from_fn(
        n: usize,
        m: usize,
        horizon: usize,
        f: impl Fn(&[CellId], &[CellId], CellId) -> f64,
    ) -> Result<Self> {
        check_size(n, m, horizon)?;
        let mut tables = Vec::with_capacity(horizon);
        let mut zh = [0usize; MAX_ENUM_HORIZON];
        let mut xh = [0usize; MAX_ENUM_HORIZON];
        for t in 0..horizon {
            let mut table = Vec::with_capacity(Self::table_len(n, m, t));
            for zc in 0..m.pow(t as u32) {
                decode(zc, m, t, &mut zh);
                for xc in 0..n.pow(t as u32 + 1) {
                    decode(xc, n, t + 1, &mut xh);
                    for z in 0..m {
                        table.push(f(&zh[..t], &xh[..t + 1], z));
                    }
                }
            }
            tables.push(table);
        }
        Self::new(n, m, horizon, tables)
    }

    /// Random tables with every conditional row drawn independently.
    pub fn random(n: usize, m: usize, horizon: usize, rng: &mut dyn RngCore) -> Result<Self> {
        check_size(n, m, horizon)?;
        let tables = (0..horizon)
            .map(|t| {
                let len = Self::table_len(n, m, t);
                let mut table: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
                for row in table.chunks_mut(m) {
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= total);
                }
                table
            })
            .collect();
        Self::new(n, m, horizon, tables)
    }

    /// The same channel applied independently at every step.
    pub fn memoryless(channel: &Channel, horizon: usize) -> Result<Self> {
        let (n, m) = (channel.n_inputs(), channel.n_outputs());
        Self::from_fn(n, m, horizon, |_, xh, z| channel.get(*xh.last().unwrap(), z))
    }

    pub fn n_inputs(&self) -> usize {
        self.n
    }

    pub fn n_outputs(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `f(z | z_hist, x_hist)`; `x_hist` includes the current location, so
    /// `x_hist.len() == z_hist.len() + 1`.
    pub fn prob(&self, z_hist: &[CellId], x_hist: &[CellId], z: CellId) -> f64 {
        let t = z_hist.len();
        debug_assert_eq!(x_hist.len(), t + 1);
        let idx = (encode(z_hist, self.m) * self.n.pow(t as u32 + 1) + encode(x_hist, self.n)) * self.m + z;
        self.tables[t][idx]
    }

    /// `p(z^{1..r} | x^{1..r})` for full sequences of equal length.
    pub fn sequence_prob(&self, z: &[CellId], x: &[CellId]) -> f64 {
        (0..z.len()).map(|t| self.prob(&z[..t], &x[..=t], z[t])).product()
    }
}

fn check_size(n: usize, m: usize, horizon: usize) -> Result<()> {
    if n == 0 || m == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("empty enumeration instance".into()));
    }
    if n > MAX_ENUM_CELLS || m > MAX_ENUM_CELLS || horizon > MAX_ENUM_HORIZON {
        return Err(Error::TooLarge(format!(
            "n={n}, m={m}, horizon={horizon} (limits {MAX_ENUM_CELLS} cells, horizon {MAX_ENUM_HORIZON})"
        )));
    }
    Ok(())
}

/// Prior over whole location sequences.
#[derive(Debug, Clone, Copy)]
pub enum SequenceModel<'a> {
    Iid(&'a Profile),
    Markov(&'a MarkovModel),
}

impl SequenceModel<'_> {
    fn n(&self) -> usize {
        match self {
            SequenceModel::Iid(p) => p.len(),
            SequenceModel::Markov(m) => m.n(),
        }
    }

    fn prob(&self, x: &[CellId]) -> f64 {
        match self {
            SequenceModel::Iid(p) => x.iter().map(|&c| p.get(c)).product(),
            SequenceModel::Markov(m) => {
                let first = x.first().map_or(1.0, |&c| m.initial().get(c));
                first * x.windows(2).map(|w| m.transition(w[0], w[1])).product::<f64>()
            }
        }
    }
}

fn for_each_sequence(base: usize, len: usize, mut f: impl FnMut(&[CellId])) {
    let mut seq = vec![0usize; len];
    for code in 0..base.pow(len as u32) {
        decode(code, base, len, &mut seq);
        f(&seq);
    }
}

/// Error of the optimal attack on step `target` (1-based) after observing
/// all `horizon` releases:
/// `Σ_{z^{1..r}} min_x̂ Σ_{x^{1..r}} p(x) p(z|x) d_p(x^s, x̂)`.
pub fn exact_min_pae(
    model: SequenceModel<'_>,
    lppm: &FullTypeLppm,
    d_p: &DistMatrix,
    horizon: usize,
    target: usize,
) -> Result<f64> {
    let n = lppm.n_inputs();
    let m = lppm.n_outputs();
    check_size(n, m, horizon)?;
    if horizon > lppm.horizon() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} exceeds the mechanism's {}",
            lppm.horizon()
        )));
    }
    if target == 0 || target > horizon {
        return Err(Error::InvalidParameter(format!("target step {target} outside 1..={horizon}")));
    }
    if model.n() != n || d_p.n() != n {
        return Err(Error::ShapeMismatch("model, mechanism and distances disagree on n".into()));
    }
    let mut total = 0.0;
    let mut weight = vec![0.0; n];
    for_each_sequence(m, horizon, |z| {
        weight.fill(0.0);
        for_each_sequence(n, horizon, |x| {
            weight[x[target - 1]] += model.prob(x) * lppm.sequence_prob(z, x);
        });
        total += (0..n)
            .map(|guess| (0..n).map(|x| weight[x] * d_p.get(x, guess)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
    });
    Ok(total)
}

/// Memoryless channel with the same per-step marginal as a full-type
/// mechanism at step `r` under an i.i.d. profile:
/// `f*(z^r|x^r) = Σ_{x-hist, z-hist} p(x-hist, z-hist | x^r) f(z^r | z-hist, x-hist, x^r)`.
pub fn marginalize_to_memoryless(model: &Profile, lppm: &FullTypeLppm, r: usize) -> Result<Channel> {
    let n = lppm.n_inputs();
    let m = lppm.n_outputs();
    check_size(n, m, r)?;
    if r > lppm.horizon() {
        return Err(Error::InvalidParameter(format!(
            "step {r} exceeds the mechanism's horizon {}",
            lppm.horizon()
        )));
    }
    if model.len() != n {
        return Err(Error::ShapeMismatch("profile and mechanism disagree on n".into()));
    }
    let iid = SequenceModel::Iid(model);
    let mut data = vec![0.0; n * m];
    let mut xs = vec![0usize; r];
    for xr in 0..n {
        for_each_sequence(n, r - 1, |xh| {
            xs[..r - 1].copy_from_slice(xh);
            xs[r - 1] = xr;
            let px = iid.prob(xh);
            for_each_sequence(m, r - 1, |zh| {
                // x^r cannot influence earlier releases.
                let pz = lppm.sequence_prob(zh, &xs[..r - 1]);
                for z in 0..m {
                    data[xr * m + z] += px * pz * lppm.prob(zh, &xs, z);
                }
            });
        });
    }
    Ok(Channel::from_raw(n, m, data))
}

/// Best deterministic remap found by trying every map `z̃ → z`, with the
/// average loss it achieves. Ties keep the lexicographically first map.
pub fn exhaustive_best_remap(base: &Channel, pi: &Profile, d: &DistMatrix) -> Result<(RemapTable, f64)> {
    let m = base.n_outputs();
    if m > MAX_REMAP_OUTPUTS {
        return Err(Error::TooLarge(format!("{m} outputs (limit {MAX_REMAP_OUTPUTS})")));
    }
    let mut best: Option<(Vec<CellId>, f64)> = None;
    let mut map = vec![0usize; m];
    for code in 0..m.pow(m as u32) {
        decode(code, m, m, &mut map);
        let table = RemapTable::new(map.clone())?;
        let cost = theoretical_qavg(&table.compose(base)?, pi, d)?;
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((map.clone(), cost));
        }
    }
    let (map, cost) = best.expect("at least one map");
    Ok((RemapTable::new(map)?, cost))
}

/// Random profile with every entry bounded away from zero.
pub fn random_profile(n: usize, rng: &mut dyn RngCore) -> Profile {
    Profile::from_weights((0..n).map(|_| rng.gen_range(0.01..1.0)).collect()).expect("positive weights")
}

/// Random row-stochastic `n × m` channel.
pub fn random_channel(n: usize, m: usize, rng: &mut dyn RngCore) -> Channel {
    Channel::from_rows(
        (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|v| v / t).collect()
            })
            .collect(),
    )
    .expect("normalized rows")
}

/// Manhattan distances between `n` random points in a 3 km square.
pub fn random_metric(n: usize, rng: &mut dyn RngCore) -> DistMatrix {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0))).collect();
    DistMatrix::from_fn(n, |a, b| (pts[a].0 - pts[b].0).abs() + (pts[a].1 - pts[b].1).abs())
        .expect("finite distances")
}

/// Outcome of one randomized property suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest amount by which a case missed its bound (0 when all pass).
    pub worst_violation: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn from_violations(name: &'static str, violations: &[f64]) -> Self {
        SuiteReport {
            name,
            cases: violations.len(),
            failures: violations.iter().filter(|&&v| v > 0.0).count(),
            worst_violation: violations.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Runs the tiny-instance suites: remap optimality, exhaustive remap
/// equivalence, and the memoryless-marginal privacy bound.
pub fn run_suites(cases: usize, rng: &mut dyn RngCore) -> Result<Vec<SuiteReport>> {
    use crate::mechanisms::remap_sporadic;
    use crate::metrics::theoretical_pae_opt;

    let mut identity = Vec::with_capacity(cases);
    let mut exhaustive = Vec::with_capacity(cases);
    let mut marginal = Vec::with_capacity(cases);
    for _ in 0..cases {
        let n = rng.gen_range(2..=5);
        let pi = random_profile(n, rng);
        let base = random_channel(n, n, rng);
        let d = random_metric(n, rng);
        let (_, composed) = remap_sporadic(&base, &pi, &d)?;
        let q = theoretical_qavg(&composed, &pi, &d)?;
        let p = theoretical_pae_opt(&composed, &pi, &d)?;
        identity.push((q - p).abs() - 1e-9);
        let (_, best) = exhaustive_best_remap(&base, &pi, &d)?;
        exhaustive.push((q - best).abs() - 1e-12);

        let n = rng.gen_range(2..=3);
        let r = rng.gen_range(1..=3);
        let s = rng.gen_range(1..=r);
        let pi = random_profile(n, rng);
        let d = random_metric(n, rng);
        let full = FullTypeLppm::random(n, n, r, rng)?;
        let star = FullTypeLppm::memoryless(&marginalize_to_memoryless(&pi, &full, s)?, r)?;
        let p_full = exact_min_pae(SequenceModel::Iid(&pi), &full, &d, r, s)?;
        let p_star = exact_min_pae(SequenceModel::Iid(&pi), &star, &d, r, s)?;
        marginal.push(p_full - p_star - 1e-12);
    }
    Ok(vec![
        SuiteReport::from_violations("remap-optimality-identity", &identity),
        SuiteReport::from_violations("remap-exhaustive-equivalence", &exhaustive),
        SuiteReport::from_violations("memoryless-marginal-privacy", &marginal),
    ])
}
