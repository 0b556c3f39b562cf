//! Posterior remapping: replace a tentative output `z̃` by the cell that
//! minimizes the expected loss under the posterior `p(x | z̃)`.

use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::mechanisms::Channel;
use crate::mobility::Profile;
use crate::prob::argmin_lowest;
use crate::CellId;

/// Deterministic map `z̃ → z` over output cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable(Vec<CellId>);

impl RemapTable {
    pub fn new(targets: Vec<CellId>) -> Result<Self> {
        let m = targets.len();
        if let Some(&bad) = targets.iter().find(|&&z| z >= m) {
            return Err(Error::CellOutOfRange { id: bad, n: m });
        }
        Ok(RemapTable(targets))
    }

    pub fn identity(m: usize) -> Self {
        RemapTable((0..m).collect())
    }

    #[inline]
    pub fn apply(&self, tentative: CellId) -> CellId {
        self.0[tentative]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[CellId] {
        &self.0
    }

    /// Channel obtained by post-processing `base` with this table:
    /// `f[x][z] = Σ_{z̃ : g(z̃) = z} base[x][z̃]`.
    pub fn compose(&self, base: &Channel) -> Result<Channel> {
        let (n, m) = (base.n_inputs(), base.n_outputs());
        if self.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "remap table has {} entries but the channel has {m} outputs",
                self.len()
            )));
        }
        let mut data = vec![0.0; n * m];
        for x in 0..n {
            let out = &mut data[x * m..(x + 1) * m];
            for (zt, &p) in base.row(x).iter().enumerate() {
                out[self.0[zt]] += p;
            }
        }
        Ok(Channel::from_raw(n, m, data))
    }

    /// Column `z` of the composed channel, without building the whole channel.
    pub fn composed_column(&self, base: &Channel, z: CellId) -> Vec<f64> {
        let mut col = vec![0.0; base.n_inputs()];
        for (zt, _) in self.0.iter().enumerate().filter(|(_, &g)| g == z) {
            for (c, &p) in col.iter_mut().zip(base.column(zt)) {
                *c += p;
            }
        }
        col
    }
}

fn check_shapes(base: &Channel, prior_len: usize, d_q: &DistMatrix) -> Result<()> {
    if base.n_inputs() != prior_len {
        return Err(Error::ShapeMismatch(format!(
            "channel has {} inputs but the prior covers {prior_len} cells",
            base.n_inputs()
        )));
    }
    if base.n_outputs() != d_q.n() || base.n_inputs() != d_q.n() {
        return Err(Error::ShapeMismatch(format!(
            "channel is {}x{} but the distance matrix covers {} cells",
            base.n_inputs(),
            base.n_outputs(),
            d_q.n()
        )));
    }
    Ok(())
}

/// Optimal remap table for `base` under the belief `prior`. Outputs that
/// have zero probability under the prior map to themselves; ties go to the
/// lowest cell id.
pub fn remap_table(base: &Channel, prior: &[f64], d_q: &DistMatrix) -> Result<RemapTable> {
    check_shapes(base, prior.len(), d_q)?;
    Ok(match hiding_form(base) {
        Some((diag, off)) => hiding_table(diag, off, prior, d_q),
        None => dense_table(base, prior, d_q),
    })
}

// `(diag, off)` when every diagonal entry equals `diag` and every other
// entry equals `off`.
fn hiding_form(base: &Channel) -> Option<(f64, f64)> {
    let n = base.n_inputs();
    if n < 2 || base.n_outputs() != n {
        return None;
    }
    let (diag, off) = (base.get(0, 0), base.get(0, 1));
    (0..n)
        .all(|x| base.row(x).iter().enumerate().all(|(z, &v)| v == if z == x { diag } else { off }))
        .then_some((diag, off))
}

// Posterior of `z̃` is `prior · off` plus `prior(z̃)·(diag − off)` at `z̃`,
// so every expected cost is one shared vector plus a single distance row.
fn hiding_table(diag: f64, off: f64, prior: &[f64], d_q: &DistMatrix) -> RemapTable {
    let n = prior.len();
    let total: f64 = prior.iter().sum();
    let mut shared = vec![0.0; n];
    d_q.expected_costs(prior, &mut shared);
    let mut cost = vec![0.0; n];
    let targets = (0..n)
        .map(|zt| {
            let peak = prior[zt] * (diag - off);
            let mass = off * total + peak;
            if mass <= 0.0 {
                return zt;
            }
            for ((c, &s), &d) in cost.iter_mut().zip(&shared).zip(d_q.row(zt)) {
                *c = (off * s + peak * d) / mass;
            }
            argmin_lowest(&cost)
        })
        .collect();
    RemapTable(targets)
}

pub(crate) fn dense_table(base: &Channel, prior: &[f64], d_q: &DistMatrix) -> RemapTable {
    let n = prior.len();
    let mut posterior = vec![0.0; n];
    let mut cost = vec![0.0; n];
    let targets = (0..base.n_outputs())
        .map(|zt| {
            let mut mass = 0.0;
            for ((p, &pr), &f) in posterior.iter_mut().zip(prior).zip(base.column(zt)) {
                *p = pr * f;
                mass += *p;
            }
            if mass <= 0.0 {
                return zt;
            }
            posterior.iter_mut().for_each(|p| *p /= mass);
            d_q.expected_costs(&posterior, &mut cost);
            argmin_lowest(&cost)
        })
        .collect();
    RemapTable(targets)
}

/// Remaps `base` around the profile `pi` and returns the table together
/// with the composed channel.
pub fn remap_sporadic(
    base: &Channel,
    pi: &Profile,
    d_q: &DistMatrix,
) -> Result<(RemapTable, Channel)> {
    let table = remap_table(base, pi.as_slice(), d_q)?;
    let composed = table.compose(base)?;
    Ok((table, composed))
}
