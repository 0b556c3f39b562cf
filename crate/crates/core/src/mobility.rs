//! Sporadic (profile) and first-order Markov mobility models: training from
//! quantized traces and sampling synthetic traces.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::sample_index;
use crate::{CellId, Trace};

/// Slack accepted on the total mass of user-supplied distributions before
/// they are renormalized.
const MASS_TOLERANCE: f64 = 1e-9;

/// Probability vector over cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Profile(Vec<f64>);

impl Profile {
    /// Validates and renormalizes `p`; its mass must already be within
    /// `1e-9` of one.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDistribution("empty profile".into()));
        }
        if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("entry {bad} is not a probability")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("mass {total} != 1")));
        }
        Ok(Profile(p.into_iter().map(|v| v / total).collect()))
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDistribution(format!("weight {bad} is not usable")));
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("weights have zero mass".into()));
        }
        Ok(Profile(w.into_iter().map(|v| v / total).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        Profile(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, at: CellId) -> Self {
        let mut p = vec![0.0; n];
        p[at] = 1.0;
        Profile(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: CellId) -> f64 {
        self.0[i]
    }

    pub fn tv_distance(&self, other: &Profile) -> f64 {
        crate::prob::tv_distance(&self.0, &other.0)
    }

    pub(crate) fn from_raw_unchecked(p: Vec<f64>) -> Self {
        Profile(p)
    }
}

impl TryFrom<Vec<f64>> for Profile {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Profile::new(p)
    }
}

impl From<Profile> for Vec<f64> {
    fn from(p: Profile) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for Profile {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Initial profile plus row-stochastic transitions; `transition(j, i)` is
/// the probability of moving from `j` to `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkovModelRepr", into = "MarkovModelRepr")]
pub struct MarkovModel {
    initial: Profile,
    transitions: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MarkovModelRepr {
    initial: Profile,
    transitions: Vec<Vec<f64>>,
}

impl TryFrom<MarkovModelRepr> for MarkovModel {
    type Error = Error;

    fn try_from(r: MarkovModelRepr) -> Result<Self> {
        MarkovModel::new(r.initial, r.transitions)
    }
}

impl From<MarkovModel> for MarkovModelRepr {
    fn from(m: MarkovModel) -> Self {
        let n = m.n();
        MarkovModelRepr {
            transitions: m.transitions.chunks(n).map(<[f64]>::to_vec).collect(),
            initial: m.initial,
        }
    }
}

impl MarkovModel {
    pub fn new(initial: Profile, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = initial.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "transition matrix must be {n}x{n} to match the initial profile"
            )));
        }
        let mut transitions = Vec::with_capacity(n * n);
        for (j, row) in rows.into_iter().enumerate() {
            let row = Profile::new(row).map_err(|e| {
                Error::InvalidDistribution(format!("transition row {j}: {e}"))
            })?;
            transitions.extend(row.into_vec());
        }
        Ok(MarkovModel {
            initial,
            transitions,
        })
    }

    /// Chain whose every row equals `profile`: consecutive locations are i.i.d.
    pub fn iid(profile: &Profile) -> Self {
        let n = profile.len();
        let mut transitions = Vec::with_capacity(n * n);
        for _ in 0..n {
            transitions.extend_from_slice(profile.as_slice());
        }
        MarkovModel {
            initial: profile.clone(),
            transitions,
        }
    }

    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &Profile {
        &self.initial
    }

    pub fn row(&self, from: CellId) -> &[f64] {
        let n = self.n();
        &self.transitions[from * n..(from + 1) * n]
    }

    pub fn transition(&self, from: CellId, to: CellId) -> f64 {
        self.transitions[from * self.n() + to]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.transitions.chunks(self.n()).map(<[f64]>::to_vec).collect()
    }
}

/// Result of [`train_markov`]: the model and the rows that had no observed
/// outgoing transitions (set to uniform).
#[derive(Debug, Clone)]
pub struct MarkovFit {
    pub model: MarkovModel,
    pub uniform_rows: Vec<CellId>,
}

fn check_cells(traces: &[Trace], n: usize) -> Result<()> {
    for t in traces {
        if let Some(&bad) = t.iter().find(|&&c| c >= n) {
            return Err(Error::CellOutOfRange { id: bad, n });
        }
    }
    Ok(())
}

fn check_pseudocount(pseudocount: f64) -> Result<()> {
    if !(pseudocount.is_finite() && pseudocount >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "pseudocount {pseudocount} must be a finite non-negative number"
        )));
    }
    Ok(())
}

/// Normalized check-in histogram, `p_i = (count_i + c) / (total + n·c)`.
pub fn train_profile(traces: &[Trace], n: usize, pseudocount: f64) -> Result<Profile> {
    check_pseudocount(pseudocount)?;
    check_cells(traces, n)?;
    let mut counts = vec![pseudocount; n];
    for &c in traces.iter().flatten() {
        counts[c] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyInput(
            "no check-ins to train a profile from (and no pseudocount)".into(),
        ));
    }
    Ok(Profile(counts.into_iter().map(|c| c / total).collect()))
}

/// Counts `j → i` transitions within each trace (never across traces); the
/// initial profile is the histogram of all check-ins.
pub fn train_markov(traces: &[Trace], n: usize, pseudocount: f64) -> Result<MarkovFit> {
    if traces.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyInput("no traces to train a Markov model from".into()));
    }
    let initial = train_profile(traces, n, pseudocount)?;
    let mut counts = vec![pseudocount; n * n];
    for t in traces {
        for w in t.windows(2) {
            counts[w[0] * n + w[1]] += 1.0;
        }
    }
    let mut uniform_rows = Vec::new();
    for (j, row) in counts.chunks_mut(n).enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            row.fill(1.0 / n as f64);
            uniform_rows.push(j);
        } else {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(MarkovFit {
        model: MarkovModel {
            initial,
            transitions: counts,
        },
        uniform_rows,
    })
}

pub fn sample_iid(profile: &Profile, length: usize, rng: &mut dyn RngCore) -> Trace {
    (0..length).map(|_| sample_index(profile.as_slice(), rng)).collect()
}

pub fn sample_markov(model: &MarkovModel, length: usize, rng: &mut dyn RngCore) -> Trace {
    let mut trace = Vec::with_capacity(length);
    if length == 0 {
        return trace;
    }
    let mut x = sample_index(model.initial.as_slice(), rng);
    trace.push(x);
    for _ in 1..length {
        x = sample_index(model.row(x), rng);
        trace.push(x);
    }
    trace
}
