//! Average quality loss and average adversary error, empirical (from
//! obfuscated traces) and theoretical (from a channel and a profile).

use serde::{Deserialize, Serialize};

use crate::adversary::Estimate;
use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::mechanisms::{Channel, TraceRecord};
use crate::mobility::Profile;

/// Step range of a trace over which metrics are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    All,
    /// Steps `1..=ρ/2`.
    FirstHalf,
    /// Steps `ρ/2+1..=ρ`.
    LastHalf,
}

impl Window {
    /// Zero-based half-open step range for a trace of length `len`.
    pub fn range(&self, len: usize) -> std::ops::Range<usize> {
        match self {
            Window::All => 0..len,
            Window::FirstHalf => 0..len / 2,
            Window::LastHalf => len / 2..len,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Window::All => "all",
            Window::FirstHalf => "first-half",
            Window::LastHalf => "last-half",
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Window::All),
            "first-half" => Ok(Window::FirstHalf),
            "last-half" => Ok(Window::LastHalf),
            other => Err(Error::Config(format!("unknown window {other:?}"))),
        }
    }
}

fn windowed_mean<'a>(
    pairs: impl Iterator<Item = (&'a [usize], &'a [usize])>,
    d: &DistMatrix,
    window: Window,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in pairs {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "aligned traces have lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        for s in window.range(a.len()) {
            total += d.get(a[s], b[s]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput(format!("window {} selects no steps", window.name())));
    }
    Ok(total / count as f64)
}

/// Mean `d_q(x^r, z^r)` over the window of every record.
pub fn empirical_qavg(records: &[TraceRecord], d_q: &DistMatrix, window: Window) -> Result<f64> {
    windowed_mean(records.iter().map(|r| (&r.x[..], &r.z[..])), d_q, window)
}

/// Mean `d_p(x^r, x̂^r)` over the window of every record.
pub fn empirical_pae(
    records: &[TraceRecord],
    estimates: &[Estimate],
    d_p: &DistMatrix,
    window: Window,
) -> Result<f64> {
    if records.len() != estimates.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} records but {} estimates",
            records.len(),
            estimates.len()
        )));
    }
    windowed_mean(
        records.iter().zip(estimates).map(|(r, e)| (&r.x[..], &e.x_hat[..])),
        d_p,
        window,
    )
}

fn check(channel: &Channel, pi: &Profile, d: &DistMatrix) -> Result<()> {
    if channel.n_inputs() != pi.len() || channel.n_outputs() != d.n() || pi.len() != d.n() {
        return Err(Error::ShapeMismatch(format!(
            "channel {}x{}, profile over {}, distances over {}",
            channel.n_inputs(),
            channel.n_outputs(),
            pi.len(),
            d.n()
        )));
    }
    Ok(())
}

/// `Σ_x Σ_z π(x) f(z|x) d_q(x, z)`.
pub fn theoretical_qavg(channel: &Channel, pi: &Profile, d_q: &DistMatrix) -> Result<f64> {
    check(channel, pi, d_q)?;
    let mut total = 0.0;
    for x in 0..pi.len() {
        let px = pi.get(x);
        if px == 0.0 {
            continue;
        }
        let row: f64 = channel.row(x).iter().zip(d_q.row(x)).map(|(f, d)| f * d).sum();
        total += px * row;
    }
    Ok(total)
}

/// Error of the optimal deterministic attack:
/// `Σ_z min_x̂ Σ_x π(x) f(z|x) d_p(x, x̂)`.
pub fn theoretical_pae_opt(channel: &Channel, pi: &Profile, d_p: &DistMatrix) -> Result<f64> {
    check(channel, pi, d_p)?;
    let n = pi.len();
    let mut joint = vec![0.0; n];
    let mut cost = vec![0.0; n];
    let mut total = 0.0;
    for z in 0..channel.n_outputs() {
        let mut mass = 0.0;
        for ((j, &f), &p) in joint.iter_mut().zip(channel.column(z)).zip(pi.as_slice()) {
            *j = p * f;
            mass += *j;
        }
        if mass == 0.0 {
            continue;
        }
        d_p.expected_costs(&joint, &mut cost);
        total += cost.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(total)
}
