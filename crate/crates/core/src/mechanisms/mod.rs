//! Obfuscation mechanisms: base channels, optimal remapping, and the
//! stateful sporadic/Markov mechanisms that release one cell per query.

mod channel;
mod kernel;
mod markov;
mod remap;
mod sporadic;

pub use channel::{
    exponential_mechanism, location_hiding, location_hiding_exclusive, BaseMechanism, Channel,
};
pub use kernel::ChannelKernel;
pub use markov::{markov_posterior, markov_prior_update, MarkovMechanism};
pub use remap::{remap_sporadic, remap_table, RemapTable};
pub use sporadic::SporadicMechanism;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::{CellId, Trace};

/// One released location and the likelihood vector `f(z^r | z^{r-1}, ·)`
/// of that release over every real cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Release {
    pub z: CellId,
    pub likelihood: Vec<f64>,
}

/// An obfuscation mechanism consulted once per query. The likelihood it
/// reports must depend only on public information (past releases and the
/// mechanism description), so an adversary can replicate it.
pub trait Mechanism {
    fn n_cells(&self) -> usize;

    fn step(&mut self, x: CellId, rng: &mut dyn RngCore) -> Result<Release>;

    /// Steps where an internal Bayes update hit a zero normalizer and the
    /// mechanism fell back to its prior.
    fn degenerate_steps(&self) -> usize {
        0
    }
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn n_cells(&self) -> usize {
        (**self).n_cells()
    }

    fn step(&mut self, x: CellId, rng: &mut dyn RngCore) -> Result<Release> {
        (**self).step(x, rng)
    }

    fn degenerate_steps(&self) -> usize {
        (**self).degenerate_steps()
    }
}

pub(crate) fn check_cell(x: CellId, n: usize) -> Result<()> {
    if x >= n {
        return Err(Error::CellOutOfRange { id: x, n });
    }
    Ok(())
}

/// Log of one obfuscated trace: what the user did, what was released, and
/// the per-step likelihood vectors an adversary would reconstruct.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub x: Trace,
    pub z: Trace,
    pub likelihoods: Vec<Vec<f64>>,
    pub degenerate_steps: usize,
}

impl TraceRecord {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Feeds `x` through the mechanism one query at a time.
pub fn run_trace<M: Mechanism + ?Sized>(
    mech: &mut M,
    x: &[CellId],
    rng: &mut dyn RngCore,
) -> Result<TraceRecord> {
    if x.is_empty() {
        return Err(Error::EmptyInput("cannot obfuscate an empty trace".into()));
    }
    let before = mech.degenerate_steps();
    let mut z = Vec::with_capacity(x.len());
    let mut likelihoods = Vec::with_capacity(x.len());
    for &cell in x {
        let release = mech.step(cell, rng)?;
        z.push(release.z);
        likelihoods.push(release.likelihood);
    }
    Ok(TraceRecord {
        x: x.to_vec(),
        z,
        likelihoods,
        degenerate_steps: mech.degenerate_steps() - before,
    })
}
