//! Optimal Bayesian attacks. Both attacks see only the released cells, the
//! per-step likelihood vectors (the public description of the mechanism),
//! and a mobility model; never the real trace.

use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::mechanisms::{markov_prior_update, TraceRecord};
use crate::mobility::{MarkovModel, Profile};
use crate::prob::argmin_lowest;
use crate::CellId;

/// Per-step location estimates plus the number of steps where the
/// observation was impossible under the attack model and the prior was
/// used instead of the posterior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Estimate {
    pub x_hat: Vec<CellId>,
    pub fallbacks: usize,
}

/// Cell minimizing `Σ_x belief(x) · d_p[x][x̂]`; ties go to the lowest id.
/// The belief need not be normalized.
pub fn bayes_estimate(belief: &[f64], d_p: &DistMatrix) -> CellId {
    let total: f64 = belief.iter().sum();
    let normalized: Vec<f64> = if total > 0.0 {
        belief.iter().map(|b| b / total).collect()
    } else {
        belief.to_vec()
    };
    let mut cost = vec![0.0; d_p.n()];
    d_p.expected_costs(&normalized, &mut cost);
    argmin_lowest(&cost)
}

fn check_record(record: &TraceRecord, n: usize) -> Result<()> {
    if record.z.len() != record.likelihoods.len() {
        return Err(Error::ShapeMismatch(format!(
            "record has {} releases but {} likelihood vectors",
            record.z.len(),
            record.likelihoods.len()
        )));
    }
    if let Some(l) = record.likelihoods.iter().find(|l| l.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "likelihood vector covers {} cells, the attack model covers {n}",
            l.len()
        )));
    }
    Ok(())
}

// Unnormalized posterior, or `None` when the observation is impossible.
fn weigh(prior: &[f64], likelihood: &[f64]) -> Option<Vec<f64>> {
    let w: Vec<f64> = prior.iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let total: f64 = w.iter().sum();
    (total > 0.0).then(|| w.into_iter().map(|v| v / total).collect())
}

/// Single-observation attack: posterior `∝ π(x) · f(z^r | ·)` at every step.
pub fn attack_sporadic(record: &TraceRecord, pi_test: &Profile, d_p: &DistMatrix) -> Result<Estimate> {
    check_record(record, pi_test.len())?;
    let mut fallbacks = 0;
    let prior_guess = bayes_estimate(pi_test.as_slice(), d_p);
    let x_hat = record
        .likelihoods
        .iter()
        .map(|l| match weigh(pi_test.as_slice(), l) {
            Some(post) => bayes_estimate(&post, d_p),
            None => {
                fallbacks += 1;
                prior_guess
            }
        })
        .collect();
    Ok(Estimate { x_hat, fallbacks })
}

/// Forward-filtering attack for a Markov chain: Bayes update with each
/// recorded likelihood, estimate, then propagate through the transitions.
pub fn attack_markov(record: &TraceRecord, model_test: &MarkovModel, d_p: &DistMatrix) -> Result<Estimate> {
    check_record(record, model_test.n())?;
    let mut fallbacks = 0;
    let mut prior = model_test.initial().clone();
    let mut x_hat = Vec::with_capacity(record.likelihoods.len());
    for l in &record.likelihoods {
        let post = match weigh(prior.as_slice(), l) {
            Some(post) => Profile::from_raw_unchecked(post),
            None => {
                fallbacks += 1;
                prior
            }
        };
        x_hat.push(bayes_estimate(post.as_slice(), d_p));
        prior = markov_prior_update(&post, model_test);
    }
    Ok(Estimate { x_hat, fallbacks })
}
