use rand::RngCore;

use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::mechanisms::{check_cell, remap_table, Channel, Mechanism, Release, RemapTable};
use crate::mobility::{MarkovModel, Profile};
use crate::prob::{dot, sample_index};
use crate::CellId;

/// Propagates a belief one step through the chain:
/// `p(x^{r+1} | z^r) = Σ_{x^r} M(x^{r+1} | x^r) · p(x^r | z^r)`.
pub fn markov_prior_update(belief: &Profile, model: &MarkovModel) -> Profile {
    Profile::from_raw_unchecked(propagate(belief.as_slice(), model))
}

fn propagate(belief: &[f64], model: &MarkovModel) -> Vec<f64> {
    let mut next = vec![0.0; belief.len()];
    for (from, &b) in belief.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (nx, &m) in next.iter_mut().zip(model.row(from)) {
            *nx += b * m;
        }
    }
    // Keep the mass at one against slow drift over long traces.
    let total: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= total);
    next
}

/// Bayes update of `prior` with a likelihood vector over real cells.
pub fn markov_posterior(prior: &Profile, likelihood: &[f64]) -> Result<Profile> {
    posterior(prior.as_slice(), likelihood).map(Profile::from_raw_unchecked)
}

pub(crate) fn posterior(prior: &[f64], likelihood: &[f64]) -> Result<Vec<f64>> {
    if prior.len() != likelihood.len() {
        return Err(Error::ShapeMismatch(format!(
            "likelihood covers {} cells, prior covers {}",
            likelihood.len(),
            prior.len()
        )));
    }
    let norm = dot(prior, likelihood);
    if !(norm > 0.0) {
        return Err(Error::DegenerateObservation);
    }
    Ok(prior.iter().zip(likelihood).map(|(p, l)| p * l / norm).collect())
}

/// Remapped mechanism for users following a Markov chain. Before query `r`
/// it holds `p(x^r | z^{r-1})`, starting from the chain's initial profile.
/// Each query draws `z̃` from the base channel, remaps it under the current
/// belief, and then updates the belief exactly as an observer of the
/// releases would.
#[derive(Debug, Clone)]
pub struct MarkovMechanism {
    base: Channel,
    model: MarkovModel,
    d_q: DistMatrix,
    belief: Vec<f64>,
    last_table: Option<RemapTable>,
    degenerate: usize,
}

impl MarkovMechanism {
    pub fn new(base: Channel, model: MarkovModel, d_q: DistMatrix) -> Result<Self> {
        let n = model.n();
        if base.n_inputs() != n || base.n_outputs() != n || d_q.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "channel {}x{}, model over {n} cells, distances over {}",
                base.n_inputs(),
                base.n_outputs(),
                d_q.n()
            )));
        }
        let belief = model.initial().as_slice().to_vec();
        Ok(MarkovMechanism {
            base,
            model,
            d_q,
            belief,
            last_table: None,
            degenerate: 0,
        })
    }

    /// Current prior over the next real location, given all releases so far.
    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    /// Remap table used by the most recent query.
    pub fn last_table(&self) -> Option<&RemapTable> {
        self.last_table.as_ref()
    }
}

impl Mechanism for MarkovMechanism {
    fn n_cells(&self) -> usize {
        self.model.n()
    }

    fn step(&mut self, x: CellId, rng: &mut dyn RngCore) -> Result<Release> {
        check_cell(x, self.n_cells())?;
        let table = remap_table(&self.base, &self.belief, &self.d_q)?;
        let tentative = sample_index(self.base.row(x), rng);
        let z = table.apply(tentative);
        let likelihood = table.composed_column(&self.base, z);
        let updated = match posterior(&self.belief, &likelihood) {
            Ok(post) => post,
            Err(Error::DegenerateObservation) => {
                self.degenerate += 1;
                std::mem::take(&mut self.belief)
            }
            Err(e) => return Err(e),
        };
        self.belief = propagate(&updated, &self.model);
        self.last_table = Some(table);
        Ok(Release { z, likelihood })
    }

    fn degenerate_steps(&self) -> usize {
        self.degenerate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{location_hiding, run_trace, SporadicMechanism};
    use crate::mobility::sample_markov;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doubly_stochastic() -> MarkovModel {
        MarkovModel::new(
            Profile::uniform(3),
            vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.5, 0.3], vec![0.3, 0.2, 0.5]],
        )
        .unwrap()
    }

    #[test]
    fn uniform_belief_is_stationary_under_doubly_stochastic_chain() {
        let next = markov_prior_update(&Profile::uniform(3), &doubly_stochastic());
        for v in next.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn point_belief_moves_to_its_row() {
        let m = doubly_stochastic();
        let next = markov_prior_update(&Profile::point(3, 1), &m);
        assert_eq!(next.as_slice(), m.row(1));
    }

    #[test]
    fn posterior_examples() {
        let prior = Profile::new(vec![0.5, 0.5]).unwrap();
        let post = markov_posterior(&prior, &[2.0 / 3.0, 1.0 / 6.0]).unwrap();
        assert!((post.get(0) - 0.8).abs() < 1e-15);
        assert!((post.get(1) - 0.2).abs() < 1e-15);

        let p3 = Profile::new(vec![0.2, 0.5, 0.3]).unwrap();
        let same = markov_posterior(&p3, &[0.4, 0.4, 0.4]).unwrap();
        assert!(same.tv_distance(&p3) < 1e-15);
        assert_eq!(markov_posterior(&p3, &[0.0, 1.0, 0.0]).unwrap(), Profile::point(3, 1));
        assert!(matches!(
            markov_posterior(&Profile::point(3, 0), &[0.0, 1.0, 1.0]),
            Err(Error::DegenerateObservation)
        ));
    }

    #[test]
    fn identity_chain_and_channel_stay_collapsed() {
        let n = 4;
        let model = MarkovModel::new(
            Profile::uniform(n),
            (0..n).map(|i| Profile::point(n, i).into_vec()).collect(),
        )
        .unwrap();
        let mut mech =
            MarkovMechanism::new(Channel::identity(n), model, DistMatrix::line(n, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = run_trace(&mut mech, &[2, 2, 2, 2, 2], &mut rng).unwrap();
        assert_eq!(rec.z, vec![2; 5]);
        assert_eq!(mech.belief(), Profile::point(n, 2).as_slice());
    }

    #[test]
    fn first_step_matches_sporadic_design_on_initial_profile() {
        let d = DistMatrix::line(5, 1.0);
        let pi0 = Profile::new(vec![0.3, 0.1, 0.2, 0.25, 0.15]).unwrap();
        let model = MarkovModel::iid(&pi0);
        let base = location_hiding(0.4, 5).unwrap();
        let sporadic = SporadicMechanism::new(base.clone(), &pi0, &d).unwrap();
        for x in 0..5 {
            for seed in 0..10 {
                let mut markov = MarkovMechanism::new(base.clone(), model.clone(), d.clone()).unwrap();
                let mut s = sporadic.clone();
                let a = markov.step(x, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let b = s.step(x, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                assert_eq!(a, b);
                assert_eq!(markov.last_table(), Some(sporadic.table()));
            }
        }
    }

    // Independent per-step oracle: plain-loop filtering and an explicit
    // table of expected costs for every (z̃, z).
    #[test]
    fn per_step_tables_match_enumeration() {
        let n = 3;
        let d = DistMatrix::line(n, 1.0);
        let model = MarkovModel::new(
            Profile::new(vec![0.6, 0.3, 0.1]).unwrap(),
            vec![vec![0.9, 0.08, 0.02], vec![0.05, 0.9, 0.05], vec![0.02, 0.08, 0.9]],
        )
        .unwrap();
        let base = location_hiding(0.5, n).unwrap();
        let mut mech = MarkovMechanism::new(base.clone(), model.clone(), d.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = sample_markov(&model, 60, &mut ChaCha8Rng::seed_from_u64(99));

        let mut prior: Vec<f64> = model.initial().as_slice().to_vec();
        for &xr in &x {
            let mut expected = Vec::new();
            for zt in 0..n {
                let joint: Vec<f64> = (0..n).map(|i| prior[i] * base.get(i, zt)).collect();
                let total: f64 = joint.iter().sum();
                let mut best = 0;
                let mut best_cost = f64::INFINITY;
                for z in 0..n {
                    let c: f64 = (0..n).map(|i| joint[i] / total * d.get(i, z)).sum();
                    if c < best_cost - 1e-12 {
                        best = z;
                        best_cost = c;
                    }
                }
                expected.push(best);
            }
            let release = mech.step(xr, &mut rng).unwrap();
            assert_eq!(mech.last_table().unwrap().as_slice(), expected.as_slice());

            let lik: Vec<f64> = (0..n)
                .map(|i| (0..n).filter(|&zt| expected[zt] == release.z).map(|zt| base.get(i, zt)).sum())
                .collect();
            assert_eq!(lik.len(), release.likelihood.len());
            for (a, b) in lik.iter().zip(&release.likelihood) {
                assert!((a - b).abs() < 1e-15);
            }
            let norm: f64 = (0..n).map(|i| prior[i] * lik[i]).sum();
            let post: Vec<f64> = (0..n).map(|i| prior[i] * lik[i] / norm).collect();
            prior = (0..n).map(|j| (0..n).map(|i| post[i] * model.transition(i, j)).sum()).collect();
            for (a, b) in prior.iter().zip(mech.belief()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impossible_observation_falls_back_to_prior() {
        // The model says cell 2 is never visited, yet the user is there and
        // the identity channel reveals it.
        let model = MarkovModel::iid(&Profile::new(vec![0.5, 0.5, 0.0]).unwrap());
        let mut mech =
            MarkovMechanism::new(Channel::identity(3), model, DistMatrix::line(3, 1.0)).unwrap();
        let r = mech.step(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.z, 2);
        assert_eq!(mech.degenerate_steps(), 1);
        assert_eq!(mech.belief(), &[0.5, 0.5, 0.0]);
    }

    proptest! {
        #[test]
        fn prior_update_preserves_mass(
            b in prop::collection::vec(0.01..1.0f64, 4),
            rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 4), 4),
        ) {
            let belief = Profile::from_weights(b).unwrap();
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| Profile::from_weights(r).unwrap().into_vec())
                .collect();
            let model = MarkovModel::new(Profile::uniform(4), rows).unwrap();
            let next = markov_prior_update(&belief, &model);
            prop_assert!((next.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
