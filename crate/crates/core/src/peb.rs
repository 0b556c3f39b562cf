//! Profile-estimation-based mechanism.
//!
//! Before every query the mechanism re-estimates the user's mobility
//! profile by maximum likelihood from its own past releases (EM over the
//! stored per-step likelihood vectors), blends the estimate with an initial
//! profile, and remaps the base channel around the blended profile. Only
//! released cells feed the estimator, so the adversary can replay it.

use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::DistMatrix;
use crate::mechanisms::{
    check_cell, remap_table, BaseMechanism, Channel, ChannelKernel, Mechanism, Release,
};
use crate::mobility::Profile;
use crate::prob::{dot, sample_index};
use crate::CellId;

/// Floor applied to warm-start profiles so no coordinate starts at zero
/// (EM can never move a zero coordinate).
const WARM_START_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Stop once the largest coordinate change falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Start each query's EM from the previous estimate instead of uniform.
    /// Faster, but when the remap merges outputs the merged cells are not
    /// identifiable and keep whatever ratio the previous estimate had, so a
    /// cell that was once estimated near zero can stay there.
    pub warm_start: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tolerance: 1e-8,
            max_iters: 500,
            warm_start: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "EM tolerance {} must be positive",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("EM max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub profile: Profile,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood of every iterate, starting with the
    /// initial profile; `iterations + 1` entries.
    pub log_likelihoods: Vec<f64>,
    /// Steps whose likelihood vector was identically zero and were ignored.
    pub skipped_steps: Vec<usize>,
}

/// `Σ_s log Σ_k π_k · L^s_k`, skipping all-zero likelihood vectors.
pub fn log_likelihood<L: AsRef<[f64]>>(likelihoods: &[L], pi: &Profile) -> f64 {
    likelihoods
        .iter()
        .map(AsRef::as_ref)
        .filter(|l| l.iter().any(|&v| v > 0.0))
        .map(|l| dot(pi.as_slice(), l).ln())
        .sum()
}

/// Maximum-likelihood profile from per-step likelihood vectors
/// `f(z^s | z^{s-1}, ·)` by expectation-maximization:
///
/// `π_i ← (1/r) Σ_s π_i L^s_i / Σ_k π_k L^s_k`
///
/// iterated from `init` (which must be strictly positive).
pub fn em_mle<L: AsRef<[f64]>>(likelihoods: &[L], init: &Profile, cfg: &EmConfig) -> Result<EmOutcome> {
    em_mle_weighted(likelihoods, &vec![1.0; likelihoods.len()], init, cfg)
}

/// [`em_mle`] where step `s` stands for `weights[s]` identical observations.
/// Repeated likelihood vectors can be collapsed into one weighted entry.
pub fn em_mle_weighted<L: AsRef<[f64]>>(
    likelihoods: &[L],
    weights: &[f64],
    init: &Profile,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    cfg.validate()?;
    let n = init.len();
    if init.as_slice().iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidParameter(
            "EM initialization must be strictly positive".into(),
        ));
    }
    if weights.len() != likelihoods.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} likelihood vectors",
            weights.len(),
            likelihoods.len()
        )));
    }
    let mut steps: Vec<(&[f64], f64)> = Vec::with_capacity(likelihoods.len());
    let mut skipped_steps = Vec::new();
    for (s, (l, &w)) in likelihoods.iter().zip(weights).enumerate() {
        let l = l.as_ref();
        if l.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "likelihood vector {s} covers {} cells, expected {n}",
                l.len()
            )));
        }
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "likelihood vector {s} has invalid entries"
            )));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("weight {w} of step {s} must be positive")));
        }
        if l.iter().all(|&v| v == 0.0) {
            skipped_steps.push(s);
        } else {
            steps.push((l, w));
        }
    }
    if steps.is_empty() {
        return Err(Error::EmptyInput("no informative observations for EM".into()));
    }
    let r: f64 = steps.iter().map(|(_, w)| w).sum();

    let mut pi = init.as_slice().to_vec();
    let mut acc = vec![0.0; n];
    let mut log_likelihoods = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        acc.fill(0.0);
        let mut ll = 0.0;
        for &(l, w) in &steps {
            let denom = dot(&pi, l);
            ll += w * denom.ln();
            let scale = w / denom;
            for (a, &v) in acc.iter_mut().zip(l) {
                *a += v * scale;
            }
        }
        log_likelihoods.push(ll);
        let mut change: f64 = 0.0;
        for (p, &a) in pi.iter_mut().zip(&acc) {
            let next = *p * a / r;
            change = change.max((next - *p).abs());
            *p = next;
        }
        iterations += 1;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let profile = Profile::from_raw_unchecked(pi);
    log_likelihoods.push(
        steps
            .iter()
            .map(|&(l, w)| w * dot(profile.as_slice(), l).ln())
            .sum(),
    );
    Ok(EmOutcome {
        profile,
        iterations,
        converged,
        log_likelihoods,
        skipped_steps,
    })
}

/// [`em_mle_weighted`] for releases of a remapped mechanism, where each
/// observation's likelihood is a sum of base-channel columns
/// `L^u = Σ_{z̃ ∈ S_u} f(·, z̃)`. Observations are given by their preimage
/// sets `S_u`; every iteration costs two kernel products plus `Σ|S_u|`.
pub fn em_mle_preimages(
    kernel: &ChannelKernel,
    preimages: &[Vec<CellId>],
    weights: &[f64],
    init: &Profile,
    cfg: &EmConfig,
) -> Result<EmOutcome> {
    em_preimages(kernel, preimages, weights, init, cfg, true)
}

// With `trace` off only the final log-likelihood is computed, which skips
// one logarithm per observation and iteration.
fn em_preimages(
    kernel: &ChannelKernel,
    preimages: &[Vec<CellId>],
    weights: &[f64],
    init: &Profile,
    cfg: &EmConfig,
    trace: bool,
) -> Result<EmOutcome> {
    cfg.validate()?;
    let n = kernel.n();
    if init.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "initial profile covers {} cells, channel covers {n}",
            init.len()
        )));
    }
    if init.as_slice().iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidParameter(
            "EM initialization must be strictly positive".into(),
        ));
    }
    if weights.len() != preimages.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} observations",
            weights.len(),
            preimages.len()
        )));
    }
    if preimages.is_empty() {
        return Err(Error::EmptyInput("no informative observations for EM".into()));
    }
    for (u, (set, &w)) in preimages.iter().zip(weights).enumerate() {
        if set.is_empty() || set.iter().any(|&z| z >= n) {
            return Err(Error::InvalidParameter(format!("preimage {u} is empty or out of range")));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("weight {w} of observation {u} must be positive")));
        }
    }
    let r: f64 = weights.iter().sum();
    let mut pi = init.as_slice().to_vec();
    let mut t = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut log_likelihoods = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let loglik = |t: &[f64]| -> f64 {
        preimages
            .iter()
            .zip(weights)
            .map(|(set, w)| w * set.iter().map(|&z| t[z]).sum::<f64>().ln())
            .sum()
    };
    // Sets covering more than half the cells are stored as complements.
    let compact: Vec<(bool, Vec<CellId>)> = preimages
        .iter()
        .map(|set| {
            if 2 * set.len() <= n {
                return (false, set.clone());
            }
            let mut inside = vec![false; n];
            set.iter().for_each(|&z| inside[z] = true);
            (true, (0..n).filter(|&z| !inside[z]).collect())
        })
        .collect();
    while iterations < cfg.max_iters {
        kernel.left_mul(&pi, &mut t);
        let t_total: f64 = t.iter().sum();
        s.fill(0.0);
        let mut everywhere = 0.0;
        let mut ll = 0.0;
        for (((complement, list), &w), set) in compact.iter().zip(weights).zip(preimages) {
            let partial: f64 = list.iter().map(|&z| t[z]).sum();
            let mut denom = if *complement { t_total - partial } else { partial };
            if *complement && denom < 1e-6 * t_total {
                // Too much cancellation; sum the set directly.
                denom = set.iter().map(|&z| t[z]).sum();
            }
            if trace {
                ll += w * denom.ln();
            }
            let scale = w / denom;
            if *complement {
                everywhere += scale;
                list.iter().for_each(|&z| s[z] -= scale);
            } else {
                list.iter().for_each(|&z| s[z] += scale);
            }
        }
        if everywhere != 0.0 {
            s.iter_mut().for_each(|v| *v += everywhere);
        }
        if trace {
            log_likelihoods.push(ll);
        }
        kernel.right_mul(&s, &mut acc);
        let mut change: f64 = 0.0;
        for (p, &a) in pi.iter_mut().zip(&acc) {
            let next = *p * a / r;
            change = change.max((next - *p).abs());
            *p = next;
        }
        iterations += 1;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    kernel.left_mul(&pi, &mut t);
    log_likelihoods.push(loglik(&t));
    Ok(EmOutcome {
        profile: Profile::from_raw_unchecked(pi),
        iterations,
        converged,
        log_likelihoods,
        skipped_steps: Vec::new(),
    })
}

/// `r^{-γ} · π_ini + (1 − r^{-γ}) · π_ML`.
pub fn blend(pi_ini: &Profile, pi_ml: &Profile, r: usize, gamma: f64) -> Result<Profile> {
    if r == 0 {
        return Err(Error::InvalidParameter("query index starts at 1".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma {gamma} must be positive")));
    }
    if pi_ini.len() != pi_ml.len() {
        return Err(Error::ShapeMismatch("profiles cover different cell sets".into()));
    }
    let w = (r as f64).powf(-gamma);
    let mixed = pi_ini
        .as_slice()
        .iter()
        .zip(pi_ml.as_slice())
        .map(|(a, b)| w * a + (1.0 - w) * b)
        .collect();
    Profile::from_weights(mixed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PebConfig {
    pub pi_ini: Profile,
    pub gamma: f64,
    pub em: EmConfig,
    /// Re-estimate every `em_stride` queries, reusing the estimate between.
    pub em_stride: usize,
    pub base: BaseMechanism,
}

impl PebConfig {
    pub fn new(pi_ini: Profile, base: BaseMechanism) -> Self {
        PebConfig {
            pi_ini,
            gamma: 0.5,
            em: EmConfig::default(),
            em_stride: 1,
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma {} must be positive", self.gamma)));
        }
        if self.em_stride == 0 {
            return Err(Error::InvalidParameter("em_stride must be at least 1".into()));
        }
        self.em.validate()
    }
}

#[derive(Debug, Clone)]
pub struct PebMechanism {
    cfg: PebConfig,
    base: Channel,
    d_q: DistMatrix,
    likelihoods: Vec<Vec<f64>>,
    kernel: ChannelKernel,
    // Distinct preimage sets of past releases with multiplicities.
    preimages: Vec<Vec<CellId>>,
    counts: Vec<f64>,
    index: HashMap<Vec<CellId>, usize>,
    estimate: Option<Profile>,
    design: Profile,
    em_iterations: usize,
}

impl PebMechanism {
    pub fn new(cfg: PebConfig, d_q: DistMatrix) -> Result<Self> {
        cfg.validate()?;
        if cfg.pi_ini.len() != d_q.n() {
            return Err(Error::ShapeMismatch(format!(
                "initial profile covers {} cells, distances cover {}",
                cfg.pi_ini.len(),
                d_q.n()
            )));
        }
        let base = cfg.base.channel(&d_q)?;
        let kernel = ChannelKernel::new(&cfg.base, &d_q)?;
        let design = cfg.pi_ini.clone();
        Ok(PebMechanism {
            cfg,
            base,
            d_q,
            likelihoods: Vec::new(),
            kernel,
            preimages: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
            estimate: None,
            design,
            em_iterations: 0,
        })
    }

    /// Queries answered so far.
    pub fn queries(&self) -> usize {
        self.likelihoods.len()
    }

    /// Blended profile the most recent release was designed for.
    pub fn design_profile(&self) -> &Profile {
        &self.design
    }

    /// Latest maximum-likelihood estimate, if one has been computed.
    pub fn ml_estimate(&self) -> Option<&Profile> {
        self.estimate.as_ref()
    }

    pub fn likelihoods(&self) -> &[Vec<f64>] {
        &self.likelihoods
    }

    pub fn em_iterations(&self) -> usize {
        self.em_iterations
    }

    /// Profile used to design query `r = queries() + 1`.
    fn next_design(&mut self) -> Result<Profile> {
        let r = self.likelihoods.len() + 1;
        if r == 1 {
            return Ok(self.cfg.pi_ini.clone());
        }
        let due = (r - 2).is_multiple_of(self.cfg.em_stride);
        if due || self.estimate.is_none() {
            let init = match (&self.estimate, self.cfg.em.warm_start) {
                (Some(prev), true) => floored(prev),
                _ => Profile::uniform(self.d_q.n()),
            };
            let out = em_preimages(&self.kernel, &self.preimages, &self.counts, &init, &self.cfg.em, false)?;
            self.em_iterations += out.iterations;
            self.estimate = Some(out.profile);
        }
        let ml = self.estimate.as_ref().expect("estimate computed above");
        blend(&self.cfg.pi_ini, ml, r, self.cfg.gamma)
    }
}

impl PebMechanism {
    fn record(&mut self, preimage: Vec<CellId>, likelihood: &[f64]) {
        match self.index.get(&preimage) {
            Some(&i) => self.counts[i] += 1.0,
            None => {
                self.index.insert(preimage.clone(), self.preimages.len());
                self.preimages.push(preimage);
                self.counts.push(1.0);
            }
        }
        self.likelihoods.push(likelihood.to_vec());
    }
}

fn floored(p: &Profile) -> Profile {
    let w = p.as_slice().iter().map(|&v| v.max(WARM_START_FLOOR)).collect();
    Profile::from_weights(w).expect("floored weights are positive")
}

impl Mechanism for PebMechanism {
    fn n_cells(&self) -> usize {
        self.d_q.n()
    }

    fn step(&mut self, x: CellId, rng: &mut dyn RngCore) -> Result<Release> {
        check_cell(x, self.n_cells())?;
        self.design = self.next_design()?;
        let table = remap_table(&self.base, self.design.as_slice(), &self.d_q)?;
        let tentative = sample_index(self.base.row(x), rng);
        let z = table.apply(tentative);
        let likelihood = table.composed_column(&self.base, z);
        let preimage: Vec<CellId> = (0..table.len()).filter(|&t| table.apply(t) == z).collect();
        self.record(preimage, &likelihood);
        Ok(Release { z, likelihood })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{location_hiding, run_trace, SporadicMechanism};
    use crate::mobility::sample_iid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> EmConfig {
        EmConfig {
            tolerance: 1e-12,
            max_iters: 200_000,
            warm_start: false,
        }
    }

    #[test]
    fn indicator_likelihoods_give_the_histogram() {
        let f = Channel::identity(4);
        let z = [0, 1, 1, 3, 3, 3, 0, 3];
        let lik: Vec<&[f64]> = z.iter().map(|&c| f.column(c)).collect();
        let out = em_mle(&lik, &Profile::uniform(4), &EmConfig::default()).unwrap();
        assert_eq!(out.profile.as_slice(), &[0.25, 0.25, 0.0, 0.5]);
        // Fixed point after one update; the second confirms convergence.
        assert_eq!(out.iterations, 2);
        assert!(out.converged);
    }

    #[test]
    fn constant_likelihoods_leave_the_init_alone() {
        let init = Profile::new(vec![0.1, 0.6, 0.3]).unwrap();
        let lik = vec![vec![1.0 / 3.0; 3]; 7];
        let out = em_mle(&lik, &init, &EmConfig::default()).unwrap();
        for (a, b) in out.profile.as_slice().iter().zip(init.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn zero_likelihood_steps_are_skipped() {
        let lik = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]];
        let out = em_mle(&lik, &Profile::uniform(2), &EmConfig::default()).unwrap();
        assert_eq!(out.skipped_steps, vec![1]);
        assert_eq!(out.profile.as_slice(), &[0.5, 0.5]);
        assert!(em_mle(&[vec![0.0, 0.0]], &Profile::uniform(2), &EmConfig::default()).is_err());
    }

    #[test]
    fn em_input_validation() {
        let lik = vec![vec![0.5, 0.5]];
        let zero_init = Profile::new(vec![1.0, 0.0]).unwrap();
        assert!(em_mle(&lik, &zero_init, &EmConfig::default()).is_err());
        assert!(em_mle(&[vec![0.5, 0.5, 0.5]], &Profile::uniform(2), &EmConfig::default()).is_err());
        let bad = EmConfig {
            tolerance: 0.0,
            ..EmConfig::default()
        };
        assert!(em_mle(&lik, &Profile::uniform(2), &bad).is_err());
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(em_mle(&empty, &Profile::uniform(2), &EmConfig::default()).is_err());
    }

    #[test]
    fn weighted_em_equals_repeated_steps() {
        let f = location_hiding(0.6, 4).unwrap();
        let distinct: Vec<Vec<f64>> = (0..4).map(|z| f.column(z).to_vec()).collect();
        let counts = [3.0, 1.0, 5.0, 2.0];
        let expanded: Vec<&Vec<f64>> = distinct
            .iter()
            .zip(counts)
            .flat_map(|(l, c)| std::iter::repeat_n(l, c as usize))
            .collect();
        let init = Profile::uniform(4);
        let a = em_mle_weighted(&distinct, &counts, &init, &tight()).unwrap();
        let b = em_mle(&expanded, &init, &tight()).unwrap();
        assert!((a.profile.tv_distance(&b.profile)) < 1e-12);
        assert!(em_mle_weighted(&distinct, &[1.0, 0.0, 1.0, 1.0], &init, &tight()).is_err());
        assert!(em_mle_weighted(&distinct, &[1.0], &init, &tight()).is_err());
    }

    #[test]
    fn preimage_em_equals_vector_em() {
        let grid = crate::geo::Grid::new(crate::geo::Region::new(37.0, 37.04, -122.0, -121.95, 3, 4).unwrap()).unwrap();
        let d = grid.distance_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for base in [
            lh(0.35),
            BaseMechanism::LocationHiding { alpha: 0.35, exclusive: true },
            BaseMechanism::Exponential { epsilon: 0.9 },
        ] {
            // Dense sets exercise the complement storage.
            for (dist, density) in [(d.clone(), 0.2), (d.dense(), 0.2), (d.clone(), 0.85), (d.dense(), 0.85)] {
                let kernel = ChannelKernel::new(&base, &dist).unwrap();
                let f = base.channel(&dist).unwrap();
                let sets: Vec<Vec<CellId>> = (0..15)
                    .map(|_| {
                        let mut s: Vec<CellId> = (0..12).filter(|_| rng.gen_bool(density)).collect();
                        if s.is_empty() {
                            s.push(rng.gen_range(0..12));
                        }
                        s
                    })
                    .collect();
                let weights: Vec<f64> = (0..15).map(|_| rng.gen_range(1..4) as f64).collect();
                let vectors: Vec<Vec<f64>> = sets
                    .iter()
                    .map(|s| (0..12).map(|x| s.iter().map(|&z| f.get(x, z)).sum()).collect())
                    .collect();
                let init = Profile::uniform(12);
                let cfg = EmConfig { tolerance: 1e-12, max_iters: 300, warm_start: false };
                let a = em_mle_preimages(&kernel, &sets, &weights, &init, &cfg).unwrap();
                let b = em_mle_weighted(&vectors, &weights, &init, &cfg).unwrap();
                assert!(a.profile.tv_distance(&b.profile) < 1e-10);
                for (x, y) in a.log_likelihoods.iter().zip(&b.log_likelihoods) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    // Grid search over the 2-simplex at step 0.005, then successive zooms
    // around the incumbent; the objective is concave so the zoom is sound.
    fn simplex_search(lik: &[Vec<f64>]) -> [f64; 3] {
        let ll = |p: [f64; 3]| -> f64 {
            lik.iter()
                .map(|l| (p[0] * l[0] + p[1] * l[1] + p[2] * l[2]).ln())
                .sum()
        };
        let mut best = [1.0 / 3.0; 3];
        let mut best_ll = f64::NEG_INFINITY;
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let p = [i as f64 / 200.0, j as f64 / 200.0, (steps - i - j) as f64 / 200.0];
                let v = ll(p);
                if v > best_ll {
                    best_ll = v;
                    best = p;
                }
            }
        }
        let mut h = 0.005;
        while h > 1e-8 {
            let center = best;
            for a in -10i32..=10 {
                for b in -10i32..=10 {
                    let p0 = center[0] + a as f64 * h / 5.0;
                    let p1 = center[1] + b as f64 * h / 5.0;
                    let p2 = 1.0 - p0 - p1;
                    if p0 < 0.0 || p1 < 0.0 || p2 < 0.0 {
                        continue;
                    }
                    let v = ll([p0, p1, p2]);
                    if v > best_ll {
                        best_ll = v;
                        best = [p0, p1, p2];
                    }
                }
            }
            h /= 5.0;
        }
        best
    }

    #[test]
    fn em_matches_simplex_search() {
        let f = location_hiding(0.7, 3).unwrap();
        let truth = Profile::new(vec![0.5, 0.3, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = sample_iid(&truth, 30, &mut rng);
        let lik: Vec<Vec<f64>> = x
            .iter()
            .map(|&xi| f.column(sample_index(f.row(xi), &mut rng)).to_vec())
            .collect();
        let em = em_mle(&lik, &Profile::uniform(3), &tight()).unwrap();
        let grid = simplex_search(&lik);
        for i in 0..3 {
            assert!((em.profile.get(i) - grid[i]).abs() < 1e-4, "{:?} vs {grid:?}", em.profile);
        }
    }

    #[test]
    fn blend_examples() {
        let a = Profile::new(vec![0.7, 0.2, 0.1]).unwrap();
        let b = Profile::new(vec![0.1, 0.1, 0.8]).unwrap();
        assert!(blend(&a, &b, 1, 0.3).unwrap().tv_distance(&a) < 1e-15);
        let mixed = blend(&a, &b, 100, 0.5).unwrap();
        for i in 0..3 {
            assert!((mixed.get(i) - (0.1 * a.get(i) + 0.9 * b.get(i))).abs() < 1e-15);
        }
        let same = blend(&a, &a, 37, 1.7).unwrap();
        for i in 0..3 {
            assert!((same.get(i) - a.get(i)).abs() < 1e-15);
        }
        assert!(blend(&a, &b, 0, 0.5).is_err());
        assert!(blend(&a, &b, 3, 0.0).is_err());
    }

    fn lh(alpha: f64) -> BaseMechanism {
        BaseMechanism::LocationHiding {
            alpha,
            exclusive: false,
        }
    }

    #[test]
    fn first_query_matches_sporadic_mechanism_on_initial_profile() {
        let d = DistMatrix::line(6, 1.0);
        let pi_ini = Profile::new(vec![0.3, 0.2, 0.1, 0.1, 0.1, 0.2]).unwrap();
        let cfg = PebConfig::new(pi_ini.clone(), lh(0.4));
        let sporadic =
            SporadicMechanism::new(location_hiding(0.4, 6).unwrap(), &pi_ini, &d).unwrap();
        for x in 0..6 {
            let mut peb = PebMechanism::new(cfg.clone(), d.clone()).unwrap();
            let mut s = sporadic.clone();
            let a = peb.step(x, &mut ChaCha8Rng::seed_from_u64(x as u64)).unwrap();
            let b = s.step(x, &mut ChaCha8Rng::seed_from_u64(x as u64)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn estimate_converges_to_true_profile() {
        let n = 10;
        let d = DistMatrix::line(n, 1.0);
        let truth = Profile::new(vec![0.02, 0.03, 0.05, 0.3, 0.2, 0.1, 0.1, 0.1, 0.05, 0.05]).unwrap();
        let pi_ini = Profile::uniform(n);
        let mut mech = PebMechanism::new(PebConfig::new(pi_ini, lh(0.8)), d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = sample_iid(&truth, 500, &mut rng);
        run_trace(&mut mech, &x, &mut rng).unwrap();
        let tv = mech.design_profile().tv_distance(&truth);
        assert!(tv < 0.1, "tv {tv}");
    }

    #[test]
    fn stored_likelihoods_are_the_released_columns() {
        let d = DistMatrix::line(5, 1.0);
        let mut mech = PebMechanism::new(PebConfig::new(Profile::uniform(5), lh(0.5)), d.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = location_hiding(0.5, 5).unwrap();
        for (i, x) in [0, 4, 4, 2, 1, 3, 3, 3].into_iter().enumerate() {
            let design = if i == 0 {
                Profile::uniform(5)
            } else {
                let ml = em_mle(mech.likelihoods(), &Profile::uniform(5), &EmConfig::default())
                    .unwrap()
                    .profile;
                blend(&Profile::uniform(5), &ml, i + 1, 0.5).unwrap()
            };
            let r = mech.step(x, &mut rng).unwrap();
            let table = remap_table(&base, design.as_slice(), &d).unwrap();
            assert_eq!(r.likelihood, table.composed_column(&base, r.z));
            assert_eq!(mech.likelihoods().last().unwrap(), &r.likelihood);
        }
    }

    #[test]
    fn stride_reuses_estimates() {
        let d = DistMatrix::line(4, 1.0);
        let mut cfg = PebConfig::new(Profile::uniform(4), lh(0.6));
        cfg.em_stride = 3;
        let mut mech = PebMechanism::new(cfg, d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        mech.step(0, &mut rng).unwrap();
        mech.step(1, &mut rng).unwrap();
        let after_first = mech.ml_estimate().cloned();
        mech.step(2, &mut rng).unwrap();
        mech.step(3, &mut rng).unwrap();
        assert_eq!(mech.ml_estimate().cloned(), after_first);
        mech.step(3, &mut rng).unwrap();
        assert_ne!(mech.ml_estimate().cloned(), after_first);
    }

    #[test]
    fn config_validation() {
        let d = DistMatrix::line(3, 1.0);
        let mut cfg = PebConfig::new(Profile::uniform(3), lh(0.5));
        cfg.gamma = 0.0;
        assert!(PebMechanism::new(cfg.clone(), d.clone()).is_err());
        cfg.gamma = 0.5;
        cfg.em_stride = 0;
        assert!(PebMechanism::new(cfg, d.clone()).is_err());
        assert!(PebMechanism::new(PebConfig::new(Profile::uniform(4), lh(0.5)), d).is_err());
    }

    fn random_lik(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..r)
            .map(|_| (0..n).map(|_| rng.gen_range(0.01..1.0)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn log_likelihood_never_decreases(seed in 0u64..1000, n in 2usize..8, r in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lik = random_lik(n, r, &mut rng);
            let init = Profile::from_weights((0..n).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
            let out = em_mle(&lik, &init, &EmConfig { max_iters: 300, ..EmConfig::default() }).unwrap();
            for w in out.log_likelihoods.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn blend_is_a_profile(
            a in prop::collection::vec(0.0..1.0f64, 5),
            b in prop::collection::vec(0.0..1.0f64, 5),
            r in 1usize..10_000,
            gamma in 0.01..3.0f64,
        ) {
            prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
            let pa = Profile::from_weights(a).unwrap();
            let pb = Profile::from_weights(b).unwrap();
            let mixed = blend(&pa, &pb, r, gamma).unwrap();
            prop_assert!((mixed.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(mixed.as_slice().iter().all(|&v| v >= 0.0));
        }
    }
}
