//! Synthetic mobility: hotspot profiles, ring-route Markov chains, and
//! trace stores sampled from a model file.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{DistMatrix, Region};
use crate::harness::store::{TraceStore, UserTraces};
use crate::mobility::{sample_iid, sample_markov, MarkovModel, Profile};
use crate::{CellId, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mobility {
    Iid { profile: Profile },
    Markov { model: MarkovModel },
}

impl Mobility {
    pub fn n(&self) -> usize {
        match self {
            Mobility::Iid { profile } => profile.len(),
            Mobility::Markov { model } => model.n(),
        }
    }

    pub fn sample(&self, length: usize, rng: &mut dyn RngCore) -> Trace {
        match self {
            Mobility::Iid { profile } => sample_iid(profile, length, rng),
            Mobility::Markov { model } => sample_markov(model, length, rng),
        }
    }
}

/// Model file read by `lppm synth`. Training traces come from `train` when
/// given, so test and training behaviour can differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub region: Region,
    pub test: Mobility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Mobility>,
}

impl SynthModel {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        let n = self.region.n_cells();
        for m in std::iter::once(&self.test).chain(&self.train) {
            if m.n() != n {
                return Err(Error::ShapeMismatch(format!("model covers {} cells, region has {n}", m.n())));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: SynthModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    fn train(&self) -> &Mobility {
        self.train.as_ref().unwrap_or(&self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub users: usize,
    pub test_traces: usize,
    pub test_length: usize,
    pub scarce_length: usize,
    pub rich_length: usize,
    pub seed: u64,
}

/// One user's traces. Scarce and rich sets are single traces so Markov
/// training sees their transitions.
pub fn synthesize_user(id: String, model: &SynthModel, spec: &SynthSpec, rng: &mut dyn RngCore) -> UserTraces {
    let test = (0..spec.test_traces).map(|_| model.test.sample(spec.test_length, rng)).collect();
    let scarce = vec![model.train().sample(spec.scarce_length, rng)];
    let rich = vec![model.train().sample(spec.rich_length, rng)];
    UserTraces { id, test, scarce, rich }
}

/// Users are independent replicas of the model; user `u` samples from
/// stream `u` of the base seed.
pub fn synthesize(model: &SynthModel, spec: &SynthSpec) -> Result<TraceStore> {
    model.validate()?;
    if spec.users == 0 || spec.test_traces == 0 || spec.test_length == 0 {
        return Err(Error::Config("need at least one user with one non-empty test trace".into()));
    }
    let users = (0..spec.users)
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(u as u64);
            synthesize_user(u.to_string(), model, spec, &mut rng)
        })
        .collect();
    Ok(TraceStore {
        region: model.region,
        users,
    })
}

/// `floor + Σ_c exp(-d(x, c) / scale)`, normalized.
pub fn hotspot_profile(d: &DistMatrix, centers: &[CellId], scale_km: f64, floor: f64) -> Result<Profile> {
    if !(scale_km > 0.0) || !(floor >= 0.0) {
        return Err(Error::InvalidParameter(format!("scale {scale_km} and floor {floor}")));
    }
    let w = (0..d.n())
        .map(|x| floor + centers.iter().map(|&c| (-d.get(x, c) / scale_km).exp()).sum::<f64>())
        .collect();
    Profile::from_weights(w)
}

/// Shape of a pair of hotspot profiles for a train/test mismatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotspotSpec {
    pub hotspots: usize,
    /// Every center lies within this distance of the first one.
    pub spread_km: f64,
    pub scale_km: f64,
    pub floor: f64,
    /// How far each center moves between the two profiles.
    pub max_shift_km: f64,
}

impl Default for HotspotSpec {
    fn default() -> Self {
        HotspotSpec {
            hotspots: 3,
            spread_km: 3.0,
            scale_km: 0.7,
            floor: 0.001,
            max_shift_km: 6.0,
        }
    }
}

fn pick_near(d: &DistMatrix, c: CellId, radius: f64, rng: &mut dyn RngCore) -> CellId {
    let near: Vec<CellId> = (0..d.n()).filter(|&z| z != c && d.get(c, z) <= radius).collect();
    if near.is_empty() {
        c
    } else {
        near[rng.gen_range(0..near.len())]
    }
}

/// Two hotspot profiles: the first has a random cluster of centers, the
/// second moves each center to a random cell within `max_shift_km`.
/// Redrawn until their total variation distance reaches `min_tv`.
pub fn shifted_hotspots(
    d: &DistMatrix,
    spec: &HotspotSpec,
    min_tv: f64,
    rng: &mut dyn RngCore,
) -> Result<(Profile, Profile)> {
    if spec.hotspots == 0 || d.n() == 0 {
        return Err(Error::InvalidParameter(format!("{} hotspots on {} cells", spec.hotspots, d.n())));
    }
    for _ in 0..1000 {
        let first = rng.gen_range(0..d.n());
        let mut from = vec![first];
        while from.len() < spec.hotspots {
            from.push(pick_near(d, first, spec.spread_km, rng));
        }
        let to: Vec<CellId> = from.iter().map(|&c| pick_near(d, c, spec.max_shift_km, rng)).collect();
        let a = hotspot_profile(d, &from, spec.scale_km, spec.floor)?;
        let b = hotspot_profile(d, &to, spec.scale_km, spec.floor)?;
        if a.tv_distance(&b) >= min_tv {
            return Ok((a, b));
        }
    }
    Err(Error::InvalidParameter(format!(
        "could not reach total variation {min_tv} with these hotspot settings"
    )))
}

/// Cells on the border of the grid rectangle inset by `margin`, clockwise
/// from its lower-left corner.
pub fn ring_cells(rows: usize, cols: usize, margin: usize) -> Result<Vec<CellId>> {
    if rows < 2 * margin + 2 || cols < 2 * margin + 2 {
        return Err(Error::InvalidParameter(format!(
            "margin {margin} leaves no ring on a {rows}x{cols} grid"
        )));
    }
    let (r0, r1, c0, c1) = (margin, rows - 1 - margin, margin, cols - 1 - margin);
    let id = |r: usize, c: usize| r * cols + c;
    let mut ring: Vec<CellId> = (c0..=c1).map(|c| id(r0, c)).collect();
    ring.extend((r0 + 1..=r1).map(|r| id(r, c1)));
    ring.extend((c0..c1).rev().map(|c| id(r1, c)));
    ring.extend((r0 + 1..r1).rev().map(|r| id(r, c0)));
    Ok(ring)
}

/// A user circling a fixed route: from each route cell, stay with `stay`,
/// step forward with `forward` and back with the remainder. Cells off the
/// route are absorbing and never entered. Starts uniformly on the route.
pub fn ring_route_chain(region: &Region, margin: usize, stay: f64, forward: f64) -> Result<MarkovModel> {
    let back = 1.0 - stay - forward;
    if [stay, forward, back].iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParameter(format!("stay {stay} and forward {forward}")));
    }
    let n = region.n_cells();
    let ring = ring_cells(region.rows, region.cols, margin)?;
    let len = ring.len();
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| Profile::point(n, i).into_vec()).collect();
    let mut initial = vec![0.0; n];
    for (k, &cell) in ring.iter().enumerate() {
        let row = &mut rows[cell];
        row[cell] = stay;
        row[ring[(k + 1) % len]] += forward;
        row[ring[(k + len - 1) % len]] += back;
        initial[cell] = 1.0 / len as f64;
    }
    MarkovModel::new(Profile::new(initial)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Grid;

    #[test]
    fn ring_walks_the_border() {
        assert_eq!(ring_cells(3, 3, 0).unwrap(), vec![0, 1, 2, 5, 8, 7, 6, 3]);
        assert_eq!(ring_cells(4, 4, 1).unwrap(), vec![5, 6, 10, 9]);
        assert_eq!(ring_cells(25, 10, 0).unwrap().len(), 66);
        assert!(ring_cells(3, 3, 1).is_err());
    }

    #[test]
    fn ring_chain_moves_between_neighbours() {
        let region = Region::san_francisco();
        let grid = Grid::new(region).unwrap();
        let model = ring_route_chain(&region, 2, 0.5, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_markov(&model, 500, &mut rng);
        let ring = ring_cells(25, 10, 2).unwrap();
        for w in t.windows(2) {
            assert!(ring.contains(&w[1]));
            let (a, b) = (grid.row_col(w[0]), grid.row_col(w[1]));
            assert!(a.0.abs_diff(b.0) + a.1.abs_diff(b.1) <= 1);
        }
    }

    #[test]
    fn shifted_pair_meets_the_distance() {
        let d = Grid::new(Region::san_francisco()).unwrap().distance_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = shifted_hotspots(&d, &HotspotSpec::default(), 0.3, &mut rng).unwrap();
        assert!(a.tv_distance(&b) >= 0.3);
        assert!(shifted_hotspots(&d, &HotspotSpec::default(), 1.1, &mut rng).is_err());
    }

    #[test]
    fn synthesis_is_seeded_and_file_round_trips() {
        let region = Region::new(0.0, 0.1, 0.0, 0.1, 3, 4).unwrap();
        let model = SynthModel {
            region,
            test: Mobility::Markov {
                model: ring_route_chain(&region, 0, 0.5, 0.4).unwrap(),
            },
            train: Some(Mobility::Iid {
                profile: Profile::uniform(12),
            }),
        };
        let spec = SynthSpec {
            users: 2,
            test_traces: 2,
            test_length: 20,
            scarce_length: 5,
            rich_length: 50,
            seed: 1,
        };
        let a = synthesize(&model, &spec).unwrap();
        assert_eq!(a, synthesize(&model, &spec).unwrap());
        assert_ne!(a.users[0].test, a.users[1].test);
        assert_eq!(a.users[0].rich[0].len(), 50);
        a.validate().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert_eq!(SynthModel::load(&path).unwrap(), model);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"kind\": \"markov\""));
    }
}
