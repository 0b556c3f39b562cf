//! Parameter sweeps over a prepared trace store.
//!
//! Every (user, parameter, repetition) cell runs on its own ChaCha8 stream:
//! the seed is `seed + repetition` and the stream id packs the user and
//! parameter indices, so results do not depend on thread scheduling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{attack_markov, attack_sporadic, Estimate};
use crate::error::{Error, Result};
use crate::geo::{DistMatrix, Grid};
use crate::harness::config::{AttackKind, ExperimentConfig, ModelKind, TrainingMode};
use crate::harness::dataset::{load_checkins, DatasetFormat};
use crate::harness::prepare::{prepare_checkin_dataset, prepare_taxicab_dataset};
use crate::harness::store::TraceStore;
use crate::mechanisms::{run_trace, Mechanism, MarkovMechanism, SporadicMechanism, TraceRecord};
use crate::metrics::{empirical_pae, empirical_qavg};
use crate::mobility::{train_markov, train_profile, MarkovModel, Profile};
use crate::peb::{PebConfig, PebMechanism};
use crate::Trace;

pub const CSV_HEADER: [&str; 8] = [
    "user",
    "mechanism",
    "param",
    "repetition",
    "window",
    "qavg_km",
    "pae_km",
    "degenerate_steps",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub user: String,
    pub mechanism: String,
    pub param: f64,
    pub repetition: usize,
    pub window: crate::metrics::Window,
    pub qavg_km: f64,
    pub pae_km: f64,
    /// Mechanism belief fallbacks plus attack fallbacks over all test traces.
    pub degenerate_steps: usize,
}

/// Loads the configured dataset, preparing raw formats on the fly.
pub fn load_store(cfg: &ExperimentConfig) -> Result<TraceStore> {
    match cfg.format {
        DatasetFormat::Store => TraceStore::load(&cfg.dataset),
        DatasetFormat::Snap => {
            let grid = Grid::new(cfg.region()?)?;
            let checkins = load_checkins(&cfg.dataset, cfg.format)?;
            // Test traces are shuffled per repetition; the pools need no shuffle.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            prepare_checkin_dataset(&checkins.records, &grid, &cfg.checkin_protocol(), false, &mut rng)
        }
        DatasetFormat::Crawdad => {
            let grid = Grid::new(cfg.region()?)?;
            let checkins = load_checkins(&cfg.dataset, cfg.format)?;
            prepare_taxicab_dataset(&checkins.records, &grid, &cfg.taxicab_protocol())
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let store = load_store(cfg)?;
    run_on_store(cfg, &store)
}

enum AttackModel {
    Sporadic(Profile),
    Markov(MarkovModel),
}

impl AttackModel {
    fn attack(&self, record: &TraceRecord, d: &DistMatrix) -> Result<Estimate> {
        match self {
            AttackModel::Sporadic(pi) => attack_sporadic(record, pi, d),
            AttackModel::Markov(m) => attack_markov(record, m, d),
        }
    }
}

enum Design {
    Profile(Profile),
    Markov(MarkovModel),
}

struct UserSetup<'a> {
    id: &'a str,
    test: &'a [Trace],
    design: Design,
    attack: AttackModel,
}

fn setup<'a>(cfg: &ExperimentConfig, store: &'a TraceStore, i: usize) -> Result<UserSetup<'a>> {
    let n = store.region.n_cells();
    let user = &store.users[i];
    let other = &store.users[(i + 1) % store.users.len()];
    let training = match cfg.training {
        TrainingMode::Scarce => &user.scarce,
        TrainingMode::Rich => &user.rich,
        TrainingMode::OtherUsersScarce => &other.scarce,
        TrainingMode::OtherUsersRich => &other.rich,
    };
    let context = |e: Error| Error::Dataset(format!("user {}: {e}", user.id));
    let design = match cfg.model {
        ModelKind::SporadicHw | ModelKind::Peb => {
            Design::Profile(train_profile(training, n, cfg.pseudocount).map_err(context)?)
        }
        ModelKind::MarkovHw => Design::Markov(train_markov(training, n, cfg.pseudocount).map_err(context)?.model),
    };
    let attack = match cfg.attack {
        AttackKind::Sporadic => AttackModel::Sporadic(train_profile(&user.test, n, cfg.pseudocount).map_err(context)?),
        AttackKind::Markov => AttackModel::Markov(train_markov(&user.test, n, cfg.pseudocount).map_err(context)?.model),
    };
    Ok(UserSetup {
        id: &user.id,
        test: &user.test,
        design,
        attack,
    })
}

fn build(cfg: &ExperimentConfig, design: &Design, param: f64, d: &DistMatrix) -> Result<Box<dyn Mechanism + Send>> {
    let base = cfg.base(param);
    Ok(match (cfg.model, design) {
        (ModelKind::SporadicHw, Design::Profile(pi)) => Box::new(SporadicMechanism::new(base.channel(d)?, pi, d)?),
        (ModelKind::MarkovHw, Design::Markov(m)) => Box::new(MarkovMechanism::new(base.channel(d)?, m.clone(), d.clone())?),
        (ModelKind::Peb, Design::Profile(pi)) => {
            let peb = PebConfig {
                pi_ini: pi.clone(),
                gamma: cfg.gamma,
                em: cfg.em(),
                em_stride: cfg.em_stride,
                base,
            };
            Box::new(PebMechanism::new(peb, d.clone())?)
        }
        _ => unreachable!("design is chosen from the model kind"),
    })
}

/// One repetition of one (user, parameter) cell.
fn run_cell(
    cfg: &ExperimentConfig,
    user: &UserSetup,
    (ui, pi, param): (usize, usize, f64),
    rep: usize,
    d: &DistMatrix,
) -> Result<Vec<ResultRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(rep as u64));
    rng.set_stream(((ui as u64) << 32) | pi as u64);
    let mut records = Vec::with_capacity(user.test.len());
    let mut estimates = Vec::with_capacity(user.test.len());
    let mut degenerate = 0;
    for trace in user.test.iter().filter(|t| !t.is_empty()) {
        let mut x = trace.clone();
        if cfg.shuffle {
            x.shuffle(&mut rng);
        }
        let mut mech = build(cfg, &user.design, param, d)?;
        let record = run_trace(&mut mech, &x, &mut rng)?;
        let estimate = user.attack.attack(&record, d)?;
        degenerate += record.degenerate_steps + estimate.fallbacks;
        records.push(record);
        estimates.push(estimate);
    }
    cfg.windows
        .iter()
        .map(|&window| {
            Ok(ResultRow {
                user: user.id.to_string(),
                mechanism: cfg.label(),
                param,
                repetition: rep,
                window,
                qavg_km: empirical_qavg(&records, d, window)?,
                pae_km: empirical_pae(&records, &estimates, d, window)?,
                degenerate_steps: degenerate,
            })
        })
        .collect()
}

/// Runs the sweep on an already prepared store. Rows come back ordered by
/// user (store order), parameter (grid order), repetition and window.
pub fn run_on_store(cfg: &ExperimentConfig, store: &TraceStore) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    store.validate()?;
    if cfg.format == DatasetFormat::Store && cfg.region()? != store.region {
        return Err(Error::Config(format!(
            "config grid {:?} does not match the trace store grid {:?}",
            cfg.region()?,
            store.region
        )));
    }
    let d = Grid::new(store.region)?.distance_matrix();
    let users = (0..store.users.len())
        .map(|i| setup(cfg, store, i))
        .collect::<Result<Vec<_>>>()?;
    let params = cfg.param_grid();
    let reps = cfg.repetitions();
    let mut cells = Vec::with_capacity(users.len() * params.len() * reps);
    for ui in 0..users.len() {
        for (pi, &p) in params.iter().enumerate() {
            for rep in 0..reps {
                cells.push((ui, pi, p, rep));
            }
        }
    }
    let work = || -> Result<Vec<Vec<ResultRow>>> {
        cells
            .par_iter()
            .map(|&(ui, pi, p, rep)| run_cell(cfg, &users[ui], (ui, pi, p), rep, &d))
            .collect()
    };
    let chunks = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    // Collect preserves cell order, which already is the sort order.
    Ok(chunks.into_iter().flatten().collect())
}

pub fn write_rows<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn write_rows_to(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(rows, std::io::BufWriter::new(file))
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Dataset(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Region;
    use crate::harness::config::Family;
    use crate::harness::store::UserTraces;
    use crate::metrics::Window;

    fn store() -> TraceStore {
        let region = Region::new(37.0, 37.05, -122.5, -122.45, 3, 3).unwrap();
        let users = (0..2)
            .map(|u| UserTraces {
                id: format!("u{u}"),
                test: vec![(0..40).map(|i| (i * (u + 2)) % 9).collect()],
                scarce: vec![vec![0, 1, 2, 4]],
                rich: vec![(0..90).map(|i| (i * 7 + u) % 9).collect()],
            })
            .collect();
        TraceStore { region, users }
    }

    fn config(s: &TraceStore) -> ExperimentConfig {
        ExperimentConfig {
            lat_min: s.region.lat_min,
            lat_max: s.region.lat_max,
            lon_min: s.region.lon_min,
            lon_max: s.region.lon_max,
            rows: 3,
            cols: 3,
            repetitions: Some(2),
            params: vec![0.3, 1.0],
            windows: vec![Window::All, Window::LastHalf],
            ..Default::default()
        }
    }

    #[test]
    fn alpha_one_releases_the_truth() {
        let s = store();
        for model in [ModelKind::SporadicHw, ModelKind::MarkovHw, ModelKind::Peb] {
            for attack in [AttackKind::Sporadic, AttackKind::Markov] {
                let cfg = ExperimentConfig { model, attack, ..config(&s) };
                let rows = run_on_store(&cfg, &s).unwrap();
                assert_eq!(rows.len(), 2 * 2 * 2 * 2);
                for r in rows.iter().filter(|r| r.param == 1.0) {
                    assert_eq!(r.qavg_km, 0.0);
                    assert_eq!(r.pae_km, 0.0);
                }
            }
        }
    }

    #[test]
    fn rows_are_ordered_and_reproducible() {
        let s = store();
        let cfg = ExperimentConfig {
            mechanism: Family::Expo,
            params: vec![0.5, 2.0],
            shuffle: true,
            threads: Some(3),
            ..config(&s)
        };
        let a = run_on_store(&cfg, &s).unwrap();
        let b = run_on_store(&ExperimentConfig { threads: Some(1), ..cfg.clone() }, &s).unwrap();
        assert_eq!(a, b);
        let keys: Vec<_> = a.iter().map(|r| (r.user.clone(), r.param.to_bits(), r.repetition, r.window)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(a.iter().all(|r| r.mechanism == "expo-sporadic-hw"));
    }

    #[test]
    fn csv_round_trip() {
        let s = store();
        let rows = run_on_store(&config(&s), &s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_rows_to(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("user,mechanism,param,repetition,window,qavg_km,pae_km,degenerate_steps\n"));
        assert!(text.contains(",last-half,"));
        assert_eq!(read_rows(&path).unwrap(), rows);
    }

    #[test]
    fn mismatched_grid_and_missing_training_fail_early() {
        let s = store();
        let cfg = ExperimentConfig { rows: 4, ..config(&s) };
        assert!(run_on_store(&cfg, &s).is_err());

        let mut empty = store();
        empty.users[0].scarce.clear();
        let cfg = ExperimentConfig { training: TrainingMode::Scarce, ..config(&s) };
        assert!(run_on_store(&cfg, &empty).is_err());
        // The other-users mode reads user 1's pool for user 0 and user 0's
        // (empty) pool for user 1.
        let cfg = ExperimentConfig { training: TrainingMode::OtherUsersScarce, ..config(&s) };
        assert!(run_on_store(&cfg, &empty).is_err());
    }
}
