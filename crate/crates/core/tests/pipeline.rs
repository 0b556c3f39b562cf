use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lppm::harness::{load_store, run_on_store, DatasetFormat, ExperimentConfig, ModelKind, TrainingMode};
use lppm::metrics::Window;

// Four users checking in around their own home point in San Francisco.
fn snap_file(dir: &std::path::Path) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut text = String::new();
    for u in 0..4 {
        let home = (37.60 + 0.04 * u as f64, -122.48 + 0.02 * u as f64);
        for k in 0..40 {
            let lat = home.0 + rng.gen_range(-0.01..0.01);
            let lon = home.1 + rng.gen_range(-0.01..0.01);
            writeln!(text, "{u}\t2010-05-{:02}T{:02}:00:00Z\t{lat}\t{lon}\tloc{k}", 1 + k / 20, k % 20).unwrap();
        }
    }
    // One check-in outside the region, one malformed line.
    text.push_str("9\t2010-05-01T00:00:00Z\t40.0\t-74.0\tnyc\nnot a record\n");
    let path = dir.join("checkins.txt");
    std::fs::write(&path, text).unwrap();
    path
}

fn config(path: std::path::PathBuf, model: ModelKind) -> ExperimentConfig {
    ExperimentConfig {
        dataset: path,
        format: DatasetFormat::Snap,
        model,
        params: vec![0.2, 0.9],
        repetitions: Some(2),
        training: TrainingMode::Scarce,
        min_checkins: 30,
        n_eval: 2,
        n_scarce_users: 2,
        trace_length: 10,
        windows: vec![Window::All, Window::LastHalf],
        ..Default::default()
    }
}

#[test]
fn checkins_flow_from_raw_file_to_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = snap_file(dir.path());
    let store = load_store(&config(path.clone(), ModelKind::SporadicHw)).unwrap();
    assert_eq!(store.users.len(), 2);
    for u in &store.users {
        assert!(!u.test.is_empty() && !u.scarce.is_empty());
        assert!(u.test.iter().all(|t| t.len() == 10));
    }

    for model in [ModelKind::SporadicHw, ModelKind::Peb] {
        let cfg = config(path.clone(), model);
        let rows = run_on_store(&cfg, &store).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2 * 2);
        assert!(rows.iter().all(|r| r.qavg_km >= 0.0 && r.pae_km >= 0.0 && r.pae_km.is_finite()));
        assert_eq!(rows, run_on_store(&cfg, &store).unwrap());
    }
}

#[test]
fn store_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = snap_file(dir.path());
    let store = load_store(&config(path, ModelKind::SporadicHw)).unwrap();
    let out = dir.path().join("store.json");
    store.save(&out).unwrap();
    let cfg = ExperimentConfig {
        dataset: out,
        format: DatasetFormat::Store,
        ..config(dir.path().join("unused"), ModelKind::SporadicHw)
    };
    assert_eq!(load_store(&cfg).unwrap(), store);
}
