//! Python bindings for `lppm`. Channels, profiles and distance matrices
//! cross the boundary as plain lists of floats.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lppm::geo::{DistMatrix, Grid, Region};
use lppm::harness::{run_on_store, ExperimentConfig, TraceStore};
use lppm::mechanisms::{exponential_mechanism, location_hiding, location_hiding_exclusive, remap_sporadic, Channel};
use lppm::metrics::{theoretical_pae_opt, theoretical_qavg};
use lppm::mobility::Profile;
use lppm::peb::{em_mle, EmConfig};

fn py_err(e: lppm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A rectangular lat/lon region cut into `rows x cols` cells.
#[pyclass(name = "Region", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyRegion(Region);

#[pymethods]
impl PyRegion {
    #[new]
    fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64, rows: usize, cols: usize) -> PyResult<Self> {
        Region::new(lat_min, lat_max, lon_min, lon_max, rows, cols).map(PyRegion).map_err(py_err)
    }

    #[staticmethod]
    fn san_francisco() -> Self {
        PyRegion(Region::san_francisco())
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.0.n_cells()
    }

    /// Cell containing the point, or `None` outside the region.
    fn quantize(&self, lat: f64, lon: f64) -> PyResult<Option<usize>> {
        Ok(Grid::new(self.0).map_err(py_err)?.quantize(lat, lon))
    }

    /// Manhattan distances between cell centers, in km.
    fn distances(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(Grid::new(self.0).map_err(py_err)?.distance_matrix().to_rows())
    }

    fn __repr__(&self) -> String {
        let r = &self.0;
        format!(
            "Region(lat {}..{}, lon {}..{}, {}x{})",
            r.lat_min, r.lat_max, r.lon_min, r.lon_max, r.rows, r.cols
        )
    }
}

fn distances(rows: Vec<Vec<f64>>) -> PyResult<DistMatrix> {
    DistMatrix::from_rows(rows).map_err(py_err)
}

fn channel(rows: Vec<Vec<f64>>) -> PyResult<Channel> {
    Channel::from_rows(rows).map_err(py_err)
}

fn profile(p: Vec<f64>) -> PyResult<Profile> {
    Profile::new(p).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (alpha, n, exclusive = false))]
fn location_hiding_channel(alpha: f64, n: usize, exclusive: bool) -> PyResult<Vec<Vec<f64>>> {
    let f = if exclusive {
        location_hiding_exclusive(alpha, n)
    } else {
        location_hiding(alpha, n)
    };
    Ok(f.map_err(py_err)?.to_rows())
}

#[pyfunction]
fn exponential_channel(epsilon: f64, distances_km: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(exponential_mechanism(epsilon, &distances(distances_km)?).map_err(py_err)?.to_rows())
}

/// Optimal remap of `base` under `prior`: returns the table and the
/// composed channel.
#[pyfunction]
fn remap(base: Vec<Vec<f64>>, prior: Vec<f64>, distances_km: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, Vec<Vec<f64>>)> {
    let (table, composed) =
        remap_sporadic(&channel(base)?, &profile(prior)?, &distances(distances_km)?).map_err(py_err)?;
    Ok((table.as_slice().to_vec(), composed.to_rows()))
}

#[pyfunction]
fn qavg(channel_rows: Vec<Vec<f64>>, pi: Vec<f64>, distances_km: Vec<Vec<f64>>) -> PyResult<f64> {
    theoretical_qavg(&channel(channel_rows)?, &profile(pi)?, &distances(distances_km)?).map_err(py_err)
}

/// Expected error of the optimal Bayesian attacker.
#[pyfunction]
fn pae(channel_rows: Vec<Vec<f64>>, pi: Vec<f64>, distances_km: Vec<Vec<f64>>) -> PyResult<f64> {
    theoretical_pae_opt(&channel(channel_rows)?, &profile(pi)?, &distances(distances_km)?).map_err(py_err)
}

/// Maximum-likelihood profile from per-step likelihood vectors
/// `f(z_t | x)`. Returns the profile and the log-likelihood trace.
#[pyfunction]
#[pyo3(signature = (likelihoods, init = None, tolerance = 1e-10, max_iters = 10_000))]
fn em(
    likelihoods: Vec<Vec<f64>>,
    init: Option<Vec<f64>>,
    tolerance: f64,
    max_iters: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let n = likelihoods.first().map_or(0, Vec::len);
    let init = match init {
        Some(p) => profile(p)?,
        None => Profile::uniform(n),
    };
    let cfg = EmConfig {
        tolerance,
        max_iters,
        warm_start: false,
    };
    let out = em_mle(&likelihoods, &init, &cfg).map_err(py_err)?;
    Ok((out.profile.into_vec(), out.log_likelihoods))
}

/// Runs an experiment described by a TOML config. With `store_json`, the
/// traces come from that serialized store instead of the configured
/// dataset. Returns one dict per result row.
#[pyfunction]
#[pyo3(signature = (config_toml, store_json = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    store_json: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(py_err)?;
    let rows = py
        .detach(|| {
            let store = match store_json {
                Some(text) => serde_json::from_str::<TraceStore>(text).map_err(lppm::Error::from)?,
                None => lppm::harness::load_store(&cfg)?,
            };
            run_on_store(&cfg, &store)
        })
        .map_err(py_err)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("user", r.user)?;
            d.set_item("mechanism", r.mechanism)?;
            d.set_item("param", r.param)?;
            d.set_item("repetition", r.repetition)?;
            d.set_item("window", r.window.name())?;
            d.set_item("qavg_km", r.qavg_km)?;
            d.set_item("pae_km", r.pae_km)?;
            d.set_item("degenerate_steps", r.degenerate_steps)?;
            Ok(d)
        })
        .collect()
}

/// Brute-force property suites; returns `(name, cases, failures, worst)`.
#[pyfunction]
#[pyo3(signature = (cases = 100, seed = 0))]
fn oracle(cases: usize, seed: u64) -> PyResult<Vec<(String, usize, usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = lppm::oracle::run_suites(cases, &mut rng).map_err(py_err)?;
    Ok(reports
        .into_iter()
        .map(|r| (r.name.to_string(), r.cases, r.failures, r.worst_violation))
        .collect())
}

#[pymodule]
pub fn pylppm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegion>()?;
    m.add_function(wrap_pyfunction!(location_hiding_channel, m)?)?;
    m.add_function(wrap_pyfunction!(exponential_channel, m)?)?;
    m.add_function(wrap_pyfunction!(remap, m)?)?;
    m.add_function(wrap_pyfunction!(qavg, m)?)?;
    m.add_function(wrap_pyfunction!(pae, m)?)?;
    m.add_function(wrap_pyfunction!(em, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remap_of_identity_is_identity() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let (table, composed) = remap(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5], d.clone()).unwrap();
        assert_eq!(table, vec![0, 1]);
        assert_eq!(qavg(composed, vec![0.5, 0.5], d).unwrap(), 0.0);
    }

    #[test]
    fn em_defaults_to_a_uniform_start() {
        let lik = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let (p, ll) = em(lik, None, 1e-12, 100).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9);
        assert!(ll.windows(2).all(|w| w[1] >= w[0]));
    }
}
