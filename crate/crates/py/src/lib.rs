//! Python bindings. Configurations cross the boundary as bitstrings
//! (`"00110011"`, character `q` is the occupation of spin-orbital `q`).

use std::collections::HashMap;
use std::path::PathBuf;

use arnnsci::driver::{self, RunStatus};
use arnnsci::eigensolver::{self, FCI_GUARD};
use arnnsci::trainer::{self, TrainPlan, TrainingSet};
use arnnsci::{config, sampler, Configuration, SeedKind, CHEMICAL_ACCURACY};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: arnnsci::Error) -> PyErr {
    match e {
        arnnsci::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        arnnsci::Error::NonConvergence { .. } | arnnsci::Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse(s: &str) -> PyResult<Configuration> {
    s.parse().map_err(to_py)
}

fn parse_all(v: &[String]) -> PyResult<Vec<Configuration>> {
    v.iter().map(|s| parse(s)).collect()
}

/// Molecular integrals read from an FCIDUMP file.
#[pyclass(name = "IntegralTable", frozen)]
struct PyIntegralTable {
    inner: arnnsci::IntegralTable,
}

#[pymethods]
impl PyIntegralTable {
    #[staticmethod]
    fn from_path(path: PathBuf) -> PyResult<Self> {
        Ok(PyIntegralTable { inner: arnnsci::IntegralTable::from_path(path).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_fcidump(text: &str) -> PyResult<Self> {
        Ok(PyIntegralTable { inner: arnnsci::integrals::parse_fcidump(text).map_err(to_py)? })
    }

    #[getter]
    fn n_spatial(&self) -> usize {
        self.inner.n_spatial()
    }

    #[getter]
    fn n_spin_orbitals(&self) -> usize {
        self.inner.n_spin_orbitals()
    }

    #[getter]
    fn n_electrons(&self) -> usize {
        self.inner.n_electrons()
    }

    #[getter]
    fn core_energy(&self) -> f64 {
        self.inner.core_energy()
    }

    fn sector_size(&self) -> u128 {
        self.inner.sector().count()
    }

    fn hartree_fock(&self) -> String {
        self.inner.hartree_fock().to_string()
    }

    fn matrix_element(&self, a: &str, b: &str) -> PyResult<f64> {
        let (a, b) = (parse(a)?, parse(b)?);
        if a.n_bits() != self.inner.n_spin_orbitals() || b.n_bits() != self.inner.n_spin_orbitals() {
            return Err(PyValueError::new_err("bitstring width differs from the number of spin-orbitals"));
        }
        Ok(self.inner.matrix_element(&a, &b))
    }

    fn in_sector(&self, c: &str) -> PyResult<bool> {
        Ok(self.inner.sector().contains(&parse(c)?))
    }

    fn __repr__(&self) -> String {
        format!(
            "IntegralTable(n_spatial={}, n_electrons={}, sector={})",
            self.inner.n_spatial(),
            self.inner.n_electrons(),
            self.inner.sector().count()
        )
    }
}

/// Normalized real state on a sparse support.
#[pyclass(name = "SparseState", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySparseState {
    inner: arnnsci::SparseState,
}

#[pymethods]
impl PySparseState {
    /// Lowest eigenpair of the Hamiltonian restricted to `basis`.
    #[staticmethod]
    #[pyo3(signature = (basis, table, tol=1e-9))]
    fn ground_state(py: Python<'_>, basis: Vec<String>, table: &PyIntegralTable, tol: f64) -> PyResult<Self> {
        let basis = parse_all(&basis)?;
        let inner = py.detach(|| arnnsci::SparseState::ground_state(basis, &table.inner, tol)).map_err(to_py)?;
        Ok(PySparseState { inner })
    }

    #[getter]
    fn energy(&self) -> f64 {
        self.inner.energy
    }

    #[getter]
    fn support(&self) -> Vec<String> {
        self.inner.support.iter().map(|c| c.to_string()).collect()
    }

    #[getter]
    fn amplitudes(&self) -> Vec<f64> {
        self.inner.amplitudes.clone()
    }

    fn amplitude_of(&self, c: &str) -> PyResult<f64> {
        Ok(self.inner.amplitude_of(&parse(c)?))
    }

    /// `(bitstring, amplitude)` pairs, most probable first.
    fn sorted_by_probability(&self) -> Vec<(String, f64)> {
        self.inner.sorted_by_probability().into_iter().map(|(c, a)| (c.to_string(), a)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("SparseState(energy={:.10}, len={})", self.inner.energy, self.inner.len())
    }
}

/// Auto-regressive network over occupation bitstrings.
#[pyclass(name = "ArnnModel")]
struct PyArnnModel {
    inner: arnnsci::ArnnModel,
}

#[pymethods]
impl PyArnnModel {
    #[new]
    #[pyo3(signature = (n_bits, n_layers=2, features_per_bit=4, dropout=0.05, seed=0, activation="selu"))]
    fn new(n_bits: usize, n_layers: usize, features_per_bit: usize, dropout: f64, seed: u64, activation: &str) -> PyResult<Self> {
        let mut cfg = arnnsci::ArnnConfig::new(n_bits, n_layers, features_per_bit, dropout, seed);
        cfg.activation = activation.parse().map_err(to_py)?;
        Ok(PyArnnModel { inner: arnnsci::ArnnModel::init(cfg).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyArnnModel { inner: arnnsci::ArnnModel::load(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn n_bits(&self) -> usize {
        self.inner.n_bits()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn log_prob(&self, c: &str) -> PyResult<f64> {
        self.inner.log_prob(&parse(c)?).map_err(to_py)
    }

    fn log_probs(&self, py: Python<'_>, configs: Vec<String>) -> PyResult<Vec<f64>> {
        let configs = parse_all(&configs)?;
        py.detach(|| self.inner.log_probs(&configs)).map_err(to_py)
    }

    /// Fit to `counts` (bitstring → multiplicity); returns the per-epoch NLL.
    #[pyo3(signature = (counts, epochs=200, learning_rate=1e-3, minibatch_size=256, seed=0))]
    fn train(
        &mut self,
        py: Python<'_>,
        counts: HashMap<String, u64>,
        epochs: usize,
        learning_rate: f64,
        minibatch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let entries = counts.iter().map(|(s, n)| Ok((parse(s)?, *n))).collect::<PyResult<Vec<_>>>()?;
        let data = TrainingSet::new(entries).map_err(to_py)?;
        let plan = TrainPlan { epochs, learning_rate, minibatch_size, shuffle_seed: seed, ..TrainPlan::default() };
        let model = &mut self.inner;
        let report = py.detach(|| trainer::train(model, &data, &plan)).map_err(to_py)?;
        Ok(report.epoch_losses())
    }

    /// Temperature-scaled samples as `(bitstring, count, log_prob)`; if `table`
    /// is given, configurations outside its symmetry sector are dropped.
    #[pyo3(signature = (n, beta=1.0, seed=0, table=None))]
    fn sample(
        &self,
        py: Python<'_>,
        n: u64,
        beta: f64,
        seed: u64,
        table: Option<&PyIntegralTable>,
    ) -> PyResult<Vec<(String, u64, f64)>> {
        let batch = py
            .detach(|| {
                let b = sampler::sample_fast(&self.inner, n, beta, seed)?;
                match table {
                    Some(t) => sampler::filter_physical(&b, &t.inner.sector()),
                    None => Ok(b),
                }
            })
            .map_err(to_py)?;
        Ok(batch.entries.iter().map(|e| (e.config.to_string(), e.count, e.log_prob)).collect())
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "ArnnModel(n_bits={}, n_layers={}, features_per_bit={}, n_params={})",
            c.n_bits,
            c.n_layers,
            c.features_per_bit,
            self.inner.n_params()
        )
    }
}

/// Result of a selection run.
#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    energies: Vec<f64>,
    #[pyo3(get)]
    delta_e: Vec<Option<f64>>,
    #[pyo3(get)]
    n_unique: Vec<usize>,
    #[pyo3(get)]
    reference_energy: Option<f64>,
    #[pyo3(get)]
    records_csv: String,
    #[pyo3(get)]
    state: PySparseState,
}

/// Exact ground state of the table's symmetry sector.
#[pyfunction]
#[pyo3(signature = (table, guard=FCI_GUARD))]
fn fci(py: Python<'_>, table: &PyIntegralTable, guard: u128) -> PyResult<PySparseState> {
    let inner = py
        .detach(|| eigensolver::fci_reference_with_guard(&table.inner, &table.inner.sector(), guard))
        .map_err(to_py)?;
    Ok(PySparseState { inner })
}

/// Smallest number of leading configurations whose subspace energy is within `chem_acc` of `gs`.
#[pyfunction]
#[pyo3(signature = (gs, table, chem_acc=CHEMICAL_ACCURACY))]
fn n_ca(py: Python<'_>, gs: &PySparseState, table: &PyIntegralTable, chem_acc: f64) -> PyResult<usize> {
    py.detach(|| eigensolver::n_ca(&gs.inner, &table.inner, chem_acc)).map_err(to_py)
}

/// Expected number of samples to draw configuration `k` (1-based, by probability) once.
#[pyfunction]
fn samples_to_reach(gs: &PySparseState, k: usize) -> PyResult<u64> {
    eigensolver::samples_to_reach(&gs.inner, k).map_err(to_py)
}

/// `hf`, `cisd` or `gs_sample` seed state.
#[pyfunction]
fn build_seed(py: Python<'_>, kind: &str, table: &PyIntegralTable) -> PyResult<PySparseState> {
    let kind: SeedKind = kind.parse().map_err(to_py)?;
    let inner = py.detach(|| driver::build_seed(kind, &table.inner, &table.inner.sector())).map_err(to_py)?;
    Ok(PySparseState { inner })
}

/// Number of configurations with `n_electrons` in `m` spin-orbitals.
#[pyfunction]
#[pyo3(signature = (m, n_electrons, sz_zero=true))]
fn count_sector(m: usize, n_electrons: usize, sz_zero: bool) -> PyResult<u128> {
    arnnsci::determinant::count_sector(m, n_electrons, sz_zero).map_err(to_py)
}

/// Run the selection loop. `config` is a configuration file path or `None`;
/// `overrides` maps keys to values exactly as on the command line.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=None))]
fn run(py: Python<'_>, config: Option<PathBuf>, overrides: Option<HashMap<String, String>>) -> PyResult<PyRunResult> {
    let mut cfg = match config {
        Some(p) => config::load(p).map_err(to_py)?,
        None => arnnsci::RunConfig::default(),
    };
    let mut items: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
    items.sort();
    for (k, v) in items {
        config::apply_override(&mut cfg, &format!("{k}={v}")).map_err(to_py)?;
    }
    let out = py.detach(|| driver::run(&cfg)).map_err(to_py)?;
    Ok(PyRunResult {
        converged: out.status == RunStatus::Converged,
        energies: out.records.iter().map(|r| r.energy).collect(),
        delta_e: out.records.iter().map(|r| r.delta_e).collect(),
        n_unique: out.records.iter().map(|r| r.n_unique).collect(),
        reference_energy: out.reference_energy,
        records_csv: driver::records_csv(&out.records),
        state: PySparseState { inner: out.state },
    })
}

#[pymodule]
fn arnnsci_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntegralTable>()?;
    m.add_class::<PySparseState>()?;
    m.add_class::<PyArnnModel>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(fci, m)?)?;
    m.add_function(wrap_pyfunction!(n_ca, m)?)?;
    m.add_function(wrap_pyfunction!(samples_to_reach, m)?)?;
    m.add_function(wrap_pyfunction!(build_seed, m)?)?;
    m.add_function(wrap_pyfunction!(count_sector, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("CHEMICAL_ACCURACY", CHEMICAL_ACCURACY)?;
    Ok(())
}
