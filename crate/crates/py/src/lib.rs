//! Python bindings for the `graphcert` library.

use graphcert::applications::{
    certified_ensemble_fidelity as ensemble_bound, certified_qfi_bound as qfi_bound, jz, qfi, shamir_reconstruct,
    shamir_share as share,
};
use graphcert::graph::{ghz_state, Graph as CoreGraph};
use graphcert::pauli::PauliString;
use graphcert::protocol::{
    estimate_p_fail, exact_evaluation, trial_rng, Channel, MonteCarlo, ProtocolConfig, SourceStrategy, Target,
};
use graphcert::sources::{replace_orthogonal, replace_partial};
use graphcert::spectral::spectrum_report;
use pyo3::exceptions::{PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: graphcert::Error) -> PyErr {
    match e {
        graphcert::Error::Capacity { .. } => PyMemoryError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Pauli string with a phase `i^k`, written like `"-iXZY"`.
#[pyclass(name = "Pauli", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Pauli(PauliString);

#[pymethods]
impl Pauli {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Pauli).map_err(to_py)
    }

    #[getter]
    fn num_qubits(&self) -> usize {
        self.0.num_qubits()
    }

    #[getter]
    fn weight(&self) -> usize {
        self.0.weight()
    }

    #[getter]
    fn phase_exponent(&self) -> u8 {
        self.0.phase_exponent()
    }

    fn __mul__(&self, other: &Pauli) -> PyResult<Pauli> {
        self.0.multiply(&other.0).map(Pauli).map_err(to_py)
    }

    fn __eq__(&self, other: &Pauli) -> bool {
        self.0 == other.0
    }

    fn commutes(&self, other: &Pauli) -> PyResult<bool> {
        self.0.commutes(&other.0).map_err(to_py)
    }

    /// Dense matrix as nested lists of `(re, im)` pairs.
    fn matrix(&self) -> PyResult<Vec<Vec<(f64, f64)>>> {
        let m = self.0.to_matrix().map_err(to_py)?;
        Ok((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| (m[(i, j)].re, m[(i, j)].im)).collect()).collect())
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Pauli('{}')", self.0)
    }
}

/// Simple undirected graph; build with `Graph("ring:4")` or `Graph.from_edges(n, edges)`.
#[pyclass(name = "Graph", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Graph(CoreGraph);

#[pymethods]
impl Graph {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(Graph).map_err(to_py)
    }

    #[staticmethod]
    fn from_edges(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        CoreGraph::new(n, edges).map(Graph).map_err(to_py)
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.0.num_vertices()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges().collect()
    }

    fn generators(&self) -> Vec<Pauli> {
        self.0.generators().into_iter().map(Pauli).collect()
    }

    /// Real amplitudes of the graph state in little-endian order.
    fn state_vector(&self) -> PyResult<Vec<f64>> {
        let psi = self.0.state_vector().map_err(to_py)?;
        Ok(psi.amplitudes().iter().map(|a| a.re).collect())
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={:?})", self.0.num_vertices(), self.edges())
    }
}

fn build_source(
    target: &Target,
    source: &str,
    p: Option<f64>,
    position: usize,
    fidelity: Option<f64>,
) -> PyResult<SourceStrategy> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| PyValueError::new_err(format!("source {source:?} needs {name}")));
    match source {
        "honest" => Ok(SourceStrategy::Honest),
        "depolarizing" => Ok(SourceStrategy::IidChannel(Channel::Depolarizing(need(p, "p")?))),
        "dephasing" => Ok(SourceStrategy::IidChannel(Channel::Dephasing(need(p, "p")?))),
        "replace-orthogonal" => replace_orthogonal(target, position).map_err(to_py),
        "replace-partial" => replace_partial(target, position, need(fidelity, "fidelity")?).map_err(to_py),
        other => Err(PyValueError::new_err(format!("unknown source {other:?}"))),
    }
}

fn protocol(tau: f64, exclude_identity: bool) -> PyResult<ProtocolConfig> {
    let cfg = ProtocolConfig { tau, exclude_identity };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Monte Carlo estimate of the failure probability `P(accept and output fails)`.
#[pyfunction]
#[pyo3(signature = (graph, copies, trials=1000, source="honest", p=None, position=1, fidelity=None, seed=0, tau=1.0, exclude_identity=false))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    graph: &Graph,
    copies: usize,
    trials: usize,
    source: &str,
    p: Option<f64>,
    position: usize,
    fidelity: Option<f64>,
    seed: u64,
    tau: f64,
    exclude_identity: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let target = Target::from_graph(&graph.0).map_err(to_py)?;
    let src = build_source(&target, source, p, position, fidelity)?;
    let cfg = protocol(tau, exclude_identity)?;
    let mc = MonteCarlo { trials, seed, workers: 0 };
    let est = py.detach(|| estimate_p_fail(&target, copies, &src, &mc, &cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("estimate", est.estimate)?;
    d.set_item("stderr", est.stderr)?;
    d.set_item("p_acc", est.p_acc)?;
    d.set_item("bound", 1.0 / copies as f64)?;
    Ok(d)
}

/// Exact failure and acceptance probabilities.
#[pyfunction]
#[pyo3(signature = (graph, copies, source="honest", p=None, position=1, fidelity=None, tau=1.0, exclude_identity=false))]
#[allow(clippy::too_many_arguments)]
fn exact<'py>(
    py: Python<'py>,
    graph: &Graph,
    copies: usize,
    source: &str,
    p: Option<f64>,
    position: usize,
    fidelity: Option<f64>,
    tau: f64,
    exclude_identity: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let target = Target::from_graph(&graph.0).map_err(to_py)?;
    let src = build_source(&target, source, p, position, fidelity)?;
    let cfg = protocol(tau, exclude_identity)?;
    let ev = py.detach(|| exact_evaluation(&target, copies, &src, &cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("p_fail", ev.p_fail)?;
    d.set_item("p_acc", ev.p_acc)?;
    Ok(d)
}

/// Spectrum of the failure operator as `(k, eigenvalue, expected, observed)` rows.
#[pyfunction]
fn spectrum(py: Python<'_>, graph: &Graph, copies: usize) -> PyResult<Vec<(usize, f64, u128, f64)>> {
    let target = Target::from_graph(&graph.0).map_err(to_py)?;
    let (rows, _) = py.detach(|| spectrum_report(&target, copies)).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.k, r.eigenvalue, r.expected_multiplicity, r.observed_multiplicity))
        .collect())
}

/// Quantum Fisher information of the `n`-qubit GHZ state for `J_z`.
#[pyfunction]
fn ghz_qfi(n: usize) -> PyResult<f64> {
    qfi(&ghz_state(n).to_density(), &jz(n)).map_err(to_py)
}

#[pyfunction]
fn certified_qfi_bound(n: usize, p_acc: f64, copies: usize) -> PyResult<f64> {
    qfi_bound(n, p_acc, copies).map_err(to_py)
}

#[pyfunction]
fn certified_ensemble_fidelity(p_acc: f64, copies: usize) -> PyResult<f64> {
    ensemble_bound(p_acc, copies).map_err(to_py)
}

/// Threshold shares of `secret`; returns one list of field elements per player.
#[pyfunction]
#[pyo3(signature = (secret, k, n, seed=0))]
fn shamir_split(secret: Vec<u8>, k: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<u16>>> {
    let mut rng = trial_rng(seed, 0);
    Ok(share(&secret, k, n, &mut rng).map_err(to_py)?.shares)
}

/// Recovers the secret from `(player, share)` pairs.
#[pyfunction]
fn shamir_combine(shares: Vec<(usize, Vec<u16>)>, k: usize) -> PyResult<Vec<u8>> {
    shamir_reconstruct(&shares, k).map_err(to_py)
}

#[pymodule]
fn pygraphcert(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pauli>()?;
    m.add_class::<Graph>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(exact, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(ghz_qfi, m)?)?;
    m.add_function(wrap_pyfunction!(certified_qfi_bound, m)?)?;
    m.add_function(wrap_pyfunction!(certified_ensemble_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(shamir_split, m)?)?;
    m.add_function(wrap_pyfunction!(shamir_combine, m)?)?;
    Ok(())
}
