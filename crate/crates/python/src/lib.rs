use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hs::cli::matrix_io::SYMMETRY_TOL;
use hs::matcore::{OrthonormalBasis, SymMatrix};
use hs::simlab::{ExperimentConfig, ModelParams};
use hs::solvers::{Control, Fit, Method, StopRule};
use nalgebra::DMatrix;

type Rows = Vec<Vec<f64>>;

fn err(e: hs::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dense(rows: &Rows) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err("matrix must be non-empty".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(format!("row {i} has {} entries, expected {ncols}", rows[i].len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Square input, symmetrized when within the file-reader tolerance.
fn to_sym(rows: &Rows) -> Result<SymMatrix, String> {
    let m = dense(rows)?;
    SymMatrix::from_matrix_symmetrized(m, SYMMETRY_TOL)
        .map(|(s, _)| s)
        .map_err(|e| e.to_string())
}

fn to_basis(rows: &Rows) -> Result<OrthonormalBasis, String> {
    OrthonormalBasis::new(dense(rows)?).map_err(|e| e.to_string())
}

fn basis_rows(b: &OrthonormalBasis) -> Rows {
    let c = b.columns();
    (0..c.nrows()).map(|i| (0..c.ncols()).map(|j| c[(i, j)]).collect()).collect()
}

fn sym_arg(rows: Rows) -> PyResult<SymMatrix> {
    to_sym(&rows).map_err(PyValueError::new_err)
}

fn basis_arg(rows: Rows) -> PyResult<OrthonormalBasis> {
    to_basis(&rows).map_err(PyValueError::new_err)
}

/// Result of one solver run.
#[pyclass(name = "Decomposition", module = "hetero_spectra", frozen)]
struct PyDecomposition {
    fit: Fit,
    objective: f64,
}

#[pymethods]
impl PyDecomposition {
    #[getter]
    fn method(&self) -> &'static str {
        self.fit.method.tag()
    }

    #[getter]
    fn l(&self) -> Rows {
        self.fit.l.to_rows()
    }

    /// Diagonal of D.
    #[getter]
    fn d(&self) -> Vec<f64> {
        self.fit.d.diagonal()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.fit.converged()
    }

    #[getter]
    fn iterations(&self) -> Option<usize> {
        self.fit.trace.as_ref().map(|t| t.iterations)
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.objective
    }

    /// Per-iteration `(k, objective, fixed_point_residual, psi)`.
    #[getter]
    fn trace(&self) -> Vec<(usize, f64, f64, f64)> {
        self.fit
            .trace
            .iter()
            .flat_map(|t| &t.records)
            .map(|r| (r.k, r.objective, r.fixed_point_residual, r.psi))
            .collect()
    }

    /// Orthonormal basis (p x r) of the estimated subspace.
    fn subspace(&self, r: usize) -> PyResult<Rows> {
        Ok(basis_rows(&self.fit.subspace(r).map_err(err)?.basis))
    }

    fn __repr__(&self) -> String {
        format!(
            "Decomposition(method={}, p={}, converged={}, objective={:e})",
            self.fit.method.tag(),
            self.fit.l.dim(),
            self.fit.converged(),
            self.objective
        )
    }
}

fn run_fit(method: Method, sigma: &SymMatrix, control: Control, stop: StopRule) -> PyResult<PyDecomposition> {
    let fit = hs::solvers::fit(method, sigma, control, stop).map_err(err)?;
    let tau = match control {
        Control::Tau(t) => t,
        Control::Rank(_) => 0.0,
    };
    let objective = hs::solvers::objective_f(sigma, &fit.l, &fit.d, tau).map_err(err)?;
    Ok(PyDecomposition { fit, objective })
}

/// Relaxed MTFA at threshold `tau`.
#[pyfunction]
#[pyo3(signature = (sigma, tau, rel_tol=1e-10, max_iter=1000))]
fn rmtfa(sigma: Rows, tau: f64, rel_tol: f64, max_iter: usize) -> PyResult<PyDecomposition> {
    let stop = StopRule::new(rel_tol, max_iter).map_err(err)?;
    run_fit(Method::Rmtfa, &sym_arg(sigma)?, Control::Tau(tau), stop)
}

/// Any method by tag: `tau` for rmtfa/si, `rank` for the others.
#[pyfunction]
#[pyo3(signature = (method, sigma, tau=None, rank=None))]
fn fit(method: &str, sigma: Rows, tau: Option<f64>, rank: Option<usize>) -> PyResult<PyDecomposition> {
    let method: Method = method.parse().map_err(err)?;
    let control = match (method.uses_tau(), tau, rank) {
        (true, Some(t), None) => Control::Tau(t),
        (false, None, Some(r)) => Control::Rank(r),
        (true, _, _) => return Err(PyValueError::new_err(format!("{method} takes tau only"))),
        (false, _, _) => return Err(PyValueError::new_err(format!("{method} takes rank only"))),
    };
    run_fit(method, &sym_arg(sigma)?, control, StopRule::default())
}

#[pyfunction]
fn soft_threshold_psd(m: Rows, tau: f64) -> PyResult<Rows> {
    Ok(hs::shrinkage::soft_threshold_psd(&sym_arg(m)?, tau).map_err(err)?.to_rows())
}

#[pyfunction]
fn best_rank_r(m: Rows, r: usize) -> PyResult<Rows> {
    Ok(hs::shrinkage::best_rank_r(&sym_arg(m)?, r).map_err(err)?.to_rows())
}

#[pyfunction]
fn sin_theta(u: Rows, v: Rows) -> PyResult<f64> {
    hs::metrics::sin_theta(&basis_arg(u)?, &basis_arg(v)?).map_err(err)
}

#[pyfunction]
fn coherence(u: Rows) -> PyResult<f64> {
    Ok(hs::metrics::coherence(&basis_arg(u)?))
}

#[pyfunction]
fn ledermann_bound(p: usize) -> f64 {
    hs::metrics::ledermann_bound(p)
}

#[pyfunction]
fn spike_pca_sin_theta(q: f64, s: f64) -> PyResult<f64> {
    hs::metrics::spike_pca_sin_theta(q, s).map_err(err)
}

/// One simulated instance: `sigma`, `u_true`, `singular_values`, `noise_levels`.
#[pyfunction]
#[pyo3(signature = (n, p, r, kappa, omega, seed=0))]
fn gen_instance<'py>(
    py: Python<'py>,
    n: usize,
    p: usize,
    r: usize,
    kappa: f64,
    omega: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = ModelParams {
        n,
        p,
        r,
        kappa,
        omega,
        seed,
    };
    let inst = hs::simlab::gen_instance(&params).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("sigma", inst.sigma.to_rows())?;
    out.set_item("u_true", basis_rows(&inst.u_true))?;
    out.set_item("singular_values", inst.singular_values)?;
    out.set_item("noise_levels", inst.noise_levels)?;
    Ok(out)
}

/// Runs a sweep from a JSON config; one dict per result row.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=None))]
fn simulate<'py>(py: Python<'py>, config_json: &str, jobs: Option<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let rows = py.detach(|| hs::simlab::run_experiment(&config, jobs)).map_err(err)?;
    rows.into_iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("method", row.method.tag())?;
            d.set_item("param", row.param)?;
            d.set_item("value", row.value)?;
            d.set_item("replicate", row.replicate)?;
            d.set_item("sin_theta", row.sin_theta)?;
            d.set_item("wall_ms", row.wall_ms)?;
            d.set_item("status", row.status)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn hetero_spectra(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDecomposition>()?;
    m.add_function(wrap_pyfunction!(rmtfa, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold_psd, m)?)?;
    m.add_function(wrap_pyfunction!(best_rank_r, m)?)?;
    m.add_function(wrap_pyfunction!(sin_theta, m)?)?;
    m.add_function(wrap_pyfunction!(coherence, m)?)?;
    m.add_function(wrap_pyfunction!(ledermann_bound, m)?)?;
    m.add_function(wrap_pyfunction!(spike_pca_sin_theta, m)?)?;
    m.add_function(wrap_pyfunction!(gen_instance, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.tag()).collect::<Vec<_>>())?;
    Ok(())
}
