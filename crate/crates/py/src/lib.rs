use medtransport::dgp::{apply_missingness, oracle_effects, Mechanism, MissingnessSpec};
use medtransport::tmle::EffectEstimate;
use medtransport::{
    estimate_effects, fit_nuisance, generate, sensitivity_bounds, sweep, ErrorClass, NuisanceOptions, Observation,
    ObservationTable, ParametricFitter, SensitivityConfig, StructuralParams, SweepGrid,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py(e: medtransport::Error) -> PyErr {
    let msg = format!("[{}] {e}", e.module());
    match e.class() {
        ErrorClass::Config | ErrorClass::Data => PyValueError::new_err(msg),
        ErrorClass::Estimation => PyRuntimeError::new_err(msg),
    }
}

fn mechanism(name: &str) -> PyResult<Mechanism> {
    match name.to_ascii_lowercase().as_str() {
        "mcar" => Ok(Mechanism::Mcar),
        "mar" => Ok(Mechanism::Mar),
        "mnar" => Ok(Mechanism::Mnar),
        other => Err(PyValueError::new_err(format!("unknown missingness mechanism {other:?}"))),
    }
}

/// Observations with columns S, A, W, R, C (None when missing), Y.
#[pyclass(name = "Dataset", module = "medtransport", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    table: ObservationTable,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (s, a, w, r, c, y))]
    fn new(s: Vec<u8>, a: Vec<u8>, w: Vec<u8>, r: Vec<f64>, c: Vec<Option<f64>>, y: Vec<u8>) -> PyResult<Self> {
        let n = s.len();
        if [a.len(), w.len(), r.len(), c.len(), y.len()].iter().any(|&k| k != n) {
            return Err(PyValueError::new_err("all columns must have the same length"));
        }
        let rows = (0..n)
            .map(|i| Observation { id: i as u64, s: s[i], a: a[i], w: w[i], r: r[i], c_true: None, c_obs: c[i], y: y[i] })
            .collect();
        Ok(Self { table: ObservationTable::new(rows).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.table.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(rows={}, source={}, target={})",
            self.table.len(),
            self.table.count(Some(1), None),
            self.table.count(Some(0), None)
        )
    }

    /// Number of rows with S = `s` and W = `w` (either may be None).
    #[pyo3(signature = (s=None, w=None))]
    fn count(&self, s: Option<u8>, w: Option<u8>) -> usize {
        self.table.count(s, w)
    }

    #[pyo3(signature = (s=None, w=None))]
    fn missing_fraction(&self, s: Option<u8>, w: Option<u8>) -> f64 {
        self.table.missing_fraction(s, w)
    }

    /// Columns as a dict of lists; C holds None for missing mediators.
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let rows = self.table.rows();
        d.set_item("S", rows.iter().map(|r| r.s).collect::<Vec<_>>())?;
        d.set_item("A", rows.iter().map(|r| r.a).collect::<Vec<_>>())?;
        d.set_item("W", rows.iter().map(|r| r.w).collect::<Vec<_>>())?;
        d.set_item("R", rows.iter().map(|r| r.r).collect::<Vec<_>>())?;
        d.set_item("C", rows.iter().map(|r| r.c_obs).collect::<Vec<_>>())?;
        d.set_item("Y", rows.iter().map(|r| r.y).collect::<Vec<_>>())?;
        Ok(d)
    }

    /// Masks mediators in the target rows of `target_group`, calibrated to `proportion`.
    #[pyo3(signature = (mechanism_name, proportion, target_group=0, seed=0))]
    fn with_missingness(&self, mechanism_name: &str, proportion: f64, target_group: u8, seed: u64) -> PyResult<Self> {
        let spec = MissingnessSpec::calibrated(mechanism(mechanism_name)?, target_group, proportion);
        let (table, _) = apply_missingness(&self.table, &spec, seed).map_err(to_py)?;
        Ok(Self { table })
    }
}

/// Draws source and target samples from the default structural model.
#[pyfunction]
#[pyo3(signature = (n_source, n_target, seed=0))]
fn simulate(py: Python<'_>, n_source: usize, n_target: usize, seed: u64) -> PyResult<PyDataset> {
    let table = py.detach(|| generate(&StructuralParams::default(), n_source, n_target, seed)).map_err(to_py)?;
    Ok(PyDataset { table })
}

fn effect_dict<'py>(py: Python<'py>, e: &EffectEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("point", e.point)?;
    d.set_item("se", e.se)?;
    d.set_item("ci_low", e.ci_low)?;
    d.set_item("ci_high", e.ci_high)?;
    Ok(d)
}

/// SDE and SIE per target group: {w: {"sde": {...}, "sie": {...}}}.
#[pyfunction]
#[pyo3(signature = (data, n_mc=1000))]
fn estimate<'py>(py: Python<'py>, data: &PyDataset, n_mc: usize) -> PyResult<Bound<'py, PyDict>> {
    let opts = NuisanceOptions { n_mc, ..Default::default() };
    let table = &data.table;
    let groups = py
        .detach(|| {
            let fit = fit_nuisance(table, &opts)?;
            (0..2u8)
                .filter(|&w| table.count(Some(0), Some(w)) > 0)
                .map(|w| estimate_effects(&fit, table, Some(w)).map(|e| (w, e)))
                .collect::<medtransport::Result<Vec<_>>>()
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    for (w, e) in groups {
        let g = PyDict::new(py);
        g.set_item("sde", effect_dict(py, &e.sde)?)?;
        g.set_item("sie", effect_dict(py, &e.sie)?)?;
        out.set_item(w, g)?;
    }
    Ok(out)
}

/// Sensitivity curve over `r2_grid`: (list of point dicts, {w: r2_star or None}).
#[pyfunction]
#[pyo3(signature = (data, r2_grid, n_bootstrap=500, alpha=0.05, seed=0))]
fn sensitivity_curve<'py>(
    py: Python<'py>,
    data: &PyDataset,
    r2_grid: Vec<f64>,
    n_bootstrap: usize,
    alpha: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyList>, Bound<'py, PyDict>)> {
    let cfg = SensitivityConfig { r2_grid: r2_grid.clone(), n_bootstrap, alpha, seed, ..Default::default() };
    let fitter = ParametricFitter { options: NuisanceOptions::default() };
    let table = &data.table;
    let res = py.detach(|| sweep(&fitter, table, &SweepGrid::R2(r2_grid), &cfg)).map_err(to_py)?;
    let points = PyList::empty(py);
    for p in &res.curve.points {
        let d = PyDict::new(py);
        d.set_item("group_w", p.group_w)?;
        d.set_item("r2", p.r2)?;
        d.set_item("sie_point", p.sie_point)?;
        d.set_item("sie_lower", p.sie_lower)?;
        d.set_item("sie_upper", p.sie_upper)?;
        d.set_item("ci_low", p.ci_low)?;
        d.set_item("ci_high", p.ci_high)?;
        d.set_item("contains_null", p.contains_null)?;
        points.append(d)?;
    }
    let crossings = PyDict::new(py);
    for c in &res.crossings {
        crossings.set_item(c.group_w, c.r2_star)?;
    }
    Ok((points, crossings))
}

/// Endpoint scale factor and variance ratio bound of the sensitivity set.
#[pyfunction]
fn sensitivity_set<'py>(py: Python<'py>, weights: Vec<f64>, r2: f64) -> PyResult<Bound<'py, PyDict>> {
    let s = sensitivity_bounds(&weights, r2).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("c_max", s.c_max)?;
    d.set_item("max_variance_ratio", 1.0 / (1.0 - r2))?;
    d.set_item("endpoint", s.scale_member(s.c_max).weights)?;
    Ok(d)
}

/// Monte-Carlo truth per group: {w: {"sde": .., "sie": ..}}.
#[pyfunction]
#[pyo3(signature = (n_mc=1_000_000, seed=0))]
fn oracle<'py>(py: Python<'py>, n_mc: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let o = py.detach(|| oracle_effects(&StructuralParams::default(), n_mc, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    for g in &o.groups {
        let d = PyDict::new(py);
        d.set_item("sde", g.sde)?;
        d.set_item("sie", g.sie)?;
        out.set_item(g.w, d)?;
    }
    Ok(out)
}

#[pymodule]
#[pyo3(name = "medtransport")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_curve, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_set, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
