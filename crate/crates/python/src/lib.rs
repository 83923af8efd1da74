use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use holoeit_core::algebra::criterion_residual as core_criterion_residual;
use holoeit_core::boundary::{BoundaryTrace, DEFAULT_TOL_MEAN};
use holoeit_core::detector::{classify as core_classify, DEFAULT_TOL_CONST, FALLBACK_TOL_KERNEL};
use holoeit_core::dn::{assemble_dn, DNOperator};
use holoeit_core::harmonic::Flavor;
use holoeit_core::pipeline::{run_pipeline as core_run_pipeline, ExperimentConfig};
use holoeit_core::reconstruct::recover_annulus_modulus as core_modulus;
use holoeit_core::surface::{read_surf2, validate_mesh, write_surf2, SurfaceMesh};
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor, Hole};
use holoeit_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Json(_) | Error::SchemaVersion { .. } => PyIOError::new_err(e.to_string()),
        Error::Indeterminate { .. } | Error::Singular { .. } | Error::NoSolution => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_flavor(name: &str) -> PyResult<Flavor> {
    match name {
        "grounded" => Ok(Flavor::Grounded),
        "isolated" => Ok(Flavor::Isolated),
        other => Err(PyValueError::new_err(format!("unknown flavor '{other}', expected 'grounded' or 'isolated'"))),
    }
}

/// Triangulated surface with boundary loops; the outer loop is the measured boundary.
#[pyclass(name = "Mesh", frozen)]
struct PyMesh {
    inner: SurfaceMesh,
}

fn build(desc: DomainDescriptor) -> PyResult<PyMesh> {
    Ok(PyMesh {
        inner: build_synthetic(&desc).map_err(to_py)?,
    })
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn disk(h: f64) -> PyResult<Self> {
        build(DomainDescriptor::disk(h))
    }

    #[staticmethod]
    #[pyo3(signature = (inner_radius, h))]
    fn annulus(inner_radius: f64, h: f64) -> PyResult<Self> {
        build(DomainDescriptor::annulus(inner_radius, h))
    }

    /// Unit disk with circular holes given as `(cx, cy, radius)`.
    #[staticmethod]
    fn with_holes(holes: Vec<(f64, f64, f64)>, h: f64) -> PyResult<Self> {
        let holes = holes
            .into_iter()
            .map(|(x, y, r)| Hole {
                center: [x, y],
                radius: r,
            })
            .collect();
        build(DomainDescriptor::holes(holes, h))
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| to_py(e.into()))?;
        Ok(Self {
            inner: read_surf2(BufReader::new(file)).map_err(to_py)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        let text = write_surf2(&self.inner).map_err(to_py)?;
        std::fs::write(path, text).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangle_count()
    }

    #[getter]
    fn hole_count(&self) -> usize {
        self.inner.hole_count()
    }

    #[getter]
    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint_hex()
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().to_vec()
    }

    fn triangles(&self) -> Vec<[usize; 3]> {
        self.inner.triangles().to_vec()
    }

    fn boundary_loops(&self) -> Vec<Vec<usize>> {
        self.inner.boundary_loops().to_vec()
    }

    /// Raises `ValueError` listing every violated mesh invariant.
    fn validate(&self) -> PyResult<()> {
        validate_mesh(&self.inner).into_result().map(|_| ()).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(vertices={}, triangles={}, holes={})",
            self.inner.vertex_count(),
            self.inner.triangle_count(),
            self.inner.hole_count()
        )
    }
}

/// Discrete Dirichlet-to-Neumann map on the outer boundary.
#[pyclass(name = "DnOperator", frozen)]
struct PyDnOperator {
    inner: Arc<DNOperator>,
}

#[pymethods]
impl PyDnOperator {
    #[staticmethod]
    #[pyo3(signature = (mesh, flavor = "grounded"))]
    fn assemble(mesh: &PyMesh, flavor: &str) -> PyResult<Self> {
        let op = assemble_dn(&mesh.inner, parse_flavor(flavor)?).map_err(to_py)?;
        Ok(Self { inner: Arc::new(op) })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| to_py(e.into()))?;
        let op = DNOperator::from_csv(BufReader::new(file)).map_err(to_py)?;
        Ok(Self { inner: Arc::new(op) })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_csv()).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn flavor(&self) -> &'static str {
        self.inner.flavor().name()
    }

    #[getter]
    fn boundary_length(&self) -> f64 {
        self.inner.grid().length()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Arc-length coordinates of the boundary nodes.
    fn arclength(&self) -> Vec<f64> {
        self.inner.grid().s().to_vec()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.grid().weights().to_vec()
    }

    /// Row-major matrix of nodal values.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.inner.matrix();
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn apply(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        if values.len() != self.inner.len() {
            return Err(to_py(Error::GridMismatch {
                expected: self.inner.len(),
                got: values.len(),
            }));
        }
        Ok(self.inner.apply(&values))
    }

    /// First `k` eigenvalues in ascending order.
    fn spectrum(&self, k: usize) -> Vec<f64> {
        self.inner.spectrum(k).values
    }

    fn __repr__(&self) -> String {
        format!("DnOperator(flavor='{}', nodes={})", self.inner.flavor().name(), self.inner.len())
    }
}

/// Classifies the operator as hole-free, grounded or isolated.
#[pyfunction]
#[pyo3(signature = (op, n_modes = 16, tol_kernel = FALLBACK_TOL_KERNEL, tol_const = DEFAULT_TOL_CONST))]
fn classify<'py>(py: Python<'py>, op: &PyDnOperator, n_modes: usize, tol_kernel: f64, tol_const: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = core_classify(&op.inner, n_modes, tol_kernel, tol_const).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("verdict", format!("{:?}", c.verdict))?;
    d.set_item("kernel_dim", c.kernel_dim)?;
    d.set_item("low_mode_kernel", c.low_mode_kernel)?;
    d.set_item("lambda1_norm", c.lambda1_norm)?;
    d.set_item("singular_values", c.singular_values)?;
    Ok(d)
}

/// Relative admissibility residual of nodal boundary values.
#[pyfunction]
#[pyo3(signature = (op, values, tol_mean = DEFAULT_TOL_MEAN))]
fn criterion_residual(op: &PyDnOperator, values: Vec<f64>, tol_mean: f64) -> PyResult<f64> {
    let trace = BoundaryTrace::new(op.inner.grid().clone(), values).map_err(to_py)?;
    core_criterion_residual(&op.inner, &trace, tol_mean).map_err(to_py)
}

/// Annulus modulus `ln(1/r)` fitted to ascending DN eigenvalues.
#[pyfunction]
#[pyo3(signature = (eigenvalues, flavor = "grounded"))]
fn recover_annulus_modulus(eigenvalues: Vec<f64>, flavor: &str) -> PyResult<f64> {
    Ok(core_modulus(&eigenvalues, parse_flavor(flavor)?).map_err(to_py)?.modulus)
}

/// Runs the full pipeline from a TOML config and returns `(report_json, exit_code)`.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: &str) -> PyResult<(String, i32)> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let run = py.detach(|| core_run_pipeline(&cfg));
    let json = run.report.to_json().map_err(to_py)?;
    Ok((json, run.exit_code()))
}

#[pymodule]
fn holoeit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyDnOperator>()?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(criterion_residual, m)?)?;
    m.add_function(wrap_pyfunction!(recover_annulus_modulus, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
