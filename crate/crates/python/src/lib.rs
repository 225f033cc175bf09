//! Python bindings: maps, meshes, metrics, integration and pipeline runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use facerefl::displacement::{integrate, normals_to_slopes};
use facerefl::mesh::{load_obj as load_mesh, Mesh};
use facerefl::metrics::psnr_counted;
use facerefl::pipeline::{run_config_file, write_synthetic_case, write_synthetic_case_sized, Profile, RunOptions};
use facerefl::raster::{load_raster, save_raster, ColorSpace, MapKind, RasterMap};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// A UV-space float raster with a kind, a colorspace and an optional mask.
#[pyclass(name = "RasterMap", module = "facerefl_py", frozen)]
struct PyRasterMap {
    inner: RasterMap,
}

#[pymethods]
impl PyRasterMap {
    #[new]
    #[pyo3(signature = (width, height, channels, data, colorspace = "raw", kind = "generic", mask = None))]
    fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        colorspace: &str,
        kind: &str,
        mask: Option<Vec<bool>>,
    ) -> PyResult<Self> {
        let cs: ColorSpace = colorspace.parse().map_err(value_err)?;
        let kind: MapKind = kind.parse().map_err(value_err)?;
        let inner = RasterMap::with_mask(width, height, channels, data, cs, kind, mask).map_err(value_err)?;
        Ok(PyRasterMap { inner })
    }

    /// Loads a `.rmap` or `.png` file as a map of `kind`.
    #[staticmethod]
    #[pyo3(signature = (path, kind = "generic"))]
    fn load(path: PathBuf, kind: &str) -> PyResult<Self> {
        let kind: MapKind = kind.parse().map_err(value_err)?;
        Ok(PyRasterMap {
            inner: load_raster(&path, kind).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_raster(&self.inner, &path).map_err(runtime_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn colorspace(&self) -> String {
        self.inner.colorspace().to_string()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    /// Channel-interleaved samples, row-major.
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn mask(&self) -> Option<Vec<bool>> {
        self.inner.mask().map(<[bool]>::to_vec)
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    /// Checks ranges, unit normals and mask length.
    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "RasterMap({}×{}×{}, kind={}, colorspace={})",
            self.inner.width(),
            self.inner.height(),
            self.inner.channels(),
            self.inner.kind().as_str(),
            self.inner.colorspace()
        )
    }
}

/// A triangle mesh with per-vertex UVs.
#[pyclass(name = "Mesh", module = "facerefl_py", frozen)]
struct PyMesh {
    inner: Mesh,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMesh {
            inner: load_mesh(&path).map_err(value_err)?,
        })
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangles().len()
    }

    #[getter]
    fn topology_id(&self) -> &str {
        self.inner.topology_id()
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().iter().map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// PSNR in dB (peak 1) and the number of compared samples.
#[pyfunction]
#[pyo3(signature = (a, b, mask = None))]
fn psnr(a: &PyRasterMap, b: &PyRasterMap, mask: Option<Vec<bool>>) -> PyResult<(f64, usize)> {
    psnr_counted(&a.inner, &b.inner, mask.as_deref()).map_err(value_err)
}

/// Integrates a tangent-space normal map into a displacement map.
///
/// Returns `(displacement, iterations, relative_residual)`.
#[pyfunction]
fn integrate_normals(normals: &PyRasterMap) -> PyResult<(PyRasterMap, usize, f64)> {
    let slopes = normals_to_slopes(&normals.inner).map_err(value_err)?;
    let r = integrate(&slopes).map_err(runtime_err)?;
    Ok((PyRasterMap { inner: r.displacement }, r.iterations, r.relative_residual))
}

/// Writes a synthetic case and returns the path of its config.
#[pyfunction]
#[pyo3(signature = (directory, profile = "desk", seed = 0, asset = 0, size = None))]
fn synth_case(
    directory: PathBuf,
    profile: &str,
    seed: u64,
    asset: usize,
    size: Option<(usize, usize)>,
) -> PyResult<PathBuf> {
    let profile: Profile = profile.parse().map_err(value_err)?;
    let case = match size {
        Some(s) => write_synthetic_case_sized(&directory, profile, s, seed, asset),
        None => write_synthetic_case(&directory, profile, seed, asset),
    }
    .map_err(runtime_err)?;
    Ok(case.config_path)
}

/// Runs a config file; returns `{"output_dir", "metrics", "flags", "maps"}`.
#[pyfunction]
#[pyo3(signature = (config, profile = None, from_stage = None))]
fn run_pipeline(
    py: Python<'_>,
    config: PathBuf,
    profile: Option<&str>,
    from_stage: Option<String>,
) -> PyResult<Py<PyAny>> {
    let profile = profile.map(str::parse::<Profile>).transpose().map_err(value_err)?;
    let opts = RunOptions { from: from_stage };
    let out = py
        .detach(|| run_config_file(&config, profile, &opts))
        .map_err(runtime_err)?;
    let result = pyo3::types::PyDict::new(py);
    result.set_item("output_dir", out.output_dir.clone())?;
    let metrics = pyo3::types::PyDict::new(py);
    for (k, e) in &out.report.entries {
        metrics.set_item(k, e.psnr_db)?;
    }
    result.set_item("metrics", metrics)?;
    result.set_item("flags", out.report.flags.clone())?;
    let maps = pyo3::types::PyDict::new(py);
    for (k, m) in out.maps {
        maps.set_item(k, PyRasterMap { inner: m })?;
    }
    result.set_item("maps", maps)?;
    Ok(result.into_any().unbind())
}

/// Hemisphere integral of the specular lobe times cosine.
#[pyfunction]
#[pyo3(signature = (alpha, view_theta, n_theta = 64, n_phi = 64))]
fn lobe_albedo(alpha: f64, view_theta: f64, n_theta: usize, n_phi: usize) -> f64 {
    facerefl::shading::lobe_albedo(alpha, view_theta, n_theta, n_phi)
}

#[pymodule]
fn facerefl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRasterMap>()?;
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_normals, m)?)?;
    m.add_function(wrap_pyfunction!(synth_case, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(lobe_albedo, m)?)?;
    Ok(())
}
