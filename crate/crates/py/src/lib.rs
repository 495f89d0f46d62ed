//! Python bindings: assets, cameras, rendering, dataset extraction, training
//! and composed scenes. Heavy calls release the interpreter lock.

use glam::{Quat, Vec3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use splatcull_core as sc;
use splatcull_core::quality::{compute_metrics_pair, ImageRef};

fn to_py(e: sc::Error) -> PyErr {
    match e {
        sc::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a
                .iter()
                .map(|x| json_to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_dict<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// A set of Gaussians with bounds and optional sampling distances.
#[pyclass(module = "splatcull", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Asset {
    inner: sc::Asset,
}

#[pymethods]
impl Asset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = sc::ply::load_ply(path).map_err(to_py)?;
        Ok(Asset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n=20000, radius=1.0, thickness=0.025, alpha=0.99, seed=0))]
    fn shell(n: usize, radius: f32, thickness: f32, alpha: f32, seed: u64) -> Self {
        let p = sc::synth::ShellParams {
            n,
            radius,
            thickness,
            alpha,
            seed,
            ..Default::default()
        };
        Asset {
            inner: sc::synth::make_shell(&p),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n_front=2500, n_back=2500, gap=0.2, alpha_front=0.99, seed=0))]
    fn slab(n_front: usize, n_back: usize, gap: f32, alpha_front: f32, seed: u64) -> Self {
        let p = sc::synth::SlabParams {
            n_front,
            n_back,
            gap,
            alpha_front,
            seed,
            ..Default::default()
        };
        Asset {
            inner: sc::synth::make_slab_pair(&p),
        }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        sc::ply::save_ply(&self.inner, path).map_err(to_py)
    }

    /// Prunes by opacity, recenters and attaches near/far sampling distances
    /// for a square training camera with vertical fov `fov_deg`.
    #[pyo3(signature = (prune=1.0/255.0, fov_deg=60.0, p_near=0.9, p_far=0.05))]
    fn prep(&self, prune: f32, fov_deg: f32, p_near: f32, p_far: f32) -> PyResult<Self> {
        let fov = sc::SamplingConfig {
            fov: fov_deg.to_radians(),
            ..Default::default()
        }
        .diagonal_fov();
        let inner = self
            .inner
            .prune(prune)
            .recenter()
            .and_then(|a| a.with_sampling_distances(fov, p_near, p_far))
            .map_err(to_py)?;
        Ok(Asset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn bound_radius(&self) -> f32 {
        self.inner.bound_radius
    }

    /// `(d_near, d_far)`, or None before `prep`.
    #[getter]
    fn distances(&self) -> Option<(f32, f32)> {
        self.inner.sampling_distances.map(|d| (d.near, d.far))
    }

    #[getter]
    fn content_hash(&self) -> u64 {
        self.inner.content_hash()
    }
}

#[pyclass(module = "splatcull", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Camera {
    inner: sc::Camera,
}

#[pymethods]
impl Camera {
    #[new]
    #[pyo3(signature = (position, target=(0.0, 0.0, 0.0), fov_y_deg=60.0, width=256, height=256))]
    fn new(
        position: (f32, f32, f32),
        target: (f32, f32, f32),
        fov_y_deg: f32,
        width: u32,
        height: u32,
    ) -> PyResult<Self> {
        let inner = sc::Camera::look_at(
            Vec3::from(position),
            Vec3::from(target),
            fov_y_deg.to_radians(),
            width,
            height,
        );
        inner.validate().map_err(to_py)?;
        Ok(Camera { inner })
    }

    #[getter]
    fn focal(&self) -> f32 {
        self.inner.focal()
    }
}

/// A rendered frame. `image` is row-major RGB in [0, 1].
#[pyclass(module = "splatcull", frozen)]
pub struct Frame {
    inner: sc::RenderOutput,
}

#[pymethods]
impl Frame {
    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    #[getter]
    fn image(&self) -> Vec<f32> {
        self.inner.image.clone()
    }

    #[getter]
    fn used_count(&self) -> usize {
        self.inner.used_count
    }

    #[getter]
    fn passed_count(&self) -> usize {
        self.inner.passed_count
    }

    #[getter]
    fn contribution_max(&self) -> Option<Vec<f32>> {
        self.inner.contribution_max.clone()
    }

    fn save_png(&self, path: &str) -> PyResult<()> {
        sc::raster::save_png(&self.inner, path).map_err(to_py)
    }

    /// `(psnr, ssim)` against another frame of the same size.
    fn compare(&self, other: &Frame) -> PyResult<(f64, f64)> {
        compute_metrics_pair(
            &ImageRef::from_render(&self.inner),
            &ImageRef::from_render(&other.inner),
        )
        .map_err(to_py)
    }
}

/// Renders every Gaussian of `asset` with the software rasterizer.
#[pyfunction]
#[pyo3(signature = (asset, camera, record_contributions=false, radius_clip=None))]
fn render(
    py: Python<'_>,
    asset: &Asset,
    camera: &Camera,
    record_contributions: bool,
    radius_clip: Option<f32>,
) -> Frame {
    let opts = sc::RenderOptions {
        record_contributions,
        radius_clip,
        ..Default::default()
    };
    let inner = py.detach(|| sc::render(&asset.inner.gaussians, &camera.inner, &opts));
    Frame { inner }
}

#[pyclass(module = "splatcull", frozen)]
pub struct Dataset {
    inner: sc::VisibilityDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = sc::VisibilityDataset::load(path).map_err(to_py)?;
        Ok(Dataset { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn n_views(&self) -> usize {
        self.inner.views.len()
    }

    #[getter]
    fn positive_fraction(&self) -> f64 {
        self.inner.positive_fraction()
    }
}

/// Renders training views of a prepared asset and records visibility labels.
#[pyfunction]
#[pyo3(signature = (asset, n_directions=256, n_distances=8, n_aux_views=6, image_size=128, seed=0))]
fn extract(
    py: Python<'_>,
    asset: &Asset,
    n_directions: usize,
    n_distances: usize,
    n_aux_views: usize,
    image_size: u32,
    seed: u64,
) -> PyResult<Dataset> {
    let cfg = sc::SamplingConfig {
        n_directions,
        n_distances,
        n_aux_views,
        image_size,
        seed,
        ..Default::default()
    };
    let inner = py
        .detach(|| sc::VisibilityDataset::extract(&asset.inner, &cfg))
        .map_err(to_py)?;
    Ok(Dataset { inner })
}

#[pyclass(module = "splatcull", skip_from_py_object)]
#[derive(Clone)]
pub struct Model {
    inner: sc::VisibilityModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = sc::VisibilityModel::load(path).map_err(to_py)?;
        Ok(Model { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn threshold(&self) -> f32 {
        self.inner.threshold
    }

    #[setter]
    fn set_threshold(&mut self, t: f32) -> PyResult<()> {
        if !(t > 0.0 && t < 1.0) {
            return Err(PyValueError::new_err("threshold must be in (0, 1)"));
        }
        self.inner.threshold = t;
        Ok(())
    }

    #[getter]
    fn final_loss(&self) -> f32 {
        self.inner.final_loss
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, asset, iterations=5000, batch_size=32768, threshold=0.5, seed=0))]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    asset: &Asset,
    iterations: usize,
    batch_size: usize,
    threshold: f32,
    seed: u64,
) -> PyResult<Model> {
    let cfg = sc::TrainConfig {
        iterations,
        batch_size,
        threshold,
        seed,
        ..Default::default()
    };
    let inner = py
        .detach(|| sc::nn::train(&dataset.inner, &asset.inner, &cfg))
        .map_err(to_py)?;
    Ok(Model { inner })
}

/// Largest relative gradient error of a random network, kinks excluded.
#[pyfunction]
#[pyo3(signature = (seed=0, batch=64))]
fn grad_check(seed: u64, batch: usize) -> PyResult<f64> {
    let norm = sc::nn::Normalization {
        mean_scale: 1.0,
        d_near: 1.0,
        d_far: 10.0,
        f_train: 100.0,
    };
    let model = sc::VisibilityModel::new_random(0, norm, 0.5, &sc::nn::DEFAULT_HIDDEN, seed)
        .map_err(to_py)?;
    let batch = sc::nn::SampleBatch::<f64>::random(batch, seed);
    Ok(sc::nn::grad_check(&model, &batch, 2.0))
}

/// Assets with instance transforms, rendered with frustum and MLP culling.
#[pyclass(module = "splatcull")]
pub struct Scene {
    inner: sc::ComposedScene,
}

#[pymethods]
impl Scene {
    #[new]
    fn new() -> Self {
        Scene {
            inner: sc::ComposedScene::new(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = sc::ComposedScene::load(path).map_err(to_py)?;
        Ok(Scene { inner })
    }

    #[pyo3(signature = (id, asset, model=None))]
    fn add_asset(&mut self, id: &str, asset: &Asset, model: Option<&Model>) -> PyResult<usize> {
        self.inner
            .add_asset(id, asset.inner.clone(), model.map(|m| m.inner.clone()))
            .map_err(to_py)
    }

    /// `rotation` is a `(w, x, y, z)` quaternion.
    #[pyo3(signature = (asset, translation=(0.0, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0), scale=1.0))]
    fn add_instance(
        &mut self,
        asset: usize,
        translation: (f32, f32, f32),
        rotation: (f32, f32, f32, f32),
        scale: f32,
    ) -> PyResult<()> {
        let (w, x, y, z) = rotation;
        let t =
            sc::InstanceTransform::new(Vec3::from(translation), Quat::from_xyzw(x, y, z, w), scale)
                .map_err(to_py)?;
        self.inner.add_instance(asset, t).map_err(to_py)
    }

    #[getter]
    fn n_instances(&self) -> usize {
        self.inner.n_instances()
    }

    #[getter]
    fn total_gaussians(&self) -> usize {
        self.inner.total_gaussians()
    }

    /// Returns the frame and its statistics as a dict.
    #[pyo3(signature = (camera, use_mlp=true, radius_clip=None))]
    fn render<'py>(
        &self,
        py: Python<'py>,
        camera: &Camera,
        use_mlp: bool,
        radius_clip: Option<f32>,
    ) -> PyResult<(Frame, Bound<'py, PyAny>)> {
        let opts = sc::ComposeOptions {
            use_mlp,
            render: sc::RenderOptions {
                radius_clip,
                ..Default::default()
            },
            ..Default::default()
        };
        let (out, stats) = py
            .detach(|| sc::render_composed(&self.inner, &camera.inner, &opts))
            .map_err(to_py)?;
        Ok((Frame { inner: out }, to_dict(py, &stats)?))
    }
}

/// Recall, culling rate and quality over an orbit around a single asset.
#[pyfunction]
#[pyo3(signature = (asset, model, distance, n_views=64, image_size=256, elevation_deg=20.0))]
fn orbit_stats<'py>(
    py: Python<'py>,
    asset: &Asset,
    model: &Model,
    distance: f32,
    n_views: usize,
    image_size: u32,
    elevation_deg: f32,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = sc::scene::OrbitConfig {
        n_views,
        distance,
        image_size,
        elevation: elevation_deg.to_radians(),
        ..Default::default()
    };
    let stats = py
        .detach(|| sc::scene::orbit_eval(&asset.inner, &model.inner, &cfg))
        .map_err(to_py)?;
    to_dict(py, &stats)
}

#[pymodule]
fn splatcull(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Asset>()?;
    m.add_class::<Camera>()?;
    m.add_class::<Frame>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(orbit_stats, m)?)?;
    Ok(())
}
