//! Python bindings: images, the trained models, latent search, the metrics
//! and every pipeline stage.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lsda::config::ExperimentConfig;
use lsda::data::Image as CoreImage;
use lsda::latent_search::SearchConfig;
use lsda::ssim::{LossKind, SsimConfig};
use lsda::vae::LatentCode;
use lsda::{metrics, pipeline, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Invalid(_) | Error::Shape { .. } | Error::Config(_) | Error::EmptyClass(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for lsda::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Height x width x channels image with pixels in [-1, 1], stored
/// row-major with interleaved channels.
#[pyclass(name = "Image", module = "lsda_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage(CoreImage);

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> PyResult<Self> {
        CoreImage::new(height, width, channels, pixels).py().map(PyImage)
    }

    #[staticmethod]
    fn load_png(path: PathBuf, height: usize, width: usize, channels: usize) -> PyResult<Self> {
        CoreImage::load_png(&path, height, width, channels).py().map(PyImage)
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_png(&path).py()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn pixels(&self) -> Vec<f32> {
        self.0.pixels().to_vec()
    }

    /// Interleaved Sobel responses, shape (height, width, 2 * channels).
    fn sobel_edges(&self) -> Vec<f32> {
        lsda::edge::sobel_edges(&self.0).responses().to_vec()
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.0.shape();
        format!("Image({h}x{w}x{c})")
    }
}

/// Experiment configuration: a TOML file plus dotted `key=value` overrides.
#[pyclass(name = "Config", module = "lsda_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, overrides=Vec::new()))]
    fn new(path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Self> {
        ExperimentConfig::load(path.as_deref(), &overrides).py().map(PyConfig)
    }

    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        self.0.with_overrides(&overrides).py().map(PyConfig)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml().py()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.0.output_dir.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
}

#[pyclass(name = "SourceClassifier", module = "lsda_py", frozen)]
struct PyClassifier(lsda::perceptual::SourceClassifier);

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        lsda::perceptual::SourceClassifier::load(&path).py().map(PyClassifier)
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.arch().class_names.clone()
    }

    /// Predicted class and softmax probabilities.
    fn predict(&self, image: &PyImage) -> PyResult<(usize, Vec<f64>)> {
        self.0.predict(&image.0).py()
    }
}

#[pyclass(name = "VaeModel", module = "lsda_py", frozen)]
struct PyVae(lsda::vae::VaeModel);

#[pymethods]
impl PyVae {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        lsda::vae::VaeModel::load(&path).py().map(PyVae)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    /// Posterior mean and standard deviation.
    fn encode(&self, image: &PyImage) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let p = self.0.encode(&image.0).py()?;
        Ok((p.mu, p.sigma))
    }

    /// Decodes `z` conditioned on the edges of `condition`.
    fn decode(&self, z: Vec<f32>, condition: &PyImage) -> PyResult<PyImage> {
        let e = lsda::edge::sobel_edges(&condition.0);
        self.0.decode(&LatentCode(z), &e).py().map(PyImage)
    }

    fn reconstruct(&self, image: &PyImage) -> PyResult<PyImage> {
        let mut out = self.0.reconstruct(&[&image.0]).py()?;
        Ok(PyImage(out.remove(0)))
    }
}

/// Closest clone of `target`; returns `(z, clone, final_loss, loss_trace)`.
#[pyfunction]
#[pyo3(signature = (vae, target, seed=0, iterations=600, step_size=5.0, momentum=0.5, loss="ssim", window=11))]
#[allow(clippy::too_many_arguments)]
fn latent_search(
    py: Python<'_>,
    vae: &PyVae,
    target: &PyImage,
    seed: u64,
    iterations: usize,
    step_size: f64,
    momentum: f64,
    loss: &str,
    window: usize,
) -> PyResult<(Vec<f32>, PyImage, f64, Vec<f64>)> {
    let cfg = SearchConfig {
        iterations,
        step_size,
        momentum,
        loss_kind: loss.parse::<LossKind>().py()?,
        ..SearchConfig::default()
    };
    let ssim = SsimConfig::with_window(window);
    let (out, clone) = py.detach(|| lsda::latent_search::latent_search(&vae.0, &target.0, seed, &cfg, &ssim)).py()?;
    Ok((out.z.0, PyImage(clone), out.final_loss, out.loss_trace))
}

#[pyfunction]
#[pyo3(signature = (x, y, window=11))]
fn ssim(x: &PyImage, y: &PyImage, window: usize) -> PyResult<f64> {
    lsda::ssim::ssim(&x.0, &y.0, &SsimConfig::with_window(window)).py()
}

#[pyfunction]
fn kl_closed_form(mu: f64, sigma: f64) -> f64 {
    lsda::vae::kl_closed_form(mu, sigma)
}

#[pyfunction]
#[pyo3(signature = (a, b, folds=5))]
fn a_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, folds: usize) -> PyResult<f64> {
    let a = metrics::FeatureSet::new(a, "a").py()?;
    let b = metrics::FeatureSet::new(b, "b").py()?;
    metrics::a_distance(&a, &b, folds).py()
}

#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let a = metrics::FeatureSet::new(a, "a").py()?;
    let b = metrics::FeatureSet::new(b, "b").py()?;
    metrics::frechet_feature_distance(&a, &b).py()
}

/// Rows of `(n, mean_nn_distance, std)`.
#[pyfunction]
#[pyo3(signature = (dim=2, grid=vec![10, 100, 1000, 10000], trials=100, seed=0))]
fn lemma1_demo(dim: usize, grid: Vec<usize>, trials: usize, seed: u64) -> PyResult<Vec<(usize, f64, f64)>> {
    let rows = metrics::lemma1_demo(dim, &grid, trials, seed).py()?;
    Ok(rows.into_iter().map(|r| (r.n, r.mean_nn_distance, r.std)).collect())
}

#[pyfunction]
fn gen_data(py: Python<'_>, cfg: &PyConfig) -> PyResult<()> {
    py.detach(|| pipeline::gen_data(&cfg.0)).py()
}

/// Returns the best validation accuracy.
#[pyfunction]
fn train_classifier(py: Python<'_>, cfg: &PyConfig) -> PyResult<f64> {
    let (_, log) = py.detach(|| pipeline::train_classifier_stage(&cfg.0)).py()?;
    Ok(log.iter().map(|e| e.val_accuracy).fold(0.0, f64::max))
}

#[pyfunction]
fn train_vae(py: Python<'_>, cfg: &PyConfig) -> PyResult<PathBuf> {
    py.detach(|| pipeline::train_vae_stage(&cfg.0)).py()?;
    Ok(pipeline::Layout::new(&cfg.0.output_dir).vae_ckpt())
}

/// Returns `(source_only_accuracy, adapted_accuracy, images)`.
#[pyfunction]
#[pyo3(signature = (cfg, target=None, dump_clones=false))]
fn adapt(py: Python<'_>, cfg: &PyConfig, target: Option<String>, dump_clones: bool) -> PyResult<(f64, f64, usize)> {
    let target = target.unwrap_or_else(|| cfg.0.data.target_preset.clone());
    let r = py.detach(|| pipeline::adapt_stage(&cfg.0, &target, dump_clones)).py()?;
    Ok((r.source_only_accuracy, r.adapted_accuracy, r.results.len()))
}

/// Evaluation summary as a list of `(metric, value)` pairs.
#[pyfunction]
#[pyo3(signature = (cfg, target=None))]
fn evaluate(py: Python<'_>, cfg: &PyConfig, target: Option<String>) -> PyResult<Vec<(String, f64)>> {
    let target = target.unwrap_or_else(|| cfg.0.data.target_preset.clone());
    let s = py.detach(|| pipeline::eval_stage(&cfg.0, &target)).py()?;
    Ok(vec![
        ("source_only_accuracy_full".into(), s.source_only_accuracy_full),
        ("source_only_accuracy".into(), s.source_only_accuracy),
        ("adapted_accuracy".into(), s.adapted_accuracy),
        ("a_distance_source_vs_clone".into(), s.a_distance_source_vs_clone),
        ("a_distance_source_vs_clone_encoding".into(), s.a_distance_source_vs_clone_encoding),
        ("a_distance_source_vs_target".into(), s.a_distance_source_vs_target),
        ("frechet_samples_vs_source".into(), s.frechet_samples_vs_source),
    ])
}

#[pyfunction]
fn ablate(py: Python<'_>, cfg: &PyConfig) -> PyResult<PathBuf> {
    py.detach(|| pipeline::ablate_stage(&cfg.0)).py()?;
    Ok(pipeline::Layout::new(&cfg.0.output_dir).ablate_summary())
}

#[pyfunction]
fn report(py: Python<'_>, cfg: &PyConfig) -> PyResult<PathBuf> {
    py.detach(|| pipeline::report_stage(&cfg.0)).py()
}

#[pymodule]
fn lsda_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyVae>()?;
    m.add_function(wrap_pyfunction!(latent_search, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(kl_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(a_distance, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(lemma1_demo, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train_classifier, m)?)?;
    m.add_function(wrap_pyfunction!(train_vae, m)?)?;
    m.add_function(wrap_pyfunction!(adapt, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
