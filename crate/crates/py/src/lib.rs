//! Python bindings for `destin-core`.

use std::path::PathBuf;

use destin_core::config::RunConfig;
use destin_core::hierarchy::{Execution, ImageView, LayerSpec, ScanOrder};
use destin_core::mnist::pipeline::{self, RunContext, Stage};
use destin_core::node::NodeParams;
use destin_core::seqbench::{self, BenchConfig, SequenceTask};
use destin_core::{Error, MeanUpdate, VarianceUpdate};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e.root() {
        Error::Divergence(_) => PyRuntimeError::new_err(e.to_string()),
        _ if e.is_data_error() => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn mean_mode(s: &str) -> PyResult<MeanUpdate> {
    match s {
        "convex" => Ok(MeanUpdate::Convex),
        "literal" => Ok(MeanUpdate::Literal),
        _ => Err(PyValueError::new_err(format!("mean_update must be 'convex' or 'literal', got '{s}'"))),
    }
}

fn variance_mode(s: &str) -> PyResult<VarianceUpdate> {
    match s {
        "literal" => Ok(VarianceUpdate::Literal),
        "standard_ema" => Ok(VarianceUpdate::StandardEma),
        _ => Err(PyValueError::new_err(format!(
            "variance_update must be 'literal' or 'standard_ema', got '{s}'"
        ))),
    }
}

/// A recurrent clustering node.
#[pyclass(module = "destin", skip_from_py_object)]
#[derive(Clone)]
struct Node {
    inner: destin_core::Node,
}

#[pymethods]
impl Node {
    #[new]
    #[pyo3(signature = (centroids, spatial_dim, alpha=0.99, beta=0.99, gamma=0.99, mean_update="convex", variance_update="literal"))]
    fn new(
        centroids: usize,
        spatial_dim: usize,
        alpha: f64,
        beta: f64,
        gamma: f64,
        mean_update: &str,
        variance_update: &str,
    ) -> PyResult<Self> {
        let params = NodeParams {
            alpha,
            beta,
            gamma,
            mean_update: mean_mode(mean_update)?,
            variance_update: variance_mode(variance_update)?,
            ..NodeParams::default()
        };
        let inner = destin_core::Node::new(params.node_config(centroids, spatial_dim)).map_err(py_err)?;
        Ok(Node { inner })
    }

    /// Feeds one observation and returns the new belief.
    fn step(&mut self, spatial: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.step(&spatial).map(|b| b.values().to_vec()).map_err(py_err)
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    #[getter]
    fn belief(&self) -> Vec<f64> {
        self.inner.belief().values().to_vec()
    }

    #[getter]
    fn train_mode(&self) -> bool {
        self.inner.train_mode()
    }

    #[setter]
    fn set_train_mode(&mut self, train: bool) {
        self.inner.set_train_mode(train);
    }

    #[getter]
    fn initialized(&self) -> bool {
        self.inner.is_initialized()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.inner.centroids().iter().map(|c| c.mean.clone()).collect()
    }

    #[getter]
    fn variances(&self) -> Vec<Vec<f64>> {
        self.inner.centroids().iter().map(|c| c.variance.clone()).collect()
    }

    #[getter]
    fn starvation(&self) -> Vec<f64> {
        self.inner.centroids().iter().map(|c| c.starvation).collect()
    }

    /// Winning centroid for an augmented observation.
    fn select_winner(&self, obs: Vec<f64>) -> PyResult<usize> {
        if !self.inner.is_initialized() {
            return Err(PyValueError::new_err("node has not seeded all centroids yet"));
        }
        if obs.len() != self.inner.config().augmented_dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} values, got {}",
                self.inner.config().augmented_dim(),
                obs.len()
            )));
        }
        Ok(self.inner.select_winner(&obs))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        destin_core::Node::from_json(text).map(|inner| Node { inner }).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Node(centroids={}, spatial_dim={}, seeded={})",
            c.centroids,
            c.spatial_dim,
            self.inner.seeded()
        )
    }
}

/// Window positions over an image and the movements at which beliefs are sampled.
#[pyclass(module = "destin", skip_from_py_object)]
#[derive(Clone)]
struct ScanPlan {
    inner: destin_core::ScanPlan,
}

#[pymethods]
impl ScanPlan {
    #[new]
    #[pyo3(signature = (image, window, stride=1, sample_interval=12, order="raster"))]
    fn new(
        image: (usize, usize),
        window: (usize, usize),
        stride: usize,
        sample_interval: usize,
        order: &str,
    ) -> PyResult<Self> {
        let order = match order {
            "raster" => ScanOrder::Raster,
            "zigzag" => ScanOrder::Zigzag,
            _ => return Err(PyValueError::new_err("order must be 'raster' or 'zigzag'")),
        };
        destin_core::ScanPlan::new(image, window, stride, sample_interval, order)
            .map(|inner| ScanPlan { inner })
            .map_err(py_err)
    }

    #[getter]
    fn movements(&self) -> usize {
        self.inner.movements()
    }

    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples()
    }

    #[getter]
    fn positions(&self) -> Vec<(usize, usize)> {
        self.inner.positions.clone()
    }
}

/// A quad-tree lattice of nodes.
#[pyclass(module = "destin", skip_from_py_object)]
#[derive(Clone)]
struct Hierarchy {
    inner: destin_core::Hierarchy,
}

fn view<'a>(pixels: &'a [f64], shape: (usize, usize)) -> PyResult<ImageView<'a>> {
    ImageView::new(shape.0, shape.1, pixels).map_err(py_err)
}

#[pymethods]
impl Hierarchy {
    /// `layers` lists `(rows, cols, centroids)` from the bottom up.
    #[new]
    fn new(layers: Vec<(usize, usize, usize)>, window: (usize, usize)) -> PyResult<Self> {
        let specs: Vec<LayerSpec> = layers.into_iter().map(|(r, c, k)| LayerSpec::new(r, c, k)).collect();
        destin_core::Hierarchy::build(&specs, window, &NodeParams::default())
            .map(|inner| Hierarchy { inner })
            .map_err(py_err)
    }

    /// The 4x4 / 2x2 / 1 lattice with 32, 24 and 32 centroids over a 16x16 window.
    #[staticmethod]
    fn mnist() -> PyResult<Self> {
        destin_core::Hierarchy::mnist(&NodeParams::default())
            .map(|inner| Hierarchy { inner })
            .map_err(py_err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn belief_len(&self) -> usize {
        self.inner.belief_len()
    }

    #[getter]
    fn layer_shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        self.inner
            .layers()
            .iter()
            .map(|l| (l.spec.rows, l.spec.cols, l.spec.centroids, l.spatial_dim()))
            .collect()
    }

    fn feature_len(&self, plan: &ScanPlan) -> usize {
        self.inner.feature_len(&plan.inner)
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    fn freeze(&mut self) {
        self.inner.freeze();
    }

    /// One bottom-up pass; `window` is row-major with the hierarchy's window size.
    fn step(&mut self, window: Vec<f64>, train: bool) -> PyResult<()> {
        self.inner.step(&window, train).map_err(py_err)
    }

    /// Every node's belief, bottom layer first.
    fn beliefs(&self) -> Vec<Vec<f64>> {
        self.inner.beliefs().map(|b| b.values().to_vec()).collect()
    }

    /// Trains on row-major images with pixels in [0, 1].
    #[pyo3(signature = (images, shape, plan, passes=1, seed=0))]
    fn train(
        &mut self,
        py: Python<'_>,
        images: Vec<Vec<f64>>,
        shape: (usize, usize),
        plan: &ScanPlan,
        passes: usize,
        seed: u64,
    ) -> PyResult<()> {
        let views = images.iter().map(|p| view(p, shape)).collect::<PyResult<Vec<_>>>()?;
        let inner = &mut self.inner;
        let plan = &plan.inner;
        py.detach(|| inner.train(&views, plan, passes, seed)).map_err(py_err)
    }

    fn extract_features(&mut self, image: Vec<f64>, shape: (usize, usize), plan: &ScanPlan) -> PyResult<Vec<f64>> {
        let v = view(&image, shape)?;
        self.inner.extract_features(&v, &plan.inner).map(|f| f.0).map_err(py_err)
    }

    fn featurize(
        &self,
        py: Python<'_>,
        images: Vec<Vec<f64>>,
        shape: (usize, usize),
        plan: &ScanPlan,
    ) -> PyResult<Vec<Vec<f64>>> {
        let views = images.iter().map(|p| view(p, shape)).collect::<PyResult<Vec<_>>>()?;
        let inner = &self.inner;
        let plan = &plan.inner;
        py.detach(|| inner.featurize(&views, plan, Execution::Parallel))
            .map(|fs| fs.into_iter().map(|f| f.0).collect())
            .map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        destin_core::Hierarchy::from_json(text)
            .map(|inner| Hierarchy { inner })
            .map_err(py_err)
    }
}

/// Images and labels read from a pair of IDX files.
#[pyclass(module = "destin")]
struct IdxDataset {
    inner: destin_core::mnist::IdxDataset,
}

#[pymethods]
impl IdxDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows, self.inner.cols)
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels.clone()
    }

    fn image(&self, i: usize) -> PyResult<Vec<u8>> {
        self.check(i)?;
        Ok(self.inner.image(i).to_vec())
    }

    /// Pixels of image `i` divided by 255.
    fn normalized(&self, i: usize) -> PyResult<Vec<f64>> {
        self.check(i)?;
        Ok(self.inner.normalized(i))
    }
}

impl IdxDataset {
    fn check(&self, i: usize) -> PyResult<()> {
        if i >= self.inner.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!(
                "image {i} out of range for {} images",
                self.inner.len()
            )));
        }
        Ok(())
    }
}

#[pyfunction]
fn load_idx(images_path: PathBuf, labels_path: PathBuf) -> PyResult<IdxDataset> {
    destin_core::mnist::load_idx(&images_path, &labels_path)
        .map(|inner| IdxDataset { inner })
        .map_err(py_err)
}

/// Test accuracy of one sequence-detection trial.
#[pyfunction]
#[pyo3(signature = (target, centroids, seed, n_train=2000, n_test=1000))]
fn sequence_trial(
    py: Python<'_>,
    target: Vec<u8>,
    centroids: usize,
    seed: u64,
    n_train: usize,
    n_test: usize,
) -> PyResult<f64> {
    let task = SequenceTask::new(target).map_err(py_err)?;
    let cfg = BenchConfig {
        n_train,
        n_test,
        ..BenchConfig::default()
    };
    cfg.validate().map_err(py_err)?;
    py.detach(|| seqbench::run_trial(&task, centroids, &cfg, seed)).map_err(py_err)
}

/// `(L, K, rep, accuracy)` for every cell of the grid.
#[pyfunction]
#[pyo3(signature = (lengths, centroids, repetitions, seed, n_train=2000, n_test=1000))]
fn sequence_benchmark(
    py: Python<'_>,
    lengths: Vec<usize>,
    centroids: Vec<usize>,
    repetitions: usize,
    seed: u64,
    n_train: usize,
    n_test: usize,
) -> PyResult<Vec<(usize, usize, usize, f64)>> {
    let cfg = BenchConfig {
        lengths,
        centroids,
        repetitions,
        n_train,
        n_test,
        ..BenchConfig::default()
    };
    let result = py
        .detach(|| seqbench::run_benchmark(&cfg, seed, Execution::Parallel))
        .map_err(py_err)?;
    Ok(result
        .records
        .iter()
        .map(|r| (r.length, r.centroids, r.rep, r.accuracy))
        .collect())
}

/// Runs the MNIST pipeline (or one stage) from a TOML config; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (data_dir, out_dir, config_toml="", stage="all"))]
fn run_mnist(
    py: Python<'_>,
    data_dir: PathBuf,
    out_dir: PathBuf,
    config_toml: &str,
    stage: &str,
) -> PyResult<Option<String>> {
    let cfg = RunConfig::from_toml(config_toml).map_err(py_err)?;
    let stage = Stage::parse(stage).ok_or_else(|| PyValueError::new_err(format!("unknown stage '{stage}'")))?;
    let ctx = RunContext {
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
    };
    let report = py
        .detach(|| pipeline::run_pipeline(&cfg.mnist, &ctx, &data_dir, &out_dir, stage, Execution::Parallel))
        .map_err(py_err)?;
    report
        .map(|r| serde_json::to_string_pretty(&r).map_err(|e| PyValueError::new_err(e.to_string())))
        .transpose()
}

/// Child seed derived from a parent seed and a label.
#[pyfunction]
fn derive_seed(parent: u64, label: &str) -> u64 {
    destin_core::seed::derive_seed(parent, label)
}

#[pymodule]
fn destin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Node>()?;
    m.add_class::<ScanPlan>()?;
    m.add_class::<Hierarchy>()?;
    m.add_class::<IdxDataset>()?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_trial, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(run_mnist, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
