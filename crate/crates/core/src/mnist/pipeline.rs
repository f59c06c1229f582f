//! End-to-end MNIST run: hierarchy training, featurisation, ensemble training
//! and evaluation. Each stage writes its artifacts to the output directory and
//! later stages read them back, so any stage can be rerun on its own.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::FeatureTable;
use super::idx::{load_idx, IdxDataset};
use crate::classifier::{write_curve_csv, Dataset, Ensemble, EnsembleSpec, Standardizer};
use crate::error::{Error, Result};
use crate::hierarchy::{Execution, Hierarchy, ImageView, LayerSpec, ScanOrder, ScanPlan, MNIST_LAYERS, MNIST_WINDOW};
use crate::node::NodeParams;
use crate::seed;

pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const TRAIN_FEATURES_FILE: &str = "features-train.bin";
pub const TEST_FEATURES_FILE: &str = "features-test.bin";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const CURVE_FILE: &str = "training-curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

pub const MNIST_IMAGE: (usize, usize) = (28, 28);

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub window: (usize, usize),
    pub stride: usize,
    pub sample_interval: usize,
    pub order: ScanOrder,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            window: MNIST_WINDOW,
            stride: 1,
            sample_interval: 12,
            order: ScanOrder::Raster,
        }
    }
}

impl ScanConfig {
    pub fn plan(&self, image: (usize, usize)) -> Result<ScanPlan> {
        ScanPlan::new(image, self.window, self.stride, self.sample_interval, self.order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Images (after a seeded shuffle of the training set) used to train the hierarchy.
    pub n_hierarchy_train: usize,
    /// Training images featurised for the classifier.
    pub n_classifier_train: usize,
    pub n_test: usize,
    pub hierarchy_passes: usize,
    pub scan: ScanConfig,
    pub layers: Vec<LayerSpec>,
    pub node: NodeParams,
    pub ensemble: EnsembleSpec,
    /// Rescale every feature to zero mean and unit variance before classification.
    pub standardize: bool,
    /// Also write the feature tables as CSV.
    pub feature_csv: bool,
}

impl Default for PipelineConfig {
    /// The desk-scale profile.
    fn default() -> Self {
        PipelineConfig {
            n_hierarchy_train: 2000,
            n_classifier_train: 5000,
            n_test: 1000,
            hierarchy_passes: 1,
            scan: ScanConfig::default(),
            layers: MNIST_LAYERS.to_vec(),
            node: NodeParams::default(),
            ensemble: EnsembleSpec::default(),
            standardize: true,
            feature_csv: false,
        }
    }
}

impl PipelineConfig {
    /// 15,000 hierarchy images, the full training and test sets, 11 members.
    pub fn full_scale() -> Self {
        PipelineConfig {
            n_hierarchy_train: 15_000,
            n_classifier_train: 60_000,
            n_test: 10_000,
            ensemble: EnsembleSpec {
                members: 11,
                ..EnsembleSpec::default()
            },
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hierarchy_train == 0 {
            return Err(Error::config("mnist.n_hierarchy_train", "must be >= 1"));
        }
        if self.n_classifier_train == 0 {
            return Err(Error::config("mnist.n_classifier_train", "must be >= 1"));
        }
        self.ensemble.validate()?;
        Hierarchy::build(&self.layers, self.scan.window, &self.node)?;
        Ok(())
    }
}

/// Run identity stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunContext {
    pub config_hash: String,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub train_selection: u64,
    pub test_selection: u64,
    pub hierarchy: u64,
    pub ensemble: u64,
    pub ensemble_shuffle: u64,
}

impl StageSeeds {
    pub fn derive(master: u64) -> Self {
        StageSeeds {
            train_selection: seed::derive_seed(master, "mnist/select-train"),
            test_selection: seed::derive_seed(master, "mnist/select-test"),
            hierarchy: seed::derive_seed(master, "mnist/hierarchy"),
            ensemble: seed::derive_seed(master, "mnist/ensemble"),
            ensemble_shuffle: seed::derive_seed(master, "mnist/ensemble-shuffle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub master_seed: u64,
    pub seeds: StageSeeds,
    pub n_hierarchy_train: usize,
    pub n_classifier_train: usize,
    pub n_test: usize,
    pub movements_per_image: usize,
    pub samples_per_image: usize,
    pub beliefs_per_sample: usize,
    pub feature_dim: usize,
    pub ensemble_members: usize,
    pub train_accuracy: f64,
    pub accuracy: f64,
    /// `confusion_matrix[true][predicted]`
    pub confusion_matrix: Vec<Vec<usize>>,
    pub per_class_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Hierarchy,
    Featurize,
    Classify,
    Evaluate,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Hierarchy => "hierarchy",
            Stage::Featurize => "featurize",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
            Stage::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Stage::Hierarchy, Stage::Featurize, Stage::Classify, Stage::Evaluate, Stage::All]
            .into_iter()
            .find(|st| st.name() == s)
    }
}

/// Wall-clock seconds per stage; kept out of the report so reports stay reproducible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

pub struct Pipeline<'a> {
    pub cfg: &'a PipelineConfig,
    pub ctx: &'a RunContext,
    pub data_dir: &'a Path,
    pub out_dir: &'a Path,
    pub exec: Execution,
    seeds: StageSeeds,
}

/// Runs `stage` (or all stages) and returns the report when evaluation ran.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    ctx: &RunContext,
    data_dir: &Path,
    out_dir: &Path,
    stage: Stage,
    exec: Execution,
) -> Result<Option<Report>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let p = Pipeline {
        cfg,
        ctx,
        data_dir,
        out_dir,
        exec,
        seeds: StageSeeds::derive(ctx.master_seed),
    };
    let mut timings = Timings::default();
    let timed = |st: Stage, timings: &mut Timings| -> Result<Option<Report>> {
        let start = Instant::now();
        let out = match st {
            Stage::Hierarchy => p.train_hierarchy().map(|_| None),
            Stage::Featurize => p.featurize().map(|_| None),
            Stage::Classify => p.classify().map(|_| None),
            Stage::Evaluate => p.evaluate().map(Some),
            Stage::All => unreachable!(),
        }
        .map_err(|e| Error::Stage {
            stage: st.name(),
            source: Box::new(e),
        })?;
        let secs = start.elapsed().as_secs_f64();
        log::info!("stage {} finished in {secs:.1}s", st.name());
        timings.stages.push((st.name().to_string(), secs));
        Ok(out)
    };
    let report = match stage {
        Stage::All => {
            let mut last = None;
            for st in [Stage::Hierarchy, Stage::Featurize, Stage::Classify, Stage::Evaluate] {
                last = timed(st, &mut timings)?;
            }
            last
        }
        st => timed(st, &mut timings)?,
    };
    let path = out_dir.join(TIMINGS_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&timings)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn select(n_available: usize, n: usize, seed: u64, field: &str) -> Result<Vec<usize>> {
    if n > n_available {
        return Err(Error::config(
            field,
            format!("requested {n} images but only {n_available} are available"),
        ));
    }
    let mut idx: Vec<usize> = (0..n_available).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx.truncate(n);
    Ok(idx)
}

fn images_f64(data: &IdxDataset, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| data.normalized(i)).collect()
}

fn views<'a>(data: &IdxDataset, pixels: &'a [Vec<f64>]) -> Result<Vec<ImageView<'a>>> {
    pixels
        .iter()
        .map(|p| ImageView::new(data.rows, data.cols, p))
        .collect()
}

impl Pipeline<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn require(&self, stage: &'static str, requires: &'static str, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingPrerequisite {
                stage,
                requires,
                path,
            });
        }
        Ok(path)
    }

    fn load_train(&self) -> Result<IdxDataset> {
        load_idx(&self.data_dir.join(TRAIN_IMAGES), &self.data_dir.join(TRAIN_LABELS))
    }

    fn load_test(&self) -> Result<IdxDataset> {
        load_idx(&self.data_dir.join(TEST_IMAGES), &self.data_dir.join(TEST_LABELS))
    }

    fn train_hierarchy(&self) -> Result<Hierarchy> {
        let data = self.load_train()?;
        let idx = select(
            data.len(),
            self.cfg.n_hierarchy_train,
            self.seeds.train_selection,
            "mnist.n_hierarchy_train",
        )?;
        let pixels = images_f64(&data, &idx);
        let images = views(&data, &pixels)?;
        let plan = self.cfg.scan.plan((data.rows, data.cols))?;
        let mut h = Hierarchy::build(&self.cfg.layers, self.cfg.scan.window, &self.cfg.node)?;
        h.train(&images, &plan, self.cfg.hierarchy_passes, self.seeds.hierarchy)?;
        h.freeze();
        crate::snapshot::write_file(&self.path(HIERARCHY_FILE), crate::snapshot::Kind::Hierarchy, &h)?;
        Ok(h)
    }

    fn featurize_subset(&self, h: &Hierarchy, data: &IdxDataset, idx: &[usize], file: &str) -> Result<()> {
        let plan = self.cfg.scan.plan((data.rows, data.cols))?;
        let dim = h.feature_len(&plan);
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
        let mut values = Array2::<f64>::zeros((idx.len(), dim));
        // chunked so only one chunk of f64 images is alive at a time
        for (chunk_no, chunk) in idx.chunks(1000).enumerate() {
            let pixels = images_f64(data, chunk);
            let images = views(data, &pixels)?;
            let feats = h.featurize(&images, &plan, self.exec)?;
            for (j, f) in feats.into_iter().enumerate() {
                values
                    .row_mut(chunk_no * 1000 + j)
                    .assign(&ndarray::ArrayView1::from(f.values()));
            }
        }
        let table = FeatureTable::new(labels, values)?;
        table.write_binary(&self.path(file))?;
        if self.cfg.feature_csv {
            table.write_csv(&self.path(file).with_extension("csv"))?;
        }
        Ok(())
    }

    fn featurize(&self) -> Result<()> {
        let hpath = self.require("featurize", "hierarchy", HIERARCHY_FILE)?;
        let h: Hierarchy = crate::snapshot::read_file(&hpath, crate::snapshot::Kind::Hierarchy)?;
        let train = self.load_train()?;
        let idx = select(
            train.len(),
            self.cfg.n_classifier_train,
            self.seeds.train_selection,
            "mnist.n_classifier_train",
        )?;
        self.featurize_subset(&h, &train, &idx, TRAIN_FEATURES_FILE)?;
        drop(train);
        let test = self.load_test()?;
        let idx = select(test.len(), self.cfg.n_test, self.seeds.test_selection, "mnist.n_test")?;
        self.featurize_subset(&h, &test, &idx, TEST_FEATURES_FILE)
    }

    fn dataset(table: FeatureTable) -> Result<Dataset> {
        Dataset::new(table.values, table.labels.into_iter().map(usize::from).collect())
    }

    fn classify(&self) -> Result<Ensemble> {
        let path = self.require("classify", "featurize", TRAIN_FEATURES_FILE)?;
        let mut data = Self::dataset(FeatureTable::read_binary(&path)?)?;
        let mut spec = self.cfg.ensemble.clone();
        spec.seed = self.seeds.ensemble;
        spec.train.shuffle_seed = self.seeds.ensemble_shuffle;
        let mut ens = Ensemble::new(data.features.ncols(), 10, &spec)?;
        if self.cfg.standardize {
            let s = Standardizer::fit(data.features.view());
            s.apply(&mut data.features);
            ens.standardizer = Some(s);
        }
        let curve = ens.ncl_train(&data, &spec)?;
        let cpath = self.path(CURVE_FILE);
        std::fs::write(&cpath, write_curve_csv(&curve)).map_err(|e| Error::io(&cpath, e))?;
        crate::snapshot::write_file(&self.path(ENSEMBLE_FILE), crate::snapshot::Kind::Ensemble, &ens)?;
        Ok(ens)
    }

    fn evaluate(&self) -> Result<Report> {
        let epath = self.require("evaluate", "classify", ENSEMBLE_FILE)?;
        let ens: Ensemble = crate::snapshot::read_file(&epath, crate::snapshot::Kind::Ensemble)?;
        let tpath = self.require("evaluate", "featurize", TEST_FEATURES_FILE)?;
        let test = Self::dataset(FeatureTable::read_binary(&tpath)?)?;
        let train_path = self.require("evaluate", "featurize", TRAIN_FEATURES_FILE)?;
        let train = Self::dataset(FeatureTable::read_binary(&train_path)?)?;

        let classes = ens.classes();
        let mut confusion = vec![vec![0usize; classes]; classes];
        let predicted = ens.predict_batch(test.features.view());
        for (&y, &p) in test.labels.iter().zip(&predicted) {
            confusion[y][p] += 1;
        }
        let hits: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        let train_hits = ens
            .predict_batch(train.features.view())
            .iter()
            .zip(&train.labels)
            .filter(|(p, y)| p == y)
            .count();

        let plan = self.cfg.scan.plan(MNIST_IMAGE)?;
        let h = Hierarchy::build(&self.cfg.layers, self.cfg.scan.window, &self.cfg.node)?;
        let report = Report {
            config_hash: self.ctx.config_hash.clone(),
            master_seed: self.ctx.master_seed,
            seeds: self.seeds.clone(),
            n_hierarchy_train: self.cfg.n_hierarchy_train,
            n_classifier_train: train.len(),
            n_test: test.len(),
            movements_per_image: plan.movements(),
            samples_per_image: plan.samples(),
            beliefs_per_sample: h.belief_len(),
            feature_dim: test.features.ncols(),
            ensemble_members: ens.members().len(),
            train_accuracy: train_hits as f64 / train.len().max(1) as f64,
            accuracy: hits as f64 / test.len().max(1) as f64,
            confusion_matrix: confusion,
            per_class_accuracy: per_class,
        };
        let rpath = self.path(REPORT_FILE);
        std::fs::write(&rpath, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&rpath, e))?;
        Ok(report)
    }
}
