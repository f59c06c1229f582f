//! DeSTIN hierarchies: quad-tree lattices of recurrent clustering nodes.
//!
//! Layer 0 tiles the viewing window into equal non-overlapping patches, one
//! per node. Every higher layer halves the grid in both directions and each of
//! its nodes observes the concatenated beliefs of its four children, taken
//! from the same movement, in NW, NE, SW, SE order.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::{BeliefState, Node, NodeParams};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub rows: usize,
    pub cols: usize,
    pub centroids: usize,
}

impl LayerSpec {
    pub const fn new(rows: usize, cols: usize, centroids: usize) -> Self {
        LayerSpec {
            rows,
            cols,
            centroids,
        }
    }

    pub fn nodes(&self) -> usize {
        self.rows * self.cols
    }
}

/// The three-layer lattice used for MNIST: 4x4, 2x2 and 1 nodes with 32, 24
/// and 32 centroids over a 16x16 window.
pub const MNIST_LAYERS: [LayerSpec; 3] = [
    LayerSpec::new(4, 4, 32),
    LayerSpec::new(2, 2, 24),
    LayerSpec::new(1, 1, 32),
];
pub const MNIST_WINDOW: (usize, usize) = (16, 16);

/// Whether nodes of one layer are stepped on the rayon pool or in a loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    nodes: Vec<Node>,
}

impl Layer {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Fan-in of every node in this layer, in scalars.
    pub fn spatial_dim(&self) -> usize {
        self.nodes[0].config().spatial_dim
    }
}

/// Borrowed row-major grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct ImageView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub pixels: &'a [f64],
}

impl<'a> ImageView<'a> {
    pub fn new(rows: usize, cols: usize, pixels: &'a [f64]) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "image pixels",
                expected: rows * cols,
                actual: pixels.len(),
            });
        }
        Ok(ImageView { rows, cols, pixels })
    }

    fn copy_window(&self, top: usize, left: usize, size: (usize, usize), out: &mut Vec<f64>) {
        out.clear();
        for r in top..top + size.0 {
            let start = r * self.cols + left;
            out.extend_from_slice(&self.pixels[start..start + size.1]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanOrder {
    /// Left to right on every row, rows top to bottom.
    #[default]
    Raster,
    /// Alternating direction on successive rows, so consecutive movements are always adjacent.
    Zigzag,
}

/// The ordered window placements ("movements") over an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub image: (usize, usize),
    pub window: (usize, usize),
    /// Top-left corners, in visiting order.
    pub positions: Vec<(usize, usize)>,
    pub sample_interval: usize,
}

impl ScanPlan {
    pub fn new(
        image: (usize, usize),
        window: (usize, usize),
        stride: usize,
        sample_interval: usize,
        order: ScanOrder,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("stride", "must be >= 1"));
        }
        if sample_interval == 0 {
            return Err(Error::config("sample_interval", "must be >= 1"));
        }
        if window.0 == 0 || window.1 == 0 || window.0 > image.0 || window.1 > image.1 {
            return Err(Error::config(
                "window",
                format!(
                    "{}x{} window does not fit in a {}x{} image",
                    window.0, window.1, image.0, image.1
                ),
            ));
        }
        let rows: Vec<usize> = (0..=image.0 - window.0).step_by(stride).collect();
        let cols: Vec<usize> = (0..=image.1 - window.1).step_by(stride).collect();
        let mut positions = Vec::with_capacity(rows.len() * cols.len());
        for (i, &r) in rows.iter().enumerate() {
            let reversed = order == ScanOrder::Zigzag && i % 2 == 1;
            if reversed {
                positions.extend(cols.iter().rev().map(|&c| (r, c)));
            } else {
                positions.extend(cols.iter().map(|&c| (r, c)));
            }
        }
        Ok(ScanPlan {
            image,
            window,
            positions,
            sample_interval,
        })
    }

    pub fn movements(&self) -> usize {
        self.positions.len()
    }

    /// Movement indices at which beliefs are sampled: 0, interval, 2*interval, ...
    pub fn sample_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positions.len()).step_by(self.sample_interval)
    }

    pub fn samples(&self) -> usize {
        self.positions.len().div_ceil(self.sample_interval)
    }

    fn is_sampled(&self, movement: usize) -> bool {
        movement.is_multiple_of(self.sample_interval)
    }
}

/// All nodes' beliefs at the sampled movements, node order fixed: layer 0
/// row-major, then layer 1, up to the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    layers: Vec<Layer>,
    window: (usize, usize),
    patch: (usize, usize),
}

impl Hierarchy {
    /// Builds a lattice whose bottom layer tiles `window`.
    pub fn build(specs: &[LayerSpec], window: (usize, usize), params: &NodeParams) -> Result<Self> {
        let Some(bottom) = specs.first() else {
            return Err(Error::config("layers", "at least one layer is required"));
        };
        if bottom.rows == 0 || bottom.cols == 0 {
            return Err(Error::config("layers[0]", "grid must be non-empty"));
        }
        if !window.0.is_multiple_of(bottom.rows) || !window.1.is_multiple_of(bottom.cols) {
            return Err(Error::config(
                "window",
                format!(
                    "{}x{} window cannot be tiled by a {}x{} node grid",
                    window.0, window.1, bottom.rows, bottom.cols
                ),
            ));
        }
        for (i, pair) in specs.windows(2).enumerate() {
            let (child, parent) = (pair[0], pair[1]);
            if child.rows != 2 * parent.rows || child.cols != 2 * parent.cols {
                return Err(Error::config(
                    format!("layers[{}]", i + 1),
                    format!(
                        "a {}x{} grid must sit above a grid of exactly twice its size, found {}x{}",
                        parent.rows, parent.cols, child.rows, child.cols
                    ),
                ));
            }
        }
        let top = specs[specs.len() - 1];
        if (top.rows, top.cols) != (1, 1) {
            return Err(Error::config(
                format!("layers[{}]", specs.len() - 1),
                format!("top layer must be 1x1, found {}x{}", top.rows, top.cols),
            ));
        }

        let patch = (window.0 / bottom.rows, window.1 / bottom.cols);
        let mut layers = Vec::with_capacity(specs.len());
        let mut spatial_dim = patch.0 * patch.1;
        for (i, spec) in specs.iter().enumerate() {
            let cfg = params.node_config(spec.centroids, spatial_dim);
            cfg.validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::Config {
                    field: format!("layers[{i}].{field}"),
                    reason,
                },
                other => other,
            })?;
            let nodes = (0..spec.nodes())
                .map(|_| Node::new(cfg.clone()))
                .collect::<Result<Vec<_>>>()?;
            layers.push(Layer { spec: *spec, nodes });
            spatial_dim = 4 * spec.centroids;
        }
        Ok(Hierarchy {
            layers,
            window,
            patch,
        })
    }

    /// The lattice used for MNIST.
    pub fn mnist(params: &NodeParams) -> Result<Self> {
        Hierarchy::build(&MNIST_LAYERS, MNIST_WINDOW, params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn patch(&self) -> (usize, usize) {
        self.patch
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.nodes.len()).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.layers.iter().flat_map(|l| l.nodes.iter())
    }

    /// Total length of one snapshot of every node's belief.
    pub fn belief_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.nodes.len() * l.spec.centroids)
            .sum()
    }

    pub fn feature_len(&self, plan: &ScanPlan) -> usize {
        plan.samples() * self.belief_len()
    }

    /// Centroid counts of every belief block in a feature row, in order.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::repeat_n(l.spec.centroids, l.nodes.len()))
            .collect()
    }

    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.nodes.iter_mut().for_each(Node::reset);
        }
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &BeliefState> {
        self.nodes().map(Node::belief)
    }

    pub fn write_beliefs(&self, out: &mut Vec<f64>) {
        for b in self.beliefs() {
            out.extend_from_slice(b.values());
        }
    }

    /// One bottom-up pass over a window of pixels.
    pub fn step(&mut self, window: &[f64], train: bool) -> Result<()> {
        self.step_with(window, train, Execution::Sequential)
    }

    pub fn step_with(&mut self, window: &[f64], train: bool, exec: Execution) -> Result<()> {
        let expected = self.window.0 * self.window.1;
        if window.len() != expected {
            return Err(Error::LengthMismatch {
                what: "window pixels",
                expected,
                actual: window.len(),
            });
        }
        for l in 0..self.layers.len() {
            let inputs = if l == 0 {
                self.patches(window)
            } else {
                child_beliefs(&self.layers[l - 1], self.layers[l].spec)
            };
            let nodes = &mut self.layers[l].nodes;
            let step = |(node, input): (&mut Node, &Vec<f64>)| -> Result<()> {
                node.set_train_mode(train);
                node.step(input).map(|_| ())
            };
            match exec {
                Execution::Sequential => nodes.iter_mut().zip(&inputs).try_for_each(step)?,
                Execution::Parallel => nodes.par_iter_mut().zip(&inputs).try_for_each(step)?,
            }
        }
        Ok(())
    }

    fn patches(&self, window: &[f64]) -> Vec<Vec<f64>> {
        let spec = self.layers[0].spec;
        let (ph, pw) = self.patch;
        let mut out = Vec::with_capacity(spec.nodes());
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let mut patch = Vec::with_capacity(ph * pw);
                for pr in r * ph..(r + 1) * ph {
                    let start = pr * self.window.1 + c * pw;
                    patch.extend_from_slice(&window[start..start + pw]);
                }
                out.push(patch);
            }
        }
        out
    }

    /// Beliefs of every node sampled along `plan`; no centroid is modified.
    pub fn extract_features(&mut self, image: &ImageView<'_>, plan: &ScanPlan) -> Result<FeatureVector> {
        self.check_plan(image, plan)?;
        self.reset();
        let mut out = Vec::with_capacity(self.feature_len(plan));
        let mut buf = Vec::with_capacity(self.window.0 * self.window.1);
        for (t, &(top, left)) in plan.positions.iter().enumerate() {
            image.copy_window(top, left, self.window, &mut buf);
            self.step(&buf, false)?;
            if plan.is_sampled(t) {
                self.write_beliefs(&mut out);
            }
        }
        Ok(FeatureVector(out))
    }

    /// Features for many images; each worker steps a private copy of the
    /// frozen hierarchy.
    pub fn featurize(
        &self,
        images: &[ImageView<'_>],
        plan: &ScanPlan,
        exec: Execution,
    ) -> Result<Vec<FeatureVector>> {
        match exec {
            Execution::Sequential => {
                let mut h = self.clone();
                images.iter().map(|img| h.extract_features(img, plan)).collect()
            }
            Execution::Parallel => images
                .par_iter()
                .map_init(|| self.clone(), |h, img| h.extract_features(img, plan))
                .collect(),
        }
    }

    /// Online training: every image is one belief-reset sequence of movements.
    /// The image order of each pass is a seeded shuffle.
    pub fn train(
        &mut self,
        images: &[ImageView<'_>],
        plan: &ScanPlan,
        passes: usize,
        seed: u64,
    ) -> Result<()> {
        if images.is_empty() {
            return Err(Error::config("training images", "dataset is empty"));
        }
        for img in images {
            self.check_plan(img, plan)?;
        }
        if passes == 0 {
            return Ok(());
        }
        let mut buf = Vec::with_capacity(self.window.0 * self.window.1);
        for pass in 0..passes {
            let mut order: Vec<usize> = (0..images.len()).collect();
            order.shuffle(&mut seed::child_rng(seed, &format!("pass{pass}")));
            for &i in &order {
                let img = &images[i];
                self.reset();
                for &(top, left) in &plan.positions {
                    img.copy_window(top, left, self.window, &mut buf);
                    self.step(&buf, true)?;
                }
            }
        }
        self.reset();
        Ok(())
    }

    /// Switches every node to inference mode.
    pub fn freeze(&mut self) {
        for layer in &mut self.layers {
            layer.nodes.iter_mut().for_each(|n| n.set_train_mode(false));
        }
    }

    fn check_plan(&self, image: &ImageView<'_>, plan: &ScanPlan) -> Result<()> {
        if plan.window != self.window {
            return Err(Error::config(
                "scan.window",
                format!(
                    "plan window {:?} differs from hierarchy window {:?}",
                    plan.window, self.window
                ),
            ));
        }
        if (image.rows, image.cols) != plan.image {
            return Err(Error::Input(format!(
                "image is {}x{}, plan expects {}x{}",
                image.rows, image.cols, plan.image.0, plan.image.1
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::snapshot::to_json(crate::snapshot::Kind::Hierarchy, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::snapshot::from_json(crate::snapshot::Kind::Hierarchy, text)
    }
}

fn child_beliefs(children: &Layer, parent: LayerSpec) -> Vec<Vec<f64>> {
    let k = children.spec.centroids;
    let cols = children.spec.cols;
    let mut out = Vec::with_capacity(parent.nodes());
    for r in 0..parent.rows {
        for c in 0..parent.cols {
            let mut input = Vec::with_capacity(4 * k);
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let child = &children.nodes[(2 * r + dr) * cols + 2 * c + dc];
                input.extend_from_slice(child.belief().values());
            }
            out.push(input);
        }
    }
    out
}
