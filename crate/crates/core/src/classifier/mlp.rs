use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected network: tanh hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer parameter gradients, same shapes as [`Dense`].
pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::config(
            "layer_sizes",
            format!("need input, at least one hidden layer and output; got {sizes:?}"),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::config("layer_sizes", format!("sizes must be >= 1; got {sizes:?}")));
    }
    if sizes[sizes.len() - 1] < 2 {
        return Err(Error::config("layer_sizes", "output layer needs at least two classes"));
    }
    Ok(())
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = seed::rng(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || {
                    rng.random_range(-bound..bound)
                });
                Dense {
                    weights,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.nrows()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::LengthMismatch {
                what: "classifier input",
                expected: self.inputs(),
                actual: x.len(),
            });
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward_batch(view).into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.activations(x).pop().expect("at least one layer")
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::argmax(&self.forward(x)?))
    }

    /// Outputs of every layer; the last is the softmax.
    pub(crate) fn activations(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            let mut z = input.dot(&layer.weights);
            z += &layer.bias;
            if i == last {
                softmax_rows(&mut z);
            } else {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `d_logits` (loss gradient w.r.t. the pre-softmax output).
    pub(crate) fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        acts: &[Array2<f64>],
        d_logits: Array2<f64>,
    ) -> Gradients {
        let mut grads: Gradients = Vec::with_capacity(self.layers.len());
        let mut delta = d_logits;
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut d_prev = delta.dot(&self.layers[i].weights.t());
                Zip::from(&mut d_prev)
                    .and(&acts[i - 1])
                    .for_each(|d, &a| *d *= 1.0 - a * a);
                delta = d_prev;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        grads
    }

    /// Mean cross-entropy and its parameter gradients over a batch.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> (f64, Gradients) {
        let acts = self.activations(x);
        let probs = &acts[acts.len() - 1];
        let n = labels.len() as f64;
        let loss = cross_entropy(probs.view(), labels);
        let mut d = probs.clone();
        for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
        }
        d /= n;
        (loss, self.backward(x, &acts, d))
    }
}

pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Mean negative log-likelihood of `labels` under row-wise probabilities.
pub fn cross_entropy(probs: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let p = row[y];
            if p.is_nan() {
                f64::NAN
            } else {
                -p.max(f64::MIN_POSITIVE).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Dataset { features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "feature row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        let features = Array2::from_shape_vec((rows.len(), cols), flat).expect("shape checked");
        Dataset::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub(crate) fn batch(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.features.select(Axis(0), idx);
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }
}

/// Mini-batch SGD with momentum and `lr / (1 + decay * epoch)` schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch sample order; set by the caller, never read from config.
    #[serde(skip)]
    pub shuffle_seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: 0.01,
            lr_decay: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            shuffle_seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay >= 0.0) {
            return Err(Error::config("lr_decay", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * epoch as f64)
    }

    /// Sample order of every mini-batch in `epoch`.
    pub(crate) fn batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::child_rng(self.shuffle_seed, &format!("epoch{epoch}")));
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Momentum buffers shaped like a model's parameters.
#[derive(Debug, Clone)]
pub(crate) struct Velocity(Gradients);

impl Velocity {
    pub(crate) fn new(model: &Mlp) -> Self {
        Velocity(
            model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        )
    }

    pub(crate) fn apply(&mut self, model: &mut Mlp, grads: &Gradients, lr: f64, momentum: f64) {
        for ((layer, (vw, vb)), (gw, gb)) in model.layers.iter_mut().zip(&mut self.0).zip(grads) {
            Zip::from(&mut *vw).and(gw).for_each(|v, &g| *v = momentum * *v - lr * g);
            Zip::from(&mut *vb).and(gb).for_each(|v, &g| *v = momentum * *v - lr * g);
            layer.weights += &*vw;
            layer.bias += &*vb;
        }
    }
}

/// Trains one network on mean cross-entropy.
pub fn mlp_train(model: &mut Mlp, data: &Dataset, spec: &TrainSpec) -> Result<Vec<EpochStats>> {
    super::ensemble::train_members(std::slice::from_mut(model), data, spec, 0.0)
}

pub fn accuracy(model: &Mlp, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let probs = model.forward_batch(data.features.view());
    let hits = probs
        .rows()
        .into_iter()
        .zip(&data.labels)
        .filter(|(row, &y)| crate::argmax(row.as_slice().expect("contiguous")) == y)
        .count();
    hits as f64 / data.len() as f64
}

pub(crate) fn row_accuracy(probs: &Array2<f64>, labels: &[usize]) -> usize {
    probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| crate::argmax(&row.to_vec()) == y)
        .count()
}
