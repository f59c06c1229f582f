//! Ensembles trained with negative correlation learning.
//!
//! Member `i` minimises, per sample,
//!
//! ```text
//! E_i = CE(p_i, y) + lambda * (p_i - p_mean) . sum_{j != i} (p_j - p_mean)
//!     = CE(p_i, y) - lambda * |p_i - p_mean|^2
//! ```
//!
//! where `p` are softmax outputs and `p_mean` the ensemble mean. The gradient
//! is exact: `p_mean` includes `p_i`, which contributes the `(1 - 1/M)` factor.
//! Members share the batch order and synchronise once per batch.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{cross_entropy, row_accuracy, Dataset, EpochStats, Gradients, Mlp, TrainSpec, Velocity};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: usize,
    pub ncl_lambda: f64,
    /// Hidden layer widths of every member.
    pub hidden: Vec<usize>,
    pub train: TrainSpec,
    /// Member `i` is initialised from `derive_seed(seed, "member{i}")`; set by the caller.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            members: 3,
            ncl_lambda: 0.5,
            hidden: vec![128, 64],
            train: TrainSpec::default(),
            seed: 0,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::config("members", "must be >= 1"));
        }
        if !(self.ncl_lambda.is_finite() && self.ncl_lambda >= 0.0) {
            return Err(Error::config("ncl_lambda", "must be finite and >= 0"));
        }
        if self.ncl_lambda > 1.0 {
            log::warn!(
                "ncl_lambda = {} lies outside [0, 1]; training may be unstable",
                self.ncl_lambda
            );
        }
        if self.hidden.is_empty() {
            return Err(Error::config("hidden", "at least one hidden layer is required"));
        }
        self.train.validate()
    }

    pub fn member_seed(&self, i: usize) -> u64 {
        seed::derive_seed(self.seed, &format!("member{i}"))
    }
}

/// Per-feature affine rescaling to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation; 0 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            Zip::from(&mut var)
                .and(&row)
                .and(&mean)
                .for_each(|v, &a, &m| *v += (a - m) * (a - m));
        }
        let scale = var
            .iter()
            .map(|&v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Standardizer {
            mean: mean.to_vec(),
            scale,
        }
    }

    pub fn apply(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<Mlp>,
    /// Applied to inputs before every member, when present.
    pub standardizer: Option<Standardizer>,
}

impl Ensemble {
    pub fn new(inputs: usize, classes: usize, spec: &EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        let mut sizes = vec![inputs];
        sizes.extend(&spec.hidden);
        sizes.push(classes);
        let members = (0..spec.members)
            .map(|i| Mlp::new(&sizes, spec.member_seed(i)))
            .collect::<Result<_>>()?;
        Ok(Ensemble {
            members,
            standardizer: None,
        })
    }

    pub fn from_members(members: Vec<Mlp>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::config("members", "must be >= 1"));
        }
        Ok(Ensemble {
            members,
            standardizer: None,
        })
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn classes(&self) -> usize {
        self.members[0].classes()
    }

    /// Negative-correlation training of all members at once; `ncl_lambda = 0`
    /// reproduces independent training exactly.
    pub fn ncl_train(&mut self, data: &Dataset, spec: &EnsembleSpec) -> Result<Vec<EpochStats>> {
        spec.validate()?;
        if spec.ncl_lambda > 0.0 && self.members.len() < 2 {
            log::warn!("negative correlation penalty is identically zero for a single member");
        }
        train_members(&mut self.members, data, &spec.train, spec.ncl_lambda)
    }

    /// Mean of member class probabilities for each row.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scaled;
        let x = match &self.standardizer {
            Some(s) => {
                let mut owned = x.to_owned();
                s.apply(&mut owned);
                scaled = owned;
                scaled.view()
            }
            None => x,
        };
        let mut mean = Array2::<f64>::zeros((x.nrows(), self.classes()));
        for m in &self.members {
            mean += &m.forward_batch(x);
        }
        mean / self.members.len() as f64
    }

    /// Argmax of the mean member probability, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let inputs = self.members[0].inputs();
        if x.len() != inputs {
            return Err(Error::LengthMismatch {
                what: "classifier input",
                expected: inputs,
                actual: x.len(),
            });
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let p = self.predict_proba(view);
        Ok(crate::argmax(p.row(0).as_slice().expect("contiguous")))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.predict_proba(x)
            .rows()
            .into_iter()
            .map(|r| crate::argmax(&r.to_vec()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        crate::snapshot::to_json(crate::snapshot::Kind::Ensemble, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::snapshot::from_json(crate::snapshot::Kind::Ensemble, text)
    }
}

/// Loss gradient with respect to member `i`'s pre-softmax output, given every
/// member's probabilities on the batch. Also returns the loss.
fn member_output_gradient(
    probs: &[Array2<f64>],
    i: usize,
    labels: &[usize],
    lambda: f64,
) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let p = &probs[i];
    let mut loss = cross_entropy(p.view(), labels);
    let mut d = p.clone();
    for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    if lambda > 0.0 && probs.len() > 1 {
        let m = probs.len() as f64;
        let mut mean = Array2::<f64>::zeros(p.raw_dim());
        for q in probs {
            mean += q;
        }
        mean /= m;
        let diff = p - &mean;
        loss -= lambda * diff.mapv(|v| v * v).sum() / n;
        // dE/dp = -2 lambda (1 - 1/M) (p - mean); chain through the softmax
        let g = diff * (-2.0 * lambda * (1.0 - 1.0 / m));
        for ((mut drow, prow), grow) in d.rows_mut().into_iter().zip(p.rows()).zip(g.rows()) {
            let dot = prow.dot(&grow);
            Zip::from(&mut drow)
                .and(&prow)
                .and(&grow)
                .for_each(|dv, &pv, &gv| *dv += pv * (gv - dot));
        }
    }
    d /= n;
    (loss, d)
}

/// Member `i`'s batch loss and parameter gradients with the other members held fixed.
pub fn ncl_loss_and_gradients(
    members: &[Mlp],
    i: usize,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    lambda: f64,
) -> (f64, Gradients) {
    let acts: Vec<Vec<Array2<f64>>> = members.iter().map(|m| m.activations(x)).collect();
    let probs: Vec<Array2<f64>> = acts.iter().map(|a| a[a.len() - 1].clone()).collect();
    let (loss, d) = member_output_gradient(&probs, i, labels, lambda);
    (loss, members[i].backward(x, &acts[i], d))
}

pub(crate) fn train_members(
    members: &mut [Mlp],
    data: &Dataset,
    spec: &TrainSpec,
    lambda: f64,
) -> Result<Vec<EpochStats>> {
    spec.validate()?;
    if let Some(m) = members.iter().find(|m| m.inputs() != data.features.ncols()) {
        return Err(Error::LengthMismatch {
            what: "classifier input",
            expected: m.inputs(),
            actual: data.features.ncols(),
        });
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= members[0].classes()) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {} classes",
            members[0].classes()
        )));
    }
    let mut velocity: Vec<Velocity> = members.iter().map(Velocity::new).collect();
    let mut curve = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let lr = spec.rate_at(epoch);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for idx in spec.batches(data.len(), epoch) {
            let (x, y) = data.batch(&idx);
            let acts: Vec<Vec<Array2<f64>>> = members
                .par_iter()
                .map(|m| m.activations(x.view()))
                .collect();
            let probs: Vec<Array2<f64>> = acts.iter().map(|a| a[a.len() - 1].clone()).collect();

            let mut mean = Array2::<f64>::zeros(probs[0].raw_dim());
            for p in &probs {
                mean += p;
            }
            mean /= probs.len() as f64;
            hits += row_accuracy(&mean, &y);

            let losses: Vec<f64> = members
                .par_iter_mut()
                .zip(velocity.par_iter_mut())
                .zip(acts.par_iter())
                .enumerate()
                .map(|(i, ((m, v), a))| {
                    let (loss, d) = member_output_gradient(&probs, i, &y, lambda);
                    let grads = m.backward(x.view(), a, d);
                    v.apply(m, &grads, lr, spec.momentum);
                    loss
                })
                .collect();
            let batch_loss = losses.iter().sum::<f64>() / losses.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {batch_loss} in epoch {epoch}; lower learning_rate (currently {})",
                    spec.learning_rate
                )));
            }
            loss_sum += batch_loss * idx.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len().max(1) as f64,
            accuracy: hits as f64 / data.len().max(1) as f64,
        };
        log::debug!("epoch {epoch}: loss {:.5} acc {:.4}", stats.loss, stats.accuracy);
        curve.push(stats);
    }
    for m in members.iter() {
        let finite = m
            .layers()
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Divergence(format!(
                "weights became non-finite; lower learning_rate (currently {})",
                spec.learning_rate
            )));
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::mlp_train;

    fn toy() -> Dataset {
        let mut rng = seed::rng(11);
        use rand::Rng;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..120 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            rows.push(vec![a, b]);
            labels.push(usize::from(a * b > 0.0) + usize::from(a > 0.5));
        }
        Dataset::from_rows(&rows, labels).unwrap()
    }

    fn spec(lambda: f64, members: usize) -> EnsembleSpec {
        EnsembleSpec {
            members,
            ncl_lambda: lambda,
            hidden: vec![6],
            train: TrainSpec {
                learning_rate: 0.1,
                epochs: 15,
                batch_size: 16,
                shuffle_seed: 3,
                ..TrainSpec::default()
            },
            seed: 21,
        }
    }

    #[test]
    fn zero_lambda_equals_independent_training() {
        let data = toy();
        let s = spec(0.0, 3);
        let mut ens = Ensemble::new(2, 3, &s).unwrap();
        ens.ncl_train(&data, &s).unwrap();
        for i in 0..3 {
            let mut solo = Mlp::new(&[2, 6, 3], s.member_seed(i)).unwrap();
            mlp_train(&mut solo, &data, &s.train).unwrap();
            assert_eq!(&solo, &ens.members()[i]);
        }
    }

    #[test]
    fn single_member_penalty_vanishes() {
        let data = toy();
        let s = spec(0.7, 1);
        let m = Mlp::new(&[2, 6, 3], 1).unwrap();
        let x = data.features.view();
        let (plain_loss, plain) = m.loss_and_gradients(x, &data.labels);
        let (ncl_loss, ncl) = ncl_loss_and_gradients(std::slice::from_ref(&m), 0, x, &data.labels, s.ncl_lambda);
        assert_eq!(plain_loss, ncl_loss);
        assert_eq!(plain, ncl);
    }

    #[test]
    fn mean_probability_vote() {
        // members output [0.6, 0.4] and [0.2, 0.8] for any input
        let member = |p0: f64| {
            let mut m = Mlp::zeros(&[1, 1, 2]).unwrap();
            m.layers_mut()[1].bias[0] = (p0 / (1.0 - p0)).ln();
            m
        };
        let ens = Ensemble::from_members(vec![member(0.6), member(0.2)]).unwrap();
        let p = ens.predict_proba(Array2::zeros((1, 1)).view());
        assert!((p[[0, 0]] - 0.4).abs() < 1e-12 && (p[[0, 1]] - 0.6).abs() < 1e-12);
        assert_eq!(ens.predict(&[0.0]).unwrap(), 1);

        let tie = Ensemble::from_members(vec![member(0.5)]).unwrap();
        assert_eq!(tie.predict(&[0.0]).unwrap(), 0);
    }

    #[test]
    fn unanimous_members_and_single_member_reduction() {
        let m = Mlp::new(&[2, 4, 3], 5).unwrap();
        let ens = Ensemble::from_members(vec![m.clone(), m.clone()]).unwrap();
        let single = Ensemble::from_members(vec![m.clone()]).unwrap();
        for x in [[0.1, 0.9], [-1.0, 0.3], [2.0, -2.0]] {
            let want = m.predict(&x).unwrap();
            assert_eq!(ens.predict(&x).unwrap(), want);
            assert_eq!(single.predict(&x).unwrap(), want);
        }
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let mut x = Array2::from_shape_vec((4, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]).unwrap();
        let s = Standardizer::fit(x.view());
        s.apply(&mut x);
        let col: Vec<f64> = x.column(0).to_vec();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
        assert!((col.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert!(x.column(1).iter().all(|&v| v == 0.0));
    }
}
