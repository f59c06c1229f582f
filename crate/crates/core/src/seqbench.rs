//! Binary sequence detection with a single recurrent clustering node.
//!
//! A presentation is either the target sequence or the distractor, which
//! differs only in its first element, so for lengths above one the final
//! belief separates the two only if the node carried the first element
//! forward through its own feedback.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{mlp_train, Dataset, Mlp, TrainSpec};
use crate::error::{Error, Result};
use crate::hierarchy::Execution;
use crate::node::{Node, NodeParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceTask {
    pub target: Vec<u8>,
    /// `target` with element 0 inverted.
    pub distractor: Vec<u8>,
}

impl SequenceTask {
    pub fn new(target: Vec<u8>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::config("length", "sequence length must be >= 1"));
        }
        if target.iter().any(|&b| b > 1) {
            return Err(Error::Input("sequence symbols must be 0 or 1".into()));
        }
        let mut distractor = target.clone();
        distractor[0] ^= 1;
        Ok(SequenceTask { target, distractor })
    }

    /// Target drawn uniformly from `{0,1}^len`.
    pub fn generate(len: usize, rng: &mut impl Rng) -> Result<Self> {
        if len == 0 {
            return Err(Error::config("length", "sequence length must be >= 1"));
        }
        SequenceTask::new((0..len).map(|_| rng.random_range(0..=1u8)).collect())
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// The presented sequence: the target for label 1, the distractor for 0.
    pub fn sequence(&self, label: usize) -> &[u8] {
        if label == 1 {
            &self.target
        } else {
            &self.distractor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub centroids: Vec<usize>,
    pub repetitions: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Width of the classifier's single hidden layer.
    pub hidden: usize,
    pub classifier: TrainSpec,
    pub node: NodeParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: (1..=8).collect(),
            centroids: vec![4, 8, 16, 32],
            repetitions: 10,
            n_train: 2000,
            n_test: 1000,
            hidden: 16,
            classifier: TrainSpec::default(),
            node: NodeParams::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::config("seqbench.lengths", "must not be empty"));
        }
        if let Some(pos) = self.lengths.iter().position(|&l| l == 0) {
            return Err(Error::config(
                format!("seqbench.lengths[{pos}]"),
                "sequence length L must be >= 1, got 0",
            ));
        }
        if self.centroids.is_empty() {
            return Err(Error::config("seqbench.centroids", "must not be empty"));
        }
        if let Some(pos) = self.centroids.iter().position(|&k| k < 2) {
            return Err(Error::config(
                format!("seqbench.centroids[{pos}]"),
                format!("centroid count must be >= 2, got {}", self.centroids[pos]),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::config("seqbench.repetitions", "must be >= 1"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("seqbench.n_train/n_test", "must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("seqbench.hidden", "must be >= 1"));
        }
        self.classifier.validate()?;
        self.node.node_config(self.centroids[0], 1).validate()
    }
}

/// Feeds one presentation from a reset belief and returns the final belief.
fn present(node: &mut Node, sequence: &[u8]) -> Result<Vec<f64>> {
    node.reset();
    for &s in sequence {
        node.step(&[f64::from(s)])?;
    }
    Ok(node.belief().values().to_vec())
}

/// Test accuracy of a classifier reading a node's final beliefs.
///
/// The node learns online while the `n_train` training beliefs are recorded,
/// then is frozen for the `n_test` fresh test presentations.
pub fn run_trial(task: &SequenceTask, centroids: usize, cfg: &BenchConfig, trial_seed: u64) -> Result<f64> {
    let mut node = Node::new(cfg.node.node_config(centroids, 1))?;
    let mut labels_rng = seed::child_rng(trial_seed, "presentations");

    node.set_train_mode(true);
    let mut rows = Vec::with_capacity(cfg.n_train);
    let mut labels = Vec::with_capacity(cfg.n_train);
    for _ in 0..cfg.n_train {
        let label = labels_rng.random_range(0..2usize);
        rows.push(present(&mut node, task.sequence(label))?);
        labels.push(label);
    }
    node.set_train_mode(false);
    let train = Dataset::from_rows(&rows, labels)?;

    let mut model = Mlp::new(&[centroids, cfg.hidden, 2], seed::derive_seed(trial_seed, "mlp"))?;
    let spec = TrainSpec {
        shuffle_seed: seed::derive_seed(trial_seed, "shuffle"),
        ..cfg.classifier.clone()
    };
    mlp_train(&mut model, &train, &spec)?;

    let mut hits = 0;
    for _ in 0..cfg.n_test {
        let label = labels_rng.random_range(0..2usize);
        let belief = present(&mut node, task.sequence(label))?;
        if model.predict(&belief)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / cfg.n_test as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub length: usize,
    pub centroids: usize,
    pub rep: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub length: usize,
    pub centroids: usize,
    pub mean: f64,
    /// Population standard deviation over repetitions.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub records: Vec<TrialRecord>,
}

impl BenchResult {
    /// One row per (L, K) cell, in the order cells first appear.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for r in &self.records {
            if !cells.contains(&(r.length, r.centroids)) {
                cells.push((r.length, r.centroids));
            }
        }
        cells
            .into_iter()
            .map(|(length, centroids)| {
                let accs: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.length == length && r.centroids == centroids)
                    .map(|r| r.accuracy)
                    .collect();
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
                CellSummary {
                    length,
                    centroids,
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }

    /// Mean accuracy over all repetitions and centroid counts at each length.
    pub fn mean_by_length(&self) -> Vec<(usize, f64)> {
        let mut lengths: Vec<usize> = self.records.iter().map(|r| r.length).collect();
        lengths.sort_unstable();
        lengths.dedup();
        lengths
            .into_iter()
            .map(|l| {
                let accs: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.length == l)
                    .map(|r| r.accuracy)
                    .collect();
                (l, accs.iter().sum::<f64>() / accs.len() as f64)
            })
            .collect()
    }

    /// `L,K,rep,accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,K,rep,accuracy\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.length, r.centroids, r.rep, r.accuracy));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("L,K,mean_accuracy,std\n");
        for c in self.summary() {
            out.push_str(&format!("{},{},{},{}\n", c.length, c.centroids, c.mean, c.std));
        }
        out
    }
}

/// Seed of one (L, K, repetition) cell.
pub fn cell_seed(master: u64, length: usize, centroids: usize, rep: usize) -> u64 {
    seed::derive_seed(master, &format!("seqbench/L{length}/K{centroids}/rep{rep}"))
}

/// Every (L, K, repetition) trial of the grid. The task of a cell depends on
/// (L, repetition) only, so all centroid counts see the same sequences.
pub fn run_benchmark(cfg: &BenchConfig, master_seed: u64, exec: Execution) -> Result<BenchResult> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &length in &cfg.lengths {
        for &centroids in &cfg.centroids {
            for rep in 0..cfg.repetitions {
                jobs.push((length, centroids, rep));
            }
        }
    }
    let run = |&(length, centroids, rep): &(usize, usize, usize)| -> Result<TrialRecord> {
        let task_seed = seed::derive_seed(master_seed, &format!("seqbench/task/L{length}/rep{rep}"));
        let task = SequenceTask::generate(length, &mut seed::rng(task_seed))?;
        let accuracy = run_trial(&task, centroids, cfg, cell_seed(master_seed, length, centroids, rep))?;
        Ok(TrialRecord {
            length,
            centroids,
            rep,
            accuracy,
        })
    };
    let records = match exec {
        Execution::Sequential => jobs.iter().map(run).collect::<Result<Vec<_>>>()?,
        Execution::Parallel => jobs.par_iter().map(run).collect::<Result<Vec<_>>>()?,
    };
    Ok(BenchResult { records })
}

/// Least-squares slope of `ln(max(acc - 0.5, floor))` against `L`.
pub fn decay_slope(points: &[(usize, f64)], floor: f64) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(l, _)| l as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, a)| (a - 0.5).max(floor).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distractor_flips_first_element_only() {
        let t = SequenceTask::new(vec![1]).unwrap();
        assert_eq!(t.distractor, vec![0]);
        let t = SequenceTask::new(vec![1, 0, 1]).unwrap();
        assert_eq!(t.distractor, vec![0, 0, 1]);
        for s in 0..50 {
            let t = SequenceTask::generate(6, &mut seed::rng(s)).unwrap();
            let hamming = t.target.iter().zip(&t.distractor).filter(|(a, b)| a != b).count();
            assert_eq!(hamming, 1);
            assert_ne!(t.target[0], t.distractor[0]);
        }
    }

    #[test]
    fn zero_length_rejected() {
        assert!(matches!(
            SequenceTask::generate(0, &mut seed::rng(0)),
            Err(Error::Config { .. })
        ));
        let cfg = BenchConfig {
            lengths: vec![2, 0],
            ..BenchConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("lengths[1]"), "{err}");
    }

    #[test]
    fn single_repetition_has_zero_std() {
        let res = BenchResult {
            records: vec![TrialRecord {
                length: 2,
                centroids: 4,
                rep: 0,
                accuracy: 0.8,
            }],
        };
        assert_eq!(res.summary()[0].std, 0.0);
        assert_eq!(res.to_csv(), "L,K,rep,accuracy\n2,4,0,0.8\n");
    }

    #[test]
    fn slope_of_exact_exponential() {
        let pts: Vec<(usize, f64)> = (1..6).map(|l| (l, 0.5 + 0.4 * (-0.3 * l as f64).exp())).collect();
        assert!((decay_slope(&pts, 1e-3) + 0.3).abs() < 1e-12);
    }
}
