//! The recurrent clustering node.
//!
//! A node clusters over an *augmented* observation: the external (spatial)
//! input followed by the node's own belief from the previous step. Learning is
//! winner-take-all: the centroid minimising its starvation-weighted distance to
//! the observation moves towards it, every centroid's starvation trace decays
//! unless it won, and the new belief is the normalised inverse of the
//! variance-scaled squared distance to every centroid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a winning centroid's mean follows the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanUpdate {
    /// `mean <- alpha * mean + (1 - alpha) * obs`
    #[default]
    Convex,
    /// `mean <- alpha * mean + (1 - alpha) * (obs - mean)`; coefficients sum to `alpha`.
    Literal,
}

/// How a winning centroid's variance follows the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceUpdate {
    /// `var <- beta * var + (1 - beta) * |(obs - mean)^2 - var|`
    #[default]
    Literal,
    /// `var <- beta * var + (1 - beta) * (obs - mean)^2`
    StandardEma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Starvation trace; 1 for a fresh centroid, decays geometrically while it loses.
    pub starvation: f64,
}

impl Centroid {
    fn seeded(obs: &[f64], init_variance: f64) -> Self {
        Centroid {
            mean: obs.to_vec(),
            variance: vec![init_variance; obs.len()],
            starvation: 1.0,
        }
    }
}

/// Probability of the current augmented observation belonging to each centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState(pub Vec<f64>);

impl BeliefState {
    pub fn uniform(k: usize) -> Self {
        BeliefState(vec![1.0 / k as f64; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Index of the most probable centroid, lowest index on ties.
    pub fn argmax(&self) -> usize {
        crate::argmax(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    /// Number of centroids (`K`).
    pub centroids: usize,
    /// Length of the external observation.
    pub spatial_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Per-dimension weights of the winner-selection distance, length `spatial_dim + centroids`.
    pub dim_weights: Vec<f64>,
    pub belief_epsilon: f64,
    pub variance_floor: f64,
    pub init_variance: f64,
    pub mean_update: MeanUpdate,
    pub variance_update: VarianceUpdate,
    /// Consecutive duplicate observations tolerated while seeding before a
    /// duplicate is accepted as a seed anyway.
    pub seed_patience: usize,
}

pub const DEFAULT_RATE: f64 = 0.99;
pub const DEFAULT_BELIEF_EPSILON: f64 = 1e-9;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_INIT_VARIANCE: f64 = 1.0;
pub const DEFAULT_SEED_PATIENCE: usize = 8;

impl NodeConfig {
    pub fn new(centroids: usize, spatial_dim: usize) -> Self {
        NodeConfig {
            centroids,
            spatial_dim,
            alpha: DEFAULT_RATE,
            beta: DEFAULT_RATE,
            gamma: DEFAULT_RATE,
            dim_weights: vec![1.0; spatial_dim + centroids],
            belief_epsilon: DEFAULT_BELIEF_EPSILON,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            init_variance: DEFAULT_INIT_VARIANCE,
            mean_update: MeanUpdate::Convex,
            variance_update: VarianceUpdate::Literal,
            seed_patience: DEFAULT_SEED_PATIENCE,
        }
    }

    /// Dimensionality of the augmented observation.
    pub fn augmented_dim(&self) -> usize {
        self.spatial_dim + self.centroids
    }

    /// Sets the selection weights to `spatial` on the external dimensions and
    /// `belief` on the fed-back ones.
    pub fn with_weights(mut self, spatial: f64, belief: f64) -> Self {
        self.dim_weights = std::iter::repeat_n(spatial, self.spatial_dim)
            .chain(std::iter::repeat_n(belief, self.centroids))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids < 2 {
            return Err(Error::config("centroids", format!("must be >= 2, got {}", self.centroids)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if self.dim_weights.len() != self.augmented_dim() {
            return Err(Error::config(
                "dim_weights",
                format!(
                    "expected {} entries (spatial_dim + centroids), got {}",
                    self.augmented_dim(),
                    self.dim_weights.len()
                ),
            ));
        }
        if self.dim_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("dim_weights", "entries must be finite and >= 0"));
        }
        if !self.dim_weights.iter().any(|w| *w > 0.0) {
            return Err(Error::config("dim_weights", "at least one entry must be > 0"));
        }
        for (name, v) in [
            ("belief_epsilon", self.belief_epsilon),
            ("variance_floor", self.variance_floor),
            ("init_variance", self.init_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be a positive number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Node hyperparameters independent of a node's shape; combined with a
/// centroid count and spatial dimension to form a [`NodeConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub belief_epsilon: f64,
    pub variance_floor: f64,
    pub init_variance: f64,
    pub mean_update: MeanUpdate,
    pub variance_update: VarianceUpdate,
    pub seed_patience: usize,
    /// Selection weight of every external dimension.
    pub spatial_weight: f64,
    /// Selection weight of every fed-back belief dimension.
    pub belief_weight: f64,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            alpha: DEFAULT_RATE,
            beta: DEFAULT_RATE,
            gamma: DEFAULT_RATE,
            belief_epsilon: DEFAULT_BELIEF_EPSILON,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            init_variance: DEFAULT_INIT_VARIANCE,
            mean_update: MeanUpdate::Convex,
            variance_update: VarianceUpdate::Literal,
            seed_patience: DEFAULT_SEED_PATIENCE,
            spatial_weight: 1.0,
            belief_weight: 1.0,
        }
    }
}

impl NodeParams {
    pub fn node_config(&self, centroids: usize, spatial_dim: usize) -> NodeConfig {
        NodeConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            belief_epsilon: self.belief_epsilon,
            variance_floor: self.variance_floor,
            init_variance: self.init_variance,
            mean_update: self.mean_update,
            variance_update: self.variance_update,
            seed_patience: self.seed_patience,
            ..NodeConfig::new(centroids, spatial_dim)
        }
        .with_weights(self.spatial_weight, self.belief_weight)
    }
}

/// Concatenates the external observation with the previous belief, in that order.
pub fn augment_input(spatial: &[f64], prev_belief: &BeliefState) -> Vec<f64> {
    let mut out = Vec::with_capacity(spatial.len() + prev_belief.len());
    out.extend_from_slice(spatial);
    out.extend_from_slice(prev_belief.values());
    out
}

/// A single recurrent clustering node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    config: NodeConfig,
    /// Seeded centroids; fewer than `K` until seeding completes.
    centroids: Vec<Centroid>,
    prev_belief: BeliefState,
    train_mode: bool,
    /// Duplicate observations seen since the last accepted seed.
    seed_stall: usize,
}

impl Node {
    pub fn new(config: NodeConfig) -> Result<Self> {
        config.validate()?;
        let k = config.centroids;
        Ok(Node {
            config,
            centroids: Vec::with_capacity(k),
            prev_belief: BeliefState::uniform(k),
            train_mode: true,
            seed_stall: 0,
        })
    }

    /// Builds a fully seeded node from explicit centroids.
    pub fn with_centroids(config: NodeConfig, centroids: Vec<Centroid>) -> Result<Self> {
        let mut node = Node::new(config)?;
        if centroids.len() != node.config.centroids {
            return Err(Error::LengthMismatch {
                what: "centroid set",
                expected: node.config.centroids,
                actual: centroids.len(),
            });
        }
        let d = node.config.augmented_dim();
        for c in &centroids {
            if c.mean.len() != d || c.variance.len() != d {
                return Err(Error::LengthMismatch {
                    what: "centroid dimension",
                    expected: d,
                    actual: c.mean.len().max(c.variance.len()),
                });
            }
        }
        node.centroids = centroids;
        Ok(node)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn centroids(&self) -> &[Centroid] {
        &self.centroids
    }

    /// Mutable access for tests and tools that construct adversarial states.
    pub fn centroids_mut(&mut self) -> &mut [Centroid] {
        &mut self.centroids
    }

    pub fn belief(&self) -> &BeliefState {
        &self.prev_belief
    }

    pub fn train_mode(&self) -> bool {
        self.train_mode
    }

    pub fn set_train_mode(&mut self, train: bool) {
        self.train_mode = train;
    }

    /// Number of centroids seeded so far.
    pub fn seeded(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.centroids.len() == self.config.centroids
    }

    /// Resets the fed-back belief to uniform. Centroids are untouched.
    pub fn reset(&mut self) {
        self.prev_belief = BeliefState::uniform(self.config.centroids);
    }

    /// Index of the centroid minimising `starvation * ||(obs - mean) * sqrt(w)||`.
    pub fn select_winner(&self, obs: &[f64]) -> usize {
        let w = &self.config.dim_weights;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            let sq: f64 = obs
                .iter()
                .zip(&centroid.mean)
                .zip(w)
                .map(|((o, m), w)| w * (o - m) * (o - m))
                .sum();
            let dist = centroid.starvation * sq.sqrt();
            if dist < best_dist {
                best = c;
                best_dist = dist;
            }
        }
        best
    }

    /// Moves the winning centroid's mean and variance towards `obs`.
    pub fn update_centroid(&mut self, winner: usize, obs: &[f64]) -> Result<()> {
        self.check_augmented(obs)?;
        if let Some(bad) = obs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite observation entry {bad}")));
        }
        let NodeConfig {
            alpha,
            beta,
            variance_floor,
            mean_update,
            variance_update,
            ..
        } = self.config;
        let k = self.centroids.len();
        let centroid = self.centroids.get_mut(winner).ok_or_else(|| {
            Error::Input(format!("winner index {winner} out of range for {k} centroids"))
        })?;
        for ((m, v), &o) in centroid
            .mean
            .iter_mut()
            .zip(centroid.variance.iter_mut())
            .zip(obs)
        {
            *m = match mean_update {
                MeanUpdate::Convex => alpha * *m + (1.0 - alpha) * o,
                MeanUpdate::Literal => alpha * *m + (1.0 - alpha) * (o - *m),
            };
            let d = o - *m;
            *v = match variance_update {
                VarianceUpdate::Literal => beta * *v + (1.0 - beta) * (d * d - *v).abs(),
                VarianceUpdate::StandardEma => beta * *v + (1.0 - beta) * (d * d),
            };
            if *v < variance_floor {
                *v = variance_floor;
            }
        }
        Ok(())
    }

    /// Decays every starvation trace, topping the winner's back up.
    pub fn update_starvation(&mut self, winner: usize) {
        let gamma = self.config.gamma;
        for (c, centroid) in self.centroids.iter_mut().enumerate() {
            let won = if c == winner { 1.0 } else { 0.0 };
            centroid.starvation = gamma * centroid.starvation + (1.0 - gamma) * won;
        }
    }

    /// Belief over the seeded centroids from inverse normalised distances.
    pub fn compute_belief(&self, obs: &[f64]) -> BeliefState {
        let eps = self.config.belief_epsilon;
        let inv: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| {
                let n: f64 = obs
                    .iter()
                    .zip(&c.mean)
                    .zip(&c.variance)
                    .map(|((o, m), v)| (o - m) * (o - m) / v)
                    .sum();
                1.0 / n.max(eps)
            })
            .collect();
        let total: f64 = inv.iter().sum();
        BeliefState(inv.into_iter().map(|x| x / total).collect())
    }

    /// Advances the node by one observation and returns its new belief.
    ///
    /// While fewer than `K` centroids exist (train mode only) the augmented
    /// observation is used as the next seed and the belief is left as it was.
    pub fn step(&mut self, spatial: &[f64]) -> Result<&BeliefState> {
        if spatial.len() != self.config.spatial_dim {
            return Err(Error::LengthMismatch {
                what: "spatial input",
                expected: self.config.spatial_dim,
                actual: spatial.len(),
            });
        }
        if let Some(bad) = spatial.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite spatial input entry {bad}")));
        }
        let obs = augment_input(spatial, &self.prev_belief);

        if !self.is_initialized() {
            if self.train_mode {
                self.try_seed(&obs);
            }
            return Ok(&self.prev_belief);
        }

        if self.train_mode {
            let winner = self.select_winner(&obs);
            self.update_centroid(winner, &obs)?;
            self.update_starvation(winner);
        }
        self.prev_belief = self.compute_belief(&obs);
        Ok(&self.prev_belief)
    }

    fn try_seed(&mut self, obs: &[f64]) {
        let duplicate = self.centroids.iter().any(|c| c.mean == obs);
        if duplicate && self.seed_stall < self.config.seed_patience {
            self.seed_stall += 1;
            return;
        }
        self.seed_stall = 0;
        self.centroids
            .push(Centroid::seeded(obs, self.config.init_variance));
    }

    fn check_augmented(&self, obs: &[f64]) -> Result<()> {
        let d = self.config.augmented_dim();
        if obs.len() != d {
            return Err(Error::LengthMismatch {
                what: "augmented observation",
                expected: d,
                actual: obs.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::snapshot::to_json(crate::snapshot::Kind::Node, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let node: Node = crate::snapshot::from_json(crate::snapshot::Kind::Node, text)?;
        node.config.validate()?;
        Ok(node)
    }
}
