use destin_core::node::{augment_input, NodeParams};
use destin_core::{BeliefState, MeanUpdate, Node, NodeConfig, VarianceUpdate};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Scenario {
    k: usize,
    spatial: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    weights: (f64, f64),
    literal_variance: bool,
    inputs: Vec<Vec<f64>>,
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (2usize..8, 1usize..6)
        .prop_flat_map(|(k, spatial)| {
            (
                Just(k),
                Just(spatial),
                0.5f64..0.999,
                0.5f64..0.999,
                0.5f64..0.999,
                (0.1f64..2.0, 0.0f64..2.0),
                any::<bool>(),
                prop::collection::vec(prop::collection::vec(-5.0f64..5.0, spatial), k..60),
            )
        })
        .prop_map(|(k, spatial, alpha, beta, gamma, weights, literal_variance, inputs)| Scenario {
            k,
            spatial,
            alpha,
            beta,
            gamma,
            weights,
            literal_variance,
            inputs,
        })
}

fn node_for(s: &Scenario) -> Node {
    let mut cfg = NodeConfig::new(s.k, s.spatial).with_weights(s.weights.0, s.weights.1);
    cfg.alpha = s.alpha;
    cfg.beta = s.beta;
    cfg.gamma = s.gamma;
    if !s.literal_variance {
        cfg.variance_update = VarianceUpdate::StandardEma;
    }
    Node::new(cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beliefs_are_distributions(s in scenario()) {
        let mut node = node_for(&s);
        for x in &s.inputs {
            let b = node.step(x).unwrap();
            prop_assert_eq!(b.len(), s.k);
            prop_assert!(b.values().iter().all(|&v| v >= 0.0));
            let sum: f64 = b.values().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
        }
    }

    #[test]
    fn starvation_and_variance_stay_in_range(s in scenario()) {
        let mut node = node_for(&s);
        let floor = node.config().variance_floor;
        for x in &s.inputs {
            node.step(x).unwrap();
            for c in node.centroids() {
                prop_assert!(c.starvation > 0.0 && c.starvation <= 1.0);
                prop_assert!(c.variance.iter().all(|&v| v >= floor));
                prop_assert_eq!(c.mean.len(), s.spatial + s.k);
            }
        }
    }

    #[test]
    fn convex_means_stay_within_observed_range(s in scenario()) {
        let mut node = node_for(&s);
        let d = s.spatial + s.k;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for x in &s.inputs {
            let obs = augment_input(x, node.belief());
            for i in 0..d {
                lo[i] = lo[i].min(obs[i]);
                hi[i] = hi[i].max(obs[i]);
            }
            node.step(x).unwrap();
            for c in node.centroids() {
                for i in 0..d {
                    // a convex combination of equal values can still round a few ulps away
                    let tol = 8.0 * f64::EPSILON * lo[i].abs().max(hi[i].abs()).max(1.0);
                    prop_assert!(
                        c.mean[i] >= lo[i] - tol && c.mean[i] <= hi[i] + tol,
                        "dim {} mean {:e} outside [{:e}, {:e}]", i, c.mean[i], lo[i], hi[i]
                    );
                }
            }
        }
    }

    #[test]
    fn winner_minimises_weighted_distance(s in scenario()) {
        let mut node = node_for(&s);
        for x in &s.inputs {
            node.step(x).unwrap();
        }
        prop_assume!(node.is_initialized());
        let w = node.config().dim_weights.clone();
        for x in &s.inputs {
            let obs = augment_input(x, node.belief());
            let dists: Vec<f64> = node
                .centroids()
                .iter()
                .map(|c| {
                    let sq: f64 = obs.iter().zip(&c.mean).zip(&w).map(|((o, m), w)| w * (o - m) * (o - m)).sum();
                    c.starvation * sq.sqrt()
                })
                .collect();
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let expected = dists.iter().position(|&d| d == best).unwrap();
            prop_assert_eq!(node.select_winner(&obs), expected);
        }
    }

    #[test]
    fn identical_streams_give_identical_trajectories(s in scenario()) {
        let mut a = node_for(&s);
        let mut b = node_for(&s);
        for x in &s.inputs {
            a.step(x).unwrap();
            b.step(x).unwrap();
            prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        }
    }

    #[test]
    fn inference_never_touches_centroids(s in scenario()) {
        let mut node = node_for(&s);
        let half = s.inputs.len() / 2;
        for x in &s.inputs[..half] {
            node.step(x).unwrap();
        }
        let before = node.centroids().to_vec();
        node.set_train_mode(false);
        for x in &s.inputs[half..] {
            node.step(x).unwrap();
        }
        prop_assert_eq!(before.len(), node.centroids().len());
        for (p, q) in before.iter().zip(node.centroids()) {
            prop_assert!(p.mean.iter().zip(&q.mean).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert!(p.variance.iter().zip(&q.variance).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(p.starvation.to_bits(), q.starvation.to_bits());
        }
    }

    #[test]
    fn snapshots_are_lossless(s in scenario()) {
        let mut node = node_for(&s);
        let half = s.inputs.len() / 2;
        for x in &s.inputs[..half] {
            node.step(x).unwrap();
        }
        let mut copy = Node::from_json(&node.to_json().unwrap()).unwrap();
        prop_assert_eq!(&copy, &node);
        for x in &s.inputs[half..] {
            let a = node.step(x).unwrap().clone();
            let b = copy.step(x).unwrap().clone();
            prop_assert!(a.values().iter().zip(b.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn starvation_decays_geometrically(gamma in 0.5f64..0.9999, t in 1usize..2000) {
        let mut cfg = NodeConfig::new(2, 1);
        cfg.gamma = gamma;
        let mut node = Node::new(cfg).unwrap();
        node.step(&[0.0]).unwrap();
        node.step(&[1.0]).unwrap();
        prop_assert!(node.is_initialized());
        for _ in 0..t {
            node.update_starvation(0);
        }
        let expected = gamma.powi(t as i32);
        let psi = node.centroids()[1].starvation;
        prop_assume!(expected > 1e-300);
        prop_assert!(((psi - expected) / expected).abs() < 1e-12);
        prop_assert_eq!(node.centroids()[0].starvation, 1.0);
    }
}

#[test]
fn reset_then_inference_matches_fresh_node_with_same_centroids() {
    let mut node = Node::new(NodeConfig::new(3, 2)).unwrap();
    for x in [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [0.2, 0.9], [0.7, 0.1]] {
        node.step(&x).unwrap();
    }
    let mut fresh = Node::with_centroids(node.config().clone(), node.centroids().to_vec()).unwrap();
    fresh.set_train_mode(false);
    node.set_train_mode(false);
    node.reset();
    let a = node.step(&[0.3, 0.3]).unwrap().clone();
    let b = fresh.step(&[0.3, 0.3]).unwrap().clone();
    assert_eq!(a, b);
}

#[test]
fn literal_mean_mode_is_selectable_from_params() {
    let params = NodeParams {
        mean_update: MeanUpdate::Literal,
        ..NodeParams::default()
    };
    let cfg = params.node_config(4, 3);
    assert_eq!(cfg.mean_update, MeanUpdate::Literal);
    assert_eq!(cfg.dim_weights.len(), 7);
}

#[test]
fn empty_spatial_input_augments_to_belief() {
    let b = BeliefState(vec![1.0]);
    assert_eq!(augment_input(&[], &b), vec![1.0]);
}

#[test]
fn corrupt_node_snapshots_are_rejected() {
    let node = Node::new(NodeConfig::new(2, 1)).unwrap();
    let text = node.to_json().unwrap();
    assert!(Node::from_json(&text[..text.len() - 3]).is_err());
    assert!(Node::from_json(&text.replace("\"version\":1", "\"version\":99")).is_err());
    let hierarchy_kind = text.replace("\"kind\":\"node\"", "\"kind\":\"hierarchy\"");
    assert!(Node::from_json(&hierarchy_kind).is_err());
}
