use destin_core::hierarchy::{Execution, ImageView, LayerSpec, ScanOrder, ScanPlan, MNIST_LAYERS};
use destin_core::node::NodeParams;
use destin_core::{seed, Hierarchy};
use proptest::prelude::*;
use rand::Rng;

fn random_image(rows: usize, cols: usize, seed_: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_);
    (0..rows * cols).map(|_| rng.random::<f64>()).collect()
}

/// Two-layer 2x2 -> 1 lattice over an 8x8 window of 4x4 patches, trained on noise.
fn trained_small() -> (Hierarchy, ScanPlan, Vec<Vec<f64>>) {
    let specs = [LayerSpec::new(2, 2, 4), LayerSpec::new(1, 1, 3)];
    let mut h = Hierarchy::build(&specs, (8, 8), &NodeParams::default()).unwrap();
    let plan = ScanPlan::new((10, 10), (8, 8), 1, 2, ScanOrder::Raster).unwrap();
    let pixels: Vec<Vec<f64>> = (0..12).map(|i| random_image(10, 10, i)).collect();
    let views: Vec<ImageView> = pixels.iter().map(|p| ImageView::new(10, 10, p).unwrap()).collect();
    h.train(&views, &plan, 2, 42).unwrap();
    h.freeze();
    (h, plan, pixels)
}

fn centroid_json(h: &Hierarchy) -> Vec<String> {
    h.nodes().map(|n| serde_json::to_string(n.centroids()).unwrap()).collect()
}

#[test]
fn step_matches_manual_wiring() {
    let (mut h, _, _) = trained_small();
    let mut rng = seed::rng(9);
    for _ in 0..5 {
        let window: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let before = h.clone();
        h.step(&window, false).unwrap();

        let bottom = &before.layers()[0];
        let mut child_beliefs = Vec::new();
        for (i, node) in bottom.nodes().iter().enumerate() {
            let (r, c) = (i / 2, i % 2);
            let patch: Vec<f64> = (0..4)
                .flat_map(|pr| {
                    let start = (r * 4 + pr) * 8 + c * 4;
                    window[start..start + 4].to_vec()
                })
                .collect();
            let mut n = node.clone();
            let b = n.step(&patch).unwrap().clone();
            assert_eq!(&b, h.layers()[0].nodes()[i].belief());
            child_beliefs.push(b);
        }
        // Parent input: NW, NE, SW, SE children from this movement.
        let input: Vec<f64> = child_beliefs.iter().flat_map(|b| b.values().to_vec()).collect();
        let mut parent = before.layers()[1].nodes()[0].clone();
        let b = parent.step(&input).unwrap().clone();
        assert_eq!(&b, h.layers()[1].nodes()[0].belief());
    }
}

#[test]
fn perturbing_a_patch_only_reaches_its_ancestors() {
    let (h, _, _) = trained_small();
    let mut rng = seed::rng(11);
    let windows: Vec<Vec<f64>> = (0..4).map(|_| (0..64).map(|_| rng.random::<f64>()).collect()).collect();
    let mut a = h.clone();
    let mut b = h.clone();
    for w in &windows[..3] {
        a.step(w, false).unwrap();
        b.step(w, false).unwrap();
    }
    let parent_before = a.layers()[1].nodes()[0].belief().clone();
    assert_eq!(&parent_before, b.layers()[1].nodes()[0].belief());

    // Change only the south-east patch of the last window.
    let mut perturbed = windows[3].clone();
    for r in 4..8 {
        for c in 4..8 {
            perturbed[r * 8 + c] = 1.0 - perturbed[r * 8 + c];
        }
    }
    a.step(&windows[3], false).unwrap();
    b.step(&perturbed, false).unwrap();
    for i in 0..3 {
        assert_eq!(a.layers()[0].nodes()[i].belief(), b.layers()[0].nodes()[i].belief());
    }
    assert_ne!(a.layers()[0].nodes()[3].belief(), b.layers()[0].nodes()[3].belief());
    assert_ne!(a.layers()[1].nodes()[0].belief(), b.layers()[1].nodes()[0].belief());
}

#[test]
fn feature_extraction_never_changes_centroids() {
    let (mut h, plan, pixels) = trained_small();
    let before = centroid_json(&h);
    for p in pixels.iter().cycle().take(30) {
        h.extract_features(&ImageView::new(10, 10, p).unwrap(), &plan).unwrap();
    }
    assert_eq!(before, centroid_json(&h));
}

#[test]
fn features_are_blocks_of_distributions() {
    let (mut h, plan, pixels) = trained_small();
    let blocks = h.block_sizes();
    let f = h.extract_features(&ImageView::new(10, 10, &pixels[0]).unwrap(), &plan).unwrap();
    assert_eq!(f.len(), plan.samples() * h.belief_len());
    let mut offset = 0;
    for _ in 0..plan.samples() {
        for &k in &blocks {
            let sum: f64 = f.values()[offset..offset + k].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            offset += k;
        }
    }
    assert_eq!(offset, f.len());
}

#[test]
fn repeated_extraction_is_identical() {
    let (mut h, plan, pixels) = trained_small();
    let img = ImageView::new(10, 10, &pixels[3]).unwrap();
    let a = h.extract_features(&img, &plan).unwrap();
    let b = h.extract_features(&img, &plan).unwrap();
    assert_eq!(a, b);
    let zeros = vec![0.0; 64];
    h.reset();
    h.step(&zeros, false).unwrap();
    let first: Vec<_> = h.beliefs().cloned().collect();
    h.reset();
    h.step(&zeros, false).unwrap();
    assert_eq!(first, h.beliefs().cloned().collect::<Vec<_>>());
}

#[test]
fn parallel_featurisation_matches_sequential() {
    let (h, plan, pixels) = trained_small();
    let views: Vec<ImageView> = pixels.iter().map(|p| ImageView::new(10, 10, p).unwrap()).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let par = pool.install(|| h.featurize(&views, &plan, Execution::Parallel)).unwrap();
    let seq = h.featurize(&views, &plan, Execution::Sequential).unwrap();
    assert_eq!(par, seq);
}

#[test]
fn snapshot_reload_featurises_identically() {
    let (h, plan, pixels) = trained_small();
    let views: Vec<ImageView> = pixels.iter().map(|p| ImageView::new(10, 10, p).unwrap()).collect();
    let reloaded = Hierarchy::from_json(&h.to_json().unwrap()).unwrap();
    assert_eq!(
        reloaded.featurize(&views, &plan, Execution::Sequential).unwrap(),
        h.featurize(&views, &plan, Execution::Sequential).unwrap()
    );
}

#[test]
fn zero_passes_is_a_no_op_and_training_is_seeded() {
    let specs = [LayerSpec::new(2, 2, 4), LayerSpec::new(1, 1, 3)];
    let fresh = Hierarchy::build(&specs, (8, 8), &NodeParams::default()).unwrap();
    let plan = ScanPlan::new((10, 10), (8, 8), 1, 2, ScanOrder::Raster).unwrap();
    let pixels: Vec<Vec<f64>> = (0..6).map(|i| random_image(10, 10, 100 + i)).collect();
    let views: Vec<ImageView> = pixels.iter().map(|p| ImageView::new(10, 10, p).unwrap()).collect();

    let mut h = fresh.clone();
    h.train(&views, &plan, 0, 1).unwrap();
    assert_eq!(h, fresh);

    let mut a = fresh.clone();
    let mut b = fresh.clone();
    a.train(&views, &plan, 1, 5).unwrap();
    b.train(&views, &plan, 1, 5).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    for node in a.nodes() {
        let sum: f64 = node.belief().values().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }
    let mut c = fresh.clone();
    c.train(&views, &plan, 1, 6).unwrap();
    assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());

    let mut empty = fresh;
    assert!(empty.train(&[], &plan, 1, 1).is_err());
}

#[test]
fn mnist_feature_arithmetic() {
    let h = Hierarchy::build(&MNIST_LAYERS, (16, 16), &NodeParams::default()).unwrap();
    let plan = ScanPlan::new((28, 28), (16, 16), 1, 12, ScanOrder::Raster).unwrap();
    assert_eq!(plan.movements(), 169);
    assert_eq!(plan.samples(), 15);
    assert_eq!(h.belief_len(), 640);
    assert_eq!(h.feature_len(&plan), 9600);
    let dims: Vec<usize> = h.layers().iter().map(|l| l.spatial_dim()).collect();
    assert_eq!(dims, [16, 128, 96]);
    let one = ScanPlan::new((28, 28), (16, 16), 1, 500, ScanOrder::Raster).unwrap();
    assert_eq!(one.samples(), 1);
}

#[test]
fn window_larger_than_image_is_rejected() {
    assert!(ScanPlan::new((10, 10), (16, 16), 1, 1, ScanOrder::Raster).is_err());
    assert_eq!(ScanPlan::new((16, 16), (16, 16), 1, 1, ScanOrder::Raster).unwrap().movements(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn feature_length_formula(depth in 1usize..4, patch in 1usize..4, ks in prop::collection::vec(2usize..6, 3),
                              extra in 0usize..5, stride in 1usize..3, interval in 1usize..6) {
        let specs: Vec<LayerSpec> = (0..depth)
            .map(|l| {
                let side = 1 << (depth - 1 - l);
                LayerSpec::new(side, side, ks[l])
            })
            .collect();
        let side = patch << (depth - 1);
        let mut h = Hierarchy::build(&specs, (side, side), &NodeParams::default()).unwrap();
        let image = (side + extra, side + extra);
        let plan = ScanPlan::new(image, (side, side), stride, interval, ScanOrder::Zigzag).unwrap();
        let expected_belief: usize = specs.iter().map(|s| s.rows * s.cols * s.centroids).sum();
        prop_assert_eq!(h.belief_len(), expected_belief);
        prop_assert_eq!(h.feature_len(&plan), plan.samples() * expected_belief);
        prop_assert_eq!(plan.samples(), (plan.movements() - 1) / interval + 1);
        let pixels = random_image(image.0, image.1, 3);
        let f = h.extract_features(&ImageView::new(image.0, image.1, &pixels).unwrap(), &plan).unwrap();
        prop_assert_eq!(f.len(), h.feature_len(&plan));
        for p in &plan.positions {
            prop_assert!(p.0 + side <= image.0 && p.1 + side <= image.1);
        }
    }
}
