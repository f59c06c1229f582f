use std::path::Path;

use destin_core::classifier::{Ensemble, Mlp};
use destin_core::snapshot::{self, Kind};
use destin_core::{Error, Hierarchy, Node};

use crate::run::Failure;

const BINS: usize = 10;

/// Counts of starvation traces in ten equal bins over (0, 1].
pub fn starvation_histogram<'a>(nodes: impl IntoIterator<Item = &'a Node>) -> [usize; BINS] {
    let mut bins = [0; BINS];
    for node in nodes {
        for c in node.centroids() {
            let b = ((c.starvation * BINS as f64).ceil() as usize).clamp(1, BINS) - 1;
            bins[b] += 1;
        }
    }
    bins
}

fn print_histogram(bins: &[usize; BINS]) {
    let total: usize = bins.iter().sum();
    println!("  starvation trace histogram ({total} centroids):");
    let widest = bins.iter().copied().max().unwrap_or(0).max(1);
    for (i, &n) in bins.iter().enumerate() {
        let bar = "#".repeat((n * 40).div_ceil(widest));
        println!(
            "    ({:.1}, {:.1}] {n:>6} {bar}",
            i as f64 / BINS as f64,
            (i + 1) as f64 / BINS as f64
        );
    }
}

fn print_entropy<'a>(nodes: impl IntoIterator<Item = &'a Node>) {
    let hs: Vec<(f64, f64)> = nodes
        .into_iter()
        .map(|n| (n.belief().entropy(), (n.config().centroids as f64).ln()))
        .collect();
    if hs.is_empty() {
        return;
    }
    let (min, max, sum) = hs.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &(h, _)| {
        (lo.min(h), hi.max(h), s + h)
    });
    let max_possible = hs.iter().map(|&(_, m)| m).fold(0.0, f64::max);
    println!(
        "  belief entropy (nats): min {min:.4} mean {:.4} max {max:.4} (uniform {max_possible:.4})",
        sum / hs.len() as f64
    );
}

fn inspect_node(node: &Node) {
    let cfg = node.config();
    println!("node: K={} spatial dim {} augmented dim {}", cfg.centroids, cfg.spatial_dim, cfg.augmented_dim());
    println!("  seeded centroids {}/{}", node.seeded(), cfg.centroids);
    println!(
        "  alpha {} beta {} gamma {} mean update {:?} variance update {:?}",
        cfg.alpha, cfg.beta, cfg.gamma, cfg.mean_update, cfg.variance_update
    );
    print_histogram(&starvation_histogram([node]));
    print_entropy([node]);
}

fn inspect_hierarchy(h: &Hierarchy) {
    let (wr, wc) = h.window();
    let (pr, pc) = h.patch();
    println!(
        "hierarchy: {} layers, {} nodes, window {wr}x{wc}, patch {pr}x{pc}, {} beliefs per sample",
        h.layers().len(),
        h.node_count(),
        h.belief_len()
    );
    for (i, layer) in h.layers().iter().enumerate() {
        let s = layer.spec;
        let seeded: usize = layer.nodes().iter().map(Node::seeded).sum();
        println!(
            "layer {i}: {}x{} nodes, K={}, input dim {} (+{} belief), seeded {seeded}/{}",
            s.rows,
            s.cols,
            s.centroids,
            layer.spatial_dim(),
            s.centroids,
            s.nodes() * s.centroids
        );
        print_histogram(&starvation_histogram(layer.nodes()));
        print_entropy(layer.nodes());
    }
}

fn describe_mlp(m: &Mlp) -> String {
    let params: usize = m.layers().iter().map(|d| d.weights.len() + d.bias.len()).sum();
    let sizes: Vec<String> = m.sizes().iter().map(ToString::to_string).collect();
    format!("{} ({params} parameters)", sizes.join("-"))
}

pub fn inspect(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    match snapshot::peek_kind(&text)? {
        Kind::Node => inspect_node(&snapshot::from_json(Kind::Node, &text)?),
        Kind::Hierarchy => inspect_hierarchy(&snapshot::from_json(Kind::Hierarchy, &text)?),
        Kind::Mlp => {
            let m: Mlp = snapshot::from_json(Kind::Mlp, &text)?;
            println!("mlp: {}", describe_mlp(&m));
        }
        Kind::Ensemble => {
            let e: Ensemble = snapshot::from_json(Kind::Ensemble, &text)?;
            println!(
                "ensemble: {} members, {} classes, standardised inputs: {}",
                e.members().len(),
                e.classes(),
                e.standardizer.is_some()
            );
            for (i, m) in e.members().iter().enumerate() {
                println!("  member {i}: {}", describe_mlp(m));
            }
        }
    }
    Ok(())
}
