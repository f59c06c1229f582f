"""Exercises the destin extension module. Run after `maturin develop` in crates/py."""

import json
import math
import os
import random
import sys
import tempfile

import destin


def check(cond, msg):
    if not cond:
        sys.exit(f"FAIL: {msg}")
    print(f"ok: {msg}")


def node_roundtrip():
    node = destin.Node(4, 2, alpha=0.95)
    rng = random.Random(1)
    for _ in range(200):
        b = node.step([rng.random(), rng.random()])
    check(abs(sum(b) - 1.0) < 1e-12, "belief sums to one")
    check(node.initialized, "all centroids seeded")
    check(all(0.0 < s <= 1.0 for s in node.starvation), "starvation in (0, 1]")
    obs = [0.5, 0.5] + node.belief
    check(0 <= node.select_winner(obs) < 4, "winner in range")

    copy = destin.Node.from_json(node.to_json())
    copy.train_mode = False
    node.train_mode = False
    check(copy.step([0.2, 0.8]) == node.step([0.2, 0.8]), "snapshot reproduces inference")

    try:
        destin.Node(4, 2, mean_update="median")
    except ValueError as e:
        check("mean_update" in str(e), "bad option raises ValueError")


def hierarchy():
    h = destin.Hierarchy.mnist()
    plan = destin.ScanPlan((28, 28), (16, 16))
    check((plan.movements, plan.samples) == (169, 15), "mnist scan plan")
    check(h.belief_len == 640 and h.feature_len(plan) == 9600, "mnist feature size")

    rng = random.Random(2)
    images = [[rng.random() for _ in range(784)] for _ in range(3)]
    h.train(images, (28, 28), plan, passes=1, seed=7)
    h.freeze()
    feats = h.featurize(images, (28, 28), plan)
    again = h.extract_features(images[0], (28, 28), plan)
    check(feats[0] == again, "batch and single extraction agree")
    check(abs(sum(feats[0][:32]) - 1.0) < 1e-12, "first block is a distribution")


def sequences():
    acc = destin.sequence_trial([0, 1, 1], 8, seed=5, n_train=300, n_test=100)
    check(0.0 <= acc <= 1.0, f"sequence trial accuracy {acc}")
    rows = destin.sequence_benchmark([1, 2], [4], 2, seed=9, n_train=200, n_test=50)
    check(len(rows) == 4, "benchmark grid size")
    check(destin.derive_seed(1, "a") == destin.derive_seed(1, "a"), "derive_seed is pure")


def mnist():
    data = os.environ.get("DESTIN_DATA_DIR", "/root/data/mnist")
    if not os.path.exists(os.path.join(data, "t10k-images-idx3-ubyte")):
        print("skip: mnist data not found")
        return
    test = destin.load_idx(
        os.path.join(data, "t10k-images-idx3-ubyte"),
        os.path.join(data, "t10k-labels-idx1-ubyte"),
    )
    check(len(test) == 10000 and test.shape == (28, 28), "t10k loaded")
    check(max(test.normalized(0)) <= 1.0, "normalized pixels")

    cfg = """
seed = 3
[mnist]
n_hierarchy_train = 20
n_classifier_train = 100
n_test = 50
[mnist.ensemble]
members = 2
hidden = [16]
[mnist.ensemble.train]
epochs = 3
"""
    with tempfile.TemporaryDirectory() as out:
        report = json.loads(destin.run_mnist(data, out, cfg))
        check(report["feature_dim"] == 9600, "report feature dim")
        check(sum(map(sum, report["confusion_matrix"])) == 50, "confusion matrix covers test subset")
        check(not math.isnan(report["accuracy"]), f"accuracy {report['accuracy']:.3f}")


if __name__ == "__main__":
    node_roundtrip()
    hierarchy()
    sequences()
    mnist()
    print("all smoke checks passed")
