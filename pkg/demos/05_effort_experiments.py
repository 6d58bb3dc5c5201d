"""
Click-effort benchmarks
=======================

Four simulated-annotator comparisons on synthetic features:

1. hierarchical lasso labelling vs the linear scrub-the-video baseline
2. feature quality: clean features vs noisy features
3. landmark quality: walk-based selection vs uniform sampling
4. drill automation: k-means drill plans vs random partitions

Small row counts keep each arm to a few seconds; the relative ordering
is what matters.
"""

import numpy as np

from annoscale.dataio import (
    DatasetManifest,
    FeatureTensor,
    GroundTruth,
    generate_synthetic,
    split_into_videos,
    thumos_like_distribution,
)
from annoscale.effortsim import (
    auto_drill,
    compare_curves,
    linear_baseline_curve,
    random_drill_plan,
    simulate_hierarchical,
    simulate_plan,
)
from annoscale.hierarchy import build_hierarchy, uniform_landmark_hierarchy
from pathlib import Path

N, CLASSES = 4000, 11
dist = thumos_like_distribution(CLASSES)

print("-- 1: hierarchical vs linear --")
features, truth = generate_synthetic(dist, N, CLASSES, 0.0, seed=4, mean_segment_rows=12)
manifest = DatasetManifest(
    feature_file=Path("unused.havf"), dim=CLASSES,
    videos=split_into_videos(N, rows_per_video=1000), label_names=truth.names,
)
hierarchy = build_hierarchy(features, n_scales=2, seed=0)
hier = simulate_hierarchical(hierarchy, truth, features, seed=0)
linear = linear_baseline_curve(truth, manifest)
report = compare_curves(hier.curve, linear, target_coverage=0.95)
print(f"clicks to 95% coverage: hierarchical={report['clicks_a']:.0f} "
      f"linear={report['clicks_b']:.0f} factor={report['ratio']:.1f}x")

print("-- 2: clean vs noisy features --")
for sigma in (0.0, 0.5):
    f, t = generate_synthetic(dist, N, CLASSES, sigma, seed=4)
    h = build_hierarchy(f, n_scales=2, seed=0)
    r = simulate_hierarchical(h, t, f, clusterer="kmeans", seed=0)
    print(f"sigma={sigma}: {r.curve.clicks_to(0.95):.0f} clicks to 95%")

print("-- 3: walk-based landmarks vs uniform sampling --")
features, truth0 = generate_synthetic(dist, N, CLASSES, 0.2, seed=9)
values = features.values.copy()
labels = truth0.labels.copy()
rng = np.random.default_rng(123)
junk = rng.choice(N, size=N // 20, replace=False)
values[junk] = rng.uniform(-2.0, -1.0, size=(len(junk), CLASSES)).astype(np.float32)
labels[junk] = 0  # noise frames are Background
noisy = FeatureTensor(values)
truth = GroundTruth(labels=labels, names=truth0.names)
h = build_hierarchy(noisy, n_scales=3, k=15, perplexity=5.0,
                    beta_walks=50, walk_length=15, beta_aoi=30, seed=0)
u = uniform_landmark_hierarchy(noisy, [s.n_landmarks for s in h.scales][1:],
                               k=15, perplexity=5.0, beta_aoi=30, seed=0)
for name, hierarchy in (("hsne", h), ("uniform", u)):
    r = simulate_hierarchical(hierarchy, truth, noisy, clusterer="kmeans", seed=0)
    print(f"{name}: {r.curve.clicks_to(0.9):.0f} clicks to 90%")

print("-- 4: auto-drill vs random drill --")
features, truth = generate_synthetic(dist, 20000, CLASSES, 0.25, seed=7)
h = build_hierarchy(features, n_scales=2, k=10, perplexity=5.0, beta_walks=30,
                    walk_length=10, beta_aoi=20, max_steps=50, seed=0)
for name, plan in (("kmeans", auto_drill(h, features, 20, seed=0)),
                   ("random", random_drill_plan(h, 20, seed=0))):
    r = simulate_plan(h, truth, plan, max_label_clicks=10)
    print(f"{name} plan: coverage {r.coverage:.3f} after 10 label clicks, "
          f"mean displayed {r.mean_displayed:.0f}")
