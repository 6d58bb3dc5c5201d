"""
Synthetic dataset generation and the on-disk formats
====================================================

Creates a small video-like dataset (feature rows arranged as temporal
label runs across several clips), writes the three artifact files, and
reads everything back.
"""

import tempfile
from pathlib import Path

import numpy as np

from annoscale.dataio import (
    DatasetManifest,
    generate_synthetic,
    load_ground_truth,
    load_manifest,
    read_features,
    save_manifest,
    split_into_videos,
    thumos_like_distribution,
    write_features,
    write_labels,
)

out = Path(tempfile.mkdtemp(prefix="annoscale-demo-"))
print(f"writing into {out}")

# a skewed class mix: two thirds background, actions tapering off
dist = thumos_like_distribution(n_classes=6)
print("class fractions:", np.round(dist.fractions, 3).tolist())

features, truth = generate_synthetic(
    dist, n_points=2000, n_classes=6, noise_sigma=0.1, seed=0, mean_segment_rows=15
)
print(f"features: {features.n_points} rows x {features.dim} dims")

# rows 0..499 belong to clip one, 500..999 to clip two, and so on
videos = split_into_videos(2000, rows_per_video=500, stride_sec=0.1333)
manifest = DatasetManifest(
    feature_file=out / "features.havf",
    dim=features.dim,
    videos=videos,
    label_names=truth.names,
    labels_file=out / "labels.csv",
)

write_features(features, out / "features.havf")
write_labels(truth.labels, out / "labels.csv")
save_manifest(manifest, out / "manifest.json")

# read-back round trip
back = read_features(out / "features.havf")
assert np.array_equal(back.values, features.values)
manifest2 = load_manifest(out / "manifest.json")
truth2 = load_ground_truth(manifest2)
assert np.array_equal(truth2.labels, truth.labels)

runs = 1 + int((truth.labels[1:] != truth.labels[:-1]).sum())
print(f"ground truth: {len(truth.names)} classes over {runs} temporal runs")
print(f"videos: {[v.id for v in manifest2.videos]}")
print("round trip ok")
