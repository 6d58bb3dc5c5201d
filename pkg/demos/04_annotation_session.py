"""
An interactive annotation session, scripted
===========================================

Drill from the coarse overview into one class cluster, bulk-label it,
and export the labelled rows as temporal segments. Every drill and
every label costs exactly one click.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from annoscale.dataio import (
    DatasetManifest,
    generate_synthetic,
    split_into_videos,
    thumos_like_distribution,
)
from annoscale.hierarchy import build_hierarchy
from annoscale.session import create_session

dist = thumos_like_distribution(n_classes=4)
features, truth = generate_synthetic(dist, 2000, 4, noise_sigma=0.05, seed=3)
manifest = DatasetManifest(
    feature_file=Path("unused.havf"),
    dim=features.dim,
    videos=split_into_videos(2000, rows_per_video=500),
    label_names=truth.names,
)
hierarchy = build_hierarchy(features, n_scales=3, seed=0)

session = create_session(hierarchy, manifest)
root = session.root
print(f"root analysis shows {root.n_points} landmarks at scale {root.scale}")

# lasso stand-in: select the top-scale landmarks whose truth is Action01
top_truth = truth.labels[hierarchy.top().landmark_rows]
selection = np.flatnonzero(top_truth == 1)
print(f"selecting {len(selection)} landmarks that look like one cluster")

child = session.drill(root.id, selection)
print(f"drilled into analysis {child.id}: {child.n_points} scale-{child.scale} points")

# label everything under the drilled view in one click
rows = session.label_selection(child.id, np.arange(child.n_points), label=1)
print(f"labelled {rows} rows as {manifest.label_names[1]}")

true_rows = int((truth.labels == 1).sum())
correct = int((session.labels == truth.labels)[session.labels == 1].sum())
print(f"clicks={session.clicks} coverage={session.coverage():.3f} "
      f"({correct}/{true_rows} of the class correct)")

# exports: flat annotation list and a VIA3 project
out = Path(tempfile.mkdtemp(prefix="annoscale-demo-"))
for fmt in ("havana", "via3"):
    path = out / f"export.{fmt}.json"
    path.write_text(json.dumps(session.export_json(fmt), indent=2, sort_keys=True))
    print(f"{fmt} export -> {path}")

segments = session.export_segments()
print(f"first segments: {[(s.video_id, round(s.start_sec, 2), round(s.end_sec, 2)) for s in segments[:3]]}")
