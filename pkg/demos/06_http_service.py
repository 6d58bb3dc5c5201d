"""
Driving the HTTP service end to end
===================================

Starts the API server on a local port, registers a dataset, builds a
hierarchy in the background, then runs a drill-label-export session
over plain HTTP.
"""

import json
import tempfile
import threading
import time
import urllib.request
from pathlib import Path

import uvicorn

from annoscale.dataio import (
    DatasetManifest,
    generate_synthetic,
    save_manifest,
    split_into_videos,
    thumos_like_distribution,
    write_features,
    write_labels,
)
from annoscale.service import create_app

BASE = "http://127.0.0.1:8767/api"


def call(method: str, path: str, body: dict | None = None) -> dict:
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(
        f"{BASE}{path}", data=data, method=method,
        headers={"Content-Type": "application/json"},
    )
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


# stage a small dataset on disk
root = Path(tempfile.mkdtemp(prefix="annoscale-demo-"))
dist = thumos_like_distribution(n_classes=4)
features, truth = generate_synthetic(dist, 1500, 4, noise_sigma=0.05, seed=5)
write_features(features, root / "features.havf")
write_labels(truth.labels, root / "labels.csv")
manifest = DatasetManifest(
    feature_file=root / "features.havf",
    dim=features.dim,
    videos=split_into_videos(1500, rows_per_video=500),
    label_names=truth.names,
    labels_file=root / "labels.csv",
)
save_manifest(manifest, root / "manifest.json")

server = uvicorn.Server(
    uvicorn.Config(create_app(data_root=str(root)), host="127.0.0.1", port=8767, log_level="error")
)
threading.Thread(target=server.run, daemon=True).start()
while not server.started:
    time.sleep(0.05)

print("health:", call("GET", "/health"))

dataset = call("POST", "/dataset", {"manifest_path": "manifest.json"})
print("dataset:", dataset)

job = call("POST", "/hierarchy", {
    "dataset_id": dataset["dataset_id"], "n_scales": 3, "k": 15,
    "perplexity": 5.0, "beta_walks": 50, "beta_aoi": 30, "seed": 0,
})
while True:
    status = call("GET", f"/hierarchy/{job['hierarchy_id']}/status")
    if status["status"] != "building":
        break
    time.sleep(0.2)
print("hierarchy:", status["status"], status.get("scale_sizes"))

session = call("POST", "/session", {"hierarchy_id": job["hierarchy_id"], "seed": 0})
analysis_id = session["root_analysis_id"]
analysis = call("GET", f"/analysis/{analysis_id}")
while analysis["embedding_status"] == "pending":
    time.sleep(0.2)
    analysis = call("GET", f"/analysis/{analysis_id}")
print(f"root analysis: {analysis['n_points']} points, embedding {analysis['embedding_status']}")

# drill into the first half of the displayed points, then label them
half = list(range(analysis["n_points"] // 2))
child = call("POST", f"/analysis/{analysis_id}/drill", {"selection": half})
labelled = call("POST", f"/session/{session['session_id']}/label", {
    "analysis_id": child["analysis_id"], "selection": list(range(child["n_points"])),
    "label": 1,
})
print("label:", labelled)

export = call("GET", f"/session/{session['session_id']}/export?format=havana")
print(f"export: {len(export['annotations'])} segments")
server.should_exit = True
print("done")
