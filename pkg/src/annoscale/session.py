"""Annotation sessions over a hierarchy: drill into selections, label, export.

An analysis is one displayed set of landmarks at some scale. Drilling a
selection creates a child analysis one scale finer containing every point
whose argmax influence lies in the selection, so sibling drills are disjoint.
Labelling writes the selection's receptive rows (composed down to scale 0)
into a per-row label array, later labels overwriting earlier ones. Export
run-length encodes the rows of each video into temporal segments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dataio import DatasetManifest
from .embed import landmark_similarities_to_joint
from .hierarchy import Hierarchy, argmax_influence

UNLABELED = -1

EXPORT_FORMATS = ("havana", "via3")

HAVANA_EXPORT_VERSION = 1


class SessionError(RuntimeError):
    pass


@dataclass
class Analysis:
    """One drill level: positions into hierarchy.scales[scale] plus view state."""

    id: int
    scale: int
    indices: np.ndarray
    parent_id: int | None = None
    embedding: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Segment:
    video_id: str
    start_sec: float
    end_sec: float
    label: str


class Session:
    """Mutable annotation state: analyses tree, per-row labels, click counter."""

    def __init__(
        self,
        hierarchy: Hierarchy,
        manifest: DatasetManifest | None = None,
        label_names: list[str] | None = None,
    ):
        if label_names is None and manifest is not None:
            label_names = list(manifest.label_names)
        self.hierarchy = hierarchy
        self.manifest = manifest
        self.label_names = label_names
        self.labels = np.full(hierarchy.n_points, UNLABELED, dtype=np.int64)
        self.clicks = 0
        self.analyses: dict[int, Analysis] = {}
        self._next_id = 0
        self._owners: dict[int, np.ndarray] = {}  # scale -> argmax owner per finer point
        top = hierarchy.top()
        self._add(scale=hierarchy.n_scales - 1, indices=np.arange(top.n_landmarks), parent=None)

    def _add(self, scale: int, indices: np.ndarray, parent: int | None) -> Analysis:
        analysis = Analysis(id=self._next_id, scale=scale, indices=indices, parent_id=parent)
        self.analyses[analysis.id] = analysis
        self._next_id += 1
        return analysis

    @property
    def root(self) -> Analysis:
        return self.analyses[0]

    def analysis(self, analysis_id: int) -> Analysis:
        try:
            return self.analyses[analysis_id]
        except KeyError:
            raise SessionError(f"unknown analysis id {analysis_id}") from None

    def _selection_positions(self, analysis: Analysis, selection) -> np.ndarray:
        sel = np.unique(np.asarray(selection, dtype=np.int64))
        if sel.size == 0:
            raise SessionError("selection is empty")
        if sel.min() < 0 or sel.max() >= analysis.n_points:
            raise SessionError(
                f"selection index out of range for analysis {analysis.id} "
                f"of {analysis.n_points} points"
            )
        return analysis.indices[sel]

    def _owner_of_finer(self, scale: int) -> np.ndarray:
        """Argmax owner at `scale` for every point of scale - 1."""
        if scale not in self._owners:
            influence = self.hierarchy.scales[scale].influence
            if influence is None:
                raise SessionError(f"scale {scale} has no influence matrix")
            self._owners[scale] = argmax_influence(influence)
        return self._owners[scale]

    def _descend(self, scale: int, positions: np.ndarray) -> np.ndarray:
        """Positions at scale - 1 owned by the given scale positions."""
        owner = self._owner_of_finer(scale)
        mask = np.zeros(self.hierarchy.scales[scale].n_landmarks, dtype=bool)
        mask[positions] = True
        return np.flatnonzero(mask[owner])

    def receptive_rows(self, analysis_id: int, selection) -> np.ndarray:
        """Original dataset rows under the selection's argmax influence."""
        analysis = self.analysis(analysis_id)
        positions = self._selection_positions(analysis, selection)
        for scale in range(analysis.scale, 0, -1):
            positions = self._descend(scale, positions)
        return positions

    def drill(self, analysis_id: int, selection) -> Analysis:
        """One click: open the finer scale under the selection."""
        analysis = self.analysis(analysis_id)
        if analysis.scale == 0:
            raise SessionError("cannot drill below the data scale")
        positions = self._selection_positions(analysis, selection)
        child_positions = self._descend(analysis.scale, positions)
        self.clicks += 1
        return self._add(scale=analysis.scale - 1, indices=child_positions, parent=analysis_id)

    def label_selection(self, analysis_id: int, selection, label: int) -> int:
        """One click: write `label` over the selection's receptive rows."""
        label = int(label)
        if label < 0:
            raise SessionError(f"label must be >= 0, got {label}")
        if self.label_names is not None and label >= len(self.label_names):
            raise SessionError(
                f"label {label} out of range for {len(self.label_names)} names"
            )
        rows = self.receptive_rows(analysis_id, selection)
        self.labels[rows] = label
        self.clicks += 1
        return len(rows)

    def coverage(self) -> float:
        return float((self.labels != UNLABELED).mean())

    def analysis_joint(self, analysis_id: int):
        """Joint distribution for embedding this analysis' landmarks."""
        analysis = self.analysis(analysis_id)
        scale = self.hierarchy.scales[analysis.scale]
        matrix = scale.similarities if scale.similarities is not None else scale.transition
        sub = matrix[analysis.indices][:, analysis.indices]
        return landmark_similarities_to_joint(sub)

    def export_segments(self) -> list[Segment]:
        if self.manifest is None:
            raise SessionError("session has no manifest to map rows to videos")
        return rows_to_segments(self.labels, self.manifest, self.label_names)

    def export_json(self, fmt: str) -> dict:
        if fmt not in EXPORT_FORMATS:
            raise SessionError(f"unknown export format {fmt!r}; use one of {EXPORT_FORMATS}")
        segments = self.export_segments()
        if fmt == "havana":
            return havana_export(segments)
        return via3_export(segments, self.manifest)

    def dump(self) -> dict[str, Any]:
        """JSON-serialisable snapshot of the session state."""
        counts: dict[str, int] = {}
        for label in np.unique(self.labels[self.labels != UNLABELED]):
            name = (
                self.label_names[label]
                if self.label_names is not None
                else str(int(label))
            )
            counts[name] = int((self.labels == label).sum())
        return {
            "clicks": self.clicks,
            "coverage": self.coverage(),
            "n_points": int(self.hierarchy.n_points),
            "label_counts": counts,
            "label_names": self.label_names,
            "labels": self.labels.tolist(),
            "analyses": [
                {
                    "id": a.id,
                    "scale": a.scale,
                    "n_points": a.n_points,
                    "parent_id": a.parent_id,
                    "has_embedding": a.embedding is not None,
                }
                for a in self.analyses.values()
            ],
        }


def create_session(
    hierarchy: Hierarchy,
    manifest: DatasetManifest | None = None,
    label_names: list[str] | None = None,
) -> Session:
    return Session(hierarchy, manifest, label_names)


def rows_to_segments(
    labels: np.ndarray, manifest: DatasetManifest, label_names: list[str] | None
) -> list[Segment]:
    """Run-length encode labelled rows into per-video temporal segments.

    Unlabelled rows split runs; runs never cross video boundaries. A segment
    covers [start row's time, end row's time + stride).
    """
    if len(labels) != manifest.n_points:
        raise SessionError(
            f"label array covers {len(labels)} rows, manifest has {manifest.n_points}"
        )
    segments: list[Segment] = []
    for video in manifest.videos:
        run_label = UNLABELED
        run_start = video.row_start
        for row in range(video.row_start, video.row_end + 1):
            label = labels[row] if row < video.row_end else UNLABELED
            if label != run_label:
                if run_label != UNLABELED:
                    segments.append(
                        Segment(
                            video_id=video.id,
                            start_sec=video.row_time(run_start),
                            end_sec=video.row_time(row),
                            label=_label_name(run_label, label_names),
                        )
                    )
                run_label = label
                run_start = row
    return segments


def _label_name(label: int, label_names: list[str] | None) -> str:
    if label_names is not None:
        return label_names[label]
    return str(int(label))


def havana_export(segments: list[Segment]) -> dict:
    return {
        "version": HAVANA_EXPORT_VERSION,
        "annotations": [
            {
                "video_id": s.video_id,
                "start_sec": s.start_sec,
                "end_sec": s.end_sec,
                "label": s.label,
            }
            for s in segments
        ],
    }


def parse_havana(data: dict | str) -> list[Segment]:
    """Validate and read back an annotation export."""
    if isinstance(data, str):
        data = json.loads(data)
    if not isinstance(data, dict):
        raise ValueError("annotation export must be a JSON object")
    if data.get("version") != HAVANA_EXPORT_VERSION:
        raise ValueError(f"unsupported export version {data.get('version')!r}")
    if not isinstance(data.get("annotations"), list):
        raise ValueError("export is missing the annotations list")
    segments = []
    for i, entry in enumerate(data["annotations"]):
        try:
            seg = Segment(
                video_id=str(entry["video_id"]),
                start_sec=float(entry["start_sec"]),
                end_sec=float(entry["end_sec"]),
                label=str(entry["label"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"annotation {i} is malformed: {exc}") from None
        if not seg.end_sec > seg.start_sec:
            raise ValueError(
                f"annotation {i}: end_sec {seg.end_sec} must exceed start_sec {seg.start_sec}"
            )
        segments.append(seg)
    return segments


def via3_export(segments: list[Segment], manifest: DatasetManifest) -> dict:
    """Minimal VIA3 temporal-segment project covering the manifest's videos."""
    files = {}
    fid_of = {}
    for i, video in enumerate(manifest.videos, start=1):
        fid = str(i)
        fid_of[video.id] = fid
        files[fid] = {"fid": fid, "fname": video.id, "type": 4, "loc": 1, "src": ""}
    metadata = {}
    for j, seg in enumerate(segments, start=1):
        metadata[f"{fid_of[seg.video_id]}_{j:08d}"] = {
            "vid": fid_of[seg.video_id],
            "flg": 0,
            "z": [seg.start_sec, seg.end_sec],
            "xy": [],
            "av": {"1": seg.label},
        }
    return {
        "project": {"pid": "__VIA_PROJECT_ID__", "pname": "annotations", "data_format_version": "3.1.1"},
        "config": {"file": {"loc_prefix": {"1": ""}}, "ui": {}},
        "attribute": {
            "1": {"aname": "label", "anchor_id": "FILE1_Z2_XY0", "type": 1, "desc": "", "options": {}}
        },
        "file": files,
        "metadata": metadata,
        "view": {fid: {"fid_list": [fid]} for fid in files},
    }
