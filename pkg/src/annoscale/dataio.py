"""Feature tensors, dataset manifests, ground-truth labels and the synthetic generator.

The feature file is a self-describing little-endian binary ("HAVF" magic) so the
pipeline has no coupling to external array formats. Manifests are plain JSON and
labels are a row,label CSV so both stay human-auditable.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HAVF_MAGIC = b"HAVF"
HAVF_VERSION = 1
HAVF_HEADER = struct.Struct("<4sIQII")  # magic, version, n_points, dim, dtype
DTYPE_F32 = 0

BACKGROUND = "Background"


class FeatureFileError(ValueError):
    """Malformed feature file; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureTensor:
    """N x D row-major float32 matrix of per-clip feature activations."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"feature tensor must be 2-D and non-empty, got shape {v.shape}")
        if v.dtype != np.float32:
            raise ValueError(f"feature tensor must be float32, got {v.dtype}")
        if not np.isfinite(v).all():
            bad = int(np.flatnonzero(~np.isfinite(v.ravel()))[0])
            raise ValueError(f"non-finite feature value at flat index {bad}")

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class VideoEntry:
    """One video's slice of the feature tensor.

    `stride_sec` is the wall-clock spacing between consecutive feature rows and
    is independent of `fps` (a clip stride in frames upstream determines it).
    """

    id: str
    fps: float
    stride_sec: float
    row_start: int
    row_count: int
    thumbnails: str | None = None

    def __post_init__(self):
        if self.stride_sec <= 0:
            raise ManifestError(f"video {self.id}: stride_sec must be > 0, got {self.stride_sec}")
        if self.row_count < 1:
            raise ManifestError(f"video {self.id}: row_count must be >= 1, got {self.row_count}")

    def row_time(self, row: int) -> float:
        """Start time in seconds of a global feature row within this video."""
        return (row - self.row_start) * self.stride_sec

    @property
    def row_end(self) -> int:
        return self.row_start + self.row_count


@dataclass
class DatasetManifest:
    """Dataset description: feature file, video <-> row mapping, label table."""

    feature_file: Path
    dim: int
    videos: list[VideoEntry]
    label_names: list[str]
    labels_file: Path | None = None
    n_points: int = field(init=False, default=0)

    def __post_init__(self):
        if not self.videos:
            raise ManifestError("manifest has no videos")
        ordered = sorted(self.videos, key=lambda v: v.row_start)
        cursor = 0
        for v in ordered:
            if v.row_start > cursor:
                raise ManifestError(f"row coverage gap at row {cursor} (before video {v.id})")
            if v.row_start < cursor:
                raise ManifestError(f"videos overlap at row {v.row_start} (video {v.id})")
            cursor = v.row_end
        self.videos = ordered
        self.n_points = cursor

    def video_of_row(self, row: int) -> VideoEntry:
        for v in self.videos:
            if v.row_start <= row < v.row_end:
                return v
        raise IndexError(f"row {row} outside [0, {self.n_points})")

    def thumbnail_path(self, row: int) -> Path | None:
        """Thumbnails are named by the row's local index, zero-padded to 8 digits."""
        v = self.video_of_row(row)
        if v.thumbnails is None:
            return None
        return Path(v.thumbnails) / f"{row - v.row_start:08d}.jpg"


@dataclass(frozen=True)
class GroundTruth:
    """One label id per feature row plus the id -> name table."""

    labels: np.ndarray
    names: list[str]

    def __post_init__(self):
        if self.labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if self.labels.size and int(self.labels.max()) >= len(self.names):
            bad = int(np.flatnonzero(self.labels >= len(self.names))[0])
            raise ValueError(
                f"label id {int(self.labels[bad])} at row {bad} exceeds name table "
                f"of size {len(self.names)}"
            )
        if self.labels.size and int(self.labels.min()) < 0:
            bad = int(np.flatnonzero(self.labels < 0)[0])
            raise ValueError(f"negative label id at row {bad}")

    @property
    def n_points(self) -> int:
        return self.labels.shape[0]

    def class_fractions(self) -> np.ndarray:
        counts = np.bincount(self.labels, minlength=len(self.names))
        return counts / self.labels.shape[0]


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class row fractions (Background included), summing to 1."""

    fractions: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        f = self.fractions
        if (f < 0).any():
            raise ValueError("class fractions must be non-negative")
        if abs(float(f.sum()) - 1.0) > 1e-9:
            raise ValueError(f"class fractions must sum to 1, got {float(f.sum()):.12f}")
        if self.names is not None and len(self.names) != f.shape[0]:
            raise ValueError("names length does not match fractions")

    @property
    def n_classes(self) -> int:
        return self.fractions.shape[0]


def read_features(path: str | Path) -> FeatureTensor:
    """Read an HAVF feature file.

    Layout: "HAVF", u32 version, u64 N, u32 D, u32 dtype (0 = float32), then
    N*D little-endian float32 values in row-major order.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HAVF_HEADER.size:
        raise FeatureFileError(
            f"file too short for header: expected {HAVF_HEADER.size} bytes, got {len(raw)}",
            offset=len(raw),
        )
    magic, version, n, d, dtype = HAVF_HEADER.unpack_from(raw, 0)
    if magic != HAVF_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}", offset=0)
    if version != HAVF_VERSION:
        raise FeatureFileError(f"unsupported version {version}", offset=4)
    if dtype != DTYPE_F32:
        raise FeatureFileError(f"unsupported dtype code {dtype}", offset=20)
    if n < 1 or d < 1:
        raise FeatureFileError(f"empty tensor {n}x{d} not allowed", offset=8)
    expected = HAVF_HEADER.size + n * d * 4
    if len(raw) != expected:
        raise FeatureFileError(
            f"truncated payload: expected {expected} bytes total, got {len(raw)}",
            offset=len(raw),
        )
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HAVF_HEADER.size)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise FeatureFileError(
            f"non-finite value at row {bad // d}, column {bad % d}",
            offset=HAVF_HEADER.size + bad * 4,
        )
    values = values.reshape(n, d).copy()  # own the memory, frombuffer is read-only
    return FeatureTensor(values)


def write_features(tensor: FeatureTensor, path: str | Path) -> None:
    """Write an HAVF file; read_features(path) reproduces the tensor bit-exactly."""
    header = HAVF_HEADER.pack(HAVF_MAGIC, HAVF_VERSION, tensor.n_points, tensor.dim, DTYPE_F32)
    payload = np.ascontiguousarray(tensor.values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_feature_header(path: str | Path) -> tuple[int, int]:
    """(n_points, dim) from the file header without loading the payload."""
    with open(path, "rb") as fh:
        raw = fh.read(HAVF_HEADER.size)
    if len(raw) < HAVF_HEADER.size:
        raise FeatureFileError("file too short for header", offset=len(raw))
    magic, version, n, d, _ = HAVF_HEADER.unpack(raw)
    if magic != HAVF_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r}", offset=0)
    return int(n), int(d)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest (JSON).

    Relative file references are resolved against the manifest's directory.
    The referenced feature file must exist and agree on dim / total rows.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    try:
        videos = []
        for v in doc["videos"]:
            entry = dict(v)
            if entry.get("thumbnails"):
                entry["thumbnails"] = str(_resolve(base, entry["thumbnails"]))
            videos.append(VideoEntry(**entry))
        manifest = DatasetManifest(
            feature_file=_resolve(base, doc["feature_file"]),
            dim=int(doc["dim"]),
            videos=videos,
            label_names=list(doc["label_names"]),
            labels_file=_resolve(base, doc["labels_file"]) if doc.get("labels_file") else None,
        )
    except KeyError as exc:
        raise ManifestError(f"manifest missing key {exc}") from exc
    if not manifest.feature_file.exists():
        raise ManifestError(f"feature file not found: {manifest.feature_file}")
    n, d = read_feature_header(manifest.feature_file)
    if d != manifest.dim:
        raise ManifestError(f"manifest dim {manifest.dim} != feature file dim {d}")
    if n != manifest.n_points:
        raise ManifestError(
            f"videos cover {manifest.n_points} rows but feature file has {n}"
        )
    if manifest.label_names and manifest.label_names[0] != BACKGROUND:
        raise ManifestError("label_names[0] is reserved for Background")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "feature_file": str(manifest.feature_file),
        "dim": manifest.dim,
        "videos": [
            {
                "id": v.id,
                "fps": v.fps,
                "stride_sec": v.stride_sec,
                "row_start": v.row_start,
                "row_count": v.row_count,
                **({"thumbnails": v.thumbnails} if v.thumbnails else {}),
            }
            for v in manifest.videos
        ],
        "label_names": manifest.label_names,
    }
    if manifest.labels_file is not None:
        doc["labels_file"] = str(manifest.labels_file)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_ground_truth(manifest: DatasetManifest) -> GroundTruth:
    """Read the labels CSV referenced by the manifest."""
    if manifest.labels_file is None:
        raise ManifestError("manifest has no labels_file")
    labels = np.empty(manifest.n_points, dtype=np.int64)
    with open(manifest.labels_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["row", "label"]:
            raise ValueError(f"labels file must start with 'row,label' header, got {header}")
        count = 0
        for row_idx, rec in enumerate(reader):
            r, lab = int(rec[0]), int(rec[1])
            if r != row_idx:
                raise ValueError(f"labels file rows out of order at line {row_idx + 2}")
            if lab >= len(manifest.label_names) or lab < 0:
                raise ValueError(f"unknown label id {lab} at row {r}")
            labels[r] = lab
            count += 1
    if count != manifest.n_points:
        raise ValueError(f"labels file has {count} rows, expected {manifest.n_points}")
    return GroundTruth(labels=labels, names=list(manifest.label_names))


def write_labels(labels: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "label"])
        for r, lab in enumerate(labels):
            writer.writerow([r, int(lab)])


def apportion_counts(fractions: np.ndarray, n_points: int) -> np.ndarray:
    """Largest-remainder apportionment of n_points over classes.

    Deterministic: leftover seats go to the largest fractional remainders,
    ties resolved by lower class id.
    """
    quotas = np.asarray(fractions, dtype=np.float64) * n_points
    counts = np.floor(quotas).astype(np.int64)
    leftover = n_points - int(counts.sum())
    if leftover > 0:
        remainders = quotas - counts
        order = np.lexsort((np.arange(len(counts)), -remainders))
        counts[order[:leftover]] += 1
    return counts


def generate_synthetic(
    distribution: ClassDistribution,
    n_points: int,
    n_classes: int,
    noise_sigma: float,
    seed: int,
    mean_segment_rows: int | None = None,
) -> tuple[FeatureTensor, GroundTruth]:
    """Synthetic one-hot features with Gaussian noise, arranged as temporal runs.

    Row i is one_hot(class_i) + eps with eps ~ N(0, noise_sigma^2) per
    coordinate, so the output dim equals n_classes. Class counts follow the
    distribution by largest-remainder apportionment. Labels are laid out as
    alternating background/action runs so the sequence looks like real
    temporal ground truth; `mean_segment_rows` tunes the run granularity
    (default scales with n_points).
    """
    if n_classes != distribution.n_classes:
        raise ValueError(f"n_classes {n_classes} != distribution size {distribution.n_classes}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if n_points < n_classes and (distribution.fractions > 0).all():
        raise ValueError(
            f"cannot place {n_classes} classes with positive fractions in {n_points} rows"
        )
    counts = apportion_counts(distribution.fractions, n_points)
    rng = np.random.default_rng(seed)
    if mean_segment_rows is None:
        mean_segment_rows = min(50, max(4, n_points // 1000))
    labels = _temporal_label_sequence(counts, rng, mean_segment_rows)

    one_hot = np.zeros((n_points, n_classes), dtype=np.float32)
    one_hot[np.arange(n_points), labels] = 1.0
    noise = rng.standard_normal((n_points, n_classes), dtype=np.float32) * np.float32(noise_sigma)
    tensor = FeatureTensor(one_hot + noise)
    names = list(distribution.names) if distribution.names else default_label_names(n_classes)
    return tensor, GroundTruth(labels=labels, names=names)


def default_label_names(n_classes: int) -> list[str]:
    return [BACKGROUND] + [f"Action{i:02d}" for i in range(1, n_classes)]


def _temporal_label_sequence(counts: np.ndarray, rng, mean_len: int) -> np.ndarray:
    """Interleave class quotas as runs: background filler between action chunks."""
    chunks: list[tuple[int, int]] = []  # (class id, length)
    for c in range(1, len(counts)):
        remaining = int(counts[c])
        while remaining > 0:
            lo, hi = max(1, mean_len // 2), mean_len + mean_len // 2
            length = min(remaining, int(rng.integers(lo, hi + 1)))
            chunks.append((c, length))
            remaining -= length
    order = rng.permutation(len(chunks))
    chunks = [chunks[i] for i in order]

    background = int(counts[0])
    n_gaps = len(chunks) + 1
    gap = np.full(n_gaps, background // n_gaps, dtype=np.int64)
    gap[: background - int(gap.sum())] += 1

    out = np.empty(int(counts.sum()), dtype=np.int64)
    pos = 0
    for i, (cls, length) in enumerate(chunks):
        pos = _fill(out, pos, 0, int(gap[i]))
        pos = _fill(out, pos, cls, length)
    pos = _fill(out, pos, 0, int(gap[-1]))
    assert pos == out.shape[0]
    return out


def _fill(arr: np.ndarray, pos: int, value: int, length: int) -> int:
    arr[pos : pos + length] = value
    return pos + length


def split_into_videos(
    n_points: int,
    rows_per_video: int = 1000,
    stride_sec: float = 0.1333,
    fps: float = 30.0,
    id_prefix: str = "video",
) -> list[VideoEntry]:
    """Partition rows into equal-length synthetic videos (last one takes the tail)."""
    n_videos = max(1, math.ceil(n_points / rows_per_video))
    videos = []
    for i in range(n_videos):
        start = i * rows_per_video
        count = min(rows_per_video, n_points - start)
        if count <= 0:
            break
        videos.append(
            VideoEntry(
                id=f"{id_prefix}_{i:04d}",
                fps=fps,
                stride_sec=stride_sec,
                row_start=start,
                row_count=count,
            )
        )
    return videos


def load_distribution(path: str | Path) -> ClassDistribution:
    doc = json.loads(Path(path).read_text())
    return ClassDistribution(
        fractions=np.asarray(doc["fractions"], dtype=np.float64),
        names=list(doc["names"]) if doc.get("names") else None,
    )


def thumos_like_distribution(n_classes: int, background_fraction: float = 2.0 / 3.0) -> ClassDistribution:
    """Background at 2/3 of rows, remainder split evenly over the action classes."""
    if n_classes < 2:
        raise ValueError("need at least Background plus one action class")
    fractions = np.full(n_classes, (1.0 - background_fraction) / (n_classes - 1))
    fractions[0] = background_fraction
    return ClassDistribution(fractions=fractions, names=default_label_names(n_classes))


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else (base / q)
