"""Click-effort simulation over annotation sessions.

One click is one user action: a drill or a label. The linear baseline walks
every ground-truth run (background included) at one click per segment. The
hierarchical simulator plays an oracle annotator depth first: cluster the
displayed points, label pure clusters, drill impure ones (re-clustering for
free at the data scale, where drilling is impossible). Drill plans express the
automatic variant, where the system drills for free and only labels cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import DatasetManifest, FeatureTensor, GroundTruth
from .hierarchy import Hierarchy, argmax_influence
from .session import create_session

CURVE_HEADER = "clicks,coverage,accuracy"


def macro_coverage(assigned: np.ndarray, truth_labels: np.ndarray) -> float:
    """Mean over truth classes of the fraction of that class's rows labelled correctly."""
    classes, totals = np.unique(truth_labels, return_counts=True)
    correct_rows = assigned == truth_labels
    hits = np.bincount(truth_labels[correct_rows], minlength=int(classes.max()) + 1)[classes]
    return float((hits / totals).mean())


class _MacroTracker:
    """Incremental macro coverage; labelled selections must not overlap."""

    def __init__(self, truth_labels: np.ndarray):
        self._classes, self._totals = np.unique(truth_labels, return_counts=True)
        self._slot = {int(c): i for i, c in enumerate(self._classes)}
        self._correct = np.zeros(len(self._classes))

    def add_correct(self, label: int, count: int) -> None:
        self._correct[self._slot[label]] += count

    def macro(self) -> float:
        return float((self._correct / self._totals).mean())


@dataclass
class EffortCurve:
    """Macro coverage and accuracy of labelled rows as a function of clicks spent."""

    clicks: list[int] = field(default_factory=list)
    coverage: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def point(self, clicks: int, coverage: float, accuracy: float) -> None:
        if self.clicks and clicks < self.clicks[-1]:
            raise ValueError("clicks must be non-decreasing")
        self.clicks.append(int(clicks))
        self.coverage.append(float(coverage))
        self.accuracy.append(float(accuracy))

    def clicks_to(self, target_coverage: float) -> float:
        """First click count reaching the target, or inf if never reached."""
        for c, cov in zip(self.clicks, self.coverage):
            if cov >= target_coverage:
                return float(c)
        return math.inf

    def final_coverage(self) -> float:
        return self.coverage[-1] if self.coverage else 0.0

    def __len__(self) -> int:
        return len(self.clicks)


def save_curve(curve: EffortCurve, path: str | Path) -> None:
    lines = [CURVE_HEADER]
    for c, cov, acc in zip(curve.clicks, curve.coverage, curve.accuracy):
        lines.append(f"{c},{cov:.6f},{acc:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_curve(path: str | Path) -> EffortCurve:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0].strip() != CURVE_HEADER:
        raise ValueError(f"curve file must start with header {CURVE_HEADER!r}")
    curve = EffortCurve()
    for ln in lines[1:]:
        c, cov, acc = ln.split(",")
        curve.point(int(c), float(cov), float(acc))
    return curve


def truth_runs(labels: np.ndarray, manifest: DatasetManifest) -> list[tuple[int, int]]:
    """Maximal constant-label row runs per video, in temporal order."""
    runs: list[tuple[int, int]] = []
    for video in manifest.videos:
        seg = labels[video.row_start : video.row_end]
        cuts = np.flatnonzero(np.diff(seg)) + 1
        bounds = np.concatenate([[0], cuts, [len(seg)]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            runs.append((video.row_start + int(a), video.row_start + int(b)))
    return runs


def linear_baseline_curve(truth: GroundTruth, manifest: DatasetManifest) -> EffortCurve:
    """Timeline annotation: one click per ground-truth segment, background included."""
    runs = truth_runs(truth.labels, manifest)
    tracker = _MacroTracker(truth.labels)
    curve = EffortCurve()
    curve.point(0, 0.0, 1.0)
    for i, (a, b) in enumerate(runs, start=1):
        tracker.add_correct(int(truth.labels[a]), b - a)
        curve.point(i, tracker.macro(), 1.0)
    return curve


def single_linkage_labels(points: np.ndarray, n_clusters: int) -> np.ndarray:
    """Single-linkage partition: build the MST, cut the n_clusters - 1 longest edges.

    Cluster ids follow first occurrence in row order.
    """
    m = len(points)
    if not 1 <= n_clusters <= m:
        raise ValueError(f"n_clusters must be in [1, {m}], got {n_clusters}")
    if n_clusters == 1 or m == 1:
        return np.zeros(m, dtype=np.int64)
    x = points.astype(np.float64)
    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    best_d2 = ((x - x[0]) ** 2).sum(axis=1)
    best_src = np.zeros(m, dtype=np.int64)
    edges = np.empty((m - 1, 2), dtype=np.int64)
    weights = np.empty(m - 1)
    search = best_d2.copy()
    search[0] = np.inf
    for e in range(m - 1):
        j = int(np.argmin(search))
        edges[e] = (best_src[j], j)
        weights[e] = search[j]
        in_tree[j] = True
        search[j] = np.inf
        d2 = ((x - x[j]) ** 2).sum(axis=1)
        closer = d2 < best_d2
        closer &= ~in_tree
        best_d2[closer] = d2[closer]
        best_src[closer] = j
        search[closer] = d2[closer]
    keep = np.argsort(-weights, kind="stable")[n_clusters - 1 :]
    parent = np.arange(m)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in keep:
        ra, rb = find(edges[e, 0]), find(edges[e, 1])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(m)])
    return _first_occurrence_relabel(roots)


def kmeans_labels(
    points: np.ndarray, n_clusters: int, seed: int = 0, max_iter: int = 100
) -> np.ndarray:
    """Lloyd's algorithm with farthest-point seeding and empty-cluster reseeding."""
    m = len(points)
    if not 1 <= n_clusters <= m:
        raise ValueError(f"n_clusters must be in [1, {m}], got {n_clusters}")
    x = points.astype(np.float64)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(m))]
    min_d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(n_clusters - 1):
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, ((x - x[nxt]) ** 2).sum(axis=1))
    centers = x[chosen].copy()
    labels = np.full(m, -1, dtype=np.int64)
    x_sq = (x**2).sum(axis=1)
    for _ in range(max_iter):
        d2 = x_sq[:, None] + (centers**2).sum(axis=1)[None, :] - 2.0 * (x @ centers.T)
        np.maximum(d2, 0.0, out=d2)
        new_labels = d2.argmin(axis=1)
        assigned_d2 = d2[np.arange(m), new_labels]
        for c in range(n_clusters):
            if not (new_labels == c).any():
                far = int(np.argmax(assigned_d2))
                new_labels[far] = c
                assigned_d2[far] = 0.0
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(n_clusters):
            centers[c] = x[labels == c].mean(axis=0)
    return _first_occurrence_relabel(labels)


def _first_occurrence_relabel(raw: np.ndarray) -> np.ndarray:
    _, first_pos, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_pos, kind="stable"), kind="stable")
    return order[inverse].astype(np.int64)


CLUSTERERS = {
    "single_linkage": lambda x, n, seed: single_linkage_labels(x, n),
    "kmeans": lambda x, n, seed: kmeans_labels(x, n, seed=seed),
}


@dataclass
class SimulationResult:
    curve: EffortCurve
    clicks: int
    n_drills: int
    n_labels: int
    coverage: float
    accuracy: float


def simulate_hierarchical(
    hierarchy: Hierarchy,
    truth: GroundTruth,
    features: FeatureTensor,
    clusterer: str = "single_linkage",
    seed: int = 0,
    max_clicks: int = 1_000_000,
) -> SimulationResult:
    """Oracle annotator: label pure clusters, drill impure ones, depth first.

    The cluster count at each step is the number of distinct truth labels under
    the displayed points (capped by their count). Only drills and labels cost
    clicks; clustering guides the lasso and is free.
    """
    if clusterer not in CLUSTERERS:
        raise ValueError(f"unknown clusterer {clusterer!r}; use one of {sorted(CLUSTERERS)}")
    cluster_fn = CLUSTERERS[clusterer]
    session = create_session(hierarchy)
    curve = EffortCurve()
    curve.point(0, 0.0, 1.0)
    tracker = _MacroTracker(truth.labels)
    n_labeled = 0
    n_correct = 0
    n_drills = 0
    n_labels = 0

    def record() -> None:
        acc = 1.0 if n_labeled == 0 else n_correct / n_labeled
        curve.point(session.clicks, tracker.macro(), acc)

    # stack entries: (analysis_id, local_indices, fresh) where fresh means the
    # entry is a whole analysis still to be clustered
    root = session.root
    stack: list[tuple[int, np.ndarray, bool]] = [
        (root.id, np.arange(root.n_points), True)
    ]
    while stack:
        if session.clicks >= max_clicks:
            break
        analysis_id, local, fresh = stack.pop()
        analysis = session.analysis(analysis_id)
        rows = session.receptive_rows(analysis_id, local)
        row_labels = truth.labels[rows]
        distinct = np.unique(row_labels)
        if len(distinct) == 1:
            label = int(distinct[0])
            session.label_selection(analysis_id, local, label)
            tracker.add_correct(label, len(rows))
            n_labels += 1
            n_labeled += len(rows)
            n_correct += len(rows)
            record()
            continue
        if not fresh and analysis.scale > 0:
            child = session.drill(analysis_id, local)
            n_drills += 1
            record()
            stack.append((child.id, np.arange(child.n_points), True))
            continue
        # cluster the displayed points and examine each group (free)
        scale = hierarchy.scales[analysis.scale]
        member_rows = scale.landmark_rows[analysis.indices[local]]
        pts = features.values[member_rows]
        n_groups = min(len(distinct), len(local))
        groups = cluster_fn(pts, n_groups, seed)
        for c in range(n_groups - 1, -1, -1):
            stack.append((analysis_id, local[groups == c], False))
    return SimulationResult(
        curve=curve,
        clicks=session.clicks,
        n_drills=n_drills,
        n_labels=n_labels,
        coverage=tracker.macro(),
        accuracy=1.0 if n_labeled == 0 else n_correct / n_labeled,
    )


@dataclass
class DrillPlan:
    """Groups of top-scale landmark positions to drill into, in order."""

    method: str
    groups: list[np.ndarray]
    seed: int = 0


def auto_drill(
    hierarchy: Hierarchy, features: FeatureTensor, n_clusters: int, seed: int = 0
) -> DrillPlan:
    """Cluster the top scale with k-means; each cluster becomes one drill."""
    top = hierarchy.top()
    pts = features.values[top.landmark_rows]
    labels = kmeans_labels(pts, n_clusters, seed=seed)
    groups = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    return DrillPlan(method="kmeans", groups=groups, seed=seed)


def random_drill_plan(hierarchy: Hierarchy, n_clusters: int, seed: int = 0) -> DrillPlan:
    """Control plan: a uniformly random balanced partition of the top scale."""
    m = hierarchy.top().n_landmarks
    if not 1 <= n_clusters <= m:
        raise ValueError(f"n_clusters must be in [1, {m}], got {n_clusters}")
    perm = np.random.default_rng(seed).permutation(m)
    groups = [np.sort(g) for g in np.array_split(perm, n_clusters)]
    return DrillPlan(method="random", groups=groups, seed=seed)


@dataclass
class PlanResult:
    curve: EffortCurve
    displayed: list[int]
    mean_displayed: float
    coverage: float
    accuracy: float


def simulate_plan(
    hierarchy: Hierarchy,
    truth: GroundTruth,
    plan: DrillPlan,
    max_label_clicks: int | None = None,
) -> PlanResult:
    """Label each drilled group with its majority truth label, one click per group.

    Drills are performed by the system and cost nothing; `displayed` records
    how many next-scale points each drill would show.
    """
    session = create_session(hierarchy)
    top_scale_index = hierarchy.n_scales - 1
    if top_scale_index == 0:
        raise ValueError("plan simulation needs at least two scales")
    owner = argmax_influence(hierarchy.scales[top_scale_index].influence)
    curve = EffortCurve()
    curve.point(0, 0.0, 1.0)
    tracker = _MacroTracker(truth.labels)
    n_labeled = 0
    n_correct = 0
    displayed: list[int] = []
    budget = len(plan.groups) if max_label_clicks is None else max_label_clicks
    for group in plan.groups[:budget]:
        mask = np.zeros(hierarchy.top().n_landmarks, dtype=bool)
        mask[group] = True
        displayed.append(int(mask[owner].sum()))
        rows = session.receptive_rows(0, group)
        values, counts = np.unique(truth.labels[rows], return_counts=True)
        at = int(counts.argmax())  # ties go to the lower label id (values ascend)
        majority = int(values[at])
        session.label_selection(0, group, majority)
        tracker.add_correct(majority, int(counts[at]))
        n_labeled += len(rows)
        n_correct += int(counts[at])
        curve.point(session.clicks, tracker.macro(), n_correct / n_labeled)
    return PlanResult(
        curve=curve,
        displayed=displayed,
        mean_displayed=float(np.mean(displayed)) if displayed else 0.0,
        coverage=curve.coverage[-1],
        accuracy=curve.accuracy[-1],
    )


def compare_curves(curve_a: EffortCurve, curve_b: EffortCurve, target_coverage: float = 0.95) -> dict:
    """Clicks each curve needs to reach the target, and their ratio b / a."""
    a = curve_a.clicks_to(target_coverage)
    b = curve_b.clicks_to(target_coverage)
    if math.isinf(a) and math.isinf(b):
        ratio = math.nan
    elif math.isinf(a):
        ratio = 0.0
    elif a == 0:
        ratio = math.inf if b > 0 else math.nan
    else:
        ratio = b / a
    return {"target_coverage": target_coverage, "clicks_a": a, "clicks_b": b, "ratio": ratio}
