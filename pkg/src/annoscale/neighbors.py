"""k-nearest-neighbour graphs over feature rows.

Exact brute force is the default (and the oracle) below ~20k rows; above that
an NN-descent style refinement gives an approximate graph whose recall is
checked against the exact one in tests. All distances are Euclidean.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import FeatureTensor

EXACT_DEFAULT_LIMIT = 20_000

HKNN_MAGIC = b"HKNN"
HKNN_VERSION = 1
HKNN_HEADER = struct.Struct("<4sIQI")


@dataclass(frozen=True)
class KnnGraph:
    """Per-row neighbour indices and ascending Euclidean distances."""

    k: int
    neighbors: np.ndarray  # (N, k) int64
    distances: np.ndarray  # (N, k) float32, sorted ascending per row

    def __post_init__(self):
        n = self.neighbors.shape[0]
        if self.neighbors.shape != (n, self.k) or self.distances.shape != (n, self.k):
            raise ValueError("neighbor/distance shapes must be (N, k)")
        if (self.neighbors == np.arange(n)[:, None]).any():
            raise ValueError("self-loops are not allowed")
        if (self.neighbors < 0).any() or (self.neighbors >= n).any():
            raise ValueError("neighbor index out of range")
        if (self.distances < 0).any():
            raise ValueError("negative distance")
        if (np.diff(self.distances.astype(np.float64), axis=1) < 0).any():
            raise ValueError("distances must be ascending per row")

    @property
    def n_points(self) -> int:
        return self.neighbors.shape[0]


def build_knn_exact(features: FeatureTensor, k: int) -> KnnGraph:
    """Brute-force exact KNN; ties broken by lower index.

    Small inputs use float64 row-by-row differences (bitwise reproducible by an
    independent scan); large ones switch to a float32 Gram expansion for speed.
    """
    x = features.values
    n = features.n_points
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    small = n <= 2048  # float64 differences below, faster float32 Gram above
    xd = x.astype(np.float64) if small else None
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float32)
    chunk = max(1, int(1e8 // max(1, 8 * n * x.shape[1])) if small else int(2e8 // max(1, 4 * n)))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        if small:
            diff = xd[start:stop, None, :] - xd[None, :, :]
            np.square(diff, out=diff)
            block = diff.sum(axis=-1)
        else:
            block = _sq_dists_gram(x, start, stop)
        rows = np.arange(start, stop)
        block[np.arange(stop - start), rows] = np.inf  # exclude self
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.sqrt(np.take_along_axis(block, order, axis=1)).astype(np.float32)
    return KnnGraph(k=k, neighbors=idx, distances=dist)


def _sq_dists_gram(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x, dtype=np.float32)
    block = x[start:stop] @ x.T
    block *= -2.0
    block += sq[None, :]
    block += sq[start:stop, None]
    np.maximum(block, 0.0, out=block)
    return block.astype(np.float64)


def build_knn_approx(
    features: FeatureTensor,
    k: int,
    graph_degree: int | None = None,
    search_breadth: int = 96,
    seed: int = 0,
    max_rounds: int = 12,
) -> KnnGraph:
    """NN-descent: iteratively refine a random graph through neighbours of neighbours.

    Deterministic for a fixed seed. The working degree is
    max(k, graph_degree); `search_breadth` caps the candidates examined per
    point per round.
    """
    x = features.values
    n = features.n_points
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    kw = min(n - 1, max(k, graph_degree or max(32, k)))
    rng = np.random.default_rng(seed)

    nb = rng.integers(0, n - 1, size=(n, kw), dtype=np.int64)
    nb += nb >= np.arange(n)[:, None]  # shift to skip self
    nb_dist = _gather_dists(x, nb)
    nb, nb_dist = _row_topk(nb, nb_dist, kw)

    arange_n = np.arange(n)[:, None]
    for _ in range(max_rounds):
        rev = _reverse_sample(nb, kw, rng)
        # two-hop: follow a random neighbour, then one of its neighbours
        n_hop = max(1, search_breadth - kw)
        mid_cols = rng.integers(0, kw, size=(n, n_hop), dtype=np.int64)
        far_cols = rng.integers(0, kw, size=(n, n_hop), dtype=np.int64)
        mid = np.take_along_axis(nb, mid_cols, axis=1)
        two_hop = nb[mid, far_cols]
        cand = np.concatenate([nb, rev, two_hop], axis=1)
        cand = np.where(cand == arange_n, nb[:, :1], cand)
        cand_dist = _gather_dists(x, cand)
        new_nb, new_dist = _row_topk(cand, cand_dist, kw)
        converged = (new_nb == nb).all()
        nb, nb_dist = new_nb, new_dist
        if converged:
            break

    idx, dist = _fix_deficient_rows(x, nb[:, :k], nb_dist[:, :k], k)
    return KnnGraph(k=k, neighbors=idx, distances=np.sqrt(dist).astype(np.float32))


def _fix_deficient_rows(
    x: np.ndarray, idx: np.ndarray, dist: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Rescan rows whose candidate pool never reached k distinct neighbours."""
    idx = idx.copy()
    dist = dist.copy()
    bad = ~np.isfinite(dist).all(axis=1)
    bad |= (np.sort(idx, axis=1)[:, 1:] == np.sort(idx, axis=1)[:, :-1]).any(axis=1)
    for r in np.flatnonzero(bad):
        diff = x.astype(np.float64) - x[r].astype(np.float64)
        d2 = np.einsum("ij,ij->i", diff, diff)
        d2[r] = np.inf
        order = np.argsort(d2, kind="stable")[:k]
        idx[r], dist[r] = order, d2[order]
    return idx, dist


def _gather_dists(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Squared distances from each row i to x[idx[i]], float64, chunked."""
    n = idx.shape[0]
    out = np.empty(idx.shape, dtype=np.float64)
    chunk = max(1, int(5e7 // max(1, idx.shape[1] * x.shape[1])))
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        diff = x[idx[s:e]].astype(np.float64) - x[s:e, None, :].astype(np.float64)
        out[s:e] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _row_topk(idx: np.ndarray, dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row k best by (distance, index), duplicates dropped."""
    order = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    dup = np.zeros(idx.shape, dtype=bool)
    dup[:, 1:] = idx[:, 1:] == idx[:, :-1]
    dist = np.where(dup, np.inf, dist)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(dist, order, axis=1)


def _reverse_sample(nb: np.ndarray, cap: int, rng) -> np.ndarray:
    """Up to `cap` reverse neighbours per point, padded with the point's own first neighbour."""
    n, kw = nb.shape
    src = np.repeat(np.arange(n, dtype=np.int64), kw)
    dst = nb.ravel()
    order = np.argsort(dst, kind="stable")
    dst_sorted, src_sorted = dst[order], src[order]
    starts = np.searchsorted(dst_sorted, np.arange(n))
    ends = np.searchsorted(dst_sorted, np.arange(n) + 1)
    counts = np.minimum(ends - starts, cap)
    out = np.repeat(nb[:, :1], cap, axis=1)
    cols = np.arange(cap)[None, :]
    take = cols < counts[:, None]
    flat_pos = (starts[:, None] + cols)[take]
    out[take] = src_sorted[flat_pos]
    return out


def knn_recall(approx: KnnGraph, exact: KnnGraph, sample: np.ndarray | None = None) -> float:
    """Mean over sampled rows of |approx proper-k intersection exact| / k."""
    if approx.k != exact.k:
        raise ValueError(f"k mismatch: {approx.k} vs {exact.k}")
    if approx.n_points != exact.n_points:
        raise ValueError("graphs cover different point counts")
    rows = np.arange(approx.n_points) if sample is None else np.asarray(sample)
    total = 0.0
    for r in rows:
        total += len(np.intersect1d(approx.neighbors[r], exact.neighbors[r])) / approx.k
    return total / len(rows)


def save_knn(graph: KnnGraph, path: str | Path) -> None:
    """Cache format: "HKNN", u32 version, u64 N, u32 k, then per row k u32 indices + k f32 distances."""
    if graph.n_points >= 2**32:
        raise ValueError("graph too large for u32 indices")
    header = HKNN_HEADER.pack(HKNN_MAGIC, HKNN_VERSION, graph.n_points, graph.k)
    body = np.empty((graph.n_points, 2 * graph.k), dtype="<u4")
    body[:, : graph.k] = graph.neighbors
    body[:, graph.k :] = graph.distances.astype("<f4").view("<u4")
    Path(path).write_bytes(header + body.tobytes())


def load_knn(path: str | Path) -> KnnGraph:
    raw = Path(path).read_bytes()
    magic, version, n, k = HKNN_HEADER.unpack_from(raw, 0)
    if magic != HKNN_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != HKNN_VERSION:
        raise ValueError(f"unsupported version {version}")
    body = np.frombuffer(raw, dtype="<u4", offset=HKNN_HEADER.size).reshape(n, 2 * k)
    neighbors = body[:, :k].astype(np.int64)
    distances = body[:, k:].copy().view("<f4").astype(np.float32)
    return KnnGraph(k=int(k), neighbors=neighbors, distances=distances)
