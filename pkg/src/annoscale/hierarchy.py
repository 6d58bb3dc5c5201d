"""Multi-scale landmark hierarchies built from random walks on a KNN graph.

Scale 0 holds every data row with a perplexity-calibrated transition matrix.
Each coarser scale keeps the states that Monte-Carlo walks visit as endpoints
significantly more often than the expected rate, then expresses similarities
between the surviving landmarks through the area-of-influence walks of the
finer scale: sim(l, m) = sum_i w_i I[i,l] I[i,m] and w' = I^T w.

Walks are generated in fixed-size row chunks, each with its own generator
seeded by (seed, scale, purpose, chunk). Worker threads only decide which
chunk runs when, so results are byte-identical for any worker count.
"""

from __future__ import annotations

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataio import FeatureTensor
from .embed import calibrate_gaussian
from .neighbors import EXACT_DEFAULT_LIMIT, KnnGraph, build_knn_approx, build_knn_exact

WALK_CHUNK_ROWS = 1024  # fixed: chunk boundaries are part of the RNG contract

HHIE_MAGIC = b"HHIE"
HHIE_VERSION = 1
HHIE_HEADER = struct.Struct("<4sIQI")

DEFAULT_SCALES = 3
DEFAULT_K = 30
DEFAULT_PERPLEXITY = 10.0
DEFAULT_BETA_WALKS = 100
DEFAULT_WALK_LENGTH = 15
DEFAULT_THRESHOLD_FACTOR = 1.5
DEFAULT_BETA_AOI = 50
DEFAULT_MAX_STEPS = 100


class HierarchyError(RuntimeError):
    pass


@dataclass
class Scale:
    """One level: landmark identities plus the matrices tying it to the finer level."""

    landmark_rows: np.ndarray  # ids into the original dataset rows, ascending
    parent_indices: np.ndarray  # positions within the previous scale, ascending
    weights: np.ndarray  # float64, sums to n_points across every scale
    transition: sp.csr_matrix  # row-stochastic (all-zero rows allowed)
    similarities: sp.csr_matrix | None = None  # None at scale 0
    influence: sp.csr_matrix | None = None  # (n_prev, n_here), None at scale 0
    hits: np.ndarray | None = None  # endpoint counts that selected this scale

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_rows)


@dataclass
class Hierarchy:
    n_points: int
    scales: list[Scale]
    method: str = "hsne"
    report: dict = field(default_factory=dict)

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    def top(self) -> Scale:
        return self.scales[-1]


def build_transition_matrix(graph: KnnGraph, perplexity: float = DEFAULT_PERPLEXITY) -> sp.csr_matrix:
    """Row-stochastic walk matrix from calibrated Gaussian conditionals."""
    cond, _ = calibrate_gaussian(graph.distances, perplexity)
    n, k = cond.shape
    rows = np.repeat(np.arange(n), k)
    t = sp.csr_matrix((cond.ravel(), (rows, graph.neighbors.ravel())), shape=(n, n))
    t.sum_duplicates()
    return t


def _padded_rows(transition: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Dense (columns, cumulative probs) per row for vectorised categorical sampling.

    Empty rows become self-loops. The final valid cumulative entry is forced to
    exactly 1 so a uniform draw can never fall off the row.
    """
    m = transition.shape[0]
    indptr, indices, data = transition.indptr, transition.indices, transition.data
    nnz = np.diff(indptr)
    width = max(1, int(nnz.max()) if m else 1)
    rows = np.repeat(np.arange(m), nnz)
    offs = np.arange(len(indices)) - np.repeat(indptr[:-1], nnz)
    cols = np.repeat(np.arange(m), width).reshape(m, width)  # default self-loop
    cols[rows, offs] = indices
    probs = np.zeros((m, width))
    probs[rows, offs] = data
    rowsum = probs.sum(axis=1)
    empty = rowsum <= 0.0
    cum = np.cumsum(probs, axis=1)
    cum /= np.where(empty, 1.0, rowsum)[:, None]
    cum[empty] = 1.0
    last = np.maximum(nnz, 1) - 1
    cum[np.arange(m), last] = 1.0
    fill = np.arange(width)[None, :] > last[:, None]
    cum[fill] = 1.0
    return cols, cum


def _chunk_rng(seed: int, scale_tag: int, purpose: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, scale_tag, purpose, chunk]))


def _run_chunked(tasks, n_workers: int):
    """Execute chunk closures, returning results in chunk order."""
    if n_workers <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]


def selection_hits(
    transition: sp.csr_matrix,
    beta_walks: int = DEFAULT_BETA_WALKS,
    walk_length: int = DEFAULT_WALK_LENGTH,
    seed: int = 0,
    scale_tag: int = 1,
    n_workers: int = 1,
) -> np.ndarray:
    """Endpoint counts of beta_walks random walks of walk_length from every state."""
    m = transition.shape[0]
    cols, cum = _padded_rows(transition)

    def make(ci: int, start: int):
        def run():
            stop = min(m, start + WALK_CHUNK_ROWS)
            rng = _chunk_rng(seed, scale_tag, 0, ci)
            states = np.repeat(np.arange(start, stop), beta_walks)
            draws = rng.random((len(states), walk_length))
            for step in range(walk_length):
                j = (cum[states] < draws[:, [step]]).sum(axis=1)
                states = cols[states, j]
            return np.bincount(states, minlength=m)

        return run

    tasks = [make(ci, start) for ci, start in enumerate(range(0, m, WALK_CHUNK_ROWS))]
    hits = np.zeros(m, dtype=np.int64)
    for partial in _run_chunked(tasks, n_workers):
        hits += partial
    return hits


def select_landmarks(
    hits: np.ndarray,
    beta_walks: int = DEFAULT_BETA_WALKS,
    threshold_factor: float = DEFAULT_THRESHOLD_FACTOR,
) -> np.ndarray:
    """States whose endpoint count exceeds threshold_factor * beta_walks, ascending."""
    return np.flatnonzero(hits > threshold_factor * beta_walks)


def compute_influence(
    transition: sp.csr_matrix,
    landmarks: np.ndarray,
    features: np.ndarray,
    beta_aoi: int = DEFAULT_BETA_AOI,
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = 0,
    scale_tag: int = 1,
    n_workers: int = 1,
) -> sp.csr_matrix:
    """Absorption frequencies: walks from each state stop at the first landmark.

    Rows sum to one. A landmark's own row is its identity column. States none
    of whose walks reach a landmark within max_steps fall back to their nearest
    landmark in feature space (ties to the lower landmark position).
    """
    m = transition.shape[0]
    n_lm = len(landmarks)
    if n_lm == 0:
        raise HierarchyError("cannot compute influence without landmarks")
    cols, cum = _padded_rows(transition)
    is_lm = np.zeros(m, dtype=bool)
    is_lm[landmarks] = True
    lm_col = np.full(m, -1, dtype=np.int64)
    lm_col[landmarks] = np.arange(n_lm)
    starts_all = np.flatnonzero(~is_lm)

    def make(ci: int, lo: int):
        def run():
            sl = starts_all[lo : lo + WALK_CHUNK_ROWS]
            rng = _chunk_rng(seed, scale_tag, 1, ci)
            walker_row = np.repeat(np.arange(len(sl)), beta_aoi)
            states = np.repeat(sl, beta_aoi)
            absorbed = np.full(len(states), -1, dtype=np.int64)
            active = np.arange(len(states))
            for _ in range(max_steps):
                if active.size == 0:
                    break
                st = states[active]
                draws = rng.random(active.size)
                j = (cum[st] < draws[:, None]).sum(axis=1)
                nxt = cols[st, j]
                states[active] = nxt
                hit = is_lm[nxt]
                absorbed[active[hit]] = lm_col[nxt[hit]]
                active = active[~hit]
            valid = absorbed >= 0
            successes = np.bincount(walker_row[valid], minlength=len(sl))
            lin = walker_row[valid] * n_lm + absorbed[valid]
            uniq, counts = np.unique(lin, return_counts=True)
            r_local, c_lm = np.divmod(uniq, n_lm)
            vals = counts / successes[r_local]
            return sl, r_local, c_lm, vals, np.flatnonzero(successes == 0)

        return run

    tasks = [
        make(ci, lo) for ci, lo in enumerate(range(0, len(starts_all), WALK_CHUNK_ROWS))
    ]
    rows_out: list[np.ndarray] = [landmarks]
    cols_out: list[np.ndarray] = [np.arange(n_lm)]
    vals_out: list[np.ndarray] = [np.ones(n_lm)]
    for sl, r_local, c_lm, vals, failed in _run_chunked(tasks, n_workers):
        rows_out.append(sl[r_local])
        cols_out.append(c_lm)
        vals_out.append(vals)
        for r in failed:
            rows_out.append(sl[r : r + 1])
            cols_out.append(_nearest_landmark(features, sl[r], landmarks))
            vals_out.append(np.ones(1))
    influence = sp.csr_matrix(
        (np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
        shape=(m, n_lm),
    )
    influence.sum_duplicates()
    return influence


def _nearest_landmark(features: np.ndarray, state: int, landmarks: np.ndarray) -> np.ndarray:
    diff = features[landmarks].astype(np.float64) - features[state].astype(np.float64)
    d2 = (diff**2).sum(axis=1)
    return np.lexsort((np.arange(len(landmarks)), d2))[:1]


def next_scale_similarities(influence: sp.csr_matrix, weights: np.ndarray) -> sp.csr_matrix:
    """sim(l, m) = sum_i w_i I[i,l] I[i,m], exactly symmetric, zero diagonal."""
    weighted = influence.T @ sp.diags(weights) @ influence
    sym = (weighted + weighted.T) * 0.5
    sym = sp.csr_matrix(sym)
    sym.setdiag(0.0)
    sym.eliminate_zeros()
    return sym


def next_scale_weights(influence: sp.csr_matrix, weights: np.ndarray) -> np.ndarray:
    """w'[l] = sum_i w_i I[i,l]; total weight is conserved."""
    return np.asarray(influence.T @ weights).ravel()


def _row_normalize(matrix: sp.csr_matrix) -> sp.csr_matrix:
    out = sp.csr_matrix(matrix, copy=True)
    rowsum = np.asarray(out.sum(axis=1)).ravel()
    scale = np.where(rowsum > 0, rowsum, 1.0)
    out.data = out.data / np.repeat(scale, np.diff(out.indptr))
    return out


def build_hierarchy(
    features: FeatureTensor,
    n_scales: int = DEFAULT_SCALES,
    k: int = DEFAULT_K,
    perplexity: float = DEFAULT_PERPLEXITY,
    beta_walks: int = DEFAULT_BETA_WALKS,
    walk_length: int = DEFAULT_WALK_LENGTH,
    threshold_factor: float = DEFAULT_THRESHOLD_FACTOR,
    beta_aoi: int = DEFAULT_BETA_AOI,
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = 0,
    n_workers: int = 1,
    knn: KnnGraph | None = None,
    exact_limit: int = EXACT_DEFAULT_LIMIT,
) -> Hierarchy:
    """Data scale plus n_scales - 1 landmark scales over the feature rows."""
    if n_scales < 1:
        raise ValueError("need at least one scale")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    n = features.n_points
    report: dict = {"stages": []}
    t0 = time.perf_counter()
    if knn is None:
        if n <= exact_limit:
            knn = build_knn_exact(features, k)
        else:
            knn = build_knn_approx(features, k, seed=seed)
    report["knn_seconds"] = round(time.perf_counter() - t0, 3)

    transition = build_transition_matrix(knn, perplexity)
    scales = [
        Scale(
            landmark_rows=np.arange(n, dtype=np.int64),
            parent_indices=np.arange(n, dtype=np.int64),
            weights=np.ones(n),
            transition=transition,
        )
    ]
    for s in range(1, n_scales):
        prev = scales[-1]
        t1 = time.perf_counter()
        hits = selection_hits(prev.transition, beta_walks, walk_length, seed, s, n_workers)
        chosen = select_landmarks(hits, beta_walks, threshold_factor)
        if len(chosen) < 2:
            raise HierarchyError(
                f"scale {s} selected {len(chosen)} landmarks from "
                f"{prev.n_landmarks} states; lower threshold_factor or n_scales"
            )
        influence = compute_influence(
            prev.transition,
            chosen,
            features.values[prev.landmark_rows],
            beta_aoi,
            max_steps,
            seed,
            s,
            n_workers,
        )
        similarities = next_scale_similarities(influence, prev.weights)
        weights = next_scale_weights(influence, prev.weights)
        scales.append(
            Scale(
                landmark_rows=prev.landmark_rows[chosen],
                parent_indices=chosen,
                weights=weights,
                transition=_row_normalize(similarities),
                similarities=similarities,
                influence=influence,
                hits=hits,
            )
        )
        report["stages"].append(
            {"scale": s, "landmarks": int(len(chosen)), "seconds": round(time.perf_counter() - t1, 3)}
        )
    report["scale_sizes"] = [sc.n_landmarks for sc in scales]
    report["total_seconds"] = round(time.perf_counter() - t0, 3)
    return Hierarchy(n_points=n, scales=scales, method="hsne", report=report)


def uniform_preset_sizes(n_points: int) -> list[int]:
    """Landmark counts at the 125:25:1 data/mid/top ratio."""
    return [max(2, round(n_points * 25 / 125)), max(2, round(n_points / 125))]


def uniform_landmark_hierarchy(
    features: FeatureTensor,
    sizes: list[int],
    k: int = DEFAULT_K,
    perplexity: float = DEFAULT_PERPLEXITY,
    beta_aoi: int = DEFAULT_BETA_AOI,
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = 0,
    n_workers: int = 1,
    knn: KnnGraph | None = None,
    exact_limit: int = EXACT_DEFAULT_LIMIT,
) -> Hierarchy:
    """Baseline hierarchy whose landmarks are uniform samples of the sizes given.

    Influence, similarities and weights are computed exactly as in the walk
    based selection, so the two methods differ only in which states survive.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    n = features.n_points
    if knn is None:
        if n <= exact_limit:
            knn = build_knn_exact(features, k)
        else:
            knn = build_knn_approx(features, k, seed=seed)
    scales = [
        Scale(
            landmark_rows=np.arange(n, dtype=np.int64),
            parent_indices=np.arange(n, dtype=np.int64),
            weights=np.ones(n),
            transition=build_transition_matrix(knn, perplexity),
        )
    ]
    for s, size in enumerate(sizes, start=1):
        prev = scales[-1]
        if not 2 <= size <= prev.n_landmarks:
            raise HierarchyError(
                f"scale {s} size {size} out of range for {prev.n_landmarks} states"
            )
        rng = _chunk_rng(seed, s, 2, 0)
        chosen = np.sort(rng.choice(prev.n_landmarks, size=size, replace=False))
        influence = compute_influence(
            prev.transition,
            chosen,
            features.values[prev.landmark_rows],
            beta_aoi,
            max_steps,
            seed,
            s,
            n_workers,
        )
        similarities = next_scale_similarities(influence, prev.weights)
        scales.append(
            Scale(
                landmark_rows=prev.landmark_rows[chosen],
                parent_indices=chosen,
                weights=next_scale_weights(influence, prev.weights),
                transition=_row_normalize(similarities),
                similarities=similarities,
                influence=influence,
            )
        )
    return Hierarchy(n_points=n, scales=scales, method="uniform")


def argmax_influence(influence: sp.csr_matrix) -> np.ndarray:
    """Owning landmark per fine point: highest influence, ties to lower column."""
    csr = sp.csr_matrix(influence, copy=True)
    csr.sort_indices()
    nnz = np.diff(csr.indptr)
    if (nnz == 0).any():
        raise ValueError("influence rows must not be empty")
    starts = csr.indptr[:-1]
    row_max = np.maximum.reduceat(csr.data, starts)
    is_max = csr.data == np.repeat(row_max, nnz)
    pos_in_row = np.arange(len(csr.data)) - np.repeat(starts, nnz)
    first = np.minimum.reduceat(np.where(is_max, pos_in_row, len(csr.data)), starts)
    return csr.indices[starts + first].astype(np.int64)


def _pack_coo(matrix: sp.spmatrix | None) -> bytes:
    if matrix is None:
        return struct.pack("<Q", 0)
    coo = sp.coo_matrix(matrix)
    parts = [struct.pack("<Q", coo.nnz)]
    parts.append(coo.row.astype("<u4").tobytes())
    parts.append(coo.col.astype("<u4").tobytes())
    parts.append(coo.data.astype("<f4").tobytes())
    return b"".join(parts)


def _unpack_coo(raw: bytes, off: int, shape: tuple[int, int]) -> tuple[sp.csr_matrix | None, int]:
    (nnz,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if nnz == 0:
        return None, off
    rows = np.frombuffer(raw, "<u4", nnz, off).astype(np.int64)
    off += 4 * nnz
    cols = np.frombuffer(raw, "<u4", nnz, off).astype(np.int64)
    off += 4 * nnz
    vals = np.frombuffer(raw, "<f4", nnz, off).astype(np.float64)
    off += 4 * nnz
    return sp.csr_matrix((vals, (rows, cols)), shape=shape), off


def save_hierarchy(hierarchy: Hierarchy, path: str | Path) -> None:
    """Cache: header, then per scale ids (u32), weights (f32) and COO matrices (f32)."""
    parts = [
        HHIE_HEADER.pack(HHIE_MAGIC, HHIE_VERSION, hierarchy.n_points, hierarchy.n_scales)
    ]
    method_flag = 0 if hierarchy.method == "hsne" else 1
    parts.append(struct.pack("<I", method_flag))
    for sc in hierarchy.scales:
        parts.append(struct.pack("<Q", sc.n_landmarks))
        parts.append(sc.landmark_rows.astype("<u4").tobytes())
        parts.append(sc.parent_indices.astype("<u4").tobytes())
        parts.append(sc.weights.astype("<f4").tobytes())
        parts.append(_pack_coo(sc.transition))
        parts.append(_pack_coo(sc.similarities))
        parts.append(_pack_coo(sc.influence))
    Path(path).write_bytes(b"".join(parts))


def load_hierarchy(path: str | Path) -> Hierarchy:
    raw = Path(path).read_bytes()
    magic, version, n_points, n_scales = HHIE_HEADER.unpack_from(raw, 0)
    if magic != HHIE_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != HHIE_VERSION:
        raise ValueError(f"unsupported version {version}")
    off = HHIE_HEADER.size
    (method_flag,) = struct.unpack_from("<I", raw, off)
    off += 4
    scales: list[Scale] = []
    prev_m = n_points
    for _ in range(n_scales):
        (m,) = struct.unpack_from("<Q", raw, off)
        off += 8
        landmark_rows = np.frombuffer(raw, "<u4", m, off).astype(np.int64)
        off += 4 * m
        parent = np.frombuffer(raw, "<u4", m, off).astype(np.int64)
        off += 4 * m
        weights = np.frombuffer(raw, "<f4", m, off).astype(np.float64)
        off += 4 * m
        transition, off = _unpack_coo(raw, off, (m, m))
        similarities, off = _unpack_coo(raw, off, (m, m))
        influence, off = _unpack_coo(raw, off, (prev_m, m))
        if transition is None:
            transition = sp.csr_matrix((m, m))
        scales.append(
            Scale(
                landmark_rows=landmark_rows,
                parent_indices=parent,
                weights=weights,
                transition=transition,
                similarities=similarities,
                influence=influence,
            )
        )
        prev_m = m
    return Hierarchy(
        n_points=n_points,
        scales=scales,
        method="hsne" if method_flag == 0 else "uniform",
    )
