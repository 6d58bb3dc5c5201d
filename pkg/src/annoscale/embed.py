"""Two-dimensional t-SNE embeddings with Barnes-Hut repulsion.

The joint distribution comes either from perplexity-calibrated Gaussian
conditionals over a KNN graph (finest scale) or from landmark similarity
matrices (coarser scales). Gradient descent follows the usual recipe: early
exaggeration, per-parameter gains, momentum switch. All randomness flows from
an explicit seed and accumulation uses deterministic ordered reductions, so a
given (P, seed) pair always yields byte-identical coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .neighbors import KnnGraph

EXACT_REPULSION_CHUNK = 512
MAX_TREE_DEPTH = 30


@dataclass
class EmbedResult:
    coords: np.ndarray  # (N, 2) float64
    kl_trace: list[tuple[int, float]] = field(default_factory=list)
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)


def calibrate_gaussian(
    distances: np.ndarray,
    perplexity: float,
    tol: float = 1e-4,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row binary search for the Gaussian precision matching a perplexity.

    Row i gets p_j|i proportional to exp(-beta_i * d_ij^2) with beta_i chosen
    so that 2^H(p) is within `tol` of `perplexity`. Rows whose distances are
    all equal (including all zero) are degenerate: any beta gives the uniform
    distribution, reported with beta = 0 (an infinitely wide kernel).
    Perplexities above k saturate at the uniform row.
    """
    d2 = np.asarray(distances, dtype=np.float64) ** 2
    n, k = d2.shape
    if perplexity < 1.0:
        raise ValueError(f"perplexity must be >= 1, got {perplexity}")
    r = d2 - d2.min(axis=1, keepdims=True)
    target = np.log(perplexity)

    probs = np.full((n, k), 1.0 / k)
    betas = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    degenerate = r.max(axis=1) <= 0.0
    betas[degenerate] = 0.0
    active = np.flatnonzero(~degenerate)

    for _ in range(max_iter):
        if active.size == 0:
            break
        b = betas[active]
        ex = np.exp(-r[active] * b[:, None])
        s = ex.sum(axis=1)
        entropy = np.log(s) + b * (r[active] * ex).sum(axis=1) / s
        probs[active] = ex / s[:, None]
        not_done = np.abs(np.exp(entropy) - perplexity) > tol
        idx = active[not_done]
        too_wide = entropy[not_done] > target
        wide_idx, narrow_idx = idx[too_wide], idx[~too_wide]
        lo[wide_idx] = betas[wide_idx]
        betas[wide_idx] = np.where(
            np.isinf(hi[wide_idx]), betas[wide_idx] * 2.0, (betas[wide_idx] + hi[wide_idx]) / 2.0
        )
        hi[narrow_idx] = betas[narrow_idx]
        betas[narrow_idx] = (lo[narrow_idx] + betas[narrow_idx]) / 2.0
        active = idx
    return probs, betas


def symmetrize(conditionals: np.ndarray, neighbors: np.ndarray) -> sp.csr_matrix:
    """Joint p_ij = (p_j|i + p_i|j) / (2N) as a sparse matrix summing to one."""
    n, k = conditionals.shape
    rows = np.repeat(np.arange(n), k)
    cond = sp.csr_matrix(
        (conditionals.ravel().astype(np.float64), (rows, neighbors.ravel())), shape=(n, n)
    )
    joint = (cond + cond.T) / (2.0 * n)
    joint.eliminate_zeros()
    return joint.tocsr()


def joint_from_knn(graph: KnnGraph, perplexity: float) -> sp.csr_matrix:
    cond, _ = calibrate_gaussian(graph.distances, perplexity)
    return symmetrize(cond, graph.neighbors)


def landmark_similarities_to_joint(similarities: sp.spmatrix) -> sp.csr_matrix:
    """Normalise a symmetric landmark similarity matrix into a joint distribution."""
    s = sp.csr_matrix(similarities, dtype=np.float64)
    s.setdiag(0.0)
    s.eliminate_zeros()
    s = (s + s.T) / 2.0
    total = s.sum()
    if total <= 0:
        raise ValueError("similarity matrix has no off-diagonal mass")
    return sp.csr_matrix(s / total)


def tsne_init(n: int, seed: int = 0) -> np.ndarray:
    """Standard small Gaussian start: N(0, 1e-4) per coordinate."""
    rng = np.random.default_rng(seed)
    return rng.normal(scale=1e-4, size=(n, 2))


def tsne_step(
    coords: np.ndarray,
    grad: np.ndarray,
    update: np.ndarray,
    gains: np.ndarray,
    learning_rate: float,
    momentum: float,
    min_gain: float = 0.01,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One gradient step with per-parameter gains, returning (coords, update, gains)."""
    grow = np.sign(grad) != np.sign(update)
    gains = np.where(grow, gains + 0.2, gains * 0.8)
    np.maximum(gains, min_gain, out=gains)
    update = momentum * update - learning_rate * gains * grad
    coords = coords + update
    coords = coords - coords.mean(axis=0)
    return coords, update, gains


def tsne_gradient(
    joint: sp.spmatrix, coords: np.ndarray, theta: float = 0.5
) -> tuple[np.ndarray, float]:
    """KL gradient 4 * sum_j (p-q) w (y_i - y_j); returns (gradient, Z)."""
    coo = sp.coo_matrix(joint)
    return _gradient_from_edges(coo.row, coo.col, coo.data, coords, theta)


def _gradient_from_edges(ei, ej, pv, coords, theta):
    diff = coords[ei] - coords[ej]
    w = 1.0 / (1.0 + (diff**2).sum(axis=1))
    attr = np.zeros_like(coords)
    np.add.at(attr, ei, (pv * w)[:, None] * diff)
    if theta > 0.0:
        rep, z = _repulsion_bh(coords, theta)
    else:
        rep, z = _repulsion_exact(coords)
    return 4.0 * (attr - rep / z), z


def _repulsion_exact(coords: np.ndarray) -> tuple[np.ndarray, float]:
    """Unnormalised repulsion sum_j w^2 (y_i - y_j) and Z = sum_{i!=j} w, chunked."""
    n = len(coords)
    rep = np.empty_like(coords)
    z = 0.0
    for start in range(0, n, EXACT_REPULSION_CHUNK):
        stop = min(n, start + EXACT_REPULSION_CHUNK)
        diff = coords[start:stop, None, :] - coords[None, :, :]
        w = 1.0 / (1.0 + (diff**2).sum(axis=-1))
        w[np.arange(stop - start), np.arange(start, stop)] = 0.0
        z += float(w.sum())
        w2 = w * w
        rep[start:stop] = w2.sum(axis=1)[:, None] * coords[start:stop] - w2 @ coords
    return rep, z


@dataclass
class _QuadLevel:
    codes: np.ndarray  # sorted unique occupied cell codes
    counts: np.ndarray
    cm: np.ndarray  # (C, 2) centres of mass
    point_codes: np.ndarray  # (N,) cell code per point, valid while descending
    width: float


def _build_quadtree(coords: np.ndarray, max_depth: int = MAX_TREE_DEPTH) -> list[_QuadLevel]:
    n = len(coords)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    width = float((hi - lo).max()) * (1.0 + 1e-9) + 1e-12
    centers = np.tile((lo + hi) / 2.0, (n, 1))
    point_codes = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    levels: list[_QuadLevel] = []
    for depth in range(max_depth + 1):
        uniq, inv, counts = np.unique(
            point_codes[active], return_inverse=True, return_counts=True
        )
        cm = np.zeros((len(uniq), 2))
        np.add.at(cm, inv, coords[active])
        cm /= counts[:, None]
        levels.append(
            _QuadLevel(uniq, counts, cm, point_codes.copy(), width / (2.0**depth))
        )
        active = active[counts[inv] > 1]
        if active.size == 0 or depth == max_depth:
            break
        child_half = width / (2.0 ** (depth + 2))
        bits = (coords[active] > centers[active]).astype(np.int64)
        point_codes[active] = point_codes[active] * 4 + bits[:, 0] * 2 + bits[:, 1]
        centers[active] += (bits - 0.5) * (2.0 * child_half)
    return levels


def _repulsion_bh(coords: np.ndarray, theta: float) -> tuple[np.ndarray, float]:
    """Barnes-Hut repulsion: far cells act as their centre of mass.

    A (point, cell) pair settles when the cell is a single foreign point or
    width/distance < theta; otherwise it expands into the occupied children.
    Cells containing the query point contribute count-1 (never the point
    itself).
    """
    n = len(coords)
    if n < 2:
        return np.zeros_like(coords), 1.0
    levels = _build_quadtree(coords)
    rep = np.zeros_like(coords)
    z = 0.0
    t2 = theta * theta
    pts = np.arange(n)
    cells = np.zeros(n, dtype=np.int64)
    inside = np.ones(n, dtype=bool)
    for depth, lvl in enumerate(levels):
        if pts.size == 0:
            break
        dvec = coords[pts] - lvl.cm[cells]
        d2 = (dvec**2).sum(axis=1)
        cnt = lvl.counts[cells].astype(np.float64)
        settle = (cnt == 1.0) | (lvl.width * lvl.width <= t2 * d2)
        if depth + 1 == len(levels):
            settle[:] = True
        n_eff = cnt[settle] - inside[settle]
        w = 1.0 / (1.0 + d2[settle])
        z += float((n_eff * w).sum())
        np.add.at(rep, pts[settle], (n_eff * w * w)[:, None] * dvec[settle])
        expand = ~settle
        if not expand.any():
            break
        nxt = levels[depth + 1]
        parent = np.repeat(lvl.codes[cells[expand]], 4)
        child_codes = parent * 4 + np.tile(np.arange(4), expand.sum())
        pos = np.searchsorted(nxt.codes, child_codes)
        pos_c = np.minimum(pos, len(nxt.codes) - 1)
        present = nxt.codes[pos_c] == child_codes
        rep_pts = np.repeat(pts[expand], 4)
        rep_inside = np.repeat(inside[expand], 4) & (nxt.point_codes[rep_pts] == child_codes)
        pts = rep_pts[present]
        cells = pos_c[present]
        inside = rep_inside[present]
    return rep, z


def embed(
    joint: sp.spmatrix,
    n_iters: int = 500,
    learning_rate: float = 200.0,
    theta: float = 0.5,
    seed: int = 0,
    exaggeration: float = 4.0,
    exaggeration_iters: int = 100,
    initial_momentum: float = 0.5,
    final_momentum: float = 0.8,
    momentum_switch_iter: int = 250,
    snapshot_every: int | None = None,
    kl_limit: int = 2048,
    on_iteration: Callable[[int, np.ndarray, float], None] | None = None,
) -> EmbedResult:
    """Run t-SNE on a joint distribution; KL is traced at snapshots for small inputs.

    `on_iteration(iteration, coords, kl)` fires after every step with a private
    copy of the layout, so pollers can animate the optimizer without blocking
    it. The reported kl is a cheap running estimate (exact attractive term plus
    the repulsion normalizer from the same step's gradient pass), not the exact
    value kept in kl_trace.
    """
    coo = sp.coo_matrix(joint, dtype=np.float64)
    n = coo.shape[0]
    if coo.shape[0] != coo.shape[1]:
        raise ValueError("joint matrix must be square")
    ei, ej, pv = coo.row, coo.col, coo.data
    coords = tsne_init(n, seed)
    update = np.zeros_like(coords)
    gains = np.ones_like(coords)
    result = EmbedResult(coords=coords)
    small = n <= kl_limit

    for it in range(1, n_iters + 1):
        scale = exaggeration if it <= exaggeration_iters else 1.0
        momentum = initial_momentum if it < momentum_switch_iter else final_momentum
        grad, z = _gradient_from_edges(ei, ej, pv * scale, coords, theta)
        coords, update, gains = tsne_step(
            coords, grad, update, gains, learning_rate, momentum
        )
        at_snapshot = snapshot_every is not None and it % snapshot_every == 0
        if at_snapshot or it == n_iters:
            if small:
                result.kl_trace.append((it, kl_divergence(joint, coords)))
            if snapshot_every is not None:
                result.snapshots.append((it, coords.copy()))
        if on_iteration is not None:
            on_iteration(it, coords.copy(), _kl_estimate(ei, ej, pv, coords, z))
    result.coords = coords
    return result


def _kl_estimate(ei, ej, pv, coords, z) -> float:
    """KL estimate with an exact attractive term and a borrowed normalizer.

    `z` comes from the gradient pass that produced `coords`, so it lags the
    layout by one step; recomputing it exactly would double the Barnes-Hut
    work per iteration for a monitoring value.
    """
    mask = pv > 0
    p = pv[mask]
    d2 = ((coords[ei[mask]] - coords[ej[mask]]) ** 2).sum(axis=1)
    return float((p * (np.log(p) + np.log1p(d2))).sum() + np.log(z))


def kl_divergence(joint: sp.spmatrix, coords: np.ndarray) -> float:
    """Exact KL(P || Q) over ordered pairs with the Student-t kernel Q."""
    coo = sp.coo_matrix(joint, dtype=np.float64)
    n = len(coords)
    z = 0.0
    for start in range(0, n, EXACT_REPULSION_CHUNK):
        stop = min(n, start + EXACT_REPULSION_CHUNK)
        diff = coords[start:stop, None, :] - coords[None, :, :]
        w = 1.0 / (1.0 + (diff**2).sum(axis=-1))
        w[np.arange(stop - start), np.arange(start, stop)] = 0.0
        z += float(w.sum())
    mask = coo.data > 0
    ei, ej, pv = coo.row[mask], coo.col[mask], coo.data[mask]
    d2 = ((coords[ei] - coords[ej]) ** 2).sum(axis=1)
    log_q = -np.log1p(d2) - np.log(z)
    return float((pv * (np.log(pv) - log_q)).sum())
