"""Walk kernels against closed-form Markov results, plus end-to-end hierarchy checks."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from annoscale.dataio import generate_synthetic, thumos_like_distribution
from annoscale.hierarchy import (
    Hierarchy,
    HierarchyError,
    argmax_influence,
    build_hierarchy,
    build_transition_matrix,
    compute_influence,
    load_hierarchy,
    next_scale_similarities,
    next_scale_weights,
    save_hierarchy,
    select_landmarks,
    selection_hits,
    uniform_landmark_hierarchy,
    uniform_preset_sizes,
)
from annoscale.neighbors import build_knn_exact

CHAIN = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [0.9, 0.0, 0.1, 0.0],
        [0.0, 0.1, 0.0, 0.9],
        [0.0, 0.0, 1.0, 0.0],
    ]
)


def synthetic_blobs(n=300, n_classes=4, sigma=0.05, seed=0):
    dist = thumos_like_distribution(n_classes=n_classes)
    feats, truth = generate_synthetic(
        dist, n_points=n, n_classes=n_classes, noise_sigma=sigma, seed=seed
    )
    return feats, truth.labels


def test_selection_hits_match_matrix_power():
    t = sp.csr_matrix(CHAIN)
    beta = 20000
    hits = selection_hits(t, beta_walks=beta, walk_length=5, seed=7)
    expected = beta * np.linalg.matrix_power(CHAIN, 5).sum(axis=0)
    assert hits.sum() == 4 * beta
    np.testing.assert_allclose(hits, expected, rtol=0.05)


def test_selection_threshold_is_strict():
    hits = np.array([150, 151, 100, 9000])
    chosen = select_landmarks(hits, beta_walks=100, threshold_factor=1.5)
    assert chosen.tolist() == [1, 3]


def test_influence_matches_absorbing_chain():
    t = sp.csr_matrix(CHAIN)
    landmarks = np.array([0, 3])
    feats = np.arange(8, dtype=np.float32).reshape(4, 2)
    influence = compute_influence(
        t, landmarks, feats, beta_aoi=20000, max_steps=200, seed=3
    )
    q = CHAIN[np.ix_([1, 2], [1, 2])]
    r = CHAIN[np.ix_([1, 2], [0, 3])]
    exact = np.linalg.solve(np.eye(2) - q, r)
    dense = influence.toarray()
    np.testing.assert_allclose(dense[[1, 2]], exact, atol=0.02)
    np.testing.assert_allclose(dense[[0, 3]], np.eye(2))
    np.testing.assert_allclose(dense.sum(axis=1), 1.0)


def test_influence_fallback_for_unreachable_state():
    t = sp.csr_matrix(
        np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    )
    feats = np.array([[0.0], [10.0], [1.0]], dtype=np.float32)
    influence = compute_influence(t, np.array([0]), feats, beta_aoi=10, max_steps=20, seed=1)
    dense = influence.toarray()
    assert dense[2, 0] == 1.0  # state 2 never reaches a landmark by walking
    np.testing.assert_allclose(dense.sum(axis=1), 1.0)


def test_next_scale_formulas_by_hand():
    influence = sp.csr_matrix(
        np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.25, 0.75]])
    )
    weights = np.array([1.0, 1.0, 2.0, 4.0])
    sims = next_scale_similarities(influence, weights).toarray()
    # sim(0,1) = 2*0.5*0.5 + 4*0.25*0.75 = 1.25, diagonal cleared
    assert sims[0, 1] == pytest.approx(1.25)
    assert sims[1, 0] == pytest.approx(1.25)
    assert sims[0, 0] == 0.0 and sims[1, 1] == 0.0
    new_w = next_scale_weights(influence, weights)
    np.testing.assert_allclose(new_w, [3.0, 5.0])
    assert new_w.sum() == pytest.approx(weights.sum())


def test_argmax_influence_tie_breaks_low_column():
    influence = sp.csr_matrix(np.array([[0.5, 0.5], [0.2, 0.8], [0.0, 1.0]]))
    np.testing.assert_array_equal(argmax_influence(influence), [0, 1, 1])
    with pytest.raises(ValueError):
        argmax_influence(sp.csr_matrix((2, 2)))


def test_transition_matrix_rows_stochastic():
    feats, _ = synthetic_blobs(n=120, sigma=0.3, seed=2)
    graph = build_knn_exact(feats, k=10)
    t = build_transition_matrix(graph, perplexity=5.0)
    sums = np.asarray(t.sum(axis=1)).ravel()
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    assert t.diagonal().max() == 0.0


def test_blob_hierarchy_structure():
    feats, labels = synthetic_blobs(n=300, n_classes=4, sigma=0.05, seed=4)
    hier = build_hierarchy(feats, n_scales=2, k=10, perplexity=5.0, seed=0)
    top = hier.top()
    lm_labels = labels[top.landmark_rows]
    assert set(lm_labels.tolist()) == set(np.unique(labels).tolist())
    # cross-class landmark similarity must vanish for well separated blobs
    dense = top.similarities.toarray()
    cross = lm_labels[:, None] != lm_labels[None, :]
    assert dense[cross].max() == 0.0
    # argmax ownership stays within the blob
    owners = argmax_influence(top.influence)
    assert (labels[top.landmark_rows[owners]] == labels).mean() >= 0.99
    # landmark influence rows are identity
    dense_inf = top.influence.toarray()
    for col, pos in enumerate(top.parent_indices):
        assert dense_inf[pos, col] == 1.0
        assert dense_inf[pos].sum() == 1.0
    # selection accounting
    assert top.hits.sum() == 300 * 100


def test_weight_conservation_three_scales():
    feats, _ = synthetic_blobs(n=500, n_classes=4, sigma=1.0, seed=5)
    hier = build_hierarchy(feats, n_scales=3, k=15, perplexity=7.0, seed=1)
    assert hier.n_scales == 3
    for sc in hier.scales:
        assert abs(sc.weights.sum() - 500.0) / 500.0 <= 1e-6
    sizes = [sc.n_landmarks for sc in hier.scales]
    assert sizes[0] == 500 and sizes[0] > sizes[1] > sizes[2] >= 2


def test_hierarchy_deterministic_across_workers():
    feats, _ = synthetic_blobs(n=400, n_classes=4, sigma=0.5, seed=6)
    h1 = build_hierarchy(feats, n_scales=2, k=10, perplexity=5.0, seed=9, n_workers=1)
    h4 = build_hierarchy(feats, n_scales=2, k=10, perplexity=5.0, seed=9, n_workers=4)
    for a, b in zip(h1.scales, h4.scales):
        np.testing.assert_array_equal(a.landmark_rows, b.landmark_rows)
        np.testing.assert_array_equal(a.weights, b.weights)
        if a.similarities is not None:
            assert (a.similarities != b.similarities).nnz == 0
            assert (a.influence != b.influence).nnz == 0
    h_other = build_hierarchy(feats, n_scales=2, k=10, perplexity=5.0, seed=10)
    assert not np.array_equal(h1.top().hits, h_other.top().hits)


def test_similarities_exactly_symmetric():
    feats, _ = synthetic_blobs(n=400, n_classes=4, sigma=1.0, seed=8)
    hier = build_hierarchy(feats, n_scales=2, k=10, perplexity=5.0, seed=2)
    s = hier.top().similarities
    assert (s != s.T).nnz == 0
    assert np.all(s.diagonal() == 0.0)


def test_no_landmarks_raises():
    feats, _ = synthetic_blobs(n=150, n_classes=3, sigma=0.5, seed=9)
    with pytest.raises(HierarchyError):
        build_hierarchy(feats, n_scales=2, k=10, perplexity=5.0, threshold_factor=1e9)


def test_negative_seed_rejected():
    feats, _ = synthetic_blobs(n=60, n_classes=3, sigma=0.5, seed=9)
    with pytest.raises(ValueError):
        build_hierarchy(feats, n_scales=2, k=5, perplexity=3.0, seed=-1)


def test_uniform_hierarchy_sizes_and_determinism():
    feats, _ = synthetic_blobs(n=300, n_classes=4, sigma=0.5, seed=10)
    h = uniform_landmark_hierarchy(feats, sizes=[30, 6], k=10, perplexity=5.0, seed=3)
    assert [sc.n_landmarks for sc in h.scales] == [300, 30, 6]
    assert h.method == "uniform"
    for sc in h.scales[1:]:
        rows = sc.landmark_rows
        assert (np.diff(rows) > 0).all()
    h2 = uniform_landmark_hierarchy(feats, sizes=[30, 6], k=10, perplexity=5.0, seed=3)
    np.testing.assert_array_equal(h.top().landmark_rows, h2.top().landmark_rows)
    for sc in h.scales:
        assert abs(sc.weights.sum() - 300.0) / 300.0 <= 1e-6
    with pytest.raises(HierarchyError):
        uniform_landmark_hierarchy(feats, sizes=[400], k=10, perplexity=5.0)


def test_uniform_preset_sizes_ratio():
    assert uniform_preset_sizes(12500) == [2500, 100]
    assert uniform_preset_sizes(10) == [2, 2]


def test_cache_round_trip(tmp_path):
    feats, _ = synthetic_blobs(n=200, n_classes=3, sigma=0.5, seed=11)
    hier = build_hierarchy(feats, n_scales=2, k=8, perplexity=4.0, seed=5)
    path = tmp_path / "h.hhie"
    save_hierarchy(hier, path)
    loaded = load_hierarchy(path)
    assert loaded.n_points == hier.n_points
    assert loaded.n_scales == hier.n_scales
    assert loaded.method == hier.method
    for a, b in zip(hier.scales, loaded.scales):
        np.testing.assert_array_equal(a.landmark_rows, b.landmark_rows)
        np.testing.assert_array_equal(a.parent_indices, b.parent_indices)
        np.testing.assert_array_equal(a.weights.astype(np.float32), b.weights.astype(np.float32))
        np.testing.assert_array_equal(
            np.asarray(a.transition.todense(), dtype=np.float32),
            np.asarray(b.transition.todense(), dtype=np.float32),
        )
    second = tmp_path / "h2.hhie"
    save_hierarchy(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_cache_rejects_bad_magic(tmp_path):
    feats, _ = synthetic_blobs(n=100, n_classes=3, sigma=0.5, seed=12)
    hier = build_hierarchy(feats, n_scales=2, k=6, perplexity=3.0, seed=6)
    path = tmp_path / "h.hhie"
    save_hierarchy(hier, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"ZZZZ"
    bad = tmp_path / "bad.hhie"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_hierarchy(bad)


def test_report_contents():
    feats, _ = synthetic_blobs(n=200, n_classes=3, sigma=0.5, seed=13)
    hier = build_hierarchy(feats, n_scales=2, k=8, perplexity=4.0, seed=7)
    assert hier.report["scale_sizes"] == [sc.n_landmarks for sc in hier.scales]
    assert hier.report["stages"][0]["landmarks"] == hier.top().n_landmarks
    assert hier.report["total_seconds"] >= 0.0
