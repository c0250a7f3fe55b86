import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvq.clustering import (
    Codebook,
    kmeans_init,
    masked_assign,
    masked_sse,
    masked_update,
    run_common_kmeans,
    run_masked_kmeans,
)
from mvq.errors import DimensionMismatch, IndexOutOfRange, TooFewSubvectors
from mvq.sparsity import NmPattern, SparseGroupedMatrix, prune_nm
from mvq.tensor import GroupedMatrix


def sparse(rows, mask, pattern=NmPattern(1, 1)):
    rows = np.asarray(rows, dtype=np.float64)
    g = GroupedMatrix(rows, (rows.shape[1], rows.shape[0], 1, 1))
    return SparseGroupedMatrix(g, np.asarray(mask, dtype=bool), pattern)


def gaussian_sparse(seed, ng, d, pattern=NmPattern(4, 16)):
    rows = np.random.default_rng(seed).normal(size=(ng, d))
    return prune_nm(GroupedMatrix(rows, (d, ng, 1, 1)), pattern)


def test_init_is_row_permutation_when_ng_equals_k(rng):
    rows = rng.normal(size=(10, 4))
    c = kmeans_init(rows, 10, seed=3)
    assert sorted(map(tuple, c.codewords)) == sorted(map(tuple, rows))


def test_init_deterministic_and_seed_sensitive(rng):
    rows = rng.normal(size=(1000, 8))
    assert kmeans_init(rows, 16, 5) == kmeans_init(rows, 16, 5)
    idx5 = np.random.default_rng(5).choice(1000, 16, replace=False)
    idx6 = np.random.default_rng(6).choice(1000, 16, replace=False)
    assert set(idx5) != set(idx6)
    assert np.array_equal(kmeans_init(rows, 16, 6).codewords, rows[idx6])


def test_init_too_few_rows():
    with pytest.raises(TooFewSubvectors):
        kmeans_init(np.zeros((3, 2)), 4)


def test_masked_assign_mask_flips_choice():
    c = Codebook([[1, 1], [5, 5]])
    assert masked_assign(sparse([[4.8, 0]], [[1, 0]]), c).tolist() == [1]
    assert masked_assign(sparse([[4.8, 0]], [[1, 1]]), c).tolist() == [0]


def test_full_mask_matches_euclidean(rng):
    rows = rng.normal(size=(200, 8))
    c = Codebook(rng.normal(size=(7, 8)))
    brute = np.argmin(((rows[:, None, :] - c.codewords[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(masked_assign(sparse(rows, np.ones_like(rows)), c), brute)


def test_masked_assign_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        masked_assign(np.zeros((2, 3)), Codebook(np.zeros((2, 2))))


def test_masked_update_examples():
    sp = sparse([[2, 0], [0, 4]], [[1, 0], [0, 1]])
    c = masked_update(sp, [0, 0], Codebook([[9, 9]]))
    assert c.codewords.tolist() == [[2, 4]]


def test_masked_update_full_masks_is_mean(rng):
    rows = rng.normal(size=(50, 4))
    a = rng.integers(0, 3, size=50)
    a[:3] = [0, 1, 2]
    c = masked_update(sparse(rows, np.ones_like(rows)), a, Codebook(np.zeros((3, 4))))
    for i in range(3):
        assert np.allclose(c.codewords[i], rows[a == i].mean(axis=0))


def test_masked_update_zero_coverage_keeps_value():
    sp = sparse([[2, 0], [3, 0]], [[1, 0], [1, 0]])
    c = masked_update(sp, [0, 0], Codebook([[9, 7], [1, 1]]))
    assert c.codewords.tolist() == [[2.5, 7], [1, 1]]


def test_masked_update_rejects_bad_assignment():
    with pytest.raises(IndexOutOfRange):
        masked_update(sparse([[1, 2]], [[1, 1]]), [3], Codebook([[0, 0]]))


def test_converges_on_exact_codewords():
    rows = np.array([[1.0, 2], [3, 4], [5, 6]])
    c, a, stats = run_masked_kmeans(sparse(rows, np.ones_like(rows)), 3, seed=0)
    assert stats.iterations == 1
    assert stats.final_sse == 0.0
    assert np.array_equal(c.codewords[a], rows)


def test_two_clusters_example():
    rows = np.array([[0.0, 0], [0, 1], [10, 10], [10, 11]])
    c, a, stats = run_common_kmeans(rows, 2, seed=0)
    assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]
    assert stats.final_sse == pytest.approx(1.0)
    # exhaustive: no labelling of the 4 rows does better
    best = min(
        sum(((rows[lab == j] - rows[lab == j].mean(0)) ** 2).sum() for j in (0, 1) if (lab == j).any())
        for lab in map(np.array, itertools.product([0, 1], repeat=4))
    )
    assert stats.final_sse == pytest.approx(best)


def test_common_equals_masked_with_full_masks(rng):
    rows = rng.normal(size=(300, 8))
    r1 = run_masked_kmeans(sparse(rows, np.ones_like(rows)), 12, seed=9)
    r2 = run_common_kmeans(rows, 12, seed=9)
    assert r1[0] == r2[0] and np.array_equal(r1[1], r2[1])


def test_single_cluster_is_column_mean(rng):
    rows = rng.normal(size=(40, 4))
    c, a, _ = run_common_kmeans(rows, 1)
    assert np.allclose(c.codewords[0], rows.mean(axis=0))
    assert not a.any()


def test_two_rows_two_clusters_zero_sse(rng):
    _, _, stats = run_common_kmeans(rng.normal(size=(2, 3)), 2)
    assert stats.final_sse == 0.0


def test_masked_beats_common_on_sparse_data():
    sp = gaussian_sparse(0, 4096, 16)
    cm, am, _ = run_masked_kmeans(sp, 64, seed=1)
    cc, ac, _ = run_common_kmeans(sp, 64, seed=1)
    assert masked_sse(sp, am, cm) <= masked_sse(sp, ac, cc)


def test_deterministic():
    sp = gaussian_sparse(3, 512, 16)
    r1 = run_masked_kmeans(sp, 16, seed=4)
    r2 = run_masked_kmeans(sp, 16, seed=4)
    assert r1[0] == r2[0] and np.array_equal(r1[1], r2[1])
    assert r1[2].sse_history == r2[2].sse_history


def test_reported_sse_matches_recomputation():
    sp = gaussian_sparse(5, 600, 16)
    c, a, stats = run_masked_kmeans(sp, 20, seed=0)
    assert stats.final_sse == pytest.approx(masked_sse(sp, a, c), rel=1e-12)


def test_no_empty_clusters_after_repair():
    # many duplicate rows make empty clusters likely at init
    rows = np.repeat(np.arange(6, dtype=float)[:, None], 20, axis=0) * np.ones((1, 4))
    rows[:, 0] += np.linspace(0, 1e-3, rows.shape[0])
    c, a, _ = run_common_kmeans(rows, 10, seed=0)
    assert len(np.unique(a)) == 10


@given(st.integers(0, 10_000), st.sampled_from([8, 16]), st.sampled_from([4, 8]), st.integers(32, 200))
def test_monotone_sse(seed, d, k, ng):
    sp = gaussian_sparse(seed, ng, d, NmPattern(2, 8))
    _, _, stats = run_masked_kmeans(sp, k, seed=seed)
    h = stats.sse_history
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(h, h[1:]))


@given(st.integers(0, 10_000))
def test_local_optimality(seed):
    sp = gaussian_sparse(seed, 40, 8, NmPattern(2, 4))
    c, a, _ = run_masked_kmeans(sp, 6, seed=seed, change_threshold_fraction=0.0)
    rows, mask = sp.rows, sp.mask
    for j in range(sp.ng):
        cur = np.sum((rows[j] - c.codewords[a[j]] * mask[j]) ** 2)
        for i in range(c.k):
            assert np.sum((rows[j] - c.codewords[i] * mask[j]) ** 2) >= cur - 1e-12
