"""Masked k-means and the plain k-means baseline.

The objective is the masked SSE ``sum_j ||w_j - c[a_j] * bm_j||^2``. Masked
assignment and masked update each minimise it exactly over their own block of
variables, so the objective never increases across iterations. Plain k-means
is the same procedure with every mask set to ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mvq.errors import DimensionMismatch, IndexOutOfRange, TooFewSubvectors
from mvq.sparsity import SparseGroupedMatrix
from mvq.tensor import GroupedMatrix

DEFAULT_SEED = 42
DEFAULT_MAX_ITERS = 100
DEFAULT_CHANGE_THRESHOLD = 0.001

# rows per distance block; bounds the (rows x k) distance matrix
_BATCH_ROWS = 2048


@dataclass(frozen=True, eq=False)
class Codebook:
    codewords: np.ndarray

    def __post_init__(self):
        c = np.array(self.codewords, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise DimensionMismatch(f"codebook must be k x d with k >= 1, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DimensionMismatch("codebook contains non-finite values")
        c.flags.writeable = False
        object.__setattr__(self, "codewords", c)

    @property
    def k(self) -> int:
        return self.codewords.shape[0]

    @property
    def d(self) -> int:
        return self.codewords.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return np.array_equal(self.codewords, other.codewords)


@dataclass
class ClusterRunStats:
    seed: int | None
    iterations: int = 0
    sse_history: list[float] = field(default_factory=list)
    changed_history: list[int] = field(default_factory=list)

    @property
    def final_sse(self) -> float:
        return self.sse_history[-1]


def rows_and_mask(g) -> tuple[np.ndarray, np.ndarray | None]:
    """Split any matrix-like input into float rows and an optional bool mask."""
    if isinstance(g, SparseGroupedMatrix):
        return np.asarray(g.rows, dtype=np.float64), g.mask
    if isinstance(g, GroupedMatrix):
        return np.asarray(g.rows, dtype=np.float64), None
    rows = np.asarray(g, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {rows.shape}")
    return rows, None


def kmeans_init(g, k: int, seed: int = DEFAULT_SEED) -> Codebook:
    rows, _ = rows_and_mask(g)
    if rows.shape[0] < k:
        raise TooFewSubvectors(f"NG={rows.shape[0]} < k={k}")
    idx = np.random.default_rng(seed).choice(rows.shape[0], size=k, replace=False)
    return Codebook(rows[idx])


def _distances(rows, maskf, codewords):
    # ||w - c*bm||^2 = ||w||^2 - 2 (w*bm).c + bm.(c*c)
    c = codewords
    return (
        np.einsum("ij,ij->i", rows, rows)[:, None]
        - 2.0 * (rows * maskf) @ c.T
        + maskf @ (c * c).T
    )


def _assign(rows, mask, codewords) -> np.ndarray:
    ng = rows.shape[0]
    maskf = np.ones_like(rows) if mask is None else mask.astype(np.float64)
    out = np.empty(ng, dtype=np.int64)
    for start in range(0, ng, _BATCH_ROWS):
        sl = slice(start, start + _BATCH_ROWS)
        out[sl] = np.argmin(_distances(rows[sl], maskf[sl], codewords), axis=1)
    if mask is not None:
        out[~mask.any(axis=1)] = 0
    return out


def _check_dims(rows, codebook: Codebook):
    if rows.shape[1] != codebook.d:
        raise DimensionMismatch(f"row length {rows.shape[1]} != codeword length {codebook.d}")


def masked_assign(g, c: Codebook) -> np.ndarray:
    """Nearest codeword per row, measuring distance only on kept positions.

    Ties go to the lowest codeword index; rows with an empty mask get 0.
    """
    rows, mask = rows_and_mask(g)
    _check_dims(rows, c)
    return _assign(rows, mask, c.codewords)


def _update(rows, mask, a, codewords) -> np.ndarray:
    k, d = codewords.shape
    maskf = np.ones_like(rows) if mask is None else mask.astype(np.float64)
    vals = rows * maskf
    sums = np.empty((k, d))
    counts = np.empty((k, d))
    for t in range(d):
        sums[:, t] = np.bincount(a, weights=vals[:, t], minlength=k)
        counts[:, t] = np.bincount(a, weights=maskf[:, t], minlength=k)
    covered = counts > 0
    return np.where(covered, sums / np.where(covered, counts, 1.0), codewords)


def check_assignments(a, ng, k) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    if a.shape != (ng,):
        raise DimensionMismatch(f"expected {ng} assignments, got {a.shape}")
    if a.size and (a.min() < 0 or a.max() >= k):
        raise IndexOutOfRange(f"assignment outside [0, {k})")
    return a


def masked_update(g, a, c: Codebook) -> Codebook:
    """Per-coordinate mean of the kept values assigned to each codeword.

    Coordinates no kept value covers keep their previous value, which also
    covers codewords with no rows at all.
    """
    rows, mask = rows_and_mask(g)
    _check_dims(rows, c)
    a = check_assignments(a, rows.shape[0], c.k)
    return Codebook(_update(rows, mask, a, c.codewords))


def row_errors(rows, mask, a, codewords) -> np.ndarray:
    recon = codewords[a]
    if mask is not None:
        recon = recon * mask
    diff = rows - recon
    return np.einsum("ij,ij->i", diff, diff)


def masked_sse(g, a, c: Codebook) -> float:
    rows, mask = rows_and_mask(g)
    a = check_assignments(a, rows.shape[0], c.k)
    return float(row_errors(rows, mask, a, c.codewords).sum())


def _repair_empty(rows, mask, a, codewords):
    """Re-seed empty clusters from the worst-fitting rows of shared clusters."""
    k = codewords.shape[0]
    counts = np.bincount(a, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return codewords, a, False
    codewords = codewords.copy()
    a = a.copy()
    err = row_errors(rows, mask, a, codewords)
    repaired = False
    for e in empty:
        candidates = np.where(counts[a] >= 2, err, -1.0)
        j = int(np.argmax(candidates))
        if candidates[j] <= 0.0:
            break
        keep = np.ones(rows.shape[1], dtype=bool) if mask is None else mask[j]
        codewords[e] = np.where(keep, rows[j], codewords[e])
        counts[a[j]] -= 1
        counts[e] += 1
        a[j] = e
        err[j] = row_errors(rows[j : j + 1], None if mask is None else mask[j : j + 1], [e], codewords)[0]
        repaired = True
    return codewords, a, repaired


def _run(rows, mask, k, seed, max_iters, change_threshold_fraction, init):
    ng = rows.shape[0]
    if ng < k:
        raise TooFewSubvectors(f"NG={ng} < k={k}")
    if init is None:
        codewords = kmeans_init(rows, k, seed).codewords
    else:
        if init.k != k:
            raise DimensionMismatch(f"initial codebook has k={init.k}, expected {k}")
        _check_dims(rows, init)
        codewords = init.codewords
    stats = ClusterRunStats(seed=seed)
    a = _assign(rows, mask, codewords)
    stats.sse_history.append(float(row_errors(rows, mask, a, codewords).sum()))
    limit = change_threshold_fraction * ng
    for _ in range(max_iters):
        codewords = _update(rows, mask, a, codewords)
        codewords, a, repaired = _repair_empty(rows, mask, a, codewords)
        new_a = _assign(rows, mask, codewords)
        changed = int(np.count_nonzero(new_a != a))
        a = new_a
        stats.iterations += 1
        stats.sse_history.append(float(row_errors(rows, mask, a, codewords).sum()))
        stats.changed_history.append(changed)
        if not repaired and (changed == 0 or changed < limit):
            break
    return Codebook(codewords), a, stats


def run_masked_kmeans(
    g,
    k: int,
    seed: int = DEFAULT_SEED,
    max_iters: int = DEFAULT_MAX_ITERS,
    change_threshold_fraction: float = DEFAULT_CHANGE_THRESHOLD,
    init: Codebook | None = None,
) -> tuple[Codebook, np.ndarray, ClusterRunStats]:
    """Alternate masked assignment and masked update until assignments settle.

    Stops once fewer than ``change_threshold_fraction * NG`` rows change (or
    none do), or after ``max_iters`` rounds. The returned assignments are the
    nearest codewords of the returned codebook.
    """
    rows, mask = rows_and_mask(g)
    return _run(rows, mask, k, seed, max_iters, change_threshold_fraction, init)


def run_common_kmeans(
    g,
    k: int,
    seed: int = DEFAULT_SEED,
    max_iters: int = DEFAULT_MAX_ITERS,
    change_threshold_fraction: float = DEFAULT_CHANGE_THRESHOLD,
    init: Codebook | None = None,
) -> tuple[Codebook, np.ndarray, ClusterRunStats]:
    """Plain k-means on the stored values; any mask is ignored."""
    rows, _ = rows_and_mask(g)
    return _run(rows, None, k, seed, max_iters, change_threshold_fraction, init)
