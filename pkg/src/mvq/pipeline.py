"""End-to-end compression: group, prune, cluster, quantize, pack.

Also hosts the four-way clustering ablation (dense vs sparse input, plain vs
masked k-means, dense vs sparse reconstruction).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from mvq.clustering import (
    DEFAULT_CHANGE_THRESHOLD,
    DEFAULT_MAX_ITERS,
    DEFAULT_SEED,
    ClusterRunStats,
    Codebook,
    run_common_kmeans,
    run_masked_kmeans,
)
from mvq.codec import CompressedLayer, CompressionReport, decompress, layer_report
from mvq.errors import ConfigInvalid
from mvq.quantization import dequantize_codebook, quantize_codebook
from mvq.sparsity import NmPattern, SparseGroupedMatrix, apply_mask, prune_nm
from mvq.tensor import GroupedMatrix, SseReport, WeightTensor, group_weights, sse, ungroup_weights

MODES = ("masked", "common")
SCOPES = ("layerwise", "crosslayer")


@dataclass(frozen=True)
class LayerSettings:
    d: int = 16
    k: int = 512
    pattern: NmPattern = field(default_factory=lambda: NmPattern(4, 16))
    qc: int = 8
    scale_mode: str = "absmax"

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ConfigInvalid(f"d and k must be positive (d={self.d}, k={self.k})")
        self.pattern.check_d(self.d)


@dataclass
class LayerResult:
    name: str
    layer: CompressedLayer
    stats: ClusterRunStats
    # vs the dense input; mask_sse covers kept positions only
    sse: SseReport
    report: CompressionReport


def _sparsify(w: WeightTensor, s: LayerSettings, init: CompressedLayer | None) -> SparseGroupedMatrix:
    g = group_weights(w, s.d)
    if init is not None and init.shape == w.shape and init.d == s.d and init.pattern == s.pattern:
        prior = init.mask()
        # input already lives inside the stored mask: keep it, so a kept weight
        # that decoded to exactly zero does not lose its slot on a tie
        if not np.any(g.rows[~prior]):
            return apply_mask(g, prior, s.pattern)
    return prune_nm(g, s.pattern)


def _cluster(sp, k, mode, seed, max_iters, threshold, init):
    if mode == "masked":
        return run_masked_kmeans(sp, k, seed, max_iters, threshold, init)
    if mode == "common":
        return run_common_kmeans(sp, k, seed, max_iters, threshold, init)
    raise ConfigInvalid(f"unknown clustering mode {mode!r}; expected one of {MODES}")


def _init_codebook(init: CompressedLayer | None, s: LayerSettings) -> Codebook | None:
    if init is None or init.k != s.k or init.d != s.d:
        return None
    return dequantize_codebook(init.codebook)


def _finish(name, w, sp, codebook, a, stats, s) -> LayerResult:
    qcb = quantize_codebook(codebook, s.qc, s.scale_mode)
    layer = CompressedLayer(w.shape, s.d, s.pattern, qcb, a, sp.mask_ids())
    recon = decompress(layer)
    mask4 = ungroup_weights(GroupedMatrix(sp.mask.astype(np.float64), w.shape)).data.astype(bool)
    return LayerResult(name, layer, stats, sse(w.data, recon.data, mask4), layer_report(layer))


def compress_tensor(
    w: WeightTensor,
    settings: LayerSettings = LayerSettings(),
    seed: int = DEFAULT_SEED,
    mode: str = "masked",
    max_iters: int = DEFAULT_MAX_ITERS,
    change_threshold_fraction: float = DEFAULT_CHANGE_THRESHOLD,
    init: CompressedLayer | None = None,
    name: str = "",
) -> LayerResult:
    """Compress one weight tensor.

    ``init`` warm-starts from a previously compressed layer: its codebook seeds
    k-means and its mask is reused when the input is already zero outside it.
    Re-encoding a decompressed layer this way reproduces its assignments and
    mask ids.
    """
    sp = _sparsify(w, settings, init)
    codebook, a, stats = _cluster(
        sp, settings.k, mode, seed, max_iters, change_threshold_fraction, _init_codebook(init, settings)
    )
    return _finish(name, w, sp, codebook, a, stats, settings)


def compress_crosslayer(
    named: list[tuple[str, WeightTensor]],
    settings: LayerSettings,
    seed: int = DEFAULT_SEED,
    mode: str = "masked",
    max_iters: int = DEFAULT_MAX_ITERS,
    change_threshold_fraction: float = DEFAULT_CHANGE_THRESHOLD,
) -> list[LayerResult]:
    """One codebook shared by every given layer (all use ``settings``)."""
    if not named:
        return []
    sparse = [_sparsify(w, settings, None) for _, w in named]
    rows = np.concatenate([sp.rows for sp in sparse])
    mask = np.concatenate([sp.mask for sp in sparse])
    stacked = SparseGroupedMatrix(GroupedMatrix(rows, (rows.shape[0] * settings.d, 1, 1, 1)), mask, settings.pattern)
    codebook, a, stats = _cluster(stacked, settings.k, mode, seed, max_iters, change_threshold_fraction, None)
    out, start = [], 0
    for (name, w), sp in zip(named, sparse):
        part = a[start : start + sp.ng]
        start += sp.ng
        out.append(_finish(name, w, sp, codebook, part, stats, settings))
    return out


def aggregate_report(results: list[LayerResult], scope: str = "layerwise") -> CompressionReport | None:
    """Whole-model accounting; a shared codebook is only counted once."""
    if not results:
        return None
    total = results[0].report
    for r in results[1:]:
        total = total + r.report
    if scope == "crosslayer":
        extra = sum(r.report.b_c for r in results[1:])
        total = CompressionReport(
            total.b_a, total.b_m, total.b_c - extra, total.raw_bits, total.n_weights, total.dense_flops, total.sparse_flops
        )
    return total


# ---- ablation ------------------------------------------------------------


@dataclass(frozen=True)
class AblationCase:
    name: str
    k: int
    d: int
    total_sse: float
    mask_sse: float
    flops_ratio: Fraction


CASE_DESCRIPTIONS = {
    "A": "dense weights, plain k-means, dense reconstruction",
    "B": "sparse weights, plain k-means, dense reconstruction",
    "C": "sparse weights, plain k-means, sparse reconstruction",
    "D": "sparse weights, masked k-means, sparse reconstruction",
}


def run_ablation(
    w: WeightTensor,
    pattern: NmPattern = NmPattern(4, 16),
    dense_kd: tuple[int, int] = (1024, 8),
    sparse_kd: tuple[int, int] = (512, 16),
    seed: int = DEFAULT_SEED,
    max_iters: int = DEFAULT_MAX_ITERS,
    change_threshold_fraction: float = DEFAULT_CHANGE_THRESHOLD,
) -> dict[str, AblationCase]:
    """Clustering error of the four comparison cases, without quantization.

    The mask always comes from pruning with the sparse-case grouping. Cases
    A/B store no mask and use ``dense_kd``; C/D store it and use
    ``sparse_kd``. SSE is measured on 4-D tensors: case A against the dense
    weights, the rest against the pruned ones; mask SSE counts kept
    positions only.
    """
    k_ab, d_ab = dense_kd
    k_cd, d_cd = sparse_kd
    kw = dict(seed=seed, max_iters=max_iters, change_threshold_fraction=change_threshold_fraction)
    sp = prune_nm(group_weights(w, d_cd), pattern)
    w_sparse = ungroup_weights(sp.matrix)
    mask4 = ungroup_weights(GroupedMatrix(sp.mask.astype(np.float64), w.shape)).data.astype(bool)

    def dense_case(name, source):
        g = group_weights(source, d_ab)
        c, a, _ = run_common_kmeans(g, k_ab, **kw)
        recon = ungroup_weights(g.with_rows(c.codewords[a]))
        rep = sse(source.data, recon.data, mask4)
        return AblationCase(name, k_ab, d_ab, rep.total_sse, rep.mask_sse, Fraction(1))

    def sparse_case(name, runner):
        c, a, _ = runner(sp, k_cd, **kw)
        recon = ungroup_weights(sp.matrix.with_rows(c.codewords[a] * sp.mask))
        rep = sse(w_sparse.data, recon.data, mask4)
        # multiplies left after skipping pruned weights
        kept = Fraction(int(mask4.sum()), mask4.size)
        return AblationCase(name, k_cd, d_cd, rep.total_sse, rep.mask_sse, kept)

    return {
        "A": dense_case("A", w),
        "B": dense_case("B", w_sparse),
        "C": sparse_case("C", run_common_kmeans),
        "D": sparse_case("D", run_masked_kmeans),
    }
