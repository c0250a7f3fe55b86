"""Symmetric fixed-point codebook quantization with one scale per codebook."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mvq.clustering import Codebook
from mvq.errors import ConfigInvalid, DataError

SCALE_MODES = ("absmax", "grid")
GRID_CANDIDATES = 128


def qrange(qb: int) -> tuple[int, int]:
    return -(1 << (qb - 1)), (1 << (qb - 1)) - 1


@dataclass(frozen=True, eq=False)
class QuantizedCodebook:
    """Integer codewords plus a shared scale; value = integer * scale.

    The scale is always a float32 value so it survives the container intact.
    """

    ints: np.ndarray
    scale: float
    qb: int

    def __post_init__(self):
        if not 2 <= self.qb <= 16:
            raise ConfigInvalid(f"qb={self.qb} outside 2..16")
        ints = np.array(self.ints, dtype=np.int64)
        if ints.ndim != 2 or ints.shape[0] < 1:
            raise DataError(f"quantized codebook must be k x d, got {ints.shape}")
        lo, hi = qrange(self.qb)
        if ints.size and (ints.min() < lo or ints.max() > hi):
            raise DataError(f"stored integer outside [{lo}, {hi}]")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DataError(f"scale must be positive and finite, got {self.scale}")
        ints.flags.writeable = False
        object.__setattr__(self, "ints", ints)
        object.__setattr__(self, "scale", float(np.float32(self.scale)))

    @property
    def k(self) -> int:
        return self.ints.shape[0]

    @property
    def d(self) -> int:
        return self.ints.shape[1]

    def __eq__(self, other):
        if not isinstance(other, QuantizedCodebook):
            return NotImplemented
        return (
            self.qb == other.qb
            and self.scale == other.scale
            and np.array_equal(self.ints, other.ints)
        )


def quantize_values(v, scale: float, qb: int) -> np.ndarray:
    """clamp(round(v / scale)) with round-half-to-even."""
    lo, hi = qrange(qb)
    return np.clip(np.rint(np.asarray(v, dtype=np.float64) / scale), lo, hi).astype(np.int64)


def dequantize_values(ints, scale: float) -> np.ndarray:
    # exact in float64: scale has a 24-bit mantissa and |ints| < 2**16
    return np.asarray(ints, dtype=np.float64) * float(scale)


def absmax_scale(v, qb: int) -> float:
    peak = float(np.max(np.abs(v))) if np.size(v) else 0.0
    if peak == 0.0:
        return 1.0
    return float(np.float32(peak / qrange(qb)[1]))


def grid_scale(v, qb: int, candidates: int = GRID_CANDIDATES) -> float:
    """Scale minimising codebook MSE among ``candidates`` fractions of absmax."""
    base = absmax_scale(v, qb)
    if base == 1.0 and not np.any(v):
        return 1.0
    best, best_err = base, np.inf
    for frac in np.linspace(1.0, 0.5, candidates):
        s = float(np.float32(base * frac))
        err = float(np.sum((dequantize_values(quantize_values(v, s, qb), s) - v) ** 2))
        if err < best_err:
            best, best_err = s, err
    return best


def quantize_codebook(
    c: Codebook, qb: int = 8, scale_mode: str = "absmax", scale: float | None = None
) -> QuantizedCodebook:
    if not 2 <= qb <= 16:
        raise ConfigInvalid(f"qb={qb} outside 2..16")
    v = c.codewords
    if scale is None:
        if scale_mode == "absmax":
            scale = absmax_scale(v, qb)
        elif scale_mode == "grid":
            scale = grid_scale(v, qb)
        else:
            raise ConfigInvalid(f"unknown scale mode {scale_mode!r}; expected one of {SCALE_MODES}")
    scale = float(np.float32(scale))
    return QuantizedCodebook(quantize_values(v, scale, qb), scale, qb)


def dequantize_codebook(qc: QuantizedCodebook) -> Codebook:
    return Codebook(dequantize_values(qc.ints, qc.scale))
