"""N:M magnitude pruning and the mask look-up table.

``NmPattern(n_keep, m_group)`` keeps ``n_keep`` of every ``m_group`` weights,
so 4:16 means 75% sparsity.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from mvq.errors import (
    ConfigInvalid,
    DimensionMismatch,
    DNotMultipleOfM,
    IdOutOfRange,
    InvalidPopcount,
)
from mvq.tensor import GroupedMatrix, _frozen

_MAX_LUT_ENTRIES = 1 << 20


@dataclass(frozen=True)
class NmPattern:
    n_keep: int
    m_group: int

    def __post_init__(self):
        if not 0 < self.n_keep <= self.m_group:
            raise ConfigInvalid(f"invalid N:M pattern {self.n_keep}:{self.m_group}")

    @classmethod
    def parse(cls, text: str) -> NmPattern:
        try:
            n, m = (int(p) for p in text.split(":"))
        except ValueError:
            raise ConfigInvalid(f"N:M pattern must look like '4:16', got {text!r}") from None
        return cls(n, m)

    def __str__(self):
        return f"{self.n_keep}:{self.m_group}"

    @property
    def density(self) -> float:
        return self.n_keep / self.m_group

    @property
    def n_masks(self) -> int:
        return math.comb(self.m_group, self.n_keep)

    @property
    def id_bits(self) -> int:
        return (self.n_masks - 1).bit_length()

    @property
    def bits_per_weight(self) -> float:
        return self.id_bits / self.m_group

    def check_d(self, d: int) -> None:
        if d % self.m_group:
            raise DNotMultipleOfM(f"d={d} is not a multiple of M={self.m_group}")


class MaskLut:
    """Dense enumeration of every legal M-bit mask with exactly N ones.

    Ids follow ``itertools.combinations`` order of the kept positions, so id 0
    is ``[1]*N + [0]*(M-N)`` and the last id keeps the final N positions.
    """

    def __init__(self, pattern: NmPattern):
        if pattern.n_masks > _MAX_LUT_ENTRIES:
            raise ConfigInvalid(f"{pattern} has {pattern.n_masks} masks; LUT too large")
        self.pattern = pattern
        m = pattern.m_group
        combos = np.array(list(itertools.combinations(range(m), pattern.n_keep)), dtype=np.int64)
        masks = np.zeros((len(combos), m), dtype=bool)
        masks[np.arange(len(combos))[:, None], combos] = True
        self.masks = _frozen(masks)
        # first element is the most significant bit, so combination order is
        # strictly descending in key
        self._weights = (1 << np.arange(m - 1, -1, -1)).astype(np.int64)
        self._keys_ascending = _frozen((masks @ self._weights)[::-1])

    def __len__(self):
        return len(self.masks)

    @property
    def id_bits(self) -> int:
        return self.pattern.id_bits

    def encode(self, chunks: np.ndarray) -> np.ndarray:
        """Map an (..., M) boolean array of chunks to mask ids."""
        chunks = np.asarray(chunks, dtype=bool)
        if chunks.shape[-1] != self.pattern.m_group:
            raise DimensionMismatch(f"chunk width {chunks.shape[-1]} != M={self.pattern.m_group}")
        pop = chunks.sum(axis=-1)
        if np.any(pop != self.pattern.n_keep):
            raise InvalidPopcount(f"mask chunk does not have exactly {self.pattern.n_keep} ones")
        keys = chunks.astype(np.int64) @ self._weights
        pos = np.searchsorted(self._keys_ascending, keys)
        return (len(self) - 1 - pos).astype(np.int64)

    def decode(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise IdOutOfRange(f"mask id outside [0, {len(self)})")
        return self.masks[ids]


@lru_cache(maxsize=None)
def mask_lut(pattern: NmPattern) -> MaskLut:
    return MaskLut(pattern)


@dataclass(frozen=True, eq=False)
class SparseGroupedMatrix:
    """Pruned grouped matrix: zeroed values plus the kept-weight bitmask."""

    matrix: GroupedMatrix
    mask: np.ndarray
    pattern: NmPattern

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.matrix.rows.shape:
            raise DimensionMismatch(f"mask {mask.shape} vs rows {self.matrix.rows.shape}")
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def rows(self) -> np.ndarray:
        return self.matrix.rows

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def d(self) -> int:
        return self.matrix.d

    @property
    def ng(self) -> int:
        return self.matrix.ng

    def mask_ids(self) -> np.ndarray:
        """Flat LUT id sequence, one per M-chunk in row-major order."""
        m = self.pattern.m_group
        return mask_lut(self.pattern).encode(self.mask.reshape(-1, m))


def prune_nm(g: GroupedMatrix, pattern: NmPattern) -> SparseGroupedMatrix:
    """Keep the N largest magnitudes of every aligned M-chunk of every row.

    Ties go to the lowest index, so all-zero chunks keep their first N slots.
    """
    pattern.check_d(g.d)
    m, n = pattern.m_group, pattern.n_keep
    chunks = np.abs(g.rows).reshape(-1, m)
    order = np.argsort(-chunks, axis=1, kind="stable")[:, :n]
    mask = np.zeros(chunks.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    mask = mask.reshape(g.rows.shape)
    return SparseGroupedMatrix(g.with_rows(np.where(mask, g.rows, 0.0)), mask, pattern)


def mask_to_lut_ids(mask_row, pattern: NmPattern) -> np.ndarray:
    mask_row = np.asarray(mask_row, dtype=bool)
    pattern.check_d(mask_row.size)
    return mask_lut(pattern).encode(mask_row.reshape(-1, pattern.m_group))


def lut_ids_to_mask(ids, pattern: NmPattern, d: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).ravel()
    pattern.check_d(d)
    if ids.size * pattern.m_group % d:
        raise DimensionMismatch(f"{ids.size} ids do not fill rows of length {d}")
    return mask_lut(pattern).decode(ids).reshape(-1)


def apply_mask(g: GroupedMatrix, mask: np.ndarray, pattern: NmPattern) -> SparseGroupedMatrix:
    """Wrap ``g`` with an existing N:M mask, zeroing entries outside it."""
    mask = np.asarray(mask, dtype=bool)
    pattern.check_d(g.d)
    if np.any(mask.reshape(-1, pattern.m_group).sum(axis=1) != pattern.n_keep):
        raise InvalidPopcount(f"mask does not follow {pattern}")
    return SparseGroupedMatrix(g.with_rows(np.where(mask, g.rows, 0.0)), mask, pattern)
