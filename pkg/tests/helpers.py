"""Random container contents shared by the codec and acceptance tests."""

import numpy as np

from mvq.codec import CompressedLayer
from mvq.quantization import QuantizedCodebook
from mvq.sparsity import NmPattern


def random_layer(r: np.random.Generator) -> CompressedLayer:
    pattern = [NmPattern(1, 2), NmPattern(2, 4), NmPattern(4, 16), NmPattern(4, 4)][r.integers(4)]
    d = pattern.m_group * int(r.integers(1, 3))
    shape = (d * int(r.integers(1, 4)), int(r.integers(1, 5)), int(r.integers(1, 4)), int(r.integers(1, 4)))
    ng = shape[0] // d * shape[1] * shape[2] * shape[3]
    k = int(r.integers(1, 70))
    qb = int(r.integers(2, 17))
    lo, hi = -(1 << (qb - 1)), (1 << (qb - 1)) - 1
    cb = QuantizedCodebook(r.integers(lo, hi + 1, size=(k, d)), float(r.uniform(1e-3, 2)), qb)
    return CompressedLayer(
        shape,
        d,
        pattern,
        cb,
        r.integers(0, k, size=ng),
        r.integers(0, pattern.n_masks, size=ng * d // pattern.m_group),
    )


def random_model(seed: int) -> list[CompressedLayer]:
    r = np.random.default_rng(seed)
    return [random_layer(r) for _ in range(int(r.integers(0, 4)))]
