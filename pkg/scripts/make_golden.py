"""Regenerate tests/data/golden_toy.mvq, the frozen 2-layer container.

Only rerun this on a deliberate format change; the test suite compares fresh
compressions against the stored bytes.
"""

from pathlib import Path

import numpy as np

from mvq.codec import serialize
from mvq.pipeline import LayerSettings, compress_tensor
from mvq.sparsity import NmPattern
from mvq.tensor import WeightTensor

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_toy.mvq"


def toy_model():
    rng = np.random.default_rng(7)
    return [
        ("conv", WeightTensor(rng.normal(size=(16, 4, 3, 3)).astype(np.float32))),
        ("proj", WeightTensor(rng.normal(size=(8, 16, 1, 1)).astype(np.float32))),
    ]


def toy_settings():
    return [LayerSettings(16, 16, NmPattern(4, 16), 8), LayerSettings(8, 8, NmPattern(2, 4), 6)]


def build() -> bytes:
    layers = [compress_tensor(w, s, seed=42).layer for (_, w), s in zip(toy_model(), toy_settings())]
    return serialize(layers)


if __name__ == "__main__":
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_bytes(build())
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")
