"""Dense weight tensors, output-channel grouping and SSE metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mvq.errors import CoutNotMultipleOfD, DataError, DimensionMismatch

Shape4 = tuple[int, int, int, int]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class WeightTensor:
    """A 4-D convolution weight of shape (Cout, Cin, Kh, Kw)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None, None]
        if data.ndim != 4 or min(data.shape) < 1:
            raise DataError(f"weight tensor must be 4-D with positive dims, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("weight tensor contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_flat(cls, values, shape: Shape4) -> WeightTensor:
        values = np.asarray(values)
        if values.size != int(np.prod(shape)):
            raise DataError(f"{values.size} values do not fill shape {tuple(shape)}")
        return cls(values.reshape(shape))

    @property
    def shape(self) -> Shape4:
        return tuple(int(s) for s in self.data.shape)  # type: ignore[return-value]

    def __eq__(self, other):
        if not isinstance(other, WeightTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class GroupedMatrix:
    """NG x d subvector view of a weight tensor.

    Row ``j`` holds d consecutive output channels at one (cin, kh, kw)
    position; rows run over (cout-block, cin, kh, kw) in lexicographic order.
    """

    rows: np.ndarray
    shape: Shape4

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2:
            raise DimensionMismatch(f"grouped rows must be 2-D, got {rows.shape}")
        cout, cin, kh, kw = self.shape
        d = rows.shape[1]
        if d == 0 or cout % d or rows.shape[0] != (cout // d) * cin * kh * kw:
            raise DimensionMismatch(f"rows {rows.shape} inconsistent with shape {self.shape}")
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def ng(self) -> int:
        return self.rows.shape[0]

    def with_rows(self, rows: np.ndarray) -> GroupedMatrix:
        return GroupedMatrix(rows, self.shape)


@dataclass(frozen=True)
class SseReport:
    total_sse: float
    mask_sse: float


def group_weights(w: WeightTensor, d: int) -> GroupedMatrix:
    cout, cin, kh, kw = w.shape
    if d < 1 or cout % d:
        raise CoutNotMultipleOfD(f"Cout={cout} is not a multiple of d={d}")
    rows = w.data.reshape(cout // d, d, cin, kh, kw).transpose(0, 2, 3, 4, 1).reshape(-1, d)
    return GroupedMatrix(rows, w.shape)


def ungroup_weights(g: GroupedMatrix) -> WeightTensor:
    cout, cin, kh, kw = g.shape
    d = g.d
    data = g.rows.reshape(cout // d, cin, kh, kw, d).transpose(0, 4, 1, 2, 3).reshape(g.shape)
    return WeightTensor(data)


def _as_rows(x) -> np.ndarray:
    return x.rows if isinstance(x, GroupedMatrix) else np.asarray(x)


def sse(original, reconstructed, mask=None) -> SseReport:
    """Total and masked sum of squared errors.

    Accepts GroupedMatrix or plain arrays of equal shape. ``mask`` marks the
    entries that count towards ``mask_sse``; without one both values agree.
    """
    a = np.asarray(_as_rows(original), dtype=np.longdouble)
    b = np.asarray(_as_rows(reconstructed), dtype=np.longdouble)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    total = float(sq.sum())
    if mask is None:
        return SseReport(total, total)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise DimensionMismatch(f"mask shape {mask.shape} vs {a.shape}")
    return SseReport(total, float(sq[mask].sum()))


# raw tensor files: "<stem>.txt" key=value manifest + "<stem>.bin" f32 LE blob


def read_manifest(path: Path) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}: malformed manifest line {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def read_raw_tensor(manifest: str | Path) -> tuple[str, WeightTensor]:
    manifest = Path(manifest)
    meta = read_manifest(manifest)
    for key in ("name", "dtype", "shape"):
        if key not in meta:
            raise DataError(f"{manifest}: missing '{key}'")
    if meta["dtype"] != "f32":
        raise DataError(f"{manifest}: unsupported dtype {meta['dtype']!r}")
    try:
        shape = tuple(int(s) for s in meta["shape"].split(","))
    except ValueError:
        raise DataError(f"{manifest}: bad shape {meta['shape']!r}") from None
    if len(shape) != 4:
        raise DataError(f"{manifest}: shape must have 4 dims")
    blob = manifest.parent / meta.get("data", manifest.with_suffix(".bin").name)
    values = np.fromfile(blob, dtype="<f4")
    return meta["name"], WeightTensor.from_flat(values, shape)


def write_raw_tensor(stem: str | Path, name: str, w: WeightTensor) -> Path:
    """Write ``<stem>.txt`` and ``<stem>.bin``; returns the manifest path."""
    stem = Path(stem)
    manifest = stem.with_suffix(".txt")
    blob = stem.with_suffix(".bin")
    shape = ",".join(str(s) for s in w.shape)
    manifest.write_text(f"name={name}\ndtype=f32\nshape={shape}\ndata={blob.name}\n")
    np.ascontiguousarray(w.data, dtype="<f4").tofile(blob)
    return manifest
