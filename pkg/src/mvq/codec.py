"""Bit-exact container for compressed layers and compression-ratio accounting.

Container layout (all integers little-endian)::

    "MVQ1" | version u8 | layer count u32
    per layer:
        Cout, Cin, Kh, Kw  u32 x4
        d, k, N, M         u16 x4
        qc                 u8
        scale              f32
        codebook stream    u64 bit length + k*d values, qc-bit two's complement
        assignment stream  u64 bit length + NG values, ceil(log2 k) bits each
        mask-id stream     u64 bit length + NG*d/M values, ceil(log2 C(M,N)) bits each

Each stream is packed LSB-first into bytes in sequence order and padded with
zero bits to a whole byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from mvq.clustering import Codebook, check_assignments
from mvq.errors import BadMagic, ConfigInvalid, CorruptLengths, DataError, IdOutOfRange, TruncatedStream
from mvq.finetune import reconstruct_for_forward
from mvq.quantization import QuantizedCodebook, dequantize_codebook
from mvq.sparsity import NmPattern, lut_ids_to_mask
from mvq.tensor import GroupedMatrix, WeightTensor, ungroup_weights

MAGIC = b"MVQ1"
VERSION = 1
_HEADER = struct.Struct("<4sBI")
_LAYER = struct.Struct("<4I4HBf")
_U64 = struct.Struct("<Q")
HEADER_BYTES = _HEADER.size


def index_bits(n: int) -> int:
    """ceil(log2 n) for n >= 1."""
    return (n - 1).bit_length()


# ---- bit packing ---------------------------------------------------------


def pack_bits(values, width: int) -> bytes:
    values = np.asarray(values, dtype=np.int64).ravel()
    if width == 0 or values.size == 0:
        return b""
    v = (values & ((1 << width) - 1)).astype(np.uint64)
    bits = ((v[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_bits(buf: bytes, count: int, width: int, signed: bool = False) -> np.ndarray:
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    bits = bits[: count * width].reshape(count, width).astype(np.int64)
    values = bits @ (np.int64(1) << np.arange(width, dtype=np.int64))
    if signed:
        values = np.where(values >= 1 << (width - 1), values - (1 << width), values)
    return values


# ---- layer ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CompressedLayer:
    shape: tuple[int, int, int, int]
    d: int
    pattern: NmPattern
    codebook: QuantizedCodebook
    assignments: np.ndarray
    mask_ids: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        cout = shape[0]
        if len(shape) != 4 or min(shape) < 1 or self.d < 1 or cout % self.d:
            raise ConfigInvalid(f"shape {shape} incompatible with d={self.d}")
        self.pattern.check_d(self.d)
        if self.codebook.d != self.d:
            raise ConfigInvalid(f"codebook length {self.codebook.d} != d={self.d}")
        a = check_assignments(self.assignments, self.ng, self.codebook.k)
        ids = np.asarray(self.mask_ids, dtype=np.int64)
        if ids.shape != (self.n_mask_ids,):
            raise DataError(f"expected {self.n_mask_ids} mask ids, got {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.pattern.n_masks):
            raise IdOutOfRange(f"mask id outside [0, {self.pattern.n_masks})")
        for arr in (a, ids):
            arr.flags.writeable = False
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "mask_ids", ids)

    @property
    def k(self) -> int:
        return self.codebook.k

    @property
    def ng(self) -> int:
        cout, cin, kh, kw = self.shape
        return cout // self.d * cin * kh * kw

    @property
    def n_mask_ids(self) -> int:
        return self.ng * self.d // self.pattern.m_group

    @property
    def n_weights(self) -> int:
        return self.ng * self.d

    def stream_bits(self) -> tuple[int, int, int]:
        """(codebook, assignment, mask) payload bit lengths."""
        return (
            self.k * self.d * self.codebook.qb,
            self.ng * index_bits(self.k),
            self.n_mask_ids * self.pattern.id_bits,
        )

    def mask(self) -> np.ndarray:
        return lut_ids_to_mask(self.mask_ids, self.pattern, self.d).reshape(self.ng, self.d)

    def __eq__(self, other):
        if not isinstance(other, CompressedLayer):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.d == other.d
            and self.pattern == other.pattern
            and self.codebook == other.codebook
            and np.array_equal(self.assignments, other.assignments)
            and np.array_equal(self.mask_ids, other.mask_ids)
        )


def decompress(layer: CompressedLayer) -> WeightTensor:
    codebook: Codebook = dequantize_codebook(layer.codebook)
    rows = reconstruct_for_forward(codebook, layer.assignments, layer.mask())
    return ungroup_weights(GroupedMatrix(rows, layer.shape))


# ---- compression ratio ---------------------------------------------------


@dataclass(frozen=True)
class CompressionReport:
    b_a: int
    b_m: int
    b_c: int
    raw_bits: int
    n_weights: int
    dense_flops: int
    sparse_flops: int

    @property
    def payload_bits(self) -> int:
        return self.b_a + self.b_m + self.b_c

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.raw_bits, self.payload_bits)

    @property
    def cr(self) -> float:
        return float(self.ratio)

    @property
    def bits_per_weight(self) -> float:
        return self.payload_bits / self.n_weights

    @property
    def flops_ratio(self) -> Fraction:
        return Fraction(self.sparse_flops, self.dense_flops)

    def __add__(self, other: CompressionReport) -> CompressionReport:
        return CompressionReport(
            self.b_a + other.b_a,
            self.b_m + other.b_m,
            self.b_c + other.b_c,
            self.raw_bits + other.raw_bits,
            self.n_weights + other.n_weights,
            self.dense_flops + other.dense_flops,
            self.sparse_flops + other.sparse_flops,
        )


def compression_ratio(
    ng: int,
    d: int,
    k: int,
    pattern: NmPattern,
    qc: int,
    b_f: int = 32,
    out_pixels: int = 1,
) -> CompressionReport:
    """Storage accounting for one layer.

    FLOPs are multiply-accumulates: ``NG*d`` weights times ``out_pixels``
    output positions; the sparse count keeps N of every M.
    """
    if min(ng, d, k, qc, b_f, out_pixels) < 1:
        raise ConfigInvalid("compression_ratio arguments must be positive")
    pattern.check_d(d)
    dense = ng * d * out_pixels
    return CompressionReport(
        b_a=index_bits(k) * ng,
        b_m=pattern.id_bits * (ng * d // pattern.m_group),
        b_c=k * d * qc,
        raw_bits=ng * d * b_f,
        n_weights=ng * d,
        dense_flops=dense,
        sparse_flops=dense * pattern.n_keep // pattern.m_group,
    )


def layer_report(layer: CompressedLayer, b_f: int = 32, out_pixels: int = 1) -> CompressionReport:
    return compression_ratio(layer.ng, layer.d, layer.k, layer.pattern, layer.codebook.qb, b_f, out_pixels)


# ---- container -----------------------------------------------------------


def _stream(bit_len: int, payload: bytes) -> bytes:
    return _U64.pack(bit_len) + payload


def serialize(layers) -> bytes:
    layers = list(layers)
    out = [_HEADER.pack(MAGIC, VERSION, len(layers))]
    for layer in layers:
        cout, cin, kh, kw = layer.shape
        for name, value in (("d", layer.d), ("k", layer.k), ("N", layer.pattern.n_keep), ("M", layer.pattern.m_group)):
            if value > 0xFFFF:
                raise ConfigInvalid(f"{name}={value} does not fit the container's u16 field")
        qc = layer.codebook.qb
        out.append(
            _LAYER.pack(cout, cin, kh, kw, layer.d, layer.k, layer.pattern.n_keep, layer.pattern.m_group, qc, layer.codebook.scale)
        )
        cb_bits, a_bits, m_bits = layer.stream_bits()
        out.append(_stream(cb_bits, pack_bits(layer.codebook.ints, qc)))
        out.append(_stream(a_bits, pack_bits(layer.assignments, index_bits(layer.k))))
        out.append(_stream(m_bits, pack_bits(layer.mask_ids, layer.pattern.id_bits)))
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedStream(f"need {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left")
        chunk = bytes(self.buf[self.pos : self.pos + n])
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def _read_stream(r: _Reader, expected_bits: int, what: str, seen: list[int]) -> bytes:
    (bit_len,) = r.unpack(_U64)
    if bit_len != expected_bits:
        raise CorruptLengths(f"{what} stream has {bit_len} bits, layer header implies {expected_bits}")
    seen.append(bit_len)
    return r.take((bit_len + 7) // 8)


def deserialize(buf: bytes) -> list[CompressedLayer]:
    return _parse(buf)[0]


def stream_bit_lengths(buf: bytes) -> list[tuple[int, int, int]]:
    """The stored (codebook, assignment, mask) u64 bit lengths of every layer."""
    return _parse(buf)[1]


def _parse(buf: bytes) -> tuple[list[CompressedLayer], list[tuple[int, int, int]]]:
    r = _Reader(buf)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise BadMagic("not an MVQ1 container")
    magic, version, count = r.unpack(_HEADER)
    if version != VERSION:
        raise BadMagic(f"unsupported container version {version}")
    layers, lengths = [], []
    for i in range(count):
        cout, cin, kh, kw, d, k, n, m, qc, scale = r.unpack(_LAYER)
        if min(cout, cin, kh, kw, d, k, n, m) < 1 or cout % d or n > m or d % m or not 2 <= qc <= 16:
            raise CorruptLengths(f"layer {i}: inconsistent header")
        pattern = NmPattern(n, m)
        ng = cout // d * cin * kh * kw
        n_ids = ng * d // m
        seen: list[int] = []
        cb = _read_stream(r, k * d * qc, "codebook", seen)
        asg = _read_stream(r, ng * index_bits(k), "assignment", seen)
        ids = _read_stream(r, n_ids * pattern.id_bits, "mask-id", seen)
        lengths.append(tuple(seen))
        ints = unpack_bits(cb, k * d, qc, signed=True).reshape(k, d)
        try:
            qcb = QuantizedCodebook(ints, float(scale), qc)
            layers.append(
                CompressedLayer(
                    (cout, cin, kh, kw),
                    d,
                    pattern,
                    qcb,
                    unpack_bits(asg, ng, index_bits(k)),
                    unpack_bits(ids, n_ids, pattern.id_bits),
                )
            )
        except ConfigInvalid as exc:
            raise CorruptLengths(f"layer {i}: {exc}") from None
    if r.pos != len(r.buf):
        raise CorruptLengths(f"{len(r.buf) - r.pos} trailing bytes after last layer")
    return layers, lengths
