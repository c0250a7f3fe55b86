"""Closed-form model of a weight-stationary systolic accelerator.

Counts memory accesses per storage level for a convolution layer, turns them
into normalised energy, estimates a roofline bound from weight-loading
bandwidth and tabulates sparse-tile resources. Nothing here is cycle
accurate; the model is built so the reuse ratios of the extended dataflow
and the datawidth savings of compressed weights come out exactly.

Base access model (one pass = one H x L weight tile at one kernel position):
  passes        = ceil(Cin/H) * ceil(Cout/L) * Kh * Kw
  L1 ifmap reads  = OH*OW * active rows   summed over passes
  L1 psum traffic = 2 * OH*OW * active cols  summed over passes
The extended dataflow divides the first by A*D and the second by B*D; the
traffic it saves is served from the activation and partial-sum register
files instead. Access counts are kept as exact fractions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from mvq.errors import ConfigInvalid, DataError, QNotIntegral, WrongPopcount
from mvq.sparsity import NmPattern

LEVELS = ("DRAM", "L2", "L1", "PRF", "ARF", "WRF", "CRF", "MAC")
DATA_LEVELS = LEVELS[:-1]
DATAFLOWS = ("ws", "ews")
COMPRESSIONS = ("base", "c", "cm", "cms")
SETTINGS = ("ws", "ws-cms", "ews", "ews-c", "ews-cm", "ews-cms")
WORD_BITS = 8


@dataclass(frozen=True)
class EnergyModel:
    """Per-access energy normalised to one MAC."""

    dram: float = 200.0
    l2: float = 15.0
    l1: float = 6.0
    prf: float = 0.22
    arf: float = 0.11
    wrf: float = 0.02
    crf: float = 0.02
    mac: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigInvalid(f"energy cost {f.name} must be positive")

    def costs(self) -> dict[str, float]:
        return {level: getattr(self, level.lower()) for level in LEVELS}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    cout: int
    cin: int
    kh: int
    kw: int
    oh: int
    ow: int
    stride: int = 1

    def __post_init__(self):
        if min(self.cout, self.cin, self.kh, self.kw, self.oh, self.ow, self.stride) < 1:
            raise DataError(f"layer {self.name}: dimensions must be positive")

    @property
    def n_weights(self) -> int:
        return self.cout * self.cin * self.kh * self.kw

    @property
    def macs(self) -> int:
        return self.n_weights * self.oh * self.ow

    @property
    def ifmap_elems(self) -> int:
        # padding and kernel halo ignored
        return self.cin * self.oh * self.ow * self.stride * self.stride

    @property
    def ofmap_elems(self) -> int:
        return self.cout * self.oh * self.ow


def read_layer_table(path: str | Path) -> list[LayerSpec]:
    """Parse ``name Cout Cin Kh Kw OH OW [stride]`` lines; '#' starts a comment."""
    layers = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (7, 8):
            raise DataError(f"{path}:{lineno}: expected 'name Cout Cin Kh Kw OH OW [stride]'")
        try:
            dims = [int(p) for p in parts[1:]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer dimension") from None
        layers.append(LayerSpec(parts[0], *dims))
    return layers


@dataclass(frozen=True)
class AccelConfig:
    """Array geometry and compression settings.

    ``h`` rows unroll input channels, ``l`` columns unroll output channels.
    ``ext_a``, ``ext_b``, ``ext_d`` are the output-channel, input-channel and
    kernel-plane extensions of the extended dataflow (all 1 for plain WS).
    """

    h: int = 32
    l: int = 32
    ext_a: int = 1
    ext_b: int = 1
    ext_d: int = 1
    d: int = 16
    k: int = 512
    pattern: NmPattern = field(default_factory=lambda: NmPattern(4, 16))
    weight_bits: int = 8
    qc: int = 8
    dma_bits: int = 64
    dataflow: str = "ews"
    compression: str = "base"
    l1_kb: int = 256
    psum_bits: int = 24

    def __post_init__(self):
        if self.dataflow not in DATAFLOWS:
            raise ConfigInvalid(f"dataflow must be one of {DATAFLOWS}")
        if self.compression not in COMPRESSIONS:
            raise ConfigInvalid(f"compression must be one of {COMPRESSIONS}")
        ints = (self.h, self.l, self.ext_a, self.ext_b, self.ext_d, self.d, self.k, self.weight_bits, self.qc, self.dma_bits, self.l1_kb, self.psum_bits)
        if min(ints) < 1:
            raise ConfigInvalid("accelerator parameters must be positive")
        if self.dataflow == "ws" and (self.ext_a, self.ext_b, self.ext_d) != (1, 1, 1):
            raise ConfigInvalid("plain WS has no dataflow extensions (A=B=D=1)")
        if self.l % self.d:
            raise ConfigInvalid(f"array width L={self.l} must be a multiple of d={self.d}")
        if self.compression in ("cm", "cms"):
            self.pattern.check_d(self.d)

    @property
    def compressed(self) -> bool:
        return self.compression != "base"

    @property
    def sparse(self) -> bool:
        return self.compression in ("cm", "cms")

    @property
    def subvector_bits(self) -> int:
        """Bits streamed per d-weight subvector (assignment + mask id)."""
        bits = (self.k - 1).bit_length()
        if self.sparse:
            bits += self.pattern.id_bits * (self.d // self.pattern.m_group)
        return bits

    @property
    def bits_per_weight(self) -> Fraction:
        if not self.compressed:
            return Fraction(self.weight_bits)
        return Fraction(self.subvector_bits, self.d)

    @property
    def density(self) -> Fraction:
        if self.sparse:
            return Fraction(self.pattern.n_keep, self.pattern.m_group)
        return Fraction(1)


def setting_config(
    setting: str,
    h: int = 32,
    l: int = 32,
    ews: tuple[int, int, int] = (4, 2, 2),
    dma_bits: int = 64,
    l1_kb: int = 256,
    pattern: NmPattern = NmPattern(4, 16),
) -> AccelConfig:
    """Config for one of the six named hardware settings.

    Common VQ uses k=1024, d=8 and masked VQ uses k=512, d=16, which gives
    both the same weight-loading width.
    """
    if setting not in SETTINGS:
        raise ConfigInvalid(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    dataflow, _, comp = setting.partition("-")
    a, b, dd = ews if dataflow == "ews" else (1, 1, 1)
    comp = comp or "base"
    base = AccelConfig(h=h, l=l, ext_a=a, ext_b=b, ext_d=dd, dataflow=dataflow, dma_bits=dma_bits, l1_kb=l1_kb)
    if comp == "c":
        return replace(base, compression="c", k=1024, d=8, pattern=NmPattern(8, 8))
    if comp in ("cm", "cms"):
        return replace(base, compression=comp, k=512, d=16, pattern=pattern)
    return base


@dataclass(frozen=True)
class AccessCounts:
    """Accesses per storage level; DRAM and L2 count 8-bit words."""

    macs: Fraction = Fraction(0)
    dram: Fraction = Fraction(0)
    l2: Fraction = Fraction(0)
    l1_ifmap: Fraction = Fraction(0)
    l1_psum: Fraction = Fraction(0)
    prf: Fraction = Fraction(0)
    arf: Fraction = Fraction(0)
    wrf: Fraction = Fraction(0)
    crf: Fraction = Fraction(0)
    weight_stream_bits: Fraction = Fraction(0)
    codebook_bits: Fraction = Fraction(0)

    @property
    def l1(self) -> Fraction:
        return self.l1_ifmap + self.l1_psum

    def levels(self) -> dict[str, Fraction]:
        return {
            "DRAM": self.dram,
            "L2": self.l2,
            "L1": self.l1,
            "PRF": self.prf,
            "ARF": self.arf,
            "WRF": self.wrf,
            "CRF": self.crf,
            "MAC": self.macs,
        }

    def __add__(self, other: AccessCounts) -> AccessCounts:
        return AccessCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


def ews_access_counts(layer: LayerSpec, cfg: AccelConfig) -> AccessCounts:
    row_tiles = math.ceil(layer.cin / cfg.h)
    col_tiles = math.ceil(layer.cout / cfg.l)
    kernel = layer.kh * layer.kw
    pixels = layer.oh * layer.ow

    base_ifmap = Fraction(pixels * layer.cin * col_tiles * kernel)
    base_psum = Fraction(2 * pixels * layer.cout * row_tiles * kernel)
    l1_ifmap = base_ifmap / (cfg.ext_a * cfg.ext_d)
    l1_psum = base_psum / (cfg.ext_b * cfg.ext_d)

    macs = layer.macs * cfg.density
    if cfg.compressed:
        subvectors = math.ceil(layer.cout / cfg.d) * layer.cin * kernel
        stream_bits = Fraction(subvectors * cfg.subvector_bits)
        codebook_bits = Fraction(cfg.k * cfg.d * cfg.qc)
        crf = Fraction(subvectors + cfg.k)
    else:
        stream_bits = Fraction(layer.n_weights * cfg.weight_bits)
        codebook_bits = Fraction(0)
        crf = Fraction(0)
    weight_words = (stream_bits + codebook_bits) / WORD_BITS

    l1_bytes = cfg.l1_kb * 1024
    spill = sum(n for n in (layer.ifmap_elems, layer.ofmap_elems) if n * WORD_BITS // 8 > l1_bytes)

    return AccessCounts(
        macs=macs,
        dram=weight_words + spill,
        l2=weight_words + layer.ifmap_elems + layer.ofmap_elems,
        l1_ifmap=l1_ifmap,
        l1_psum=l1_psum,
        prf=base_psum - l1_psum,
        arf=base_ifmap - l1_ifmap,
        wrf=macs + layer.n_weights * cfg.density,
        crf=crf,
        weight_stream_bits=stream_bits,
        codebook_bits=codebook_bits,
    )


@dataclass(frozen=True)
class EnergyReport:
    counts: dict[str, Fraction]
    energy: dict[str, float]

    @property
    def total(self) -> float:
        return sum(self.energy.values())

    @property
    def access_energy(self) -> float:
        """Energy of data movement only (MAC excluded)."""
        return sum(v for k, v in self.energy.items() if k != "MAC")

    def percentages(self) -> dict[str, float]:
        total = self.total
        return {k: (100.0 * v / total if total else 0.0) for k, v in self.energy.items()}


def energy_report(counts, model: EnergyModel = EnergyModel(), gated_fraction: float = 0.0) -> EnergyReport:
    """Weighted sum of access counts; gated MACs cost nothing."""
    if isinstance(counts, AccessCounts):
        counts = counts.levels()
    unknown = set(counts) - set(LEVELS)
    if unknown:
        raise ConfigInvalid(f"unknown storage levels {sorted(unknown)}")
    costs = model.costs()
    full = {level: Fraction(counts.get(level, 0)) for level in LEVELS}
    energy = {level: float(full[level]) * costs[level] for level in LEVELS}
    energy["MAC"] *= 1.0 - gated_fraction
    return EnergyReport(full, energy)


# ---- sparse tile ----------------------------------------------------------


@dataclass(frozen=True)
class TileResources:
    multipliers: int
    adders: int
    rf_bits: int
    lzc: int
    demux: int
    mux: int
    parallelism: int


WRF_DEPTH = 16


def sparse_tile_resources(
    h: int, d: int, pattern: NmPattern, weight_bits: int = 8, psum_bits: int = 24
) -> tuple[TileResources, TileResources]:
    """(dense, sparse) resources of an H x d tile.

    The sparse tile keeps Q = d*N/M multipliers per row and adds a position
    register file of log2(d) bits next to every weight register file.
    """
    q = Fraction(d * pattern.n_keep, pattern.m_group)
    if q.denominator != 1:
        raise QNotIntegral(f"Q = {d}*{pattern.n_keep}/{pattern.m_group} is not an integer")
    q = int(q)
    pos_bits = (d - 1).bit_length()
    dense = TileResources(
        multipliers=h * d,
        adders=h * d,
        rf_bits=h * d * WRF_DEPTH * weight_bits,
        lzc=0,
        demux=0,
        mux=0,
        parallelism=2 * h * d,
    )
    sparse = TileResources(
        multipliers=h * q,
        adders=h * d,
        rf_bits=h * q * WRF_DEPTH * weight_bits + h * q * WRF_DEPTH * pos_bits,
        lzc=h * q,
        demux=h * q * psum_bits,
        mux=h * q * weight_bits,
        parallelism=2 * h * d,
    )
    return dense, sparse


def leading_zeros(bits) -> int:
    """Zeros before the first set bit (index 0 first); len(bits) if none."""
    for i, b in enumerate(bits):
        if b:
            return i
    return len(bits)


def lzc_encode_mask(mask, q: int | None = None) -> list[int]:
    """Positions of the set bits, produced the way a chain of Q LZCs does it.

    Each stage counts leading zeros, emits that position, and XORs its
    one-hot code into the mask before handing it to the next stage.
    """
    bits = [int(bool(b)) for b in mask]
    pop = sum(bits)
    if q is None:
        q = pop
    if pop != q:
        raise WrongPopcount(f"mask has {pop} set bits, encoder has {q} stages")
    codes = []
    for _ in range(q):
        pos = leading_zeros(bits)
        codes.append(pos)
        bits[pos] ^= 1
    return codes


# ---- roofline ---------------------------------------------------------------


@dataclass(frozen=True)
class RooflinePoint:
    peak: float
    load_limit: float
    # MACs per weight bit loaded
    intensity: float

    @property
    def attainable(self) -> float:
        return min(self.peak, self.load_limit)

    @property
    def bound(self) -> str:
        return "compute" if self.peak <= self.load_limit else "weight-load"

    @property
    def fraction(self) -> float:
        return self.attainable / self.peak


def roofline(layer: LayerSpec, cfg: AccelConfig) -> RooflinePoint:
    """Throughput in dense-equivalent MACs per cycle.

    Every weight placed in the array is used once per output pixel, so it
    serves OH*OW MACs; the DMA delivers ``dma_bits / bits_per_weight`` new
    weights per cycle. Extensions change L1 traffic, not this reuse.
    """
    reuse = layer.oh * layer.ow
    bpw = float(cfg.bits_per_weight)
    return RooflinePoint(
        peak=float(cfg.h * cfg.l),
        load_limit=cfg.dma_bits / bpw * reuse,
        intensity=reuse / bpw,
    )


def zero_gating_savings(weight_zero_fraction: float, act_zero_fraction: float) -> float:
    """Fraction of MACs with a zero operand, assuming independent zeros."""
    for name, v in (("weight", weight_zero_fraction), ("activation", act_zero_fraction)):
        if not 0.0 <= v <= 1.0:
            raise ConfigInvalid(f"{name} zero fraction {v} outside [0, 1]")
    return 1.0 - (1.0 - weight_zero_fraction) * (1.0 - act_zero_fraction)


# ---- whole network ------------------------------------------------------------


@dataclass(frozen=True)
class SimReport:
    setting: str
    config: AccelConfig
    counts: AccessCounts
    energy: EnergyReport
    cycles: float
    dense_macs: int
    tile: TileResources
    per_layer: tuple[tuple[str, AccessCounts, RooflinePoint], ...]

    @property
    def attainable_fraction(self) -> float:
        if not self.cycles:
            return 0.0
        return self.dense_macs / self.cycles / (self.config.h * self.config.l)


def simulate(
    layers: list[LayerSpec],
    cfg: AccelConfig,
    model: EnergyModel = EnergyModel(),
    setting: str = "",
    act_zero_fraction: float = 0.0,
    weight_zero_fraction: float = 0.0,
) -> SimReport:
    total = AccessCounts()
    cycles = 0.0
    per_layer = []
    for layer in layers:
        counts = ews_access_counts(layer, cfg)
        point = roofline(layer, cfg)
        total = total + counts
        cycles += layer.macs / point.attainable
        per_layer.append((layer.name, counts, point))
    gated = zero_gating_savings(weight_zero_fraction, act_zero_fraction)
    if cfg.compression == "cms":
        tile = sparse_tile_resources(cfg.h, cfg.d, cfg.pattern, cfg.weight_bits, cfg.psum_bits)[1]
    else:
        tile = sparse_tile_resources(cfg.h, cfg.d, NmPattern(1, 1), cfg.weight_bits, cfg.psum_bits)[0]
    return SimReport(
        setting=setting or f"{cfg.dataflow}-{cfg.compression}",
        config=cfg,
        counts=total,
        energy=energy_report(total, model, gated),
        cycles=cycles,
        dense_macs=sum(layer.macs for layer in layers),
        tile=tile,
        per_layer=tuple(per_layer),
    )


# ---- report output ------------------------------------------------------------


def format_report(reports: list[SimReport]) -> str:
    """Human-readable summary: counts, energy split and roofline per setting."""
    lines = []
    for r in reports:
        cfg = r.config
        lines.append(
            f"[{r.setting}] array {cfg.h}x{cfg.l}  A,B,D={cfg.ext_a},{cfg.ext_b},{cfg.ext_d}  "
            f"compression={cfg.compression}  bits/weight={float(cfg.bits_per_weight):.4g}"
        )
        pct = r.energy.percentages()
        for level in LEVELS:
            lines.append(
                f"  {level:<5} count={float(r.energy.counts[level]):>16.6g}  "
                f"energy={r.energy.energy[level]:>16.6g}  {pct[level]:6.2f}%"
            )
        lines.append(f"  data-access energy={r.energy.access_energy:.6g}  total energy={r.energy.total:.6g}")
        lines.append(f"  cycles={r.cycles:.6g}  attainable fraction of peak={r.attainable_fraction:.4f}")
        bounds = [name for name, _, point in r.per_layer if point.bound != "compute"]
        lines.append(f"  weight-load bound layers: {', '.join(bounds) if bounds else 'none'}")
        t = r.tile
        lines.append(
            f"  tile {cfg.h}x{cfg.d}: multipliers={t.multipliers} adders={t.adders} rf_bits={t.rf_bits} "
            f"lzc={t.lzc} demux={t.demux} mux={t.mux} parallelism={t.parallelism}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def reports_csv(reports: list[SimReport]) -> str:
    """One row per (setting, level) with count, energy and share of total."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "level", "count", "energy", "percent"])
    for r in reports:
        pct = r.energy.percentages()
        for level in LEVELS:
            w.writerow([r.setting, level, float(r.energy.counts[level]), r.energy.energy[level], round(pct[level], 4)])
    return buf.getvalue()
