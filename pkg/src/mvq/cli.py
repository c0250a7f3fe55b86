"""Command-line front end: ``mvq compress|ablate|simulate|stats|reconstruct``.

Exit codes: 0 success, 2 configuration error, 3 bad input data, 4 internal
invariant violation. All randomness comes from ``--seed`` (default 42).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from mvq import accel
from mvq.clustering import DEFAULT_SEED
from mvq.codec import decompress, deserialize, layer_report, serialize
from mvq.errors import ConfigError, ConfigInvalid, DataError, InvariantViolation
from mvq.pipeline import (
    CASE_DESCRIPTIONS,
    MODES,
    SCOPES,
    LayerResult,
    LayerSettings,
    aggregate_report,
    compress_crosslayer,
    compress_tensor,
    run_ablation,
)
from mvq.sparsity import NmPattern
from mvq.tensor import GroupedMatrix, read_raw_tensor, sse, ungroup_weights, write_raw_tensor

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


def bundled_layer_table(name: str = "resnet18") -> Path:
    return Path(str(resources.files("mvq") / "data" / f"{name}.txt"))


# ---- configuration --------------------------------------------------------


@dataclass(frozen=True)
class LayerRule:
    settings: LayerSettings
    exclude: bool = False


@dataclass
class RunConfig:
    command: str
    inputs: list[Path]
    default: LayerSettings = field(default_factory=LayerSettings)
    rules: dict[str, LayerRule] = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    mode: str = "masked"
    scope: str = "layerwise"
    out: Path | None = None

    def validate(self) -> RunConfig:
        if self.mode not in MODES:
            raise ConfigInvalid(f"--mode must be one of {MODES}")
        if self.scope not in SCOPES:
            raise ConfigInvalid(f"--scope must be one of {SCOPES}")
        return self

    def rule_for(self, name: str) -> LayerRule:
        return self.rules.get(name, self.rules.get("*", LayerRule(self.default)))


_KEYS = ("d", "k", "nm", "qc")


def _convert(key: str, value: str):
    if key == "nm":
        return "pattern", NmPattern.parse(value)
    try:
        return key, int(value)
    except ValueError:
        raise ConfigInvalid(f"bad value {value!r} for {key}") from None


def parse_layer_config(text: str, default: LayerSettings) -> dict[str, LayerRule]:
    """Per-layer overrides: ``name [exclude] [d=..] [k=..] [nm=N:M] [qc=..]``.

    A ``*`` line sets the defaults for layers not listed; '#' starts a comment.
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split()
        if line:
            lines.append((lineno, line))
    base = default
    for lineno, (name, *opts) in lines:
        if name == "*":
            base = _parse_opts(lineno, opts, default).settings
    rules = {"*": LayerRule(base)}
    for lineno, (name, *opts) in lines:
        if name != "*":
            rules[name] = _parse_opts(lineno, opts, base)
    return rules


def _parse_opts(lineno: int, opts: list[str], base: LayerSettings) -> LayerRule:
    exclude = False
    changes = {}
    for opt in opts:
        if opt == "exclude":
            exclude = True
            continue
        key, sep, value = opt.partition("=")
        if not sep or key not in _KEYS:
            raise ConfigInvalid(f"layer config line {lineno}: unknown option {opt!r}")
        field_name, v = _convert(key, value)
        changes[field_name] = v
    # validated once, on the combined settings
    return LayerRule(replace(base, **changes), exclude)


# ---- commands ---------------------------------------------------------------


def _load(paths) -> list[tuple[str, object]]:
    return [read_raw_tensor(p) for p in paths]


def _print_layer(r: LayerResult, out) -> None:
    rep = r.report
    print(
        f"{r.name or '-':<24} shape={'x'.join(map(str, r.layer.shape))} d={r.layer.d} k={r.layer.k} "
        f"{r.layer.pattern} total_sse={r.sse.total_sse:.6g} mask_sse={r.sse.mask_sse:.6g} "
        f"CR={rep.cr:.4f} bits/w={rep.bits_per_weight:.4f} iters={r.stats.iterations}",
        file=out,
    )


def _print_total(total, out) -> None:
    print(
        f"{'TOTAL':<24} b_a={total.b_a} b_m={total.b_m} b_c={total.b_c} CR={total.cr:.4f} "
        f"dense_flops={total.dense_flops} sparse_flops={total.sparse_flops} "
        f"flops_ratio={float(total.flops_ratio):.4f}",
        file=out,
    )


def cmd_compress(cfg: RunConfig, init_path: Path | None = None, out=sys.stdout) -> list[LayerResult]:
    """Compress raw tensors into one container; prints SSE, CR and FLOPs."""
    if cfg.out is None:
        raise ConfigInvalid("compress needs --out")
    named = []
    for name, w in _load(cfg.inputs):
        rule = cfg.rule_for(name)
        if rule.exclude:
            print(f"{name:<24} excluded", file=out)
            continue
        named.append((name, w, rule.settings))
    if cfg.scope == "crosslayer":
        settings = {s for _, _, s in named}
        if len(settings) > 1:
            raise ConfigInvalid("crosslayer scope needs identical d, k, N:M, qc for every included layer")
        results = compress_crosslayer(
            [(n, w) for n, w, _ in named], named[0][2] if named else cfg.default, cfg.seed, cfg.mode
        )
    else:
        priors = deserialize(Path(init_path).read_bytes()) if init_path else []
        if priors and len(priors) != len(named):
            raise DataError(f"--init has {len(priors)} layers, compressing {len(named)}")
        results = []
        for i, (name, w, s) in enumerate(named):
            try:
                results.append(compress_tensor(w, s, cfg.seed, cfg.mode, init=priors[i] if priors else None, name=name))
            except (ConfigError, DataError) as exc:
                raise type(exc)(f"layer {name}: {exc}") from exc
    Path(cfg.out).write_bytes(serialize([r.layer for r in results]))
    for r in results:
        _print_layer(r, out)
    total = aggregate_report(results, cfg.scope)
    if total is not None:
        _print_total(total, out)
    return results


def cmd_ablate(
    cfg: RunConfig,
    dense_kd: tuple[int, int] = (1024, 8),
    sparse_kd: tuple[int, int] = (512, 16),
    out=sys.stdout,
):
    """Four-way clustering comparison per input tensor."""
    all_cases = []
    for name, w in _load(cfg.inputs):
        cases = run_ablation(w, cfg.default.pattern, dense_kd, sparse_kd, cfg.seed)
        print(f"{name}: pattern {cfg.default.pattern}, seed {cfg.seed}", file=out)
        for key, c in cases.items():
            print(
                f"  case {key} (k={c.k}, d={c.d}) total_sse={c.total_sse:.6g} mask_sse={c.mask_sse:.6g} "
                f"flops_ratio={float(c.flops_ratio):.4f}  # {CASE_DESCRIPTIONS[key]}",
                file=out,
            )
        all_cases.append((name, cases))
    return all_cases


def cmd_simulate(
    table: Path,
    settings: list[str],
    array: tuple[int, int] = (32, 32),
    ews: tuple[int, int, int] = (4, 2, 2),
    dma_bits: int = 64,
    l1_kb: int = 256,
    out_prefix: Path | None = None,
    out=sys.stdout,
) -> list[accel.SimReport]:
    layers = accel.read_layer_table(table)
    reports = []
    for s in settings:
        cfg = accel.setting_config(s, array[0], array[1], ews, dma_bits, l1_kb)
        reports.append(accel.simulate(layers, cfg, setting=s))
    if not layers:
        print("empty layer table", file=out)
        reports = []
    text = accel.format_report(reports)
    out.write(text)
    if out_prefix is not None:
        Path(out_prefix).with_suffix(".txt").write_text(text)
        Path(out_prefix).with_suffix(".csv").write_text(accel.reports_csv(reports))
    return reports


def cmd_stats(container: Path, refs: list[Path] = (), out=sys.stdout):
    layers = deserialize(Path(container).read_bytes())
    ref_tensors = [w for _, w in _load(refs)]
    if ref_tensors and len(ref_tensors) != len(layers):
        raise DataError(f"{len(ref_tensors)} reference tensors for {len(layers)} layers")
    reports = []
    for i, layer in enumerate(layers):
        rep = layer_report(layer)
        recon = decompress(layer)
        zeros = float(np.mean(recon.data == 0))
        line = (
            f"layer{i:<3} shape={'x'.join(map(str, layer.shape))} d={layer.d} k={layer.k} {layer.pattern} "
            f"qc={layer.codebook.qb} CR={rep.cr:.4f} bits/w={rep.bits_per_weight:.4f} zero_fraction={zeros:.4f}"
        )
        if ref_tensors:
            ref = ref_tensors[i]
            if ref.shape != layer.shape:
                raise DataError(f"layer{i}: reference shape {ref.shape} != {layer.shape}")
            mask4 = decompress_mask(layer)
            rep_sse = sse(ref.data, recon.data, mask4)
            line += f" total_sse={rep_sse.total_sse:.6g} mask_sse={rep_sse.mask_sse:.6g}"
        print(line, file=out)
        reports.append(rep)
    if reports:
        total = reports[0]
        for r in reports[1:]:
            total = total + r
        _print_total(total, out)
    return reports


def decompress_mask(layer) -> np.ndarray:
    return ungroup_weights(GroupedMatrix(layer.mask().astype(np.float64), layer.shape)).data.astype(bool)


def cmd_reconstruct(container: Path, out_dir: Path, names: list[str] | None = None, out=sys.stdout) -> list[Path]:
    layers = deserialize(Path(container).read_bytes())
    if names and len(names) != len(layers):
        raise ConfigInvalid(f"{len(names)} names for {len(layers)} layers")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, layer in enumerate(layers):
        name = names[i] if names else f"layer{i}"
        paths.append(write_raw_tensor(out_dir / name, name, decompress(layer)))
        print(f"wrote {paths[-1]}", file=out)
    return paths


# ---- argument parsing ---------------------------------------------------------


def _pair(text: str, sep: str, n: int, what: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.lower().split(sep))
    except ValueError:
        raise ConfigInvalid(f"bad {what} {text!r}") from None
    if len(vals) != n or min(vals) < 1:
        raise ConfigInvalid(f"bad {what} {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvq", description="Masked vector quantization toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def clustering_flags(sp, d=16, k=512):
        sp.add_argument("--d", type=int, default=d, help="subvector length")
        sp.add_argument("--k", type=int, default=k, help="codebook size")
        sp.add_argument("--nm", default="4:16", help="N:M pruning pattern")
        sp.add_argument("--qc", type=int, default=8, help="codebook bits")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)

    c = sub.add_parser("compress", help="compress raw tensors into an MVQ1 container")
    c.add_argument("inputs", nargs="+", type=Path, help="tensor manifests")
    clustering_flags(c)
    c.add_argument("--mode", default="masked", choices=MODES)
    c.add_argument("--scope", default="layerwise", choices=SCOPES)
    c.add_argument("--layers", type=Path, help="per-layer config file")
    c.add_argument("--init", type=Path, help="warm-start from an existing container")
    c.add_argument("--out", type=Path, required=True)

    a = sub.add_parser("ablate", help="four-case clustering comparison")
    a.add_argument("inputs", nargs="+", type=Path)
    a.add_argument("--nm", default="4:16")
    a.add_argument("--seed", type=int, default=DEFAULT_SEED)
    a.add_argument("--dense-kd", default="1024,8", help="k,d for cases A and B")
    a.add_argument("--sparse-kd", default="512,16", help="k,d for cases C and D")

    s = sub.add_parser("simulate", help="analytical accelerator model")
    s.add_argument("table", nargs="?", type=Path, help="layer table (default: bundled ResNet-18)")
    s.add_argument("--array", default="32x32", help="HxL")
    s.add_argument("--ews", default="4,2,2", help="A,B,D extensions for EWS settings")
    s.add_argument("--setting", action="append", choices=accel.SETTINGS, help="repeatable; default all")
    s.add_argument("--dma-bits", type=int, default=64)
    s.add_argument("--l1-kb", type=int, default=256)
    s.add_argument("--out", type=Path, help="write <out>.txt and <out>.csv")

    st = sub.add_parser("stats", help="report on a container")
    st.add_argument("container", type=Path)
    st.add_argument("--ref", nargs="*", type=Path, default=[], help="reference tensors, one per layer")

    r = sub.add_parser("reconstruct", help="decode a container into raw tensors")
    r.add_argument("container", type=Path)
    r.add_argument("--out", type=Path, required=True, help="output directory")
    r.add_argument("--names", help="comma-separated layer names")
    return p


def run(argv: list[str] | None = None, out=sys.stdout) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compress":
        default = LayerSettings(args.d, args.k, NmPattern.parse(args.nm), args.qc)
        cfg = RunConfig("compress", args.inputs, default, seed=args.seed, mode=args.mode, scope=args.scope, out=args.out)
        if args.layers:
            cfg.rules = parse_layer_config(args.layers.read_text(), default)
        cmd_compress(cfg.validate(), args.init, out)
    elif args.command == "ablate":
        pattern = NmPattern.parse(args.nm)
        cfg = RunConfig("ablate", args.inputs, LayerSettings(16, 512, pattern), seed=args.seed)
        cmd_ablate(cfg, _pair(args.dense_kd, ",", 2, "--dense-kd"), _pair(args.sparse_kd, ",", 2, "--sparse-kd"), out)
    elif args.command == "simulate":
        cmd_simulate(
            args.table or bundled_layer_table(),
            args.setting or list(accel.SETTINGS),
            _pair(args.array, "x", 2, "--array"),
            _pair(args.ews, ",", 3, "--ews"),
            args.dma_bits,
            args.l1_kb,
            args.out,
            out,
        )
    elif args.command == "stats":
        cmd_stats(args.container, args.ref, out)
    elif args.command == "reconstruct":
        names = args.names.split(",") if args.names else None
        cmd_reconstruct(args.container, args.out, names, out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"mvq: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"mvq: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"mvq: internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
