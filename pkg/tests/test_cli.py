import io

import numpy as np
import pytest

from mvq.cli import EXIT_CONFIG, EXIT_DATA, main, parse_layer_config, run
from mvq.codec import deserialize
from mvq.errors import ConfigInvalid
from mvq.pipeline import LayerSettings
from mvq.sparsity import NmPattern
from mvq.tensor import WeightTensor, read_raw_tensor, write_raw_tensor


@pytest.fixture
def toy(tmp_path):
    r = np.random.default_rng(0)
    a = write_raw_tensor(tmp_path / "conv", "conv", WeightTensor(r.normal(size=(32, 16, 3, 3)).astype(np.float32)))
    b = write_raw_tensor(tmp_path / "proj", "proj", WeightTensor(r.normal(size=(16, 32, 1, 1)).astype(np.float32)))
    return tmp_path, [str(a), str(b)]


def call(argv):
    out = io.StringIO()
    assert run(argv, out) == 0
    return out.getvalue()


def test_compress_deterministic(toy):
    tmp, inputs = toy
    call(["compress", *inputs, "--k", "32", "--out", str(tmp / "a.mvq")])
    call(["compress", *inputs, "--k", "32", "--out", str(tmp / "b.mvq")])
    assert (tmp / "a.mvq").read_bytes() == (tmp / "b.mvq").read_bytes()


def test_compress_reports_codec_cr(toy):
    tmp, inputs = toy
    text = call(["compress", *inputs, "--k", "32", "--out", str(tmp / "a.mvq")])
    assert "TOTAL" in text and "flops_ratio=0.2500" in text
    stats = call(["stats", str(tmp / "a.mvq")])
    assert text.splitlines()[-1].split("CR=")[1].split()[0] == stats.splitlines()[-1].split("CR=")[1].split()[0]


def test_masked_mode_lower_mask_sse(toy):
    tmp, inputs = toy
    sse = {}
    for mode in ("masked", "common"):
        text = call(["compress", inputs[0], "--k", "32", "--mode", mode, "--out", str(tmp / f"{mode}.mvq")])
        sse[mode] = float(text.split("mask_sse=")[1].split()[0])
    assert sse["masked"] < sse["common"]


def test_reconstruct_then_compress_fixed_point(toy):
    tmp, inputs = toy
    call(["compress", *inputs, "--k", "32", "--out", str(tmp / "a.mvq")])
    call(["reconstruct", str(tmp / "a.mvq"), "--out", str(tmp / "rec"), "--names", "conv,proj"])
    name, w = read_raw_tensor(tmp / "rec" / "conv.txt")
    assert name == "conv" and w.shape == (32, 16, 3, 3)
    rec = [str(tmp / "rec" / "conv.txt"), str(tmp / "rec" / "proj.txt")]
    call(["compress", *rec, "--k", "32", "--init", str(tmp / "a.mvq"), "--out", str(tmp / "b.mvq")])
    for x, y in zip(deserialize((tmp / "a.mvq").read_bytes()), deserialize((tmp / "b.mvq").read_bytes())):
        assert np.array_equal(x.assignments, y.assignments)
        assert np.array_equal(x.mask_ids, y.mask_ids)


def test_layer_config_exclude_and_override(toy):
    tmp, inputs = toy
    cfg = tmp / "layers.txt"
    cfg.write_text("* k=16\nproj exclude\n")
    text = call(["compress", *inputs, "--layers", str(cfg), "--out", str(tmp / "a.mvq")])
    assert "proj" in text and "excluded" in text
    (layer,) = deserialize((tmp / "a.mvq").read_bytes())
    assert layer.k == 16


def test_parse_layer_config():
    rules = parse_layer_config("# c\n* d=8 nm=2:4\nfc exclude\nconv k=64 qc=4\n", LayerSettings())
    assert rules["*"].settings.d == 8 and rules["*"].settings.pattern == NmPattern(2, 4)
    assert rules["conv"].settings.k == 64 and rules["conv"].settings.d == 8
    assert rules["fc"].exclude
    with pytest.raises(ConfigInvalid):
        parse_layer_config("conv size=3\n", LayerSettings())


def test_crosslayer_scope(toy):
    tmp, inputs = toy
    call(["compress", *inputs, "--k", "32", "--scope", "crosslayer", "--out", str(tmp / "x.mvq")])
    a, b = deserialize((tmp / "x.mvq").read_bytes())
    assert a.codebook == b.codebook


def test_ablate_prints_four_cases(toy):
    tmp, inputs = toy
    text = call(["ablate", inputs[1], "--dense-kd", "16,8", "--sparse-kd", "8,16"])
    for case in "ABCD":
        assert f"case {case}" in text
    assert text.count("flops_ratio=0.2500") == 2


def test_simulate_writes_reports(tmp_path):
    text = call(["simulate", "--setting", "ews", "--setting", "ews-cm", "--out", str(tmp_path / "sim")])
    assert "[ews]" in text and "[ews-cm]" in text
    csv = (tmp_path / "sim.csv").read_text().splitlines()
    assert csv[0] == "setting,level,count,energy,percent"
    assert len(csv) == 1 + 2 * 8


def test_simulate_empty_table(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    assert main(["simulate", str(p)]) == 0


def test_exit_codes(toy, capsys):
    tmp, inputs = toy
    assert main(["compress", inputs[0], "--k", "100000", "--out", str(tmp / "a.mvq")]) == EXIT_CONFIG
    assert main(["compress", inputs[0], "--nm", "3", "--out", str(tmp / "a.mvq")]) == EXIT_CONFIG
    assert main(["stats", str(tmp / "missing.mvq")]) == EXIT_DATA
    (tmp / "bad.mvq").write_bytes(b"nope")
    assert main(["stats", str(tmp / "bad.mvq")]) == EXIT_DATA
    assert main(["simulate", "--array", "32x"]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--setting", "tpu"])
    assert exc.value.code == EXIT_CONFIG
