"""Command-line surface: exit codes, stderr categories, file outputs."""

import json

import numpy as np
import pytest

from effmod import cli
from effmod import model as M
from effmod.pnm import read_pnm, write_pgm


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ----------------------------------------------------------- exit codes


def test_no_args_is_usage_error(capsys):
    code, _, err = run([], capsys)
    assert code == 2


def test_unknown_flag_is_usage_error(capsys):
    code, _, _ = run(["presets", "--frobnicate"], capsys)
    assert code == 2


def test_unknown_model_is_config_error(capsys):
    code, _, err = run(["analyze", "nosuchpreset"], capsys)
    assert code == 3
    assert err.startswith("error: config:")


def test_malformed_spec_file_is_config_error(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text('{"stem": {')
    code, _, err = run(["analyze", str(bad)], capsys)
    assert code == 3
    assert err.startswith("error: config:")
    assert "line" in err


def test_missing_image_is_config_error(tmp_path, capsys):
    code, _, err = run(
        ["ctxmap", "micro", str(tmp_path / "nope.ppm"), "--stage", "0"], capsys
    )
    assert code == 3
    assert err.startswith("error:")


def test_impossible_tolerance_is_numerical_error(capsys):
    code, _, err = run(
        ["gradcheck", "efficient_mod", "--cases", "1", "--tol", "1e-300"], capsys
    )
    assert code == 4
    assert err.startswith("error: numerical:")


# -------------------------------------------------------------- reports


def test_presets_lists_all(capsys):
    code, out, _ = run(["presets"], capsys)
    assert code == 0
    for name in ("xxs", "xs", "s", "s_conv", "micro"):
        assert name in out
    assert "attn_mlp_ratio" in out
    assert "iso-256-13" in out and "iso-196-11" in out


def test_analyze_micro_stdout_and_csv(tmp_path, capsys):
    csv_path = tmp_path / "rep.csv"
    code, out, _ = run(
        ["analyze", "micro", "--res", "64", "--seed", "5", "--csv", str(csv_path)], capsys
    )
    assert code == 0
    assert "seed 5" in out
    assert "TOTAL" in out
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0].startswith("name,kind,")
    assert lines[-1].startswith("TOTAL,")


def test_analyze_accepts_json_spec(tmp_path, capsys):
    spec_path = tmp_path / "m.json"
    spec_path.write_text(M.spec_to_json(M.build_preset("micro")))
    code, out, _ = run(["analyze", str(spec_path), "--res", "32"], capsys)
    assert code == 0
    assert "TOTAL" in out


def test_gradcheck_single_kind(capsys):
    code, out, _ = run(["gradcheck", "efficient_mod", "--cases", "1"], capsys)
    assert code == 0
    assert "PASS efficient_mod case 0" in out
    assert "seed" in out


def test_degree_probe_output(capsys):
    code, out, _ = run(["degree-probe", "--layers", "5"], capsys)
    assert code == 0
    for l in range(6):
        assert f"expected {2**l:>6}" in out
    assert "MISMATCH" not in out


def test_bench_fusion_small(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    code, out, _ = run(
        [
            "bench", "fusion", "--channels", "8", "--expansion", "2", "--res", "4",
            "--warmup", "1", "--iters", "3", "--threads", "1", "--csv", str(csv_path),
        ],
        capsys,
    )
    assert code == 0
    assert "fusion-repeat" in out and "fusion-reshape" in out
    assert "ratio" in out
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0].startswith("label,mean_ms")
    assert len(lines) == 3


# ------------------------------------------------------------- training


def test_train_writes_history_and_params(tmp_path, capsys):
    csv_path = tmp_path / "hist.csv"
    prm_path = tmp_path / "micro.efmod"
    code, out, _ = run(
        [
            "train", "--epochs", "1", "--n", "64", "--seed", "0",
            "--csv", str(csv_path), "--save", str(prm_path),
        ],
        capsys,
    )
    assert code == 0
    assert "seed 0" in out
    assert "final eval acc" in out
    assert "epoch,train_loss,train_acc,eval_acc" in csv_path.read_text()
    target = M.build_model(M.build_preset("micro"), seed=99, dtype=np.float64)
    M.load_params(target, str(prm_path))  # strict load proves a valid file


def test_ablate_fusion_writes_paired_csv(tmp_path, capsys):
    csv_path = tmp_path / "pair.csv"
    code, out, _ = run(
        ["ablate-fusion", "--epochs", "1", "--csv", str(csv_path)], capsys
    )
    assert code == 0
    assert "mul" in out and "sum" in out
    lines = csv_path.read_text().strip().split("\n")
    assert lines[0].startswith("epoch,mul_loss")
    assert len(lines) == 2


# --------------------------------------------------------------- ctxmap


def _write_ppm(path, h, w, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())
    return pixels


def test_ctxmap_end_to_end(tmp_path, capsys):
    img_path = tmp_path / "in.ppm"
    out_path = tmp_path / "ctx.pgm"
    _write_ppm(img_path, 64, 64)
    code, out, _ = run(
        [
            "ctxmap", "micro", str(img_path), "--stage", "1", "--block", "0",
            "--out", str(out_path),
        ],
        capsys,
    )
    assert code == 0
    assert "stage 1 block 0" in out
    grid = read_pnm(str(out_path))
    # micro stem /4 then one downsample /2: 64 -> 8 at stage 1
    assert grid.shape == (8, 8)
    assert grid.dtype == np.uint8


def test_ctxmap_rejects_non_mod_block(tmp_path, capsys):
    img_path = tmp_path / "in.ppm"
    _write_ppm(img_path, 32, 32)
    code, _, err = run(
        ["ctxmap", "micro", str(img_path), "--stage", "0", "--block", "7"], capsys
    )
    assert code == 3
    assert "error: config:" in err


# ------------------------------------------------------------------ pnm


def test_pnm_round_trip(tmp_path):
    grid = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    path = tmp_path / "g.pgm"
    write_pgm(str(path), grid)
    back = read_pnm(str(path))
    assert np.array_equal(back, grid)


def test_pnm_reads_comments_and_scaling(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n63\n" + bytes([0, 21, 42, 63]))
    back = read_pnm(str(path))
    assert back.shape == (2, 2)
    assert back[1, 1] == 255  # maxval 63 rescaled to full range
