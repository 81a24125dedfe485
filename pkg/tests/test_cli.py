"""Command-line entry points: happy paths, exit codes, file artifacts."""

import numpy as np
import pytest

from ssanet import load_tensor, load_voxels
from ssanet.cli import main

from test_blocks import FROZEN_TOTALS


# ------------------------------------------------------------------ equiv-check

def test_equiv_check_passes(capsys):
    assert main(["equiv-check", "--trials", "20", "--max-f", "8", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "max_rel_dev" in out


def test_equiv_check_impossible_tolerance_fails(capsys):
    assert main(["equiv-check", "--trials", "5", "--tolerance", "0"]) == 1
    assert "FAIL" in capsys.readouterr().err


# ------------------------------------------------------------------ param-count

def test_param_count_arch_csv(capsys):
    assert main(["param-count", "--arch", "ssa_resnext8"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "layer,kind,params,zero_param"
    total = lines[-1].split(",")
    assert total[0] == "total"
    assert int(total[2]) == FROZEN_TOTALS["ssa_resnext8"]
    ssa_rows = [l for l in lines if ",ssa," in l]
    assert ssa_rows and all(l.endswith(",yes") for l in ssa_rows)


def test_param_count_spec_file(tmp_path, capsys):
    from ssanet import network_spec, render_network_spec

    p = tmp_path / "net.txt"
    p.write_text(render_network_spec(network_spec("toy_ssa_net")))
    assert main(["param-count", "--spec", str(p)]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].split(",")[2] == str(FROZEN_TOTALS["toy_ssa_net"])


def test_param_count_usage_errors(capsys):
    assert main(["param-count"]) == 2
    assert main(["param-count", "--arch", "nope"]) == 2
    assert main(["param-count", "--spec", "/does/not/exist.txt"]) == 2


# --------------------------------------------------------------------- gen-data

def test_gen_data_motion(tmp_path, capsys):
    out = tmp_path / "motion"
    assert main(["gen-data", "motion", "--out", str(out),
                 "--n-per-class", "5", "--seed", "3"]) == 0
    train = load_tensor(out / "train.ssat")
    test = load_tensor(out / "test.ssat")
    assert train.shape == (16, 1, 8, 16, 16)
    assert test.shape == (4, 1, 8, 16, 16)
    labels = (out / "train_labels.csv").read_text().splitlines()
    assert labels[0] == "index,label"
    assert len(labels) == 17
    assert "n_per_class=5" in (out / "meta.txt").read_text()


def test_gen_data_shapes(tmp_path):
    out = tmp_path / "shapes"
    assert main(["gen-data", "shapes", "--out", str(out),
                 "--n-per-class", "2", "--seed", "4"]) == 0
    grids, labels, n_classes = load_voxels(out / "shapes.ssav")
    assert grids.shape == (8, 32, 32, 32)
    assert n_classes == 4
    assert np.bincount(labels, minlength=4).tolist() == [2, 2, 2, 2]


def test_gen_data_rejects_unknown_kind():
    assert main(["gen-data", "fractals", "--out", "/tmp/x"]) == 2


# ----------------------------------------------------------------- train / eval

TRAIN_ARGS = [
    "train", "--arch", "toy_ssa_net", "--epochs", "2", "--n-per-class", "6",
    "--batch-size", "8", "--seed", "7",
]


def test_train_eval_round_trip(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(TRAIN_ARGS + ["--out-dir", str(out)]) == 0
    stdout = capsys.readouterr().out
    final = [l for l in stdout.splitlines() if l.startswith("final test_acc=")]
    assert len(final) == 1
    history = (out / "history.csv").read_text()
    assert history.splitlines()[0] == "epoch,loss,train_acc,test_acc"
    assert len(history.splitlines()) == 3
    # eval on the same generated data reproduces the reported accuracy
    assert main(["eval", "--checkpoint", str(out / "checkpoint.ssac"),
                 "--n-per-class", "6", "--seed", "7"]) == 0
    eval_out = capsys.readouterr().out
    assert eval_out.strip() == final[0].replace("final ", "")


def test_train_is_deterministic_across_runs(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(TRAIN_ARGS + ["--out-dir", str(out)]) == 0
        outs.append((out / "history.csv").read_bytes())
    assert outs[0] == outs[1]


def test_train_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs=1\nn_per_class=6\nbatch_size=8\nseed=7\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--epochs", "2",
                 "--out-dir", str(out)]) == 0
    assert len((out / "history.csv").read_text().splitlines()) == 3


def test_train_rejects_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epocs=1\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "x")]) == 2


def test_train_on_generated_directory(tmp_path):
    data_dir = tmp_path / "data"
    assert main(["gen-data", "motion", "--out", str(data_dir),
                 "--n-per-class", "6", "--seed", "2"]) == 0
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_dir), "--epochs", "1",
                 "--batch-size", "8", "--out-dir", str(out)]) == 0
    assert (out / "checkpoint.ssac").exists()


# ------------------------------------------------------------------- grad-check

def test_grad_check_command(capsys):
    assert main(["grad-check", "--target", "ssa", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "ssa" in out


def test_grad_check_unknown_target():
    assert main(["grad-check", "--target", "everything"]) == 2


# ------------------------------------------------------------------------ bench

def test_bench_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--repeats", "2", "--frames", "4", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("op,")
    assert any(l.startswith("ssa_reference") for l in lines)
    assert any(l.startswith("ssa_cumulative") for l in lines)


# ------------------------------------------------------------------ dump-tensor

def test_dump_tensor(tmp_path, capsys):
    from ssanet import save_tensor

    p = tmp_path / "t.ssat"
    save_tensor(p, np.ones((1, 2, 3, 4, 5), dtype=np.float32))
    assert main(["dump-tensor", str(p)]) == 0
    out = capsys.readouterr().out
    assert "dtype=float32" in out and "shape=1x2x3x4x5" in out


def test_dump_tensor_corrupt_file(tmp_path):
    p = tmp_path / "bad.ssat"
    p.write_bytes(b"this is not a tensor")
    assert main(["dump-tensor", str(p)]) == 2
    assert main(["dump-tensor", str(tmp_path / "missing.ssat")]) == 2


# ----------------------------------------------------------------------- parser

def test_unknown_command_is_usage_error():
    assert main(["made-up-verb"]) == 2


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "equiv-check" in capsys.readouterr().out
