import json

import numpy as np
import pytest

from qstnet import cli, states
from qstnet.measurement import husimi_values, make_geometry


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def last_json(text):
    """Parse the trailing JSON document of ``text`` (after the config line)."""
    lines = text.strip().splitlines()
    return json.loads("\n".join(lines[1:]))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "d"
    assert cli.main(["gen", "--count", "14", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_gen_prints_config_then_summary(tmp_path, capsys):
    code, out, _ = run(["gen", "--count", 7, "--seed", 2, "--out", tmp_path / "x"], capsys)
    assert code == 0
    first, second = out.strip().splitlines()
    assert json.loads(first)["command"] == "gen"
    summary = json.loads(second)
    assert summary["per_class_counts"] == {n: 1 for n in states.CLASS_NAMES}


def test_gen_rerun_identical_checksum(tmp_path, capsys):
    sums = []
    for name in ("a", "b"):
        _, out, _ = run(["gen", "--count", 7, "--seed", 3, "--out", tmp_path / name], capsys)
        sums.append(json.loads(out.strip().splitlines()[1])["shards"])
    assert sums[0] == sums[1]


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "--count", "0"],
        ["gen", "--count", "5", "--classes", "squeezed"],
        ["gen", "--count", "5", "--noise", "mixed:0.9"],
        ["gen", "--count", "5", "--bogus"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv, capsys, tmp_path):
    code, _, err = run(argv + ["--out", tmp_path] if argv[0] == "gen" else argv, capsys)
    assert code == cli.EXIT_USAGE
    assert "error" in err


def test_show_and_pgm(data_dir, tmp_path, capsys):
    img = tmp_path / "a.pgm"
    assert run(["show", "--input", f"{data_dir}@3", "--out", img], capsys)[0] == 0
    data = img.read_bytes()
    assert data.startswith(b"P5\n32 32\n255\n") and len(data) == len(b"P5\n32 32\n255\n") + 1024
    run(["show", "--input", f"{data_dir}@3", "--out", tmp_path / "b.pgm"], capsys)
    assert (tmp_path / "b.pgm").read_bytes() == data
    assert run(["show", "--input", f"{data_dir}@99", "--out", img], capsys)[0] == cli.EXIT_DATA
    assert run(["show", "--input", f"{tmp_path}/none@0", "--out", img], capsys)[0] == cli.EXIT_DATA


def test_pgm_vacuum_peak_and_black():
    geom = make_geometry()
    body = cli.pgm_bytes(husimi_values(states.fock_state(0), geom), 32)[-1024:]
    pix = np.frombuffer(body, np.uint8).reshape(32, 32)
    r, c = np.unravel_index(np.argmax(pix), pix.shape)
    assert r in (15, 16) and c in (15, 16) and pix.max() == 255
    assert cli.pgm_bytes(np.zeros(1024), 32)[-1024:] == bytes(1024)


def test_reconstruct_report(data_dir, tmp_path, capsys):
    report = tmp_path / "r.json"
    code, _, _ = run(["reconstruct", "--input", f"{data_dir}@1", "--method", "gd-cholesky",
                      "--iters", 300, "--report", report], capsys)
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["class"] == "Coherent" and doc["fidelity"] >= 0.99
    assert {"loss", "iterations", "wall_time"} <= set(doc)


def test_reconstruct_zero_iters_and_linear(data_dir, capsys):
    code, out, _ = run(["reconstruct", "--input", f"{data_dir}@1", "--iters", 0], capsys)
    assert code == 0 and last_json(out)["iterations"] == 0
    code, out, _ = run(["reconstruct", "--input", f"{data_dir}@1", "--method", "linear"], capsys)
    assert code == 0 and last_json(out)["fidelity"] > 0.9


def test_neural_method_needs_checkpoint(data_dir, capsys):
    assert run(["reconstruct", "--input", f"{data_dir}@0", "--method", "rfb"], capsys)[0] == cli.EXIT_USAGE


def test_train_then_mismatched_checkpoint(tmp_path, capsys):
    data = tmp_path / "fc"
    run(["gen", "--count", 8, "--classes", "fock,coherent", "--out", data], capsys)
    ckpt = tmp_path / "m.ckpt"
    code, out, _ = run(["train", "--mode", "msnn", "--data", data, "--epochs", 2, "--val-fraction", 0.25,
                        "--eval-every", 1, "--checkpoint-out", ckpt], capsys)
    assert code == 0 and ckpt.exists()
    assert json.loads(out.splitlines()[0])["config"]["batch_size"] == 16
    hist = json.loads(ckpt.with_suffix(".history.json").read_text())["history"]
    assert [h["epoch"] for h in hist] == [1, 2] and "val_fidelity" in hist[0]
    code, _, _ = run(["reconstruct", "--input", f"{data}@0", "--method", "rfb", "--checkpoint", ckpt], capsys)
    assert code == cli.EXIT_CHECKPOINT
    code, out, _ = run(["reconstruct", "--input", f"{data}@0", "--method", "msnn", "--checkpoint", ckpt], capsys)
    assert code == 0


def test_train_same_seed_same_history(tmp_path, capsys):
    data = tmp_path / "fc"
    run(["gen", "--count", 8, "--classes", "fock,coherent", "--out", data], capsys)
    docs = []
    for k in range(2):
        out = tmp_path / f"r{k}.ckpt"
        run(["train", "--mode", "rfb", "--data", data, "--epochs", 2, "--val-fraction", 0.25,
             "--checkpoint-out", out], capsys)
        docs.append(out.with_suffix(".history.json").read_bytes())
    assert docs[0] == docs[1]


def test_bench_commands(data_dir, tmp_path, capsys):
    out = tmp_path / "n.json"
    code, _, _ = run(["bench-noise", "--data", data_dir, "--methods", "linear", "--noise-kind", "pepper",
                      "--levels", "0,0.2", "--limit", 3, "--out", out], capsys)
    assert code == 0
    table = json.loads(out.read_text())
    assert table["levels"] == [0.0, 0.2] and table["rows"][0]["method"] == "linear"
    code, _, _ = run(["bench-compare", "--data", data_dir, "--methods", "linear", "--limit", 2,
                      "--out", tmp_path / "c.json"], capsys)
    assert code == 0
    assert run(["bench-noise", "--data", data_dir, "--methods", "nope", "--noise-kind", "mixed",
                "--levels", "0"], capsys)[0] == cli.EXIT_USAGE
    assert run(["bench-noise", "--data", data_dir, "--noise-kind", "mixed", "--levels", "0.9"], capsys)[0] == 2


def test_env_default_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.DATA_ENV, str(tmp_path))
    assert cli.default_data_dir() == tmp_path
