import json

import numpy as np
import pytest

from mtlab.cli import Artifacts, emit, main, sweep, validate, workers
from mtlab.errors import ValidationError
from mtlab.io import read_csv, read_field, read_matrix_bin, read_matrix_csv


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_validation_names_norm_params(tmp_path, capsys):
    cfg = _write(tmp_path, "experiment: forward\nnorm:\n  delta: 0.5\n")
    assert main(["forward", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "WeightedNormParams" in err and "norm.delta" in err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("text,field", [
    ("experiment: forward\ngird:\n  n: 8\n", "gird"),
    ("experiment: forward\ngrid:\n  n: 2\n", "grid.n"),
    ("experiment: forward\nomega: -1\n", "omega"),
    ("experiment: forward\nmaterial:\n  sigma0: -2\n", "material"),
    ("experiment: forward\ntolerances:\n  nonsense: 1\n", "tolerances.nonsense"),
    ("experiment: cgo_ladder\n", "experiment"),
])
def test_validation_errors_name_field(tmp_path, capsys, text, field):
    cfg = _write(tmp_path, text)
    assert main(["forward", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_validate_directly():
    cfg = validate({"experiment": "forward", "omega": 2.0})
    assert cfg.experiment == "forward" and cfg.omega == 2.0
    with pytest.raises(ValidationError, match="experiment"):
        validate({})


def test_forward_zero_data(tmp_path, capsys):
    out = tmp_path / "fw"
    assert main(["forward", "--out", str(out), "--grid-n", "8"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "pass"
    assert set(summary) >= {"config", "versions", "diagnostics", "checks"}
    H = read_field(out / "H.bin")
    assert H.grid.n == (8, 8, 8)
    assert not np.any(H.components)
    assert "pass" in capsys.readouterr().out


def test_empty_manifest(tmp_path):
    art = Artifacts(tmp_path / "empty")
    p = emit(art)
    assert json.loads(p.read_text()) == {"artifacts": []}


def test_impedance_round_trip(tmp_path):
    out = tmp_path / "imp"
    cfg = _write(tmp_path, "experiment: impedance\ngrid:\n  n: 8\nbasis:\n  size: 1\n"
                           "  faces: [z-, x+]\n")
    assert main(["impedance", "--config", str(cfg), "--out", str(out)]) == 0
    Zb, meta = read_matrix_bin(out / "impedance.bin")
    Zc = read_matrix_csv(out / "impedance.csv")
    assert Zb.shape == (4, 4) and len(meta["basis"]) == 4
    assert np.array_equal(Zb, Zc)
    index = json.loads((out / "index.json").read_text())
    names = {e["path"] for e in index["artifacts"]}
    assert {"impedance.csv", "impedance.bin", "impedance.bin.json", "summary.json"} <= names


def _tree(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_determinism(tmp_path):
    cfg = _write(tmp_path, "experiment: forward\nomega: 2.0\ngrid:\n  n: 10\n"
                           "boundary:\n  kind: plane_wave\n"
                           "material:\n  bumps:\n    - {center: [0.1, 0, 0], radius: 0.5, "
                           "amplitude: 0.3, target: sigma}\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["forward", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["forward", "--config", str(cfg), "--out", str(b)]) == 0
    ta, tb = _tree(a), _tree(b)
    assert ta.keys() == tb.keys() and len(ta) > 3
    assert all(ta[k] == tb[k] for k in ta)


def test_threads_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("MTLAB_THREADS", "3")
    assert workers() == 3
    assert sweep(lambda v: v * v, range(7)) == [v * v for v in range(7)]
    monkeypatch.setenv("MTLAB_THREADS", "zero")
    with pytest.raises(ValidationError, match="MTLAB_THREADS"):
        workers()
    assert main(["sounding", "--out", str(tmp_path / "s")]) == 2
    assert "MTLAB_THREADS" in capsys.readouterr().err


def test_threads_do_not_change_results(monkeypatch, tmp_path):
    monkeypatch.setenv("MTLAB_THREADS", "1")
    assert main(["sounding", "--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("MTLAB_THREADS", "2")
    assert main(["sounding", "--out", str(tmp_path / "two")]) == 0
    assert _tree(tmp_path / "one") == _tree(tmp_path / "two")


@pytest.mark.parametrize("command", ["kelvin", "symbol", "sounding", "mirror", "identity"])
def test_subcommands_pass(tmp_path, command):
    out = tmp_path / command
    assert main([command, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "pass"
    assert all(summary["checks"].values())


def test_cgo_ladder_column(tmp_path):
    out = tmp_path / "cgo"
    assert main(["cgo", "--out", str(out)]) == 0
    header, data = read_csv(out / "cgo_ladder.csv")
    assert header[:2] == ["tau", "norm_r"]
    assert list(data[:, 0]) == [8.0, 32.0, 128.0]
    assert np.all(np.diff(data[:, 1]) < 0)
