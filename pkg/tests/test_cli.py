import csv
import json

import pytest

from openkpz.cli import main

SYM = {"N": 16, "m": 1, "alpha": [1.0], "gamma": [0.0], "T_f": 0.1}
ASYM = {"N": 32, "m": 2, "alpha": [1.0, 0.5], "gamma": [-0.5, -0.25], "A_minus": 0.5, "A_plus": -0.5, "T_f": 0.1}


@pytest.fixture
def config(tmp_path):
    def write(obj, name="cfg.json"):
        path = tmp_path / name
        path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return str(path)

    return write


def test_derive_symmetric(config, tmp_path):
    out = tmp_path / "out"
    assert main(["derive", "--config", config(SYM), "--out", str(out)]) == 0
    derived = json.loads((out / "derived.json").read_text())
    assert derived["derived"]["lambda_N"] == 0.0
    assert derived["derived"]["nu_N"] == 0.0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == derived["config_hash"]
    assert manifest["command"] == "derive" and manifest["status"] == 0
    assert {"numpy", "scipy", "numba", "openkpz"} <= set(manifest["versions"])
    assert manifest["wall_time"] >= 0


def test_input_errors_have_distinct_messages(config, tmp_path, capsys):
    messages = []
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    messages.append(capsys.readouterr().err)
    assert main(["derive", "--config", config("{not json")]) == 2
    messages.append(capsys.readouterr().err)
    assert main(["derive", "--config", config({"N": 8})]) == 2
    messages.append(capsys.readouterr().err)
    assert main(["derive", "--config", str(tmp_path / "missing.json")]) == 2
    messages.append(capsys.readouterr().err)
    assert "invalid choice" in messages[0]
    assert "malformed JSON" in messages[1]
    assert "missing field" in messages[2]
    assert "not found" in messages[3]


def test_invalid_model_is_input_error(config):
    assert main(["derive", "--config", config({**SYM, "m": 5, "alpha": [1] * 5, "gamma": [0] * 5})]) == 2


def test_check_failure_exit_code(config, tmp_path):
    assert main(["validate", "--config", config(ASYM), "--out", str(tmp_path / "v")]) == 1
    manifest = json.loads((tmp_path / "v" / "manifest.json").read_text())
    assert manifest["status"] == 1


def test_operators_and_kernels(config, tmp_path):
    cfg = config(ASYM)
    assert main(["operators", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert main(["kernels", "--config", cfg, "--out", str(tmp_path / "k")]) == 0
    head = (tmp_path / "o" / "pi.csv").read_text().splitlines()[0]
    assert head.startswith("# config_hash=")


def test_bounds_csv(tmp_path):
    out = tmp_path / "b"
    assert main(["bounds", "--id", "IOnD", "--N", "64,128,256", "--out", str(out)]) == 0
    lines = (out / "bounds.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    rows = list(csv.DictReader(lines[1:]))
    assert {r["N"] for r in rows} == {"64", "128", "256"}
    assert all(r["verdict"] == "pass" for r in rows)


def test_unknown_bound_id(tmp_path):
    assert main(["bounds", "--id", "Nope", "--N", "64", "--out", str(tmp_path)]) == 2


def test_drift_check(config, tmp_path):
    cfg = config({"N": 8, "m": 2, "alpha": [1.0, 0.5], "gamma": [-1.0, -0.4], "left_flux": 1})
    assert main(["drift-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "drift_check.json").read_text())["max_relative_error"] <= 1e-10


def test_deterministic_artifacts(config, tmp_path):
    cfg = config({**SYM, "gamma": [-1.0], "replicas": 3, "checkpoints": [0.05, 0.1]})
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "123"]) == 0
    assert (tmp_path / "a" / "heights.csv").read_bytes() == (tmp_path / "b" / "heights.csv").read_bytes()
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "124"]) == 0
    assert (tmp_path / "a" / "heights.csv").read_bytes() != (tmp_path / "c" / "heights.csv").read_bytes()
    leftovers = [p for p in tmp_path.rglob("*.tmp")]
    assert leftovers == []


def test_manifest_round_trip(config, tmp_path):
    out = tmp_path / "m"
    assert main(["derive", "--config", config(ASYM), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    again = tmp_path / "again"
    assert main(["derive", "--config", config(manifest["config"], "again.json"), "--out", str(again)]) == 0
    assert json.loads((again / "manifest.json").read_text())["config_hash"] == manifest["config_hash"]
    assert (out / "derived.json").read_bytes() == (again / "derived.json").read_bytes()


def test_she_and_compare_small(config, tmp_path, monkeypatch):
    monkeypatch.setenv("OPENKPZ_THREADS", "1")
    small = {"N": 16, "m": 1, "alpha": [1.0], "gamma": [-1.0], "T_f": 0.1, "replicas": 8, "she_replicas": 8,
             "M": 32}
    cfg = config(small)
    assert main(["she", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    status = main(["compare", "--config", cfg, "--N", "16,32", "--out", str(tmp_path / "c")])
    assert status in (0, 1)
    verdict = json.loads((tmp_path / "c" / "compare.json").read_text())
    assert verdict["N"] == [16, 32] and "negative_control" in verdict
    assert (tmp_path / "c" / "moments_N16.csv").exists()
