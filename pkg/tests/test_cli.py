import json

import numpy as np
import pytest

from switchband import cli
from switchband.cli import ConfigError, parse_config


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path, {"kind": "simulate", "model": {"T": 50}}))
    assert cfg["simulation"]["dt"] == pytest.approx(0.05)
    assert cfg["simulation"]["seed"] == 0


def test_negative_lambda_rejected(tmp_path, capsys):
    path = write_config(tmp_path, {"kind": "simulate", "penalty": {"lambda": -1}})
    with pytest.raises(ConfigError, match="lambda must be ≥ 0"):
        parse_config(path)
    assert run("simulate", "--config", path) == 2
    assert "lambda must be ≥ 0" in capsys.readouterr().err


def test_unknown_kind_lists_valid_kinds(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config(write_config(tmp_path, {"kind": "optimise"}))
    for kind in cli.KINDS:
        assert kind in str(info.value)


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(write_config(tmp_path, {"kind": "filter", "model": {"G": 1}}))
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(None, [(["simulation", "nope"], 1)], kind="filter")


def test_json_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "kind": "filter",\n  "model": {"T": }\n}\n')
    with pytest.raises(ConfigError, match=r"bad.json:3:"):
        parse_config(path)


def test_invalid_model_reported(tmp_path):
    with pytest.raises(ConfigError, match="R not invertible"):
        parse_config(write_config(tmp_path, {"kind": "filter", "model": {"R": 0.0}}))


def test_set_overrides_parse_json_values():
    keys, val = cli._parse_override("simulation.lambda_grid=[1e-3,1e-4]")
    assert keys == ["simulation", "lambda_grid"] and val == [1e-3, 1e-4]
    assert cli._parse_override("density.source=continuous")[1] == "continuous"
    with pytest.raises(ConfigError):
        cli._parse_override("novalue")


def test_test_size_prints_mapping(capsys):
    assert run("test-size", "--lambda", 1, "--gamma", 2) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["c"] == pytest.approx(1.0, abs=1e-15)
    assert out["alpha"] == pytest.approx(0.317311, abs=1e-6)


def test_test_size_from_alpha(capsys):
    assert run("test-size", "--alpha", 0.05) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lambda"] == pytest.approx(7.378403, abs=1e-6)


def test_test_size_needs_one_input():
    assert run("test-size", "--lambda", 1, "--alpha", 0.05) == 2
    assert run("test-size") == 2


def test_scaling_writes_report(tmp_path):
    out = tmp_path / "scaling"
    assert run("scaling", "--out", out, "--set", "model.T=10", "--set", "simulation.n_paths=40",
               "--threads", 2) == 0
    summary = json.loads((out / "summary.json").read_text())
    rep = summary["scaling"]
    assert rep["band_slope"] == pytest.approx(0.25, abs=1e-9)
    assert "cost_slope" in rep and len(rep["mean_total_cost"]) == 4
    assert summary["meta"]["seed"] == 0


def test_bernoulli_from_csv(tmp_path):
    rng = np.random.default_rng(0)
    stream = tmp_path / "stream.csv"
    stream.write_text("# coin\n" + "\n".join(str(v) for v in (rng.random(5000) < 0.4).astype(int)) + "\n")
    out = tmp_path / "bern"
    assert run("bernoulli", "--out", out, "--set", "bernoulli.T=5000", "--set",
               f"bernoulli.input_csv={json.dumps(str(stream))}") == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# artifact=")
    header = lines[4].split(",")
    assert header[:5] == ["t", "p_hat", "theta", "b_t", "xi"]
    assert len(lines) == 5 + 5000 - 50 + 1


def test_simulate_from_increment_csv(tmp_path):
    rows = ["t,dy"] + [f"{i * 0.01!r},{0.01 * float(np.sin(i))!r}" for i in range(100)]
    (tmp_path / "dy.csv").write_text("\n".join(rows) + "\n")
    out = tmp_path / "sim"
    assert run("simulate", "--out", out, "--set", "simulation.input_csv=" + str(tmp_path / "dy.csv"),
               "--set", "simulation.dt=0.01") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_paths"] == 1


def test_simulate_csv_length_mismatch_is_runtime_error(tmp_path, capsys):
    (tmp_path / "dy.csv").write_text("t,dy\n0,0.1\n")
    code = run("simulate", "--out", tmp_path / "sim", "--set", "simulation.input_csv=" + str(tmp_path / "dy.csv"))
    assert code == 3
    assert "increments" in capsys.readouterr().err


def test_every_output_has_metadata(tmp_path):
    out = tmp_path / "dp"
    assert run("dp-oracle", "--out", out, "--set", "oracle.horizon=200", "--set", "oracle.lambda_grid=[1e-3]") == 0
    for name in ("thresholds.csv", "value0.csv"):
        head = (out / name).read_text().splitlines()[:4]
        assert [h.split("=")[0] for h in head] == ["# artifact", "# version", "# config_hash", "# seed"]
    for name in ("summary.json", "config.json"):
        meta = json.loads((out / name).read_text())["meta"]
        assert set(meta) == {"artifact", "version", "config_hash", "seed"}


@pytest.mark.parametrize("kind,extra", [
    ("filter", ["--set", "model.T=2"]),
    ("simulate", ["--set", "simulation.n_paths=5"]),
    ("density", ["--set", "bernoulli.T=20000", "--set", "density.min_samples=1000"]),
    ("density", ["--set", "density.source=continuous", "--set", "simulation.n_paths=3",
                 "--set", "density.min_samples=1000"]),
])
def test_other_kinds_run(tmp_path, kind, extra):
    assert run(kind, "--out", tmp_path / kind, *extra) == 0
    assert (tmp_path / kind / "summary.json").exists()


def test_config_echo_reproduces_run(tmp_path):
    first = tmp_path / "a"
    assert run("simulate", "--out", first, "--set", "simulation.n_paths=4", "--seed", 3) == 0
    echoed = json.loads((first / "config.json").read_text())["config"]
    kind = echoed.pop("kind")
    second = tmp_path / "b"
    assert run(kind, "--config", write_config(tmp_path, echoed), "--out", second) == 0
    assert (first / "ledgers.csv").read_bytes() == (second / "ledgers.csv").read_bytes()
