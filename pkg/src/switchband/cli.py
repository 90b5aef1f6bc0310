"""``switchband`` command line: parse a JSON config, dispatch one experiment,
write ``summary.json`` plus CSV detail files into the output directory.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bernoulli, harness, kalman, oracle, policy
from .io import config_hash, meta, write_columns, write_csv, write_json
from .model import BernoulliModel, LinearGaussianModel, PenaltySpec, validate_model

KINDS = ("filter", "simulate", "scaling", "density", "bernoulli", "dp-oracle", "test-size")

DEFAULTS = {
    "model": {"F": 0.0, "A": 1.0, "Q": 0.0, "R": 1.0, "x0_mean": 0.0, "p0": 1.0, "T": 1.0},
    "penalty": {"lambda": 1e-4, "gamma": 1.0, "rho": "quadratic"},
    "simulation": {
        "dt": None,
        "n_paths": 100,
        "seed": 0,
        "threads": 1,
        "lambda_grid": [1e-3, 1e-4, 1e-5, 1e-6],
        "input_csv": None,
    },
    "bernoulli": {
        "p_true": 0.5,
        "T": 100_000,
        "burn_in_fraction": 0.01,
        "replications": 1,
        "live_sigma": False,
        "input_csv": None,
    },
    "density": {"source": "bernoulli", "bins": 50, "min_samples": 100_000},
    "oracle": {
        "step_variance": 1e-4,
        "dt": 1e-4,
        "n_grid": 201,
        "horizon": 10_000,
        "lambda_grid": [1e-2, 1e-4, 1e-6],
    },
    "test_size": {"lambda": None, "alpha": None},
    "output": {"directory": None, "formats": ["json", "csv"]},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    sections: dict

    def __getitem__(self, key):
        return self.sections[key]

    def effective(self) -> dict:
        """Config as echoed and hashed: everything except the output directory."""
        out = copy.deepcopy(self.sections)
        out["output"] = {k: v for k, v in out["output"].items() if k != "directory"}
        out["kind"] = self.kind
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.effective())

    @property
    def out_dir(self) -> Path:
        return Path(self.sections["output"]["directory"] or f"runs/{self.kind}")


# ---------------------------------------------------------------------------
# config parsing and validation
# ---------------------------------------------------------------------------


def _merge(base: dict, extra: dict, where: str) -> dict:
    for key, val in extra.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}{key!r}; valid keys: {sorted(base)}")
        if isinstance(base[key], dict) and key not in ("A", "F", "Q", "R"):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key} must be an object")
            _merge(base[key], val, f"{where}{key}.")
        else:
            base[key] = val
    return base


def _parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip().split("."), val


def parse_config(path=None, overrides=(), kind: str | None = None) -> ExperimentConfig:
    """Load, merge defaults, apply ``--set`` overrides, and validate."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            line = text.splitlines()[exc.lineno - 1] if exc.lineno <= len(text.splitlines()) else ""
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    raw = dict(raw)
    file_kind = raw.pop("kind", None)
    kind = kind or file_kind
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; valid kinds: {', '.join(KINDS)}")
    sections = _merge(copy.deepcopy(DEFAULTS), raw, "")
    for keys, val in overrides:
        node = sections
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"unknown key {'.'.join(keys)!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown key {'.'.join(keys)!r}")
        node[keys[-1]] = val
    cfg = ExperimentConfig(kind, sections)
    validate_config(cfg)
    return cfg


def _need(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _num(sec: dict, key: str, where: str) -> float:
    try:
        return float(sec[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key} must be a number, got {sec[key]!r}") from None


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every numeric field against the owning module's preconditions
    and fill derived defaults (dt = 1e-3 T)."""
    s = cfg.sections
    pen = s["penalty"]
    _need(_num(pen, "lambda", "penalty") >= 0, "penalty.lambda: lambda must be ≥ 0")
    try:
        model = LinearGaussianModel.from_config(s["model"])
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    report = validate_model(model, np.linspace(0.0, model.horizon, 11))
    _need(report.ok, "model: " + "; ".join(report.messages()))
    try:
        PenaltySpec.from_config(pen, model.dims[0])
    except ValueError as exc:
        raise ConfigError(f"penalty: {exc}") from exc

    sim = s["simulation"]
    if sim["dt"] is None:
        sim["dt"] = model.default_dt()
    _need(_num(sim, "dt", "simulation") > 0, "simulation.dt must be > 0")
    try:
        model.n_steps(float(sim["dt"]))
    except ValueError as exc:
        raise ConfigError(f"simulation.dt: {exc}") from exc
    _need(int(sim["n_paths"]) >= 1, "simulation.n_paths must be >= 1")
    _need(int(sim["threads"]) >= 1, "simulation.threads must be >= 1")
    _need(isinstance(sim["seed"], int) and sim["seed"] >= 0, "simulation.seed must be a nonnegative integer")
    if cfg.kind == "scaling":
        try:
            harness.check_lambda_grid(sim["lambda_grid"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"simulation.lambda_grid: {exc}") from exc

    b = s["bernoulli"]
    try:
        BernoulliModel(float(b["p_true"]), b["T"], float(b["burn_in_fraction"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bernoulli: {exc}") from exc
    _need(int(b["replications"]) >= 1, "bernoulli.replications must be >= 1")

    d = s["density"]
    _need(d["source"] in ("bernoulli", "continuous"), "density.source must be 'bernoulli' or 'continuous'")
    _need(int(d["bins"]) >= 2, "density.bins must be >= 2")

    o = s["oracle"]
    _need(int(o["n_grid"]) >= 51 and int(o["n_grid"]) % 2 == 1, "oracle.n_grid must be odd and >= 51")
    _need(int(o["horizon"]) >= 100, "oracle.horizon must be >= 100")
    _need(_num(o, "step_variance", "oracle") >= 0, "oracle.step_variance must be >= 0")
    _need(_num(o, "dt", "oracle") > 0, "oracle.dt must be > 0")
    _need(all(float(v) >= 0 for v in o["lambda_grid"]) and len(o["lambda_grid"]) >= 1,
          "oracle.lambda_grid must be nonnegative and non-empty")

    ts = s["test_size"]
    if cfg.kind == "test-size":
        _need((ts["lambda"] is None) != (ts["alpha"] is None), "test-size needs exactly one of lambda or alpha")
        if ts["alpha"] is not None:
            _need(0 < float(ts["alpha"]) <= 1, "test_size.alpha must lie in (0, 1]")
        if ts["lambda"] is not None:
            _need(float(ts["lambda"]) >= 0, "test_size.lambda: lambda must be ≥ 0")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _objects(cfg: ExperimentConfig):
    model = LinearGaussianModel.from_config(cfg["model"])
    penalty = PenaltySpec.from_config(cfg["penalty"], model.dims[0])
    return model, penalty


def _filter_columns(model, states, penalty):
    d, m = model.dims
    cols: dict = {"t": [s.t for s in states]}
    for i in range(d):
        cols[f"x_hat_{i + 1}"] = [s.x_hat[i] for s in states]
    for i in range(d):
        for j in range(d):
            cols[f"p_{i + 1}{j + 1}"] = [s.p[i, j] for s in states]
    for i in range(d):
        for j in range(d):
            cols[f"sigma_{i + 1}{j + 1}"] = [s.sigma[i, j] for s in states]
    if model.is_scalar:
        cols["band"] = [policy.band_halfwidth(model, s, penalty) for s in states]
        cols["alpha"] = [a for _, a in policy.implied_test_size_path(model, states, penalty)]
    return cols


def run_filter_experiment(cfg, out, md):
    model, penalty = _objects(cfg)
    sim = cfg["simulation"]
    dt = float(sim["dt"])
    if sim["input_csv"]:
        _, dy = kalman.read_increments_csv(sim["input_csv"])
    else:
        dy = harness.simulate_paths(model, dt, 1, int(sim["seed"])).dy[0]
    states = kalman.run_filter(model, dy, dt)
    write_columns(out / "trajectory.csv", _filter_columns(model, states, penalty), md)
    last = states[-1]
    return {"final": {"t": last.t, "x_hat": last.x_hat, "p": last.p, "k_gain": last.k_gain, "sigma": last.sigma},
            "steps": len(states) - 1}


def run_simulate_experiment(cfg, out, md):
    model, penalty = _objects(cfg)
    sim = cfg["simulation"]
    dt = float(sim["dt"])
    schedule = harness.filter_schedule(model, dt)
    pol = policy.InactionPolicy.from_penalty(penalty)
    if sim["input_csv"]:
        t, dy = kalman.read_increments_csv(sim["input_csv"])
        if len(dy) != len(schedule.times) - 1:
            raise ValueError(f"input has {len(dy)} increments; the model grid needs {len(schedule.times) - 1}")
        path = harness.PathSet(schedule.times, np.full((1, len(dy) + 1, model.dims[0]), np.nan), dy[None])
        ledger = harness.run_policy(model, penalty, pol, path, dt, schedule)
        write_csv(out / "ledgers.csv", ["path", "running_cost", "switch_cost", "switch_count", "total"],
                  [(0, ledger.running_cost, ledger.switch_cost, ledger.switch_count, ledger.total)], md)
        write_columns(out / "switches.csv", {"t": ledger.switch_times}, md)
        return {"n_paths": 1, "mean_total_cost": ledger.total, "switch_count": ledger.switch_count}
    n = int(sim["n_paths"])
    running, counts = harness.run_many(model, [penalty], dt, n, int(sim["seed"]), int(sim["threads"]), schedule)
    running, counts = running[0], counts[0]
    totals = running + penalty.lam * counts
    write_csv(out / "ledgers.csv", ["path", "running_cost", "switch_cost", "switch_count", "total"],
              [(i, running[i], penalty.lam * counts[i], counts[i], totals[i]) for i in range(n)], md)
    return {
        "n_paths": n,
        "mean_total_cost": float(totals.mean()),
        "mean_running_cost": float(running.mean()),
        "mean_switch_count": float(counts.mean()),
        "expected_switch_count": harness.expected_switch_count(model, penalty, dt, schedule),
    }


def run_scaling_experiment(cfg, out, md):
    model, penalty = _objects(cfg)
    sim = cfg["simulation"]
    rep = harness.scaling_study(model, penalty, sim["lambda_grid"], int(sim["n_paths"]), int(sim["seed"]),
                                float(sim["dt"]), int(sim["threads"]))
    write_columns(out / "scaling.csv", {
        "lambda": rep.lambda_grid,
        "mean_band": rep.mean_band,
        "mean_total_cost": rep.mean_total_cost,
        "cost_stderr": rep.cost_stderr,
        "mean_switch_count": rep.mean_switch_count,
        "expected_switch_count": rep.expected_switch_count,
    }, md)
    return {"scaling": rep.as_dict()}


def _bernoulli_runs(cfg):
    b = cfg["bernoulli"]
    model = BernoulliModel(float(b["p_true"]), b["T"], float(b["burn_in_fraction"]))
    pen = PenaltySpec.from_config(cfg["penalty"], 1)
    seed = int(cfg["simulation"]["seed"])
    if b["input_csv"]:
        obs = bernoulli.read_observations_csv(b["input_csv"])
        return model, pen, [bernoulli.run_tracker(model, pen, obs, live_sigma=bool(b["live_sigma"]))]
    return model, pen, [
        bernoulli.run_tracker(model, pen, seed=harness.path_seed(seed, r), live_sigma=bool(b["live_sigma"]))
        for r in range(int(b["replications"]))
    ]


def run_bernoulli_experiment(cfg, out, md):
    model, pen, runs = _bernoulli_runs(cfg)
    first = runs[0]
    write_columns(out / "trajectory.csv", {
        "t": first.t, "p_hat": first.p_hat, "theta": first.theta, "b_t": first.band, "xi": first.xi,
        "switched": first.switched, "cost_running": first.cost_running, "cost_switch": first.cost_switch,
    }, md)
    gaps = [r.inter_switch_times() for r in runs]
    obs_gap = np.concatenate([g[0] for g in gaps])
    pred_gap = np.concatenate([g[1] for g in gaps])
    t_end = model.horizon
    sig = first.sigma_star
    return {
        "replications": len(runs),
        "t_star": model.t_star,
        "sigma_star": [r.sigma_star for r in runs],
        "switch_count": [r.switch_count for r in runs],
        "expected_switch_count": [r.expected_switch_count() for r in runs],
        "mean_inter_switch_time": float(obs_gap.mean()) if obs_gap.size else None,
        "predicted_inter_switch_time": float(pred_gap.mean()) if pred_gap.size else None,
        "mean_step_cost": float(np.mean([r.mean_step_cost() for r in runs])),
        "predicted_step_cost": float(np.mean([r.predicted_step_cost() for r in runs])),
        "xi_variance": float(np.concatenate([r.xi[1:] for r in runs]).var()),
        "band_at_T": {
            "discrete": float(bernoulli.optimal_band(t_end, sig, pen.lam, pen.gamma_scalar)),
            "continuous": float(bernoulli.continuous_band(t_end, sig, pen.lam, pen.gamma_scalar)),
        },
    }


def run_density_experiment(cfg, out, md):
    dcfg = cfg["density"]
    if dcfg["source"] == "bernoulli":
        _, _, runs = _bernoulli_runs(cfg)
        samples = [r.xi[1:] for r in runs]
    else:
        model, penalty = _objects(cfg)
        sim = cfg["simulation"]
        dt = float(sim["dt"])
        schedule = harness.filter_schedule(model, dt)
        pol = policy.InactionPolicy.from_penalty(penalty)
        samples = []
        for i in range(int(sim["n_paths"])):
            path = harness.simulate_paths(model, dt, 1, int(sim["seed"]), first_index=i)
            samples.append(harness.run_policy(model, penalty, pol, path, dt, schedule).xi_samples)
    rep = harness.stationary_density(samples, int(dcfg["bins"]), int(dcfg["min_samples"]))
    write_columns(out / "histogram.csv", {
        "bin_lo": rep.edges[:-1], "bin_hi": rep.edges[1:], "density": rep.histogram, "reference": rep.reference,
    }, md)
    return {"l1": rep.l1, "variance": rep.variance, "n_samples": rep.n_samples, "source": dcfg["source"]}


def run_oracle_experiment(cfg, out, md):
    o = cfg["oracle"]
    gamma = float(cfg["penalty"]["gamma"])
    lams = [float(v) for v in o["lambda_grid"]]
    thresholds, values, reports, grids = {}, {}, [], {}
    for lam in lams:
        prob = oracle.build_problem(float(o["step_variance"]), lam, gamma, int(o["n_grid"]), int(o["horizon"]),
                                    float(o["dt"]))
        sol = oracle.solve_backward(prob)
        reports.append(oracle.compare_to_asymptotic(prob, sol).as_dict())
        thresholds[f"threshold_lambda_{lam:g}"] = sol.threshold
        values[f"lambda_{lam:g}"] = (prob.grid, sol.value_function[0])
    write_columns(out / "thresholds.csv", {"step": np.arange(int(o["horizon"])), **thresholds}, md)
    rows = []
    for lam_key, (grid, v0) in values.items():
        rows.extend((lam_key, e, v) for e, v in zip(grid, v0))
    write_csv(out / "value0.csv", ["lambda", "e", "V0"], rows, md)
    return {"comparisons": reports}


def run_test_size_experiment(cfg, out, md):
    ts = cfg["test_size"]
    gamma = float(cfg["penalty"]["gamma"])
    if ts["alpha"] is not None:
        lam = policy.cost_from_test_size(float(ts["alpha"]), gamma)
    else:
        lam = float(ts["lambda"])
    mapping = policy.test_size_from_cost(lam, gamma)
    return {"lambda": lam, "gamma": gamma, **mapping.as_dict()}


RUNNERS = {
    "filter": run_filter_experiment,
    "simulate": run_simulate_experiment,
    "scaling": run_scaling_experiment,
    "density": run_density_experiment,
    "bernoulli": run_bernoulli_experiment,
    "dp-oracle": run_oracle_experiment,
    "test-size": run_test_size_experiment,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Run one experiment; writes ``config.json`` and ``summary.json`` (and
    CSV detail) into ``cfg.out_dir``.  Returns the summary payload."""
    out = cfg.out_dir
    if write:
        out.mkdir(parents=True, exist_ok=True)
    md = meta(cfg.hash, cfg["simulation"]["seed"])
    payload = RUNNERS[cfg.kind](cfg, out, md)
    if write:
        write_json(out / "config.json", {"config": cfg.effective()}, md)
        write_json(out / "summary.json", {"kind": cfg.kind, **payload}, md)
    return payload


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchband", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True, metavar="{" + ",".join(KINDS) + "}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                        help="override a dotted config key, e.g. penalty.lambda=1e-5")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    for kind in KINDS:
        p = sub.add_parser(kind, parents=[common])
        if kind == "test-size":
            p.add_argument("--lambda", dest="lam", type=float)
            p.add_argument("--alpha", type=float)
            p.add_argument("--gamma", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = [_parse_override(o) for o in args.overrides] if args.overrides else []
    try:
        if args.seed is not None:
            overrides.append((["simulation", "seed"], args.seed))
        if args.threads is not None:
            overrides.append((["simulation", "threads"], args.threads))
        if args.out is not None:
            overrides.append((["output", "directory"], str(args.out)))
        if args.kind == "test-size":
            if args.lam is not None:
                overrides.append((["test_size", "lambda"], args.lam))
            if args.alpha is not None:
                overrides.append((["test_size", "alpha"], args.alpha))
            if args.gamma is not None:
                overrides.append((["penalty", "gamma"], args.gamma))
        cfg = parse_config(args.config, overrides, kind=args.kind)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        payload = run_experiment(cfg, write=cfg.kind != "test-size" or args.out is not None)
    except (ValueError, RuntimeError, ArithmeticError, kalman.FilterError) as exc:
        print(f"{cfg.kind} failed: {exc}", file=sys.stderr)
        return 3
    if cfg.kind == "test-size":
        print(json.dumps({k: payload[k] for k in ("c", "alpha", "confidence_level", "lambda", "gamma")},
                         sort_keys=True))
    else:
        print(f"wrote {cfg.out_dir}/summary.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
