"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL ...`` line, printed in the
terminal summary (and to stdout as it runs).
"""

import json
import math
import time

import numpy as np
import pytest

from switchband import cli, harness, kernels, oracle
from switchband.bernoulli import run_tracker
from switchband.kalman import closed_form_P, covariance_path, initial_state, make_state
from switchband.model import BernoulliModel, LinearGaussianModel, PenaltySpec, constant_signal
from switchband.policy import (
    band_halfwidth,
    cost_from_test_size,
    m_residual,
    solve_m_matrix,
    solve_m_scalar,
    test_size_from_cost,
)

BERNOULLI_REPLICATIONS = 8


def record(log, number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    log.append(line)
    assert passed, line


def test_criterion_01_filter_correctness(acceptance_log):
    model = constant_signal(p0=1.0, horizon=9.0)
    covariance_path(constant_signal(horizon=1.0), 0.5)  # compile outside the timed call
    start = time.perf_counter()
    path = covariance_path(model, 1e-3)
    elapsed = time.perf_counter() - start
    errs = {t: abs(path[round(t / 1e-3), 0, 0] - closed_form_P(1.0, t)) for t in (1, 5, 9)}
    worst = max(errs.values())
    record(acceptance_log, 1, worst < 1e-6 and elapsed < 1.0,
           f"max |P - 1/(1/P0+t)| = {worst:.2e} at t in (1, 5, 9); {elapsed:.3f}s")


def test_criterion_02_band_factorisations(acceptance_log):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = 0.0
    for p, a, r, lam, gamma in zip(10 ** rng.uniform(-3, 1, 10_000), rng.choice([-1, 1], 10_000) *
                                   10 ** rng.uniform(-1, 1, 10_000), 10 ** rng.uniform(-1, 1, 10_000),
                                   10 ** rng.uniform(-8, 0, 10_000), 10 ** rng.uniform(-1, 1, 10_000)):
        model = LinearGaussianModel(F=0.0, A=a, Q=0.0, R=r, x0_mean=0.0, p0=p, horizon=1.0)
        state = initial_state(model)
        pen = PenaltySpec.quadratic(lam, gamma)
        via_sigma = float(state.sigma[0, 0]) ** 0.25 * (2 * lam / gamma) ** 0.25
        via_cov = band_halfwidth(model, state, pen)
        worst = max(worst, abs(via_sigma - via_cov))
    elapsed = time.perf_counter() - start
    record(acceptance_log, 2, worst < 1e-10 and elapsed < 1.0,
           f"max factorisation gap {worst:.2e} over 1e4 draws; {elapsed:.3f}s")


def test_criterion_03_m_equation(acceptance_log):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for gamma, sigma in zip(10 ** rng.uniform(-2, 2, 2000), 10 ** rng.uniform(-2, 2, 2000)):
        m = solve_m_scalar(gamma, sigma)
        worst = max(worst, float(np.linalg.norm(m_residual(m, gamma, sigma))))
        sol = solve_m_matrix([[gamma]], [[sigma]])
        assert sol.converged
        worst = max(worst, float(np.linalg.norm(m_residual(sol.m, gamma, sigma))))
    iso = solve_m_matrix(np.eye(2), np.eye(2))
    elapsed = time.perf_counter() - start
    record(acceptance_log, 3, worst < 1e-10 and not iso.converged and elapsed < 1.0,
           f"max residual {worst:.2e}; d=2 isotropic converged={iso.converged} ({iso.message}); {elapsed:.3f}s")


def test_criterion_04_test_size_round_trip(acceptance_log):
    start = time.perf_counter()
    gaps = []
    for alpha in (0.01, 0.05, 0.1, 0.317311):
        for gamma in (0.5, 1.0, 2.0):
            lam = cost_from_test_size(alpha, gamma)
            gaps.append(abs(test_size_from_cost(lam, gamma).test_size - alpha))
    elapsed = time.perf_counter() - start
    record(acceptance_log, 4, max(gaps) < 1e-10 and elapsed < 1.0,
           f"max |alpha' - alpha| = {max(gaps):.2e}; {elapsed:.4f}s")


def test_criterion_05_band_scaling(acceptance_log, constant_signal_scaling):
    slope = constant_signal_scaling.band_slope
    record(acceptance_log, 5, abs(slope - 0.25) < 1e-6, f"band slope {slope:.10f}")


def test_criterion_06_cost_scaling(acceptance_log):
    from conftest import SCALING_GRID, THREADS

    start = time.perf_counter()
    model = constant_signal(horizon=50.0)
    rep = harness.scaling_study(model, PenaltySpec.quadratic(1e-4, 1.0), SCALING_GRID, n_paths=1000, seed=2024,
                                dt=1e-3, threads=THREADS)
    elapsed = time.perf_counter() - start
    slope = rep.cost_slope
    record(acceptance_log, 6, abs(slope - 0.5) <= 0.05 and elapsed < 300,
           f"cost slope {slope:.4f} +/- {rep.cost_slope_stderr:.4f}; {elapsed:.1f}s on {THREADS} threads")


@pytest.fixture(scope="module")
def bernoulli_runs():
    model = BernoulliModel(0.5, 1_000_000, 0.01)
    assert model.t_star == 10_000
    pen = PenaltySpec.quadratic(1e-6, 1.0)
    start = time.perf_counter()
    runs = [run_tracker(model, pen, seed=harness.path_seed(0, r)) for r in range(BERNOULLI_REPLICATIONS)]
    return runs, time.perf_counter() - start


def test_criterion_07_triangular_density(acceptance_log, bernoulli_runs):
    runs, elapsed = bernoulli_runs
    rep = harness.stationary_density([r.xi[1:] for r in runs], bins=50)
    ok = rep.l1 < 0.05 and abs(rep.variance - 1 / 6) <= 0.01 and elapsed < 60
    record(acceptance_log, 7, ok, f"L1 {rep.l1:.4f}, variance {rep.variance:.4f} over {rep.n_samples} samples "
                                  f"({len(runs)} runs); {elapsed:.1f}s")


def test_criterion_08_hitting_time(acceptance_log, bernoulli_runs):
    runs, _ = bernoulli_runs
    gaps = [r.inter_switch_times() for r in runs]
    observed = np.concatenate([g[0] for g in gaps]).mean()
    predicted = np.concatenate([g[1] for g in gaps]).mean()
    ratio = observed / predicted
    record(acceptance_log, 8, abs(ratio - 1) < 0.10,
           f"mean inter-switch {observed:.1f} vs (t b/sigma)^2 {predicted:.1f} (ratio {ratio:.4f})")


def test_criterion_09_longrun_cost(acceptance_log, bernoulli_runs):
    runs, _ = bernoulli_runs
    observed = np.mean([r.mean_step_cost() for r in runs])
    predicted = np.mean([r.predicted_step_cost() for r in runs])
    ratio = observed / predicted
    record(acceptance_log, 9, abs(ratio - 1) < 0.10,
           f"mean step cost {observed:.4e} vs predicted {predicted:.4e} (ratio {ratio:.4f})")


def test_criterion_10_oracle_convergence(acceptance_log):
    errors, dominated, times = [], [], []
    for lam in (1e-2, 1e-4, 1e-6):
        start = time.perf_counter()
        prob = oracle.build_problem(1e-4, lam, 1.0, n_grid=201, horizon=10_000, dt=1e-4)
        sol = oracle.solve_backward(prob)
        rep = oracle.compare_to_asymptotic(prob, sol)
        times.append(time.perf_counter() - start)
        errors.append(rep.relative_threshold_error)
        dominated.append(rep.oracle_value <= rep.policy_value)
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    ok = decreasing and all(dominated) and max(times) < 120
    record(acceptance_log, 10, ok, "relative threshold errors " + ", ".join(f"{e:.4f}" for e in errors) +
           f"; V_oracle <= V_policy: {dominated}; slowest {max(times):.1f}s")


REPRO_RUNS = {
    "filter": ["--set", "model.T=2"],
    "simulate": ["--set", "simulation.n_paths=40", "--threads", "4"],
    "scaling": ["--set", "model.T=5", "--set", "simulation.n_paths=64", "--threads", "4"],
    "density": ["--set", "bernoulli.T=50000", "--set", "bernoulli.replications=2", "--set",
                "density.min_samples=10000"],
    "bernoulli": ["--set", "bernoulli.T=50000"],
    "dp-oracle": ["--set", "oracle.horizon=500", "--set", "oracle.lambda_grid=[1e-3,1e-5]"],
    "test-size": ["--lambda", "0.3"],
}


def test_criterion_11_reproducibility(acceptance_log, tmp_path):
    mismatched = []
    n_files = 0
    for kind, extra in REPRO_RUNS.items():
        dirs = [tmp_path / f"{kind}-{i}" for i in range(2)]
        for d in dirs:
            assert cli.main([kind, "--out", str(d), "--seed", "5", *extra]) == 0
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == sorted(p.name for p in dirs[1].iterdir()) and names
        hashes = {json.loads((d / "summary.json").read_text())["meta"]["config_hash"] for d in dirs}
        assert len(hashes) == 1
        for name in names:
            n_files += 1
            if (dirs[0] / name).read_bytes() != (dirs[1] / name).read_bytes():
                mismatched.append(f"{kind}/{name}")
    record(acceptance_log, 11, not mismatched,
           f"{n_files} files across {len(REPRO_RUNS)} experiment kinds; mismatches: {mismatched or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
