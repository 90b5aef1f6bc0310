"""Monte Carlo harness: path simulation, the filter + band policy loop, cost
accounting, lambda scaling studies and stationary-density checks.

Every replication owns its RNG stream, seeded by ``(seed, path_index)``, so
results do not depend on batching or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .kalman import covariance_path, gain
from .model import LinearGaussianModel, PenaltySpec
from .policy import InactionPolicy

BLOCK = 32


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSet:
    times: np.ndarray  # (n + 1,)
    x: np.ndarray  # (n_paths, n + 1, d) hidden state
    dy: np.ndarray  # (n_paths, n, m) observation increments
    first_index: int = 0

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def path(self, i: int) -> "PathSet":
        return PathSet(self.times, self.x[i : i + 1], self.dy[i : i + 1], self.first_index + i)


def _sqrt_psd(mat: np.ndarray, what: str) -> np.ndarray:
    mat = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(mat)
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ValueError(f"{what} is not PSD (eigenvalue {w.min():.3g}); cannot factor")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _step_factors(mats: np.ndarray, dt: float, what: str) -> np.ndarray:
    cache: dict[bytes, np.ndarray] = {}
    out = np.empty_like(mats)
    for i, q in enumerate(mats):
        key = q.tobytes()
        if key not in cache:
            cache[key] = _sqrt_psd(q * dt, what)
        out[i] = cache[key]
    return out


def path_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def _draw_block(model, grid, seed, indices):
    d, m = model.dims
    n = grid.n_steps
    sq = _step_factors(grid.Q, grid.dt, "Q dt")
    sr = _step_factors(grid.R, grid.dt, "R dt")
    l0 = _sqrt_psd(model.p0, "p0")
    x0 = np.empty((len(indices), d))
    dw = np.empty((len(indices), n, d))
    db = np.empty((len(indices), n, m))
    for row, idx in enumerate(indices):
        rng = np.random.default_rng(path_seed(seed, idx))
        x0[row] = model.x0_mean + l0 @ rng.standard_normal(d)
        dw[row] = np.einsum("nij,nj->ni", sq, rng.standard_normal((n, d)))
        db[row] = np.einsum("nij,nj->ni", sr, rng.standard_normal((n, m)))
    return x0, dw, db


def simulate_paths(model: LinearGaussianModel, dt: float, n_paths: int, seed: int, first_index: int = 0) -> PathSet:
    """Euler-Maruyama paths of (X, dY) with X_0 ~ N(x0_mean, p0)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    grid = model.tabulate(dt)
    indices = range(first_index, first_index + n_paths)
    x0, dw, db = _draw_block(model, grid, seed, indices)
    x, dy = kernels.simulate_state(x0, grid.F, grid.A, dw, db, dt)
    return PathSet(grid.times, x, dy, first_index)


def coarsen(paths: PathSet, factor: int) -> PathSet:
    """Same paths observed on a grid ``factor`` times coarser."""
    n = paths.dy.shape[1]
    if n % factor:
        raise ValueError("factor must divide the number of steps")
    dy = paths.dy.reshape(paths.n_paths, n // factor, factor, -1).sum(axis=2)
    return PathSet(paths.times[::factor], paths.x[:, ::factor], dy, paths.first_index)


# ---------------------------------------------------------------------------
# filter schedule (deterministic part of the filter)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterSchedule:
    times: np.ndarray  # (n + 1,)
    dt: float
    F: np.ndarray  # (n, d, d)
    A: np.ndarray  # (n, m, d)
    p: np.ndarray  # (n + 1, d, d)
    k: np.ndarray  # (n + 1, d, m)
    sigma: np.ndarray  # (n + 1, d, d)


def filter_schedule(model: LinearGaussianModel, dt: float) -> FilterSchedule:
    grid = model.tabulate(dt)
    p = covariance_path(model, dt, grid.n_steps)
    ks, sig = [], []
    for t, pt in zip(grid.times, p):
        a, r = model.A(t), model.R(t)
        k = gain(pt, a, r)
        ks.append(k)
        s = k @ r @ k.T
        sig.append(0.5 * (s + s.T))
    return FilterSchedule(grid.times, dt, grid.F, grid.A, p, np.stack(ks), np.stack(sig))


def band_schedule(policy: InactionPolicy, schedule: FilterSchedule) -> np.ndarray:
    return np.asarray(policy.band(schedule.sigma[:, 0, 0]), dtype=float)


def expected_switch_count(model: LinearGaussianModel, penalty: PenaltySpec, dt: float,
                          schedule: FilterSchedule | None = None) -> float:
    """Diffusion hitting-time estimate of the switch count: the integral of
    Sigma_t / width_t^2 over the run (E[tau] ~ width^2 / Sigma)."""
    schedule = schedule or filter_schedule(model, dt)
    pol = InactionPolicy.from_penalty(penalty)
    w = band_schedule(pol, schedule)[:-1]
    s = schedule.sigma[:-1, 0, 0]
    return float(np.sum(dt * s / w**2))


# ---------------------------------------------------------------------------
# ledgers and the policy loop
# ---------------------------------------------------------------------------


@dataclass
class CostLedger:
    running_cost: float
    switch_cost: float
    switch_count: int
    switch_times: list = field(default_factory=list)
    xi_samples: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def total(self) -> float:
        return self.running_cost + self.switch_cost


def _track_region(signal: np.ndarray, weights: np.ndarray | None):
    """Multivariate reset rule: switch when e^T W_t e >= 1 (W = M / sqrt(lam));
    ``weights=None`` switches on any nonzero error (lam = 0)."""
    n1 = signal.shape[0]
    switched = np.zeros(n1, dtype=bool)
    err = np.zeros_like(signal)
    theta = signal[0].copy()
    for i in range(1, n1):
        e = signal[i] - theta
        if np.any(e) and (weights is None or e @ weights[i] @ e >= 1.0):
            theta = signal[i].copy()
            switched[i] = True
            e = np.zeros_like(e)
        err[i] = e
    return switched, err


def _apply_policy(policy: InactionPolicy, schedule: FilterSchedule, xhat: np.ndarray):
    """xhat (n_paths, n + 1, d) -> (switched, err, xi) for every path."""
    if policy.dim == 1:
        band = band_schedule(policy, schedule)
        switched, err = kernels.track_band(xhat[:, :, 0], band)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = np.where(band > 0, err / band, 0.0)
        return switched, err, xi
    weights = None
    if policy.lam > 0:
        weights = np.stack([policy.region(s) for s in schedule.sigma]) / math.sqrt(policy.lam)
    out_s, out_e, out_x = [], [], []
    for path in xhat:
        s, e = _track_region(path, weights)
        out_s.append(s)
        out_e.append(e)
        out_x.append(np.sqrt(np.einsum("ni,nij,nj->n", e, weights, e)) if policy.lam else np.zeros(len(e)))
    return np.array(out_s), np.array(out_e), np.array(out_x)


def _running_costs(penalty: PenaltySpec, err: np.ndarray, dt: float) -> np.ndarray:
    """Left-point integral of rho(err) per path; err is (n_paths, n + 1) for
    scalar models and (n_paths, n + 1, d) otherwise."""
    return penalty.running_cost(err[:, :-1]).sum(axis=1) * dt


def run_policy(model: LinearGaussianModel, penalty: PenaltySpec, policy: InactionPolicy, path: PathSet,
               dt: float | None = None, schedule: FilterSchedule | None = None) -> CostLedger:
    """Filter one path, apply the band policy, and account both costs.

    Running cost accrues as rho(x_hat - theta) dt with the error held after
    the decision at the left end of each step.
    """
    dt = path.dt if dt is None else dt
    schedule = schedule or filter_schedule(model, dt)
    if len(schedule.times) != len(path.times):
        raise ValueError("path grid does not match dt")
    xhat0 = np.broadcast_to(model.x0_mean, (1, model.dims[0]))
    xhat = kernels.filter_mean(xhat0, schedule.F, schedule.A, schedule.k[:-1], path.dy[:1], dt)
    switched, err, xi = _apply_policy(policy, schedule, xhat)
    running = float(_running_costs(penalty, err, dt)[0])
    count = int(switched[0].sum())
    return CostLedger(
        running_cost=running,
        switch_cost=policy.lam * count,
        switch_count=count,
        switch_times=schedule.times[switched[0]].tolist(),
        xi_samples=xi[0, 1:],
    )


def run_paths(model: LinearGaussianModel, penalties, paths: PathSet, dt: float | None = None,
              schedule: FilterSchedule | None = None):
    """Running cost and switch count per (penalty, path) for a given batch
    of observation paths; the filter runs once and is shared."""
    dt = paths.dt if dt is None else dt
    schedule = schedule or filter_schedule(model, dt)
    if len(schedule.times) != len(paths.times):
        raise ValueError("path grid does not match dt")
    xhat0 = np.broadcast_to(model.x0_mean, (paths.n_paths, model.dims[0]))
    xhat = kernels.filter_mean(xhat0, schedule.F, schedule.A, schedule.k[:-1], paths.dy, dt)
    running = np.empty((len(penalties), paths.n_paths))
    counts = np.empty((len(penalties), paths.n_paths), dtype=np.int64)
    for j, pen in enumerate(penalties):
        pol = InactionPolicy.from_penalty(pen)
        switched, err, _ = _apply_policy(pol, schedule, xhat)
        running[j] = _running_costs(pen, err, dt)
        counts[j] = switched.sum(axis=1)
    return running, counts


def _run_block(model, schedule, penalties, seed, indices):
    """Totals for a block of paths under several penalties (shared paths)."""
    x0, dw, db = _draw_block(model, model.tabulate(schedule.dt), seed, indices)
    x, dy = kernels.simulate_state(x0, schedule.F, schedule.A, dw, db, schedule.dt)
    return run_paths(model, penalties, PathSet(schedule.times, x, dy, indices[0]), schedule.dt, schedule)


def run_many(model: LinearGaussianModel, penalties, dt: float, n_paths: int, seed: int,
             threads: int = 1, schedule: FilterSchedule | None = None):
    """Running cost and switch count per (penalty, path); paths are shared
    across penalties (common random numbers)."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    schedule = schedule or filter_schedule(model, dt)
    blocks = [range(s, min(s + BLOCK, n_paths)) for s in range(0, n_paths, BLOCK)]

    def job(idx):
        return _run_block(model, schedule, penalties, seed, idx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(b) for b in blocks]
    running = np.concatenate([p[0] for p in parts], axis=1)
    counts = np.concatenate([p[1] for p in parts], axis=1)
    return running, counts


# ---------------------------------------------------------------------------
# scaling in lambda
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingReport:
    lambda_grid: list
    mean_band: list
    mean_total_cost: list
    cost_stderr: list
    mean_switch_count: list
    expected_switch_count: list
    band_slope: float
    band_slope_stderr: float
    cost_slope: float
    cost_slope_stderr: float
    n_paths: int
    dt: float
    seed: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def loglog_fit(x, y) -> tuple[float, float]:
    """Least-squares slope of log y on log x and its standard error."""
    res = stats.linregress(np.log(x), np.log(y))
    return float(res.slope), float(res.stderr)


def check_lambda_grid(grid) -> list[float]:
    grid = [float(v) for v in grid]
    if len(grid) < 4:
        raise ValueError("lambda grid needs at least 4 points")
    if any(v <= 0 for v in grid):
        raise ValueError("lambda grid values must be positive")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly decreasing")
    if math.log10(grid[0] / grid[-1]) < 2.0 - 1e-12:
        raise ValueError("lambda grid must span at least two decades")
    return grid


def scaling_study(model: LinearGaussianModel, penalty_base: PenaltySpec, lambda_grid, n_paths: int, seed: int,
                  dt: float | None = None, threads: int = 1) -> ScalingReport:
    """Mean band and mean total cost across lambda, with log-log slopes."""
    grid = check_lambda_grid(lambda_grid)
    if not model.is_scalar:
        raise ValueError("scaling study needs a scalar model")
    dt = dt or model.default_dt()
    schedule = filter_schedule(model, dt)
    penalties = [penalty_base.with_lambda(lam) for lam in grid]
    running, counts = run_many(model, penalties, dt, n_paths, seed, threads, schedule)
    if np.any(counts.sum(axis=1) == 0):
        bad = [grid[j] for j in np.nonzero(counts.sum(axis=1) == 0)[0]]
        raise RuntimeError(f"no switches at lambda={bad}; grid too coarse for the horizon")
    totals = running + np.array(grid)[:, None] * counts
    bands = [float(band_schedule(InactionPolicy.from_penalty(p), schedule).mean()) for p in penalties]
    mean_cost = totals.mean(axis=1)
    bs, bse = loglog_fit(grid, bands)
    cs, cse = loglog_fit(grid, mean_cost)
    return ScalingReport(
        lambda_grid=grid,
        mean_band=bands,
        mean_total_cost=mean_cost.tolist(),
        cost_stderr=(totals.std(axis=1, ddof=1) / math.sqrt(n_paths)).tolist() if n_paths > 1 else [0.0] * len(grid),
        mean_switch_count=counts.mean(axis=1).tolist(),
        expected_switch_count=[expected_switch_count(model, p, dt, schedule) for p in penalties],
        band_slope=bs,
        band_slope_stderr=bse,
        cost_slope=cs,
        cost_slope_stderr=cse,
        n_paths=n_paths,
        dt=dt,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# stationary density of the rescaled error
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityReport:
    edges: np.ndarray
    histogram: np.ndarray
    reference: np.ndarray
    l1: float
    variance: float
    n_samples: int


def triangular_bin_means(edges: np.ndarray) -> np.ndarray:
    """Exact average of 1 - |x| over each bin (bins inside [-1, 1])."""
    def cdf(x):
        x = np.clip(x, -1.0, 1.0)
        return np.where(x < 0, 0.5 * (1 + x) ** 2, 1.0 - 0.5 * (1 - x) ** 2)

    return np.diff(cdf(edges)) / np.diff(edges)


def stationary_density(samples, bins: int = 50, min_samples: int = 100_000) -> DensityReport:
    """Histogram of band-normalised errors on (-1, 1) against 1 - |xi|.

    ``samples`` may be an array or a collection of ledgers (their
    ``xi_samples`` are pooled).
    """
    if isinstance(samples, np.ndarray):
        xi = samples.ravel()
    else:
        xi = np.concatenate([np.asarray(getattr(s, "xi_samples", s)).ravel() for s in samples])
    if xi.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {xi.size}")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(xi, bins=edges)
    hist = counts / (xi.size * np.diff(edges))
    ref = triangular_bin_means(edges)
    l1 = float(np.sum(np.abs(hist - ref) * np.diff(edges)))
    return DensityReport(edges, hist, ref, l1, float(xi.var()), int(xi.size))
