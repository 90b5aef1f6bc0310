"""Brute-force backward induction for the exact switching policy on a
discretised tracking error.

The error e = x_hat - theta lives on a symmetric grid and moves by a centred
Gaussian step of variance ``step_variance`` (mass beyond the grid is folded
into the end cells).  Each step costs ``gamma * e**2 * dt``; switching costs
``lam`` and resets e to 0 before the step.  Risk neutral, zero terminal cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .policy import band_from_sigma

RADIUS_FACTOR = 5.0


@dataclass(frozen=True)
class DiscreteControlProblem:
    grid: np.ndarray  # (2N + 1,)
    kernel: np.ndarray  # (2N + 1, 2N + 1), rows sum to 1
    horizon: int
    step_variance: float
    dt: float
    lam: float
    gamma: float

    @property
    def sigma(self) -> float:
        """Innovation variance per unit time."""
        return self.step_variance / self.dt

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def center(self) -> int:
        return len(self.grid) // 2

    def asymptotic_band(self) -> float:
        return float(band_from_sigma(self.sigma, self.lam, self.gamma))

    def ergodic_band(self) -> float:
        """Band minimising the stationary two-term cost of a continuous
        reset-to-zero walk: (6 lam Sigma / gamma)^(1/4)."""
        return (6.0 * self.lam * self.sigma / self.gamma) ** 0.25

    @property
    def running(self) -> np.ndarray:
        return self.gamma * self.grid**2 * self.dt


def gaussian_kernel(grid: np.ndarray, step_sd: float) -> np.ndarray:
    """Cell probabilities of e + N(0, step_sd^2), end cells absorbing the tails."""
    n = len(grid)
    if step_sd == 0:
        return np.eye(n)
    cuts = np.concatenate([[-np.inf], 0.5 * (grid[:-1] + grid[1:]), [np.inf]])
    cdf = ndtr((cuts[None, :] - grid[:, None]) / step_sd)
    return np.diff(cdf, axis=1)


def build_problem(sigma: float, lam: float, gamma: float, n_grid: int = 201, horizon: int = 10_000,
                  dt: float = 1e-4, radius: float | None = None) -> DiscreteControlProblem:
    """``sigma`` is the per-step variance of the error increment (Sigma dt).

    The default grid radius is five asymptotic band widths (at least ten
    step standard deviations); an explicit ``radius`` must not be smaller
    than five band widths.
    """
    if n_grid < 51 or n_grid % 2 == 0:
        raise ValueError("n_grid must be odd and >= 51")
    if horizon < 100:
        raise ValueError("horizon must be >= 100")
    if sigma < 0 or lam < 0 or gamma <= 0 or dt <= 0:
        raise ValueError("need sigma >= 0, lambda >= 0, gamma > 0, dt > 0")
    band = float(band_from_sigma(sigma / dt, lam, gamma))
    if radius is None:
        radius = max(RADIUS_FACTOR * band, 10.0 * math.sqrt(sigma), 1e-12)
    elif radius < RADIUS_FACTOR * band:
        raise ValueError(f"grid radius {radius:g} below {RADIUS_FACTOR:g}x the asymptotic band {band:g}")
    half = radius * np.arange(n_grid // 2 + 1) / (n_grid // 2)
    grid = np.concatenate([-half[:0:-1], half])
    return DiscreteControlProblem(grid, gaussian_kernel(grid, math.sqrt(sigma)), int(horizon), float(sigma),
                                  float(dt), float(lam), float(gamma))


@dataclass(frozen=True)
class OracleSolution:
    value_function: np.ndarray  # (horizon + 1, n_grid)
    inaction_set: np.ndarray  # (horizon, n_grid) bool, True where continuing is optimal
    threshold: np.ndarray  # (horizon,) positive-side threshold, inf if never switching
    threshold_neg: np.ndarray  # (horizon,) negative-side threshold magnitude

    def mid_threshold(self) -> float:
        return float(self.threshold[len(self.threshold) // 2])


def _thresholds(switch: np.ndarray, grid: np.ndarray, center: int) -> tuple[float, float]:
    """Midpoints between the last continue cell and first switch cell on
    each side of zero."""
    out = []
    for side in (slice(center, None), slice(center, None, -1)):
        s = switch[side]
        g = np.abs(grid[side])
        hits = np.nonzero(s)[0]
        if len(hits) == 0:
            out.append(math.inf)
        else:
            j = hits[0]
            out.append(0.5 * (g[j - 1] + g[j]) if j > 0 else 0.0)
    return out[0], out[1]


def bellman_step(problem: DiscreteControlProblem, v_next: np.ndarray):
    """(value, continue-mask) at one step given the next-step values."""
    ev = problem.kernel @ v_next
    cont = problem.running + ev
    c = problem.center
    reset = problem.lam + problem.running[c] + ev[c]
    keep = cont <= reset
    return np.where(keep, cont, reset), keep


def solve_backward(problem: DiscreteControlProblem) -> OracleSolution:
    """V(t, e) = min(run(e) + E V(t+1, e'), lam + run(0) + E V(t+1, 0 + step))."""
    h, n = problem.horizon, len(problem.grid)
    values = np.zeros((h + 1, n))
    keep = np.zeros((h, n), dtype=bool)
    thr = np.empty(h)
    thr_neg = np.empty(h)
    with np.errstate(over="raise", invalid="raise"):
        for k in range(h - 1, -1, -1):
            values[k], keep[k] = bellman_step(problem, values[k + 1])
            thr[k], thr_neg[k] = _thresholds(~keep[k], problem.grid, problem.center)
    return OracleSolution(values, keep, thr, thr_neg)


def bellman_residual(problem: DiscreteControlProblem, solution: OracleSolution) -> float:
    """Largest deviation when each V(t) is recomputed from V(t+1)."""
    worst = 0.0
    v = solution.value_function
    for k in range(problem.horizon):
        redo, _ = bellman_step(problem, v[k + 1])
        worst = max(worst, float(np.abs(redo - v[k]).max()))
    return worst


def evaluate_band_policy(problem: DiscreteControlProblem, band) -> np.ndarray:
    """Expected cost-to-go (horizon + 1, n_grid) of "reset when |e| >= band"
    on the same kernel; ``band`` is a scalar or one value per step."""
    h = problem.horizon
    band = np.broadcast_to(np.asarray(band, dtype=float), (h,))
    values = np.zeros((h + 1, len(problem.grid)))
    c = problem.center
    absg = np.abs(problem.grid)
    for k in range(h - 1, -1, -1):
        ev = problem.kernel @ values[k + 1]
        cont = problem.running + ev
        reset = problem.lam + problem.running[c] + ev[c]
        values[k] = np.where((absg >= band[k]) & (absg > 0), reset, cont)
    return values


@dataclass(frozen=True)
class ComparisonReport:
    lam: float
    oracle_threshold: float
    asymptotic_band: float
    relative_threshold_error: float
    ergodic_band: float
    relative_error_vs_ergodic: float
    oracle_value: float
    policy_value: float
    relative_value_gap: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def compare_to_asymptotic(problem: DiscreteControlProblem, solution: OracleSolution, band=None) -> ComparisonReport:
    """Oracle mid-horizon threshold and value at e = 0 against a band policy.

    ``band`` defaults to the asymptotic band; pass per-step thresholds to
    compare against any other band policy.
    """
    asym = problem.asymptotic_band()
    band = asym if band is None else band
    band_arr = np.broadcast_to(np.asarray(band, dtype=float), (problem.horizon,))
    mid = problem.horizon // 2
    thr = solution.mid_threshold()
    ref = float(band_arr[mid])
    pol_v = float(evaluate_band_policy(problem, band_arr)[0, problem.center])
    orc_v = float(solution.value_function[0, problem.center])
    erg = problem.ergodic_band()
    return ComparisonReport(
        lam=problem.lam,
        oracle_threshold=thr,
        asymptotic_band=ref,
        relative_threshold_error=abs(thr - ref) / ref if ref > 0 else (0.0 if thr == ref else math.inf),
        ergodic_band=erg,
        relative_error_vs_ergodic=abs(thr - erg) / erg if erg > 0 else math.inf,
        oracle_value=orc_v,
        policy_value=pol_v,
        relative_value_gap=(pol_v - orc_v) / orc_v if orc_v > 0 else 0.0,
    )
