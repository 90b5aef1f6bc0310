"""Discrete-time tracking of a Bernoulli parameter with a fixed switching cost.

The committed estimate ``theta`` follows the MLE ``p_hat`` and is reset to it
whenever ``|p_hat - theta| >= b_t`` with

    b_t = (6 lam / Gamma) ** 0.25 * sqrt(sigma_star / t),

``sigma_star`` being the estimated Bernoulli standard deviation frozen at the
burn-in step ``t_star``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import BernoulliModel, PenaltySpec
from .policy import two_sided_critical


@dataclass(frozen=True)
class BernoulliTrackerState:
    t: int = 0
    successes: int = 0
    theta: float | None = None
    sigma_star: float | None = None

    @property
    def p_hat(self) -> float:
        return self.successes / self.t if self.t else float("nan")

    @property
    def sigma_hat(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1.0 - p))


def mle_update(state: BernoulliTrackerState, y: int) -> BernoulliTrackerState:
    if y not in (0, 1):
        raise ValueError(f"observation must be 0 or 1, got {y!r}")
    return BernoulliTrackerState(state.t + 1, state.successes + int(y), state.theta, state.sigma_star)


def band_chi(sigma_star: float, lam: float, gamma: float) -> float:
    """chi with b_t = chi * sigma_star / sqrt(t)."""
    if sigma_star <= 0:
        raise ValueError("sigma_star must be positive")
    return (6.0 * lam / gamma) ** 0.25 / math.sqrt(sigma_star)


def optimal_band(t, sigma_star: float, lam: float, gamma: float):
    if sigma_star <= 0:
        raise ValueError("sigma_star must be positive")
    if lam < 0 or gamma <= 0:
        raise ValueError("need lambda >= 0 and gamma > 0")
    return (6.0 * lam / gamma) ** 0.25 * np.sqrt(sigma_star / np.asarray(t, dtype=float))


def continuous_band(t, sigma_star: float, lam: float, gamma: float):
    """Band from the continuous-time constant (2 lam / gamma)^(1/4) on the
    same sqrt(sigma_star / t) scale; reported for comparison only."""
    if sigma_star <= 0:
        raise ValueError("sigma_star must be positive")
    return (2.0 * lam / gamma) ** 0.25 * np.sqrt(sigma_star / np.asarray(t, dtype=float))


def ci_band(p0: float, t: int, alpha: float) -> tuple[float, float]:
    """Two-sided acceptance band p0 +- z_{alpha/2} sqrt(p0 (1 - p0) / t)."""
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    if t < 1:
        raise ValueError("t must be >= 1")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    half = two_sided_critical(alpha) * math.sqrt(p0 * (1.0 - p0) / t)
    return p0 - half, p0 + half


def expected_hitting_time(t, b_t, sigma_star):
    """Mean steps for the tracking error to leave (-b_t, b_t): (t b_t / sigma)^2."""
    return (np.asarray(t, dtype=float) * b_t / sigma_star) ** 2


def longrun_cost_rate(t, lam: float, gamma: float, sigma_star: float):
    """Leading-order expected cost per step at the optimal band."""
    return (sigma_star / np.asarray(t, dtype=float)) * math.sqrt(2.0 * lam * gamma / 3.0)


def two_term_cost(t, b, lam: float, gamma: float, sigma_star: float):
    """Switching rate times lam plus stationary running cost, for band b."""
    t = np.asarray(t, dtype=float)
    return lam * (sigma_star / (t * b)) ** 2 + gamma * b**2 / 6.0


def triangular_density(xi):
    return np.maximum(0.0, 1.0 - np.abs(xi))


def triangular_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    """Inverse-CDF draws from the triangular density on (-1, 1)."""
    u = rng.random(n)
    return np.where(u < 0.5, np.sqrt(2.0 * u) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - u)))


# ---------------------------------------------------------------------------
# tracker
# ---------------------------------------------------------------------------


@dataclass
class TrackerResult:
    """Per-step record over t = t_star .. T (first row is the burn-in step)."""

    t: np.ndarray
    p_hat: np.ndarray
    theta: np.ndarray
    band: np.ndarray
    xi: np.ndarray
    switched: np.ndarray
    cost_running: np.ndarray
    cost_switch: np.ndarray
    sigma_star: float
    chi: float
    lam: float
    gamma: float

    @property
    def switch_times(self) -> np.ndarray:
        return self.t[self.switched]

    @property
    def switch_count(self) -> int:
        return int(self.switched.sum())

    @property
    def running_cost(self) -> float:
        return float(self.cost_running.sum())

    @property
    def switch_cost(self) -> float:
        return float(self.cost_switch.sum())

    @property
    def total_cost(self) -> float:
        return self.running_cost + self.switch_cost

    def mean_step_cost(self) -> float:
        return float((self.cost_running[1:] + self.cost_switch[1:]).mean())

    def predicted_step_cost(self) -> float:
        return float(longrun_cost_rate(self.t[1:], self.lam, self.gamma, self.sigma_star).mean())

    def inter_switch_times(self) -> tuple[np.ndarray, np.ndarray]:
        """Observed gaps between consecutive switches and the predicted mean
        gap (t1 b_t1 / sigma_star)^2 at the start of each gap."""
        ts = self.switch_times
        if len(ts) < 2:
            return np.empty(0), np.empty(0)
        start = ts[:-1]
        b = self.band[np.searchsorted(self.t, start)]
        return np.diff(ts).astype(float), expected_hitting_time(start, b, self.sigma_star)

    def expected_switch_count(self) -> float:
        """Sum over steps of the per-step switching probability 1/E[tau_t]."""
        return float(np.sum(1.0 / expected_hitting_time(self.t[1:], self.band[1:], self.sigma_star)))

    def ledger(self):
        from .harness import CostLedger

        return CostLedger(
            running_cost=self.running_cost,
            switch_cost=self.switch_cost,
            switch_count=self.switch_count,
            switch_times=self.switch_times.astype(float).tolist(),
            xi_samples=self.xi[1:],
        )


def bernoulli_stream(p: float, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random(n) < p).astype(np.int8)


def run_tracker(model: BernoulliModel, penalty: PenaltySpec, observations=None, seed=0,
                live_sigma: bool = False) -> TrackerResult:
    """Track the MLE with the optimal band from the burn-in step onward.

    ``observations`` is a 0/1 sequence of length ``model.horizon``; when
    omitted it is drawn from a seeded RNG.  ``live_sigma`` uses the current
    sigma_hat instead of the frozen burn-in value.
    """
    horizon, t_star = model.horizon, model.t_star
    if observations is None:
        y = bernoulli_stream(model.p_true, horizon, seed)
    else:
        y = np.asarray(observations)
        if len(y) < horizon:
            raise ValueError(f"need {horizon} observations, got {len(y)}")
        y = y[:horizon]
        if not np.isin(y, (0, 1)).all():
            raise ValueError("observations must be 0/1")
    if horizon < t_star:
        raise ValueError("horizon shorter than burn-in")

    lam, gamma = penalty.lam, penalty.gamma_scalar
    successes = np.cumsum(y, dtype=np.int64)
    t = np.arange(t_star, horizon + 1)
    p_hat = successes[t - 1] / t
    p_star = p_hat[0]
    sigma_star = math.sqrt(p_star * (1.0 - p_star))
    if sigma_star == 0.0:
        raise ValueError(f"degenerate burn-in: all {t_star} observations identical, sigma_hat = 0")
    chi = band_chi(sigma_star, lam, gamma)
    if live_sigma:
        band = (6.0 * lam / gamma) ** 0.25 * np.sqrt(np.sqrt(p_hat * (1.0 - p_hat)) / t)
    else:
        band = chi * sigma_star / np.sqrt(t)

    switched, err = kernels.track_band(p_hat[None, :], band)
    switched, err = switched[0], err[0]
    theta = p_hat[np.maximum.accumulate(np.where(switched, np.arange(len(t)), 0))]
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.where(band > 0, err / band, 0.0)
    cost_running = penalty.running_cost(err)
    cost_running[0] = 0.0
    return TrackerResult(
        t=t,
        p_hat=p_hat,
        theta=theta,
        band=band,
        xi=xi,
        switched=switched,
        cost_running=cost_running,
        cost_switch=np.where(switched, lam, 0.0),
        sigma_star=sigma_star,
        chi=chi,
        lam=lam,
        gamma=gamma,
    )


def read_observations_csv(path) -> np.ndarray:
    """One 0/1 value per line; blank and ``#`` lines ignored."""
    vals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected 0 or 1, got {line!r}")
            vals.append(int(line))
    return np.array(vals, dtype=np.int8)
