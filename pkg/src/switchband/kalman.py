"""Kalman-Bucy filter: Riccati integration, gain, innovation variance, and
the mean update."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Constant, LinearGaussianModel

#: smallest eigenvalue allowed for an advanced covariance before failing
PSD_TOL = -1e-8
#: agreement required between the two factorisations of Sigma
SIGMA_TOL = 1e-10


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterState:
    t: float
    x_hat: np.ndarray  # (d,)
    p: np.ndarray  # (d, d)
    k_gain: np.ndarray  # (d, m)
    sigma: np.ndarray  # (d, d)
    innovation: np.ndarray | None = None  # last dV, (m,)


def gain(p, a, r):
    """K = P A^T R^{-1}."""
    return np.linalg.solve(r.T, (p @ a.T).T).T


def make_state(model: LinearGaussianModel, t: float, x_hat, p, innovation=None) -> FilterState:
    a, r = model.A(t), model.R(t)
    k = gain(p, a, r)
    sigma = _sym(k @ r @ k.T)
    return FilterState(t=float(t), x_hat=np.asarray(x_hat, dtype=float), p=p, k_gain=k, sigma=sigma,
                       innovation=innovation)


def initial_state(model: LinearGaussianModel) -> FilterState:
    return make_state(model, 0.0, model.x0_mean.copy(), model.p0.copy())


def closed_form_P(p0: float, t: float) -> float:
    """Posterior variance of the constant-signal model: 1 / (1/p0 + t)."""
    if p0 <= 0 or t < 0:
        raise ValueError("need p0 > 0 and t >= 0")
    return 1.0 / (1.0 / p0 + t)


def _sym(m):
    return 0.5 * (m + m.T)


def riccati_rhs(model: LinearGaussianModel, t: float, p):
    f, a, q, r = model.F(t), model.A(t), model.Q(t), model.R(t)
    k = gain(p, a, r)
    return f @ p + p @ f.T + q - k @ r @ k.T


def riccati_step(model: LinearGaussianModel, state: FilterState, dt: float):
    """One RK4 step of dP/dt = FP + PF^T + Q - K R K^T, symmetrised."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    t, p = state.t, state.p
    k1 = riccati_rhs(model, t, p)
    k2 = riccati_rhs(model, t + dt / 2, p + dt / 2 * k1)
    k3 = riccati_rhs(model, t + dt / 2, p + dt / 2 * k2)
    k4 = riccati_rhs(model, t + dt, p + dt * k3)
    out = _sym(p + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
    lo = float(np.linalg.eigvalsh(out).min())
    if lo < PSD_TOL:
        raise FilterError(f"covariance lost PSD at t={t + dt:g} (min eigenvalue {lo:.3g}); reduce dt")
    return out


def covariance_path(model: LinearGaussianModel, dt: float, n_steps: int | None = None) -> np.ndarray:
    """P on the uniform grid 0, dt, ..., n dt; shape (n + 1, d, d).

    Same RK4 scheme as :func:`riccati_step`, run in a compiled loop over
    coefficients tabulated at half steps.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = model.n_steps(dt) if n_steps is None else n_steps
    half = np.arange(2 * n + 1) * (dt / 2)
    f, a, q, r = (_table(getattr(model, name), half) for name in ("F", "A", "Q", "R"))
    rinv = np.linalg.inv(r)
    out = kernels.riccati_path(model.p0, f, a, q, rinv, dt)
    finite = np.isfinite(out).all(axis=(1, 2))
    bad = ~finite
    bad[finite] = np.linalg.eigvalsh(out[finite]).min(axis=1) < PSD_TOL
    if bad.any():
        i = int(np.argmax(bad))
        raise FilterError(f"covariance lost PSD at t={i * dt:g}; reduce dt")
    return out


def _table(coef, times) -> np.ndarray:
    if isinstance(coef, Constant):
        v = coef(0.0)
        return np.broadcast_to(v, (len(times),) + v.shape)
    return np.stack([coef(t) for t in times])


def filter_step(model: LinearGaussianModel, state: FilterState, dy, dt: float) -> FilterState:
    """Euler-Maruyama mean update plus an RK4 covariance step.

    The gain is taken at the start of the step.
    """
    d, m = model.dims
    dy = np.atleast_1d(np.asarray(dy, dtype=float))
    if dy.shape != (m,):
        raise ValueError(f"observation increment must have dimension {m}")
    t = state.t
    f, a = model.F(t), model.A(t)
    innov = dy - a @ state.x_hat * dt
    x_new = state.x_hat + f @ state.x_hat * dt + state.k_gain @ innov
    p_new = riccati_step(model, state, dt)
    return make_state(model, t + dt, x_new, p_new, innovation=innov)


def sigma_of_t(model: LinearGaussianModel, state: FilterState):
    """Sigma_t via K R K^T and via P A^T R^{-1} A P^T; raises on disagreement."""
    a, r = model.A(state.t), model.R(state.t)
    k = gain(state.p, a, r)
    via_gain = k @ r @ k.T
    via_cov = state.p @ a.T @ np.linalg.solve(r, a @ state.p.T)
    scale = max(1.0, float(np.abs(via_gain).max()))
    if float(np.abs(via_gain - via_cov).max()) > SIGMA_TOL * scale:
        raise FilterError("Sigma factorisations disagree; gain computation is broken")
    return _sym(via_gain), _sym(via_cov)


def run_filter(model: LinearGaussianModel, dy, dt: float, state: FilterState | None = None) -> list[FilterState]:
    """Filter a stream of increments (rows of ``dy``); returns every state
    including the initial one."""
    dy = np.asarray(dy, dtype=float)
    if dy.ndim == 1:
        dy = dy[:, None]
    states = [initial_state(model) if state is None else state]
    for row in dy:
        states.append(filter_step(model, states[-1], row, dt))
    return states


def read_increments_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``t, dy_1..dy_m`` rows (``#`` lines skipped); returns (t, dy)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValueError(f"{path}: no data")
    header = [h.strip() for h in rows[0]]
    if header[0] != "t" or not all(h.startswith("dy") for h in header[1:]) or len(header) < 2:
        raise ValueError(f"{path}: expected header 't, dy_1..dy_m', got {header}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return data[:, 0], data[:, 1:]
