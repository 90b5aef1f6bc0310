"""Problem specifications: the linear-Gaussian filtering model, the Bernoulli
tracking model, and the switching/running cost structure."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

Matrix = np.ndarray
Coefficient = Callable[[float], Matrix]

#: condition number above which R(t) is reported as not invertible
COND_LIMIT = 1e12
#: eigenvalue tolerance for PSD / symmetry checks
EIG_TOL = 1e-12


class PiecewiseConstant:
    """Right-continuous step function ``t -> values[k]`` for ``times[k] <= t``.

    ``times[0]`` is the first breakpoint; times before it take ``values[0]``.
    """

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = [np.atleast_2d(np.asarray(v, dtype=float)) for v in values]
        if self.times.ndim != 1 or len(self.times) != len(self.values) or len(self.times) == 0:
            raise ValueError("times and values must be non-empty and of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("breakpoint times must be strictly increasing")
        shapes = {v.shape for v in self.values}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent value shapes {sorted(shapes)}")

    def __call__(self, t: float) -> Matrix:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(k, 0)]

    def to_config(self) -> dict:
        return {"times": self.times.tolist(), "values": [v.tolist() for v in self.values]}


class Constant:
    def __init__(self, value):
        self.value = np.atleast_2d(np.asarray(value, dtype=float))

    def __call__(self, t: float) -> Matrix:
        return self.value

    def to_config(self):
        return self.value.tolist()


def as_coefficient(spec: Any) -> Coefficient:
    """Coerce a scalar, nested list, ``{times, values}`` table or callable."""
    if isinstance(spec, (Constant, PiecewiseConstant)):
        return spec
    if isinstance(spec, dict):
        if set(spec) != {"times", "values"}:
            raise ValueError("time-varying coefficient needs exactly 'times' and 'values'")
        return PiecewiseConstant(spec["times"], spec["values"])
    if callable(spec):
        return lambda t, _f=spec: np.atleast_2d(np.asarray(_f(t), dtype=float))
    return Constant(spec)


@dataclass(frozen=True)
class ModelGrid:
    """Coefficients tabulated at the left end of each step of a uniform grid."""

    times: np.ndarray  # (n + 1,)
    dt: float
    F: np.ndarray  # (n, d, d)
    A: np.ndarray  # (n, m, d)
    Q: np.ndarray  # (n, d, d)
    R: np.ndarray  # (n, m, m)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True)
class LinearGaussianModel:
    """dX = F X dt + dW, dY = A X dt + dB with d<W> = Q dt, d<B> = R dt.

    Coefficients are callables of time returning 2-d arrays; use
    :func:`as_coefficient` (or :meth:`from_config`) to build them from
    constants or breakpoint tables.
    """

    F: Coefficient
    A: Coefficient
    Q: Coefficient
    R: Coefficient
    x0_mean: np.ndarray
    p0: np.ndarray
    horizon: float

    def __post_init__(self):
        for name in ("F", "A", "Q", "R"):
            object.__setattr__(self, name, as_coefficient(getattr(self, name)))
        object.__setattr__(self, "x0_mean", np.atleast_1d(np.asarray(self.x0_mean, dtype=float)))
        object.__setattr__(self, "p0", np.atleast_2d(np.asarray(self.p0, dtype=float)))
        if not self.horizon > 0:
            raise ValueError("horizon T must be positive")
        d, m = self.dims
        if self.p0.shape != (d, d) or self.x0_mean.shape != (d,):
            raise ValueError(f"prior shapes {self.x0_mean.shape}, {self.p0.shape} do not match d={d}")
        for name, shape in (("F", (d, d)), ("Q", (d, d)), ("R", (m, m))):
            got = getattr(self, name)(0.0).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    @property
    def dims(self) -> tuple[int, int]:
        """(state dimension d, observation dimension m)."""
        m, d = self.A(0.0).shape
        return d, m

    @property
    def is_scalar(self) -> bool:
        return self.dims == (1, 1)

    def default_dt(self) -> float:
        return 1e-3 * self.horizon

    def n_steps(self, dt: float) -> int:
        n = int(round(self.horizon / dt))
        if n < 1 or abs(n * dt - self.horizon) > 1e-9 * self.horizon:
            raise ValueError(f"dt={dt} does not divide the horizon T={self.horizon}")
        return n

    def tabulate(self, dt: float) -> ModelGrid:
        n = self.n_steps(dt)
        times = np.arange(n + 1) * dt
        left = times[:-1]
        return ModelGrid(
            times=times,
            dt=dt,
            F=np.stack([self.F(t) for t in left]),
            A=np.stack([self.A(t) for t in left]),
            Q=np.stack([self.Q(t) for t in left]),
            R=np.stack([self.R(t) for t in left]),
        )

    @classmethod
    def from_config(cls, cfg: dict) -> "LinearGaussianModel":
        try:
            return cls(
                F=cfg.get("F", 0.0),
                A=cfg.get("A", 1.0),
                Q=cfg.get("Q", 0.0),
                R=cfg.get("R", 1.0),
                x0_mean=cfg.get("x0_mean", 0.0),
                p0=cfg.get("p0", 1.0),
                horizon=float(cfg.get("T", 1.0)),
            )
        except (TypeError, KeyError) as exc:
            raise ValueError(f"malformed model section: {exc}") from exc

    def to_config(self) -> dict:
        out = {}
        for name in ("F", "A", "Q", "R"):
            coef = getattr(self, name)
            if hasattr(coef, "to_config"):
                out[name] = coef.to_config()
        out.update(x0_mean=self.x0_mean.tolist(), p0=self.p0.tolist(), T=self.horizon)
        return out


def constant_signal(p0: float = 1.0, horizon: float = 1.0, x0_mean: float = 0.0) -> LinearGaussianModel:
    """Scalar constant-signal model: F = Q = 0, A = R = 1."""
    return LinearGaussianModel(F=0.0, A=1.0, Q=0.0, R=1.0, x0_mean=x0_mean, p0=p0, horizon=horizon)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""
    time: float | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def messages(self) -> list[str]:
        return [f"{c.detail} (t={c.time})" if c.time is not None else c.detail for c in self.failures]


def _is_symmetric(m: Matrix) -> bool:
    if m.shape == (1, 1):
        return True
    return float(np.abs(m - m.T).max()) <= EIG_TOL * max(1.0, float(np.abs(m).max()))


def _min_eig(m: Matrix) -> float:
    if m.shape == (1, 1):
        return float(m[0, 0])
    return float(np.linalg.eigvalsh((m + m.T) / 2).min())


def validate_model(model: LinearGaussianModel, sample_times) -> ValidationReport:
    """Check the model invariants at each sample time; never raises on a
    violated invariant, reports it instead."""
    sample_times = [float(t) for t in sample_times]
    for t in sample_times:
        if not 0.0 <= t <= model.horizon:
            raise ValueError(f"sample time {t} outside [0, {model.horizon}]")

    checks: list[Check] = []
    p0 = model.p0
    checks.append(Check("p0_symmetric", _is_symmetric(p0), "p0 not symmetric"))
    checks.append(Check("p0_pd", _is_symmetric(p0) and _min_eig(p0) > 0, "p0 not positive definite"))

    a_nonzero = False
    for t in sample_times:
        q, r, a = model.Q(t), model.R(t), model.A(t)
        a_nonzero |= bool(np.any(a != 0))
        if not _is_symmetric(q):
            checks.append(Check("Q_symmetric", False, "Q not symmetric", t))
        elif _min_eig(q) < -EIG_TOL:
            checks.append(Check("Q_psd", False, "Q not PSD", t))
        if not _is_symmetric(r):
            checks.append(Check("R_symmetric", False, "R not symmetric", t))
        elif not np.isfinite(np.linalg.cond(r)) or np.linalg.cond(r) > COND_LIMIT:
            checks.append(Check("R_invertible", False, "R not invertible", t))
        elif _min_eig(r) <= 0:
            checks.append(Check("R_pd", False, "R not positive definite", t))
    if not any(c.name.startswith("Q") for c in checks):
        checks.append(Check("Q_psd", True))
    if not any(c.name.startswith("R") for c in checks):
        checks.append(Check("R_invertible", True))
    checks.append(Check("A_nonzero", a_nonzero, "A identically zero on the sampled times"))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# Bernoulli model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BernoulliModel:
    """Independent Bernoulli(p_true) trials over ``horizon`` steps; the band
    is frozen at the burn-in step ``t_star = burn_in_fraction * horizon``."""

    p_true: float
    horizon: int
    burn_in_fraction: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.p_true < 1.0:
            raise ValueError("p_true must lie in (0, 1)")
        if not 0.0 < self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in (0, 1)")
        if int(self.horizon) != self.horizon or self.horizon < 10:
            raise ValueError("horizon must be an integer >= 10")
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def t_star(self) -> int:
        return max(1, int(round(self.burn_in_fraction * self.horizon)))


# ---------------------------------------------------------------------------
# costs
# ---------------------------------------------------------------------------


def curvature_from_rho(rho: Callable, d: int = 1, h: float = 1e-4, floor: float = 1e-10) -> Matrix:
    """Half the central-difference Hessian of ``rho`` at the origin.

    ``rho`` receives a float when ``d == 1`` and a length-``d`` array
    otherwise.  Raises ``ValueError`` when the smallest eigenvalue falls
    below ``max(floor, 100 h^2)``: anything smaller is indistinguishable
    from the O(h^2) truncation error (degenerate running cost).
    """
    if h <= 0:
        raise ValueError("step h must be positive")

    def f(v):
        return float(rho(v[0]) if d == 1 else rho(v))

    eye = np.eye(d) * h
    zero = np.zeros(d)
    f0 = f(zero)
    hess = np.empty((d, d))
    for i in range(d):
        hess[i, i] = (f(eye[i]) - 2.0 * f0 + f(-eye[i])) / h**2
        for j in range(i + 1, d):
            hess[i, j] = (
                f(eye[i] + eye[j]) - f(eye[i] - eye[j]) - f(-eye[i] + eye[j]) + f(-eye[i] - eye[j])
            ) / (4.0 * h**2)
            hess[j, i] = hess[i, j]
    gamma = 0.5 * (hess + hess.T) / 2.0
    lo = float(np.linalg.eigvalsh(gamma).min())
    floor = max(floor, 100.0 * h**2)
    if lo < floor:
        raise ValueError(f"degenerate running cost: curvature eigenvalue {lo:.3g} below floor {floor:g}")
    return gamma


def quadratic_rho(gamma) -> Callable:
    g = np.atleast_2d(np.asarray(gamma, dtype=float))
    if g.shape == (1, 1):
        c = float(g[0, 0])
        return lambda x: c * np.square(x)
    return lambda x: np.einsum("...i,ij,...j->...", x, g, x)


def cosine_rho(dim: int = 1) -> Callable:
    """sum_i (1 - cos x_i); curvature 1/2 per axis."""
    if dim == 1:
        return lambda x: 1.0 - np.cos(x)
    return lambda x: np.sum(1.0 - np.cos(x), axis=-1)


RHO_KINDS = {"quadratic", "cosine"}


@dataclass(frozen=True)
class PenaltySpec:
    """Fixed switching cost ``lam`` plus running cost ``rho`` on the
    tracking error, with curvature ``gamma = rho''(0) / 2``."""

    lam: float
    rho: Callable | None = None
    gamma: Any = None
    dim: int = 1
    _rho_kind: str = field(default="custom", repr=False)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be ≥ 0")
        if self.rho is None and self.gamma is None:
            raise ValueError("give rho, gamma, or both")
        if self.gamma is None:
            gamma = curvature_from_rho(self.rho, self.dim)
        else:
            gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if gamma.shape != (self.dim, self.dim):
            object.__setattr__(self, "dim", gamma.shape[0])
        if not _is_symmetric(gamma) or _min_eig(gamma) <= 0:
            raise ValueError("gamma must be symmetric positive definite")
        object.__setattr__(self, "gamma", gamma)
        if self.rho is None:
            # built from a checked positive definite gamma; nothing to probe
            object.__setattr__(self, "rho", quadratic_rho(gamma))
            object.__setattr__(self, "_rho_kind", "quadratic")
        else:
            self._check_rho()

    def _check_rho(self):
        d = self.dim
        at0 = self.rho(0.0) if d == 1 else self.rho(np.zeros(d))
        if abs(float(at0)) > 1e-12:
            raise ValueError("rho(0) must be 0")
        rng = np.random.default_rng(12345)
        for v in rng.uniform(-1, 1, size=(16, d)) * 0.1:
            val = self.rho(v[0]) if d == 1 else self.rho(v)
            if float(val) < 0:
                raise ValueError("rho must be nonnegative")

    @property
    def gamma_scalar(self) -> float:
        if self.dim != 1:
            raise ValueError("scalar curvature requested for a multivariate penalty")
        return float(self.gamma[0, 0])

    def running_cost(self, err: np.ndarray) -> np.ndarray:
        """rho applied to an array of errors; scalar errors shaped (...),
        vector errors shaped (..., d)."""
        if self.dim == 1:
            return np.asarray(self.rho(err), dtype=float)
        if self._rho_kind in ("quadratic", "cosine"):
            return np.asarray(self.rho(err), dtype=float)
        return np.apply_along_axis(lambda v: float(self.rho(v)), -1, err)

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(lam=lam, rho=self.rho, gamma=self.gamma, dim=self.dim, _rho_kind=self._rho_kind)

    @classmethod
    def quadratic(cls, lam: float, gamma) -> "PenaltySpec":
        g = np.atleast_2d(np.asarray(gamma, dtype=float))
        return cls(lam=lam, gamma=g, dim=g.shape[0])

    @classmethod
    def from_config(cls, cfg: dict, dim: int = 1) -> "PenaltySpec":
        lam = float(cfg.get("lambda", 0.0))
        kind = cfg.get("rho", "quadratic")
        if kind not in RHO_KINDS:
            raise ValueError(f"unknown rho kind {kind!r}; choose from {sorted(RHO_KINDS)}")
        if kind == "quadratic":
            return cls.quadratic(lam, cfg.get("gamma", np.eye(dim)))
        return cls(lam=lam, rho=cosine_rho(dim), gamma=cfg.get("gamma"), dim=dim, _rho_kind="cosine")
