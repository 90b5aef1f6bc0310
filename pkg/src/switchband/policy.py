"""Asymptotically optimal no-switching region and its reading as a two-sided
z-test.

For small switching cost ``lam`` the region is ``{xi : xi^T M xi < 1}`` with
``xi = lam**-0.25 * (x_hat - theta)`` and ``M`` solving

    0 = Gamma + 2 M tr(Sigma M) - 4 M Sigma M.

In one dimension ``M = sqrt(Gamma / (2 Sigma))`` and the band half-width on
``|x_hat - theta|`` is ``(Sigma * 2 lam / Gamma) ** 0.25``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .kalman import FilterState
from .model import LinearGaussianModel, PenaltySpec

RESIDUAL_TOL = 1e-10
_STD_NORMAL = NormalDist()


# ---------------------------------------------------------------------------
# standard normal helpers
# ---------------------------------------------------------------------------


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def two_sided_size(c: float) -> float:
    """2 (1 - Phi(c)), computed without cancellation."""
    return math.erfc(c / math.sqrt(2.0))


def two_sided_critical(alpha: float) -> float:
    """c with 2 (1 - Phi(c)) = alpha."""
    if alpha == 1.0:
        return 0.0
    return -_STD_NORMAL.inv_cdf(alpha / 2.0)


# ---------------------------------------------------------------------------
# region matrix
# ---------------------------------------------------------------------------


def m_residual(m, gamma, sigma):
    m, gamma, sigma = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (m, gamma, sigma))
    return gamma + 2.0 * m * np.trace(sigma @ m) - 4.0 * m @ sigma @ m


def solve_m_scalar(gamma: float, sigma: float) -> float:
    if not (gamma > 0 and sigma > 0):
        raise ValueError("solve_m_scalar needs gamma > 0 and sigma > 0")
    return math.sqrt(gamma / (2.0 * sigma))


@dataclass(frozen=True)
class MSolution:
    m: np.ndarray
    residual: float
    converged: bool
    iterations: int
    message: str = ""


def _sym_basis(d):
    basis = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = 1.0
            basis.append(e)
    return basis


def _is_pd(m) -> bool:
    return bool(np.allclose(m, m.T)) and float(np.linalg.eigvalsh(m).min()) > 0


def solve_m_matrix(gamma, sigma, init=None, max_iter: int = 100, tol: float = RESIDUAL_TOL) -> MSolution:
    """Damped Newton iteration over symmetric matrices.

    Never raises on failure to converge: the returned ``MSolution`` carries
    the best iterate, its Frobenius residual, and ``converged=False`` when
    the residual stays above ``tol`` or the iterate is not positive definite.
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = gamma.shape[0]
    if gamma.shape != (d, d) or sigma.shape != (d, d):
        raise ValueError("gamma and sigma must be square and of equal size")
    if not (_is_pd(gamma) and _is_pd(sigma)):
        raise ValueError("gamma and sigma must be symmetric positive definite")

    if d == 1:
        m = np.array([[solve_m_scalar(gamma[0, 0], sigma[0, 0])]])
        res = float(np.linalg.norm(m_residual(m, gamma, sigma)))
        return MSolution(m, res, res < tol, 0)

    if init is None:
        m = np.diag([solve_m_scalar(gamma[i, i], sigma[i, i]) for i in range(d)])
    else:
        m = np.array(init, dtype=float)
    basis = _sym_basis(d)
    upper = np.triu_indices(d)

    def resid(mm):
        return m_residual(mm, gamma, sigma)

    def jac(mm):
        tr = np.trace(sigma @ mm)
        cols = []
        for e in basis:
            dg = 2 * e * tr + 2 * mm * np.trace(sigma @ e) - 4 * e @ sigma @ mm - 4 * mm @ sigma @ e
            cols.append(dg[upper])
        return np.column_stack(cols)

    r = resid(m)
    norm = float(np.linalg.norm(r))
    it = 0
    stalled = False
    for it in range(1, max_iter + 1):
        if norm < tol:
            break
        step, *_ = np.linalg.lstsq(jac(m), -r[upper], rcond=None)
        h = sum(s * e for s, e in zip(step, basis))
        scale = 1.0
        while scale > 1e-8:
            trial = m + scale * h
            tnorm = float(np.linalg.norm(resid(trial)))
            if tnorm < norm:
                break
            scale /= 2
        else:
            stalled = True
            break
        m, norm = trial, tnorm
        r = resid(m)

    m = 0.5 * (m + m.T)
    if norm >= tol:
        why = "line search stalled" if stalled else "iteration limit reached"
        msg = f"no convergence after {it} iterations, {why} (residual {norm:.3g})"
        return MSolution(m, norm, False, it, msg)
    if not _is_pd(m):
        return MSolution(m, norm, False, it, "root found but not positive definite")
    return MSolution(m, norm, True, it)


# ---------------------------------------------------------------------------
# band and switching rule
# ---------------------------------------------------------------------------


def band_from_sigma(sigma, lam, gamma):
    """(Sigma * 2 lam / Gamma) ** 0.25, vectorised over ``sigma``."""
    return (np.asarray(sigma, dtype=float) * 2.0 * lam / gamma) ** 0.25


def band_halfwidth(model: LinearGaussianModel, state: FilterState, penalty: PenaltySpec) -> float:
    """Scalar half-width of the inaction band on |x_hat - theta|.

    Evaluated through Sigma_t and through sqrt(P)(|A|/sqrt(R))^(1/2); the
    two must agree.
    """
    if not model.is_scalar:
        raise ValueError("band_halfwidth is scalar only; use the region matrix for d > 1")
    lam, g = penalty.lam, penalty.gamma_scalar
    a = float(model.A(state.t)[0, 0])
    r = float(model.R(state.t)[0, 0])
    p = float(state.p[0, 0])
    scale = (2.0 * lam / g) ** 0.25
    via_sigma = float(state.sigma[0, 0]) ** 0.25 * scale
    via_cov = math.sqrt(p) * math.sqrt(abs(a) / math.sqrt(r)) * scale
    if abs(via_sigma - via_cov) > 1e-10 * max(1.0, via_cov):
        raise ArithmeticError(f"band factorisations disagree: {via_sigma!r} vs {via_cov!r}")
    return via_cov


def should_switch(m_matrix, x_hat, theta, lam: float) -> bool:
    """True iff the rescaled error lies outside the open region xi^T M xi < 1."""
    e = np.atleast_1d(np.asarray(x_hat, dtype=float) - np.asarray(theta, dtype=float))
    if not np.any(e):
        return False
    if lam == 0:
        return True
    xi = e * lam**-0.25
    m = np.atleast_2d(np.asarray(m_matrix, dtype=float))
    return bool(xi @ m @ xi >= 1.0)


@dataclass(frozen=True)
class InactionPolicy:
    """Reset theta to x_hat whenever xi^T M xi >= 1.

    With ``m_matrix`` unset the region is re-solved from Sigma_t at every
    step (the asymptotically optimal time-varying band); with it set the
    region is held fixed.
    """

    gamma: np.ndarray
    lam: float
    m_matrix: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_penalty(cls, penalty: PenaltySpec, sigma=None) -> "InactionPolicy":
        pol = cls(gamma=penalty.gamma, lam=penalty.lam)
        if sigma is None:
            return pol
        sol = solve_m_matrix(penalty.gamma, sigma)
        if not sol.converged:
            raise ValueError(f"no positive definite region matrix: {sol.message}")
        return cls(gamma=penalty.gamma, lam=penalty.lam, m_matrix=sol.m)

    @property
    def dim(self) -> int:
        return np.atleast_2d(self.gamma).shape[0]

    def region(self, sigma) -> np.ndarray:
        if self.m_matrix is not None:
            return np.atleast_2d(self.m_matrix)
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if self.dim == 1:
            return np.array([[solve_m_scalar(float(self.gamma[0, 0]), float(sigma[0, 0]))]])
        key = sigma.tobytes()
        if key not in self._cache:
            sol = solve_m_matrix(self.gamma, sigma)
            if not sol.converged:
                raise ValueError(f"no positive definite region matrix at this Sigma: {sol.message}")
            self._cache[key] = sol.m
        return self._cache[key]

    def band(self, sigma) -> np.ndarray:
        """Scalar half-width(s) for scalar policies, vectorised over sigma."""
        if self.dim != 1:
            raise ValueError("band is defined for scalar policies only")
        g = float(np.atleast_2d(self.gamma)[0, 0])
        if self.m_matrix is not None:
            m = float(np.atleast_2d(self.m_matrix)[0, 0])
            return np.full(np.shape(sigma), (self.lam**0.5 / m) ** 0.5)
        return band_from_sigma(sigma, self.lam, g)

    def should_switch(self, x_hat, theta, sigma) -> bool:
        return should_switch(self.region(sigma), x_hat, theta, self.lam)


def correction_psi(m_matrix, xi) -> float:
    """-1 + (xi^T M xi - 1)^2."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    q = float(xi @ np.atleast_2d(np.asarray(m_matrix, dtype=float)) @ xi)
    return -1.0 + (q - 1.0) ** 2


# ---------------------------------------------------------------------------
# test-size mapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestMapping:
    __test__ = False

    critical_value: float
    test_size: float

    @property
    def confidence_level(self) -> float:
        return 1.0 - self.test_size

    def as_dict(self) -> dict:
        return {"c": self.critical_value, "alpha": self.test_size, "confidence_level": self.confidence_level}


def test_size_from_cost(lam: float, gamma: float) -> TestMapping:
    """Critical value c = (2 lam / gamma)^(1/4) and its two-sided size."""
    if lam < 0 or gamma <= 0:
        raise ValueError("need lambda >= 0 and gamma > 0")
    c = (2.0 * lam / gamma) ** 0.25
    return TestMapping(c, two_sided_size(c))


test_size_from_cost.__test__ = False


def cost_from_test_size(alpha: float, gamma: float) -> float:
    """Switching cost whose band matches a two-sided test of size alpha."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    c = two_sided_critical(alpha)
    return gamma * c**4 / 2.0


def implied_test_size_path(model: LinearGaussianModel, filter_states, penalty: PenaltySpec) -> list[tuple[float, float]]:
    """(t, alpha_t) with alpha_t the size of the z-test whose acceptance
    region is the band at time t; c_t = band / sqrt(P_t)."""
    out = []
    for st in filter_states:
        width = band_halfwidth(model, st, penalty)
        c = width / math.sqrt(float(st.p[0, 0]))
        out.append((st.t, two_sided_size(c)))
    return out
