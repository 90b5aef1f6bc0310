"""Hot inner loops: state simulation, filter mean recursion, band tracking.

Every kernel has a numba implementation (``*_nb``) and a pure-numpy one
(``*_np``).  The public names dispatch on :data:`USE_NUMBA`, which is on
when numba imports cleanly and ``SWITCHBAND_DISABLE_NUMBA`` is unset or
``0``.  Both paths perform the same floating-point operations in the same
order, so results agree bit-for-bit.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("SWITCHBAND_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not _DISABLED


def _jit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# State and observation simulation (Euler-Maruyama)
#
#   X_{i+1} = X_i + F_i X_i dt + dW_i
#   dY_i    = A_i X_i dt + dB_i
# ---------------------------------------------------------------------------


def _simulate_state_py(x0, f, a, dw, db, dt):
    n_paths, n, d = dw.shape
    m = db.shape[2]
    x = np.empty((n_paths, n + 1, d))
    dy = np.empty((n_paths, n, m))
    for p in range(n_paths):
        for j in range(d):
            x[p, 0, j] = x0[p, j]
        for i in range(n):
            for r in range(m):
                acc = 0.0
                for j in range(d):
                    acc += a[i, r, j] * x[p, i, j]
                dy[p, i, r] = acc * dt + db[p, i, r]
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += f[i, j, k] * x[p, i, k]
                x[p, i + 1, j] = x[p, i, j] + acc * dt + dw[p, i, j]
    return x, dy


simulate_state_nb = _jit(_simulate_state_py)


def simulate_state_np(x0, f, a, dw, db, dt):
    n_paths, n, d = dw.shape
    m = db.shape[2]
    x = np.empty((n_paths, n + 1, d))
    dy = np.empty((n_paths, n, m))
    x[:, 0] = x0
    for i in range(n):
        xi = x[:, i]
        dy[:, i] = _rowdot(a[i], xi) * dt + db[:, i]
        x[:, i + 1] = xi + _rowdot(f[i], xi) * dt + dw[:, i]
    return x, dy


# ---------------------------------------------------------------------------
# Filter mean recursion
#
#   x_{i+1} = x_i + F_i x_i dt + K_i (dy_i - A_i x_i dt)
# ---------------------------------------------------------------------------


def _filter_mean_py(xhat0, f, a, k, dy, dt):
    n_paths, n, m = dy.shape
    d = xhat0.shape[1]
    xh = np.empty((n_paths, n + 1, d))
    innov = np.empty(m)
    for p in range(n_paths):
        for j in range(d):
            xh[p, 0, j] = xhat0[p, j]
        for i in range(n):
            for r in range(m):
                acc = 0.0
                for j in range(d):
                    acc += a[i, r, j] * xh[p, i, j]
                innov[r] = dy[p, i, r] - acc * dt
            for j in range(d):
                drift = 0.0
                for q in range(d):
                    drift += f[i, j, q] * xh[p, i, q]
                corr = 0.0
                for r in range(m):
                    corr += k[i, j, r] * innov[r]
                xh[p, i + 1, j] = xh[p, i, j] + drift * dt + corr
    return xh


filter_mean_nb = _jit(_filter_mean_py)


def filter_mean_np(xhat0, f, a, k, dy, dt):
    n_paths, n, m = dy.shape
    d = xhat0.shape[1]
    xh = np.empty((n_paths, n + 1, d))
    xh[:, 0] = xhat0
    for i in range(n):
        cur = xh[:, i]
        innov = dy[:, i] - _rowdot(a[i], cur) * dt
        xh[:, i + 1] = cur + _rowdot(f[i], cur) * dt + _rowdot(k[i], innov)
    return xh


def _rowdot(mat, vecs):
    # mat (r, c), vecs (p, c) -> (p, r), accumulated left to right like the loops
    out = np.zeros((vecs.shape[0], mat.shape[0]))
    for c in range(mat.shape[1]):
        out += vecs[:, c : c + 1] * mat[:, c]
    return out


# ---------------------------------------------------------------------------
# Riccati covariance path, RK4 on a half-step coefficient table
#
#   dP/dt = F P + P F^T + Q - P A^T R^{-1} A P
#
# Coefficients are tabulated at t = j dt / 2, j = 0 .. 2n, so step i uses
# rows 2i, 2i + 1, 2i + 2.
# ---------------------------------------------------------------------------


def _riccati_rhs_py(p, f, a, q, rinv):
    d = p.shape[0]
    m = a.shape[0]
    # g = A P  (m, d), h = R^{-1} g  (m, d)
    g = np.zeros((m, d))
    for r in range(m):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += a[r, k] * p[k, j]
            g[r, j] = acc
    h = np.zeros((m, d))
    for r in range(m):
        for j in range(d):
            acc = 0.0
            for s in range(m):
                acc += rinv[r, s] * g[s, j]
            h[r, j] = acc
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            fp = 0.0
            pf = 0.0
            for k in range(d):
                fp += f[i, k] * p[k, j]
                pf += p[i, k] * f[j, k]
            info = 0.0
            for r in range(m):
                info += g[r, i] * h[r, j]
            out[i, j] = fp + pf + q[i, j] - info
    return out


_riccati_rhs_jit = _jit(_riccati_rhs_py)


def _make_riccati_path(rhs):
    def riccati_path(p0, f, a, q, rinv, dt):
        n = (f.shape[0] - 1) // 2
        d = p0.shape[0]
        out = np.empty((n + 1, d, d))
        for i in range(d):
            for j in range(d):
                out[0, i, j] = 0.5 * (p0[i, j] + p0[j, i])
        for step in range(n):
            lo = 2 * step
            p = out[step]
            k1 = rhs(p, f[lo], a[lo], q[lo], rinv[lo])
            k2 = rhs(p + dt / 2 * k1, f[lo + 1], a[lo + 1], q[lo + 1], rinv[lo + 1])
            k3 = rhs(p + dt / 2 * k2, f[lo + 1], a[lo + 1], q[lo + 1], rinv[lo + 1])
            k4 = rhs(p + dt * k3, f[lo + 2], a[lo + 2], q[lo + 2], rinv[lo + 2])
            nxt = p + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            for i in range(d):
                for j in range(d):
                    out[step + 1, i, j] = 0.5 * (nxt[i, j] + nxt[j, i])
        return out

    return riccati_path


riccati_path_nb = _jit(_make_riccati_path(_riccati_rhs_jit))


def _riccati_rhs_np(p, f, a, q, rinv):
    g = a @ p
    return f @ p + p @ f.T + q - g.T @ (rinv @ g)


riccati_path_np = _make_riccati_path(_riccati_rhs_np)


# ---------------------------------------------------------------------------
# Band tracking: theta starts at signal[0]; at step i >= 1 reset theta to
# signal[i] when |signal[i] - theta| >= band[i] and the error is nonzero.
# ---------------------------------------------------------------------------


def _track_band_py(signals, band):
    n_paths, n1 = signals.shape
    switched = np.zeros((n_paths, n1), dtype=np.bool_)
    err = np.empty((n_paths, n1))
    for p in range(n_paths):
        theta = signals[p, 0]
        err[p, 0] = 0.0
        for i in range(1, n1):
            e = signals[p, i] - theta
            if e != 0.0 and abs(e) >= band[i]:
                theta = signals[p, i]
                switched[p, i] = True
                e = 0.0
            err[p, i] = e
    return switched, err


track_band_nb = _jit(_track_band_py)

_FIRST_WINDOW = 64


def track_band_np(signals, band):
    """Numpy band tracker.

    Few paths: per-path first-exit search over doubling windows.  Many
    paths: a time loop vectorised across paths.
    """
    n_paths, n1 = signals.shape
    if n_paths >= 8:
        return _track_band_columns(signals, band)
    switched = np.zeros((n_paths, n1), dtype=bool)
    err = np.empty((n_paths, n1))
    for p in range(n_paths):
        s = signals[p]
        theta = s[0]
        err[p, 0] = 0.0
        i = 1
        width = _FIRST_WINDOW
        while i < n1:
            stop = min(i + width, n1)
            e = s[i:stop] - theta
            hit = (e != 0.0) & (np.abs(e) >= band[i:stop])
            if hit.any():
                j = i + int(np.argmax(hit))
                err[p, i:j] = e[: j - i]
                err[p, j] = 0.0
                switched[p, j] = True
                theta = s[j]
                i = j + 1
                width = _FIRST_WINDOW
            else:
                err[p, i:stop] = e
                i = stop
                width *= 2
    return switched, err


def _track_band_columns(signals, band):
    n_paths, n1 = signals.shape
    switched = np.zeros((n_paths, n1), dtype=bool)
    err = np.empty((n_paths, n1))
    theta = signals[:, 0].copy()
    err[:, 0] = 0.0
    for i in range(1, n1):
        col = signals[:, i]
        e = col - theta
        hit = (e != 0.0) & (np.abs(e) >= band[i])
        theta = np.where(hit, col, theta)
        switched[:, i] = hit
        err[:, i] = np.where(hit, 0.0, e)
    return switched, err


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def simulate_state(x0, f, a, dw, db, dt):
    """Euler-Maruyama state paths and observation increments for a batch."""
    args = (
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(f, dtype=float),
        np.ascontiguousarray(a, dtype=float),
        np.ascontiguousarray(dw, dtype=float),
        np.ascontiguousarray(db, dtype=float),
        float(dt),
    )
    return simulate_state_nb(*args) if USE_NUMBA else simulate_state_np(*args)


def filter_mean(xhat0, f, a, k, dy, dt):
    """Kalman-Bucy mean recursion for a batch of observation-increment paths.

    Gains ``k`` are precomputed (the covariance is path independent).
    Returns ``(n_paths, n + 1, d)``.
    """
    args = (
        np.ascontiguousarray(xhat0, dtype=float),
        np.ascontiguousarray(f, dtype=float),
        np.ascontiguousarray(a, dtype=float),
        np.ascontiguousarray(k, dtype=float),
        np.ascontiguousarray(dy, dtype=float),
        float(dt),
    )
    return filter_mean_nb(*args) if USE_NUMBA else filter_mean_np(*args)


def track_band(signals, band):
    """Apply the reset-to-signal band rule to each row of ``signals``.

    Returns ``(switched, err)``, both shaped like ``signals``; ``err`` holds
    the tracking error after the decision at each step.
    """
    signals = np.ascontiguousarray(np.atleast_2d(signals), dtype=float)
    band = np.ascontiguousarray(band, dtype=float)
    if band.shape != (signals.shape[1],):
        raise ValueError("band must have one entry per signal column")
    return track_band_nb(signals, band) if USE_NUMBA else track_band_np(signals, band)


def riccati_path(p0, f, a, q, rinv, dt):
    """RK4 covariance path on a half-step coefficient table (2n + 1 rows);
    returns ``(n + 1, d, d)``, symmetrised after every step."""
    args = tuple(np.ascontiguousarray(v, dtype=float) for v in (p0, f, a, q, rinv)) + (float(dt),)
    if args[1].shape[0] % 2 != 1:
        raise ValueError("coefficient table needs 2n + 1 half-step rows")
    return riccati_path_nb(*args) if USE_NUMBA else riccati_path_np(*args)
