"""Numeric kernels for the reweighted-projection solver.

The iteration that produces robust reconciled forecasts is the hot loop of
every simulation run, so it is written once in nopython-compatible NumPy and
compiled with numba when available. Set ``ROME_BACKEND=numpy`` to force the
uncompiled path (or ``ROME_BACKEND=numba`` to insist on the compiled one);
by default the compiled kernel is used whenever numba imports.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ValidationError

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# integer codes shared with loss.LossSpec
LS, LAD, HUBER, LP, QUANTILE = 0, 1, 2, 3, 4


def rho_values(code, k, p, q, e):
    """Loss values rho(|e|) elementwise; e may be signed."""
    a = np.abs(e)
    if code == LS:
        return a * a
    if code == LAD:
        return a
    if code == HUBER:
        return np.where(a <= k, 0.5 * a * a, k * a - 0.5 * k * k)
    if code == LP:
        return a**p
    # quantile: q*e_+ + (1-q)*(-e)_+
    return np.where(e >= 0.0, q * e, (q - 1.0) * e)


def rho_derivatives(code, k, p, q, e):
    """Magnitudes of the a.e. derivative of rho at e (signed input).

    The LS derivative follows the |x| convention used by the weighting
    scheme; the factor-of-two mismatch with rho(x) = x^2 cancels in the
    iteration because only weight ratios matter.
    """
    a = np.abs(e)
    if code == LS:
        return a
    if code == LAD:
        return np.where(a > 0.0, 1.0, 0.0)
    if code == HUBER:
        return np.minimum(a, k)
    if code == LP:
        return np.where(a > 0.0, p * a ** (p - 1.0), 0.0)
    return np.where(e > 0.0, q, np.where(e < 0.0, 1.0 - q, 0.0))


def lqa_weights(code, k, p, q, e, varsigma):
    """Diagonal entries (|e| + varsigma) / max(rho'(|e|), varsigma)."""
    a = np.abs(e)
    d = rho_derivatives(code, k, p, q, e)
    return (a + varsigma) / np.maximum(d, varsigma)


def _lqa_solve(
    yhat,
    w_sqrt,
    w_sqrt_inv,
    z,
    u_y,
    w_code,
    w_k,
    w_p,
    w_q,
    o_code,
    o_k,
    o_p,
    o_q,
    varsigma,
    epsilon,
    omega_max,
    y0,
    extra_d,
):
    """One horizon of the perturbed reweighted-projection iteration.

    Args:
        yhat: base forecast vector (n,).
        w_sqrt, w_sqrt_inv: symmetric square root of W and its inverse.
        z: precomputed ``w_sqrt @ U_t`` of shape (n, m_star).
        u_y: precomputed constraint image of yhat, shape (m_star,).
        w_code..w_q: loss encoding used for the iteration weights.
        o_code..o_q: loss encoding used for the recorded objective.
        extra_d: additive perturbation on the weight diagonal (LAD
            perturbation mode), 0.0 otherwise.

    Returns:
        (y, iterations, converged, objective_trace) where the trace holds the
        objective at the initial point and after every update.
    """
    n = yhat.shape[0]
    y = y0.copy()
    trace = np.empty(omega_max + 1)
    e_std = w_sqrt_inv @ (y - yhat)
    trace[0] = np.sum(rho_values(o_code, o_k, o_p, o_q, e_std))
    iterations = 0
    converged = False
    for omega in range(omega_max):
        d = lqa_weights(w_code, w_k, w_p, w_q, e_std, varsigma) + extra_d
        zd = z * d.reshape(n, 1)
        inner = z.T @ zd
        lam = np.linalg.solve(inner, u_y)
        y_next = yhat - w_sqrt @ (d * (z @ lam))
        diff = np.max(np.abs(y_next - y))
        y = y_next
        iterations = omega + 1
        e_std = w_sqrt_inv @ (y - yhat)
        trace[iterations] = np.sum(rho_values(o_code, o_k, o_p, o_q, e_std))
        if diff < epsilon:
            converged = True
            break
    return y, iterations, converged, trace[: iterations + 1]


if HAS_NUMBA:
    _rho_values_jit = njit(cache=True)(rho_values)
    _rho_derivatives_jit = njit(cache=True)(rho_derivatives)

    @njit(cache=True)
    def _lqa_weights_jit(code, k, p, q, e, varsigma):
        a = np.abs(e)
        d = _rho_derivatives_jit(code, k, p, q, e)
        return (a + varsigma) / np.maximum(d, varsigma)

    @njit(cache=True)
    def _lqa_solve_jit(
        yhat,
        w_sqrt,
        w_sqrt_inv,
        z,
        u_y,
        w_code,
        w_k,
        w_p,
        w_q,
        o_code,
        o_k,
        o_p,
        o_q,
        varsigma,
        epsilon,
        omega_max,
        y0,
        extra_d,
    ):
        n = yhat.shape[0]
        y = y0.copy()
        trace = np.empty(omega_max + 1)
        e_std = w_sqrt_inv @ (y - yhat)
        trace[0] = np.sum(_rho_values_jit(o_code, o_k, o_p, o_q, e_std))
        iterations = 0
        converged = False
        for omega in range(omega_max):
            d = _lqa_weights_jit(w_code, w_k, w_p, w_q, e_std, varsigma) + extra_d
            zd = z * d.reshape(n, 1)
            inner = z.T @ zd
            lam = np.linalg.solve(inner, u_y)
            y_next = yhat - w_sqrt @ (d * (z @ lam))
            diff = np.max(np.abs(y_next - y))
            y = y_next
            iterations = omega + 1
            e_std = w_sqrt_inv @ (y - yhat)
            trace[iterations] = np.sum(_rho_values_jit(o_code, o_k, o_p, o_q, e_std))
            if diff < epsilon:
                converged = True
                break
        return y, iterations, converged, trace[: iterations + 1]


def active_backend(override: str | None = None) -> str:
    """Resolve the kernel backend from an override or ``ROME_BACKEND``."""
    choice = (override or os.environ.get("ROME_BACKEND", "auto")).strip().lower()
    if choice in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if choice == "numba":
        if not HAS_NUMBA:
            raise ValidationError("ROME_BACKEND=numba requested but numba is not installed")
        return "numba"
    if choice == "numpy":
        return "numpy"
    raise ValidationError(f"unknown backend {choice!r}; use 'numba', 'numpy', or 'auto'")


def lqa_solve(*args, backend: str | None = None):
    """Dispatch one reconciliation solve to the selected backend."""
    if active_backend(backend) == "numba":
        return _lqa_solve_jit(*args)
    return _lqa_solve(*args)
