"""Coherent forecast construction: bottom-up, closed-form, and robust.

The closed-form path projects base forecasts onto the coherent subspace
under a fixed covariance; the robust path re-solves that projection with
deviation-dependent diagonal weights until the iterates stabilize, which
minimizes a general convex loss of the standardized deviations subject to
the aggregation constraints. Horizons are reconciled independently with the
same covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .covariance import CovMatrix, ResidualPanel
from .errors import NumericError, ValidationError
from .hierarchy import Hierarchy
from .loss import LossSpec

# additive diagonal perturbation for the LAD perturbation mode
LAD_PERTURBATION = 1e-8

LAD_MODES = ("huber_approx", "perturbation")


@dataclass(frozen=True)
class BaseForecastSet:
    """Base forecasts (series x horizon) plus optional in-sample residuals."""

    yhat: np.ndarray
    residuals: ResidualPanel | None = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.yhat, dtype=np.float64)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if y.ndim != 2:
            raise ValidationError("base forecasts must be a (series x horizon) matrix")
        if not np.all(np.isfinite(y)):
            raise ValidationError("base forecasts contain non-finite entries")
        y.setflags(write=False)
        object.__setattr__(self, "yhat", y)
        if self.residuals is not None and self.residuals.n != y.shape[0]:
            raise ValidationError(
                "residual panel and forecast matrix disagree on the series count"
            )

    @property
    def n(self) -> int:
        return self.yhat.shape[0]

    @property
    def H(self) -> int:
        return self.yhat.shape[1]


@dataclass(frozen=True)
class ReconcilerConfig:
    """Solver controls: perturbation, stopping rule, and LAD realization."""

    varsigma: float = 1e-8
    epsilon: float = 1e-4
    omega_max: int = 1000
    init: np.ndarray | None = None
    lad_mode: str = "huber_approx"

    def __post_init__(self):
        if self.varsigma <= 0:
            raise ValidationError("varsigma must be positive")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.omega_max < 1:
            raise ValidationError("omega_max must be at least 1")
        if self.lad_mode not in LAD_MODES:
            raise ValidationError(f"lad_mode must be one of {LAD_MODES}")


@dataclass
class ReconcileResult:
    """Reconciled forecasts with per-horizon solver diagnostics."""

    ytilde: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    objective: np.ndarray
    gmatrix: np.ndarray | None = None
    objective_trace: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def H(self) -> int:
        return self.ytilde.shape[1]


def _check_dims(yhat: BaseForecastSet, h: Hierarchy):
    if yhat.n != h.n:
        raise ValidationError(
            f"forecast matrix has {yhat.n} series but the hierarchy has {h.n}"
        )


def reconcile_bottom_up(yhat: BaseForecastSet, h: Hierarchy) -> ReconcileResult:
    """Keep the bottom forecasts and sum them upward: ytilde = S J yhat."""
    _check_dims(yhat, h)
    ytilde = h.S @ (h.J @ yhat.yhat)
    H = yhat.H
    return ReconcileResult(
        ytilde=ytilde,
        iterations=np.ones(H, dtype=np.int64),
        converged=np.ones(H, dtype=bool),
        objective=np.full(H, np.nan),
        gmatrix=h.J.copy(),
    )


def mint_gmatrix(h: Hierarchy, W: CovMatrix) -> np.ndarray:
    """Closed-form reconciliation matrix ``J - J W U (U' W U)^-1 U'``."""
    Ut = h.U  # (m_star, n); the formula's U is its transpose
    WU = W.W @ Ut.T
    inner = Ut @ WU
    try:
        coef = np.linalg.solve(inner, Ut)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "constraint-weighted matrix U' W U is singular; "
            "the covariance design does not separate the constraints"
        ) from exc
    return h.J - (h.J @ WU) @ coef


def reconcile_mint(yhat: BaseForecastSet, h: Hierarchy, W: CovMatrix) -> ReconcileResult:
    """Project base forecasts onto the coherent subspace under W."""
    _check_dims(yhat, h)
    G = mint_gmatrix(h, W)
    ytilde = h.S @ (G @ yhat.yhat)
    dev = W.W_sqrt_inv @ (ytilde - yhat.yhat)
    H = yhat.H
    return ReconcileResult(
        ytilde=ytilde,
        iterations=np.ones(H, dtype=np.int64),
        converged=np.ones(H, dtype=bool),
        objective=np.sum(dev * dev, axis=0),
        gmatrix=G,
    )


def _weighting_spec(loss: LossSpec, cfg: ReconcilerConfig) -> tuple[LossSpec, float]:
    """Loss used for iteration weights plus the additive diagonal term."""
    if loss.kind == "lad":
        if cfg.lad_mode == "huber_approx":
            return loss.lad_as_huber(), 0.0
        return loss, LAD_PERTURBATION
    return loss, 0.0


def _resolve_init(cfg: ReconcilerConfig, h: Hierarchy, H: int) -> np.ndarray:
    if cfg.init is None:
        return np.zeros((h.n, H))
    init = np.asarray(cfg.init, dtype=np.float64)
    if init.ndim == 1:
        init = np.repeat(init.reshape(-1, 1), H, axis=1)
    if init.shape != (h.n, H):
        raise ValidationError(f"init must have shape ({h.n},) or ({h.n}, {H})")
    for col in range(H):
        tol = 1e-8 * (1.0 + float(np.max(np.abs(init[:, col]))))
        if h.coherence_residual(init[:, col]) > tol:
            raise ValidationError("init vector violates the aggregation constraints")
    return init


def reconcile_rome(
    yhat: BaseForecastSet,
    h: Hierarchy,
    W: CovMatrix,
    loss: LossSpec,
    cfg: ReconcilerConfig | None = None,
    backend: str | None = None,
) -> ReconcileResult:
    """Robust reconciliation by the perturbed reweighted projection.

    Each horizon independently iterates

        y_next = (I - M U ((U' M U)^-1) U') yhat,  M = W^1/2 D W^1/2,

    with D the perturbed diagonal weights of the standardized deviations
    W^-1/2 (y - yhat), stopping once the max iterate change drops below
    ``cfg.epsilon`` or ``cfg.omega_max`` updates have run. Exhausting the
    iteration budget is reported via ``converged``, not raised.
    """
    _check_dims(yhat, h)
    cfg = cfg or ReconcilerConfig()
    w_spec, extra_d = _weighting_spec(loss, cfg)
    w_code, w_k, w_p, w_q = w_spec.encode()
    o_code, o_k, o_p, o_q = loss.encode()

    H = yhat.H
    init = _resolve_init(cfg, h, H)
    Ut = np.ascontiguousarray(h.U)
    z = np.ascontiguousarray(W.W_sqrt @ Ut.T)
    ytilde = np.empty((h.n, H))
    iterations = np.empty(H, dtype=np.int64)
    converged = np.empty(H, dtype=bool)
    objective = np.empty(H)
    traces: list[np.ndarray] = []
    d_last = None
    for col in range(H):
        y_col = np.ascontiguousarray(yhat.yhat[:, col])
        u_y = np.ascontiguousarray(Ut @ y_col)
        try:
            y, iters, conv, trace = _kernels.lqa_solve(
                y_col,
                W.W_sqrt,
                W.W_sqrt_inv,
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
                cfg.varsigma,
                cfg.epsilon,
                cfg.omega_max,
                np.ascontiguousarray(init[:, col]),
                extra_d,
                backend=backend,
            )
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"inner matrix U' W^1/2 D W^1/2 U became singular at horizon {col + 1}"
            ) from exc
        ytilde[:, col] = y
        iterations[col] = iters
        converged[col] = conv
        objective[col] = trace[-1]
        traces.append(np.asarray(trace))
        if H == 1:
            e_std = W.W_sqrt_inv @ (y - y_col)
            d_last = _kernels.lqa_weights(w_code, w_k, w_p, w_q, e_std, cfg.varsigma) + extra_d

    gmatrix = None
    if d_last is not None:
        M = (W.W_sqrt * d_last) @ W.W_sqrt
        MU = M @ Ut.T
        try:
            gmatrix = h.J - (h.J @ MU) @ np.linalg.solve(Ut @ MU, Ut)
        except np.linalg.LinAlgError as exc:
            raise NumericError("final weighted constraint matrix is singular") from exc

    return ReconcileResult(
        ytilde=ytilde,
        iterations=iterations,
        converged=converged,
        objective=objective,
        gmatrix=gmatrix,
        objective_trace=traces,
    )


def rome_gmatrix_step(
    h: Hierarchy,
    W: CovMatrix,
    loss: LossSpec,
    G_prev: np.ndarray,
    base_errors: np.ndarray,
    varsigma: float = 1e-8,
) -> np.ndarray:
    """One reweighted trace-minimization update of the G matrix.

    Weights come from the implied reconciled errors ``S G_prev base_errors``
    as ``rho'(|e|) / |e|`` with the same perturbation guard as the main
    solver, and the update keeps the unbiasedness constraint ``G S = I`` by
    construction. Under the LS loss the weights collapse to ones and the
    update returns the closed-form projection regardless of ``G_prev``.
    """
    base_errors = np.asarray(base_errors, dtype=np.float64)
    if base_errors.shape != (h.n,):
        raise ValidationError(f"base_errors must be a vector of length {h.n}")
    code, k, p, q = loss.encode()
    e = h.S @ (np.asarray(G_prev) @ base_errors)
    num = np.maximum(_kernels.rho_derivatives(code, k, p, q, e), varsigma)
    omega = num / (np.abs(e) + varsigma)
    w_half = np.sqrt(omega)
    Wt = w_half[:, None] * W.W * w_half[None, :]  # Omega^1/2 W Omega^1/2
    try:
        X = np.linalg.solve(Wt, h.S)
        G = np.linalg.solve(h.S.T @ X, X.T)
    except np.linalg.LinAlgError as exc:
        raise NumericError("reweighted trace system S' W^-1 S is singular") from exc
    return G


def combine_forecasts(
    y_ls: ReconcileResult,
    y_lad: ReconcileResult,
    pattern: str,
    H: int | None = None,
) -> ReconcileResult:
    """Blend two coherent reconciliations with horizon-indexed weights.

    Patterns (h is 1-based): ``average`` uses 1/2 each; ``oneway`` puts
    1/(h+1) on the first input; ``twoway`` puts (H+1-h)/(H+1) on it. Convex
    combinations of coherent vectors stay coherent.
    """
    if y_ls.ytilde.shape != y_lad.ytilde.shape:
        raise ValidationError("combination inputs must have identical shapes")
    H = H if H is not None else y_ls.H
    if H != y_ls.H:
        raise ValidationError("H disagrees with the inputs' horizon count")
    pi_ls = combination_weights(pattern, H)
    ytilde = y_ls.ytilde * pi_ls + y_lad.ytilde * (1.0 - pi_ls)
    return ReconcileResult(
        ytilde=ytilde,
        iterations=np.maximum(y_ls.iterations, y_lad.iterations),
        converged=y_ls.converged & y_lad.converged,
        objective=np.full(H, np.nan),
    )


def combination_weights(pattern: str, H: int) -> np.ndarray:
    """First-input weights per horizon for a combination pattern."""
    hs = np.arange(1, H + 1, dtype=np.float64)
    pattern = pattern.lower()
    if pattern == "average":
        return np.full(H, 0.5)
    if pattern == "oneway":
        return 1.0 / (hs + 1.0)
    if pattern == "twoway":
        return (H + 1.0 - hs) / (H + 1.0)
    raise ValidationError("pattern must be 'average', 'oneway', or 'twoway'")
