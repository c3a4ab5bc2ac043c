"""Base-forecast error covariance: the one-step estimate and its designs.

The one-step moment matrix is uncentered (divisor T, no mean subtraction)
and all five designs derive from it: identity scaling, its diagonal, the
structural row sums of S, the full matrix, and a correlation-shrunk blend
whose intensity comes from the scale- and location-invariant estimator of
pairwise correlation variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .hierarchy import Hierarchy

DESIGNS = ("ols", "wlsv", "wlss", "sample", "shrink")

# relative eigenvalue floor below which a matrix is treated as indefinite
EIGEN_FLOOR_SCALE = 1e-10


@dataclass(frozen=True)
class ResidualPanel:
    """In-sample one-step base forecast residuals, series by time."""

    residuals: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=np.float64)
        if r.ndim != 2:
            raise ValidationError("residual panel must be 2-D (series x time)")
        if r.shape[1] < 2:
            raise ValidationError("residual panel needs at least two time points")
        if not np.all(np.isfinite(r)):
            raise ValidationError("residual panel contains non-finite entries")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "residuals", r)

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    @property
    def T(self) -> int:
        return self.residuals.shape[1]


@dataclass(frozen=True)
class CovarianceDesign:
    kind: str
    shrink_lambda: float | None = None
    k_h: float = 1.0

    def __post_init__(self):
        if self.kind not in DESIGNS:
            raise ValidationError(
                f"unknown covariance design {self.kind!r}; use one of {DESIGNS}"
            )
        if self.shrink_lambda is not None and not (0.0 <= self.shrink_lambda <= 1.0):
            raise ValidationError("shrink lambda must lie in [0, 1]")
        if self.k_h <= 0:
            raise ValidationError("k_h must be positive")

    @property
    def needs_residuals(self) -> bool:
        return self.kind in ("wlsv", "sample", "shrink")


@dataclass(frozen=True)
class CovMatrix:
    """A positive-definite W with its symmetric square root and inverse root."""

    W: np.ndarray
    W_sqrt: np.ndarray
    W_sqrt_inv: np.ndarray

    def __post_init__(self):
        for name in ("W", "W_sqrt", "W_sqrt_inv"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def estimate_W1(panel: ResidualPanel) -> np.ndarray:
    """Uncentered second-moment matrix of the residuals, divisor T."""
    r = panel.residuals
    return (r @ r.T) / panel.T


def matrix_sqrt(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric PSD square root and inverse root via eigendecomposition.

    Raises:
        NumericError: an eigenvalue falls below the positive-definiteness
            floor ``EIGEN_FLOOR_SCALE * max(largest eigenvalue, 1)``.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValidationError("matrix_sqrt expects a square matrix")
    if np.max(np.abs(W - W.T)) > 1e-12 * max(1.0, np.max(np.abs(W))):
        raise ValidationError("matrix_sqrt expects a symmetric matrix")
    evals, evecs = np.linalg.eigh(W)
    floor = EIGEN_FLOOR_SCALE * max(float(evals[-1]), 1.0)
    if evals[0] < floor:
        raise NumericError(
            f"matrix is not positive definite: eigenvalue {evals[0]:.3e} "
            f"below floor {floor:.3e}"
        )
    root = (evecs * np.sqrt(evals)) @ evecs.T
    inv_root = (evecs / np.sqrt(evals)) @ evecs.T
    return root, inv_root


def shrinkage_lambda(panel: ResidualPanel) -> float:
    """Shrinkage intensity from pairwise correlation variances.

    Computes lambda = sum_{i!=j} Var(r_ij) / sum_{i!=j} r_ij^2 on the
    uncentered correlations of the panel, clamped to [0, 1].
    """
    if panel.T < 3:
        raise ValidationError("shrinkage estimation needs at least three time points")
    x = panel.residuals.T  # (T, n)
    T = panel.T
    second = (x.T @ x) / T
    scale = np.sqrt(np.diag(second))
    if np.any(scale <= 0):
        dead = int(np.flatnonzero(scale <= 0)[0])
        raise ValidationError(
            f"degenerate correlation: series index {dead} has zero variance"
        )
    xs = x / scale
    corr = second / np.outer(scale, scale)
    cross = xs.T @ xs
    var_r = (1.0 / (T * (T - 1))) * ((xs**2).T @ (xs**2) - cross**2 / T)
    off = ~np.eye(panel.n, dtype=bool)
    denom = float(np.sum(corr[off] ** 2))
    if denom == 0.0:
        return 1.0
    lam = float(np.sum(var_r[off])) / denom
    return float(min(max(lam, 0.0), 1.0))


def realize_design(
    design: CovarianceDesign,
    panel: ResidualPanel | None,
    h: Hierarchy,
) -> CovMatrix:
    """Build W per design with k_h applied, plus its square roots.

    ``panel`` may be None for the ols and wlss designs, which do not touch
    the residuals.
    """
    if design.needs_residuals and panel is None:
        raise ValidationError(
            f"covariance design {design.kind!r} requires a residual panel"
        )
    if panel is not None and panel.n != h.n:
        raise ValidationError(
            f"residual panel has {panel.n} series but the hierarchy has {h.n}"
        )

    if design.kind == "ols":
        W = np.eye(h.n)
    elif design.kind == "wlss":
        W = np.diag(h.S @ np.ones(h.n_b))
    elif design.kind == "wlsv":
        W = np.diag(np.diag(estimate_W1(panel)))
    elif design.kind == "sample":
        W = estimate_W1(panel)
    else:  # shrink
        W1 = estimate_W1(panel)
        lam = design.shrink_lambda
        if lam is None:
            lam = shrinkage_lambda(panel)
        W = lam * np.diag(np.diag(W1)) + (1.0 - lam) * W1

    W = design.k_h * W
    try:
        root, inv_root = matrix_sqrt(W)
    except NumericError as exc:
        raise NumericError(f"{design.kind} design: {exc}") from exc
    return CovMatrix(W=W, W_sqrt=root, W_sqrt_inv=inv_root)
