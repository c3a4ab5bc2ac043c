"""Convex loss catalog and the diagonal weights used by the solver.

Losses are symmetric functions of the deviation magnitude except for the
quantile loss, whose slope depends on the deviation sign. The LS pair
follows the convention rho(x) = x^2 with rho'(x) = |x|; the missing factor
of two is deliberate and cancels wherever the derivative is used, because
the iteration depends only on weight ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import ValidationError

KINDS = ("ls", "lad", "huber", "lp", "quantile")
_CODES = {"ls": _kernels.LS, "lad": _kernels.LAD, "huber": _kernels.HUBER,
          "lp": _kernels.LP, "quantile": _kernels.QUANTILE}

HUBER_K_FACTOR = 1.345
LAD_HUBER_K_FACTOR = 1e-4


@dataclass(frozen=True)
class LossSpec:
    """Which loss to minimize and the parameters that realize it.

    ``sigma_hat`` is the pooled standard deviation of the in-sample base
    forecast residuals; it sets the scale for the default Huber threshold
    (1.345 * sigma_hat) and for the tiny-threshold Huber that realizes LAD
    (1e-4 * sigma_hat).
    """

    kind: str
    k: float | None = None
    p: float | None = None
    q: float | None = None
    sigma_hat: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown loss kind {self.kind!r}; use one of {KINDS}")
        if self.kind == "huber":
            if self.k is not None and self.k <= 0:
                raise ValidationError("huber k must be positive")
            if self.k is None and self.sigma_hat is None:
                raise ValidationError(
                    "huber loss needs an explicit k or sigma_hat to derive it"
                )
        if self.kind == "lp":
            if self.p is None or not (1.0 <= self.p <= 2.0):
                raise ValidationError("lp exponent p must lie in [1, 2]")
        if self.kind == "quantile":
            if self.q is None or not (0.0 < self.q < 1.0):
                raise ValidationError("quantile q must lie in (0, 1)")
        if self.sigma_hat is not None and self.sigma_hat <= 0:
            raise ValidationError("sigma_hat must be positive")

    @property
    def huber_k(self) -> float:
        """Resolved Huber threshold (explicit k or the sigma_hat default)."""
        if self.kind != "huber":
            raise ValidationError("huber_k is only defined for huber losses")
        if self.k is not None:
            return float(self.k)
        return HUBER_K_FACTOR * float(self.sigma_hat)

    def lad_as_huber(self) -> "LossSpec":
        """Tiny-threshold Huber spec realizing LAD iteration weights."""
        if self.kind != "lad":
            raise ValidationError("lad_as_huber applies to lad specs only")
        if self.sigma_hat is None:
            raise ValidationError("lad loss needs sigma_hat for its huber realization")
        return replace(self, kind="huber", k=LAD_HUBER_K_FACTOR * float(self.sigma_hat))

    def encode(self) -> tuple[int, float, float, float]:
        """(code, k, p, q) tuple consumed by the numeric kernels."""
        k = self.huber_k if self.kind == "huber" else 0.0
        return (
            _CODES[self.kind],
            float(k),
            float(self.p) if self.p is not None else 0.0,
            float(self.q) if self.q is not None else 0.0,
        )


def loss_value(spec: LossSpec, x):
    """rho(|x|); accepts scalars or arrays, signed input allowed."""
    code, k, p, q = spec.encode()
    out = _kernels.rho_values(code, k, p, q, np.asarray(x, dtype=np.float64))
    return float(out) if np.isscalar(x) else out


def loss_derivative(spec: LossSpec, x):
    """Magnitude of the a.e. derivative rho'(|x|).

    For the asymmetric quantile loss the slope depends on the sign of x, so
    pass the signed deviation when it is available.
    """
    code, k, p, q = spec.encode()
    out = _kernels.rho_derivatives(code, k, p, q, np.asarray(x, dtype=np.float64))
    return float(out) if np.isscalar(x) else out


def lqa_weight(spec: LossSpec, e, varsigma: float):
    """Perturbed weight (|e| + varsigma) / max(rho'(|e|), varsigma).

    Strictly positive and finite for every deviation, including e = 0 where
    the guard makes the weight exactly 1 for losses with vanishing
    derivative at the origin.
    """
    if varsigma <= 0:
        raise ValidationError("varsigma must be positive")
    code, k, p, q = spec.encode()
    out = _kernels.lqa_weights(code, k, p, q, np.asarray(e, dtype=np.float64), varsigma)
    return float(out) if np.isscalar(e) else out


def pooled_sigma(residuals: np.ndarray) -> float:
    """Pooled residual scale sqrt(mean(residual^2)) across all series."""
    residuals = np.asarray(residuals, dtype=np.float64)
    if residuals.size == 0:
        raise ValidationError("cannot pool an empty residual panel")
    if not np.all(np.isfinite(residuals)):
        raise ValidationError("residuals contain non-finite entries")
    value = float(np.sqrt(np.mean(residuals**2)))
    if value <= 0:
        raise ValidationError("residuals are identically zero; no scale available")
    return value
