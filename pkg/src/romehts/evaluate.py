"""Accuracy metrics: grouped RMSE over horizon windows and relative change."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class EvalWindow:
    """A series group and the 1..horizons forecast window it is scored on."""

    group: np.ndarray
    horizons: int

    def __post_init__(self):
        g = np.asarray(self.group, dtype=np.int64)
        if g.size == 0:
            raise ValidationError("evaluation group must be nonempty")
        object.__setattr__(self, "group", g)
        if self.horizons < 1:
            raise ValidationError("window must cover at least one horizon")


def rmse(forecasts: np.ndarray, actuals: np.ndarray, window: EvalWindow) -> float:
    """Root mean square error over the window, all cells weighted equally."""
    forecasts = np.asarray(forecasts, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if forecasts.shape != actuals.shape:
        raise ValidationError("forecasts and actuals must have the same shape")
    if window.horizons > forecasts.shape[1]:
        raise ValidationError(
            f"window covers {window.horizons} horizons but only "
            f"{forecasts.shape[1]} are available"
        )
    err = actuals[window.group, : window.horizons] - forecasts[window.group, : window.horizons]
    return float(np.sqrt(np.mean(err * err)))


def pct_change(rmse_method: float, rmse_base: float) -> float:
    """Percentage change of a method's RMSE relative to the base forecasts.

    Negative values mean the method reduced the error.
    """
    if rmse_base <= 0:
        raise ValidationError("base RMSE must be positive for a percentage change")
    return (rmse_method - rmse_base) / rmse_base * 100.0
