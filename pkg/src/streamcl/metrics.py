"""Fitting error, prediction error and forgetting ratio."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .nn import mse


def fitting_error(predictions, targets) -> float:
    """MSE over every sample seen before evaluation (warm-up plus update phase)."""
    return mse(predictions, targets)


def prediction_error(predictions, targets) -> float:
    """MSE over the held-out evaluation phase."""
    return mse(predictions, targets)


def forgetting_ratio(l1: float, l2: float) -> float:
    """Relative increase of the warm-up loss: ``max(0, l2 - l1) / l1``."""
    if not l1 > 0:
        raise ValueError(f"warm-up loss must be positive, got {l1}")
    return max(0.0, l2 - l1) / l1


def window_means(errors, window: int = 1000) -> list[float]:
    """Mean per-sample error over consecutive windows; a short tail forms its own window."""
    errors = np.asarray(errors, dtype=np.float64)
    return [float(errors[i:i + window].mean()) for i in range(0, errors.shape[0], window)]


@dataclass
class MetricsRecord:
    """Evaluation results of one run; fields that do not apply stay ``None``.

    ``*_ae`` fields refer to the autoencoder (reconstruction), ``*_pred`` to the
    predictor. Forgetting ratios are only set for instances that update.
    """

    fitting_error_ae: float
    prediction_error_ae: float
    fitting_error_pred: Optional[float] = None
    prediction_error_pred: Optional[float] = None
    forgetting_ratio_ae: Optional[float] = None
    forgetting_ratio_pred: Optional[float] = None
    update_count_ae: int = 0
    update_count_pred: Optional[int] = None
    l_warmup_1_ae: Optional[float] = None
    l_warmup_2_ae: Optional[float] = None
    l_warmup_1_pred: Optional[float] = None
    l_warmup_2_pred: Optional[float] = None

    @property
    def fitting_error(self) -> float:
        return self.fitting_error_ae if self.fitting_error_pred is None else self.fitting_error_pred

    @property
    def prediction_error(self) -> float:
        if self.prediction_error_pred is None:
            return self.prediction_error_ae
        return self.prediction_error_pred

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRecord":
        return cls(**d)
