"""Domain-gap measures: inter-class variance and indefinable boundaries.

ICV summarizes how similar a dataset's class-name embeddings are to each
other: the mean of the full similarity matrix F.F^T scaled by 1/(N^2 D).
Lower means finer-grained classes. It is undefined for a single class.

IB is a survey statistic: percentages of raters calling foreground/background
separation slight, moderate, or significant, collapsed with weights 0/2/6
into a [0, 6] score. Both scores discretize into three named levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ICV_LOW = 0.112
ICV_HIGH = 0.190

ICV_LEVELS = ("small", "medium", "large")
IB_LEVELS = ("slight", "moderate", "significant")


def icv(text_features: np.ndarray) -> float | None:
    """Mean of F.F^T over N^2 D, on the features exactly as given. None for N < 2."""
    f = np.asarray(text_features, dtype=np.float64)
    if f.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {f.shape}")
    n, d = f.shape
    if n < 2:
        return None
    return float((f @ f.T).sum() / (n * n * d))


def icv_level(value: float, low: float = ICV_LOW, high: float = ICV_HIGH) -> str:
    """Equal thirds of [low, high], boundary values falling to the lower level;
    values outside the range clamp to the nearest extreme."""
    if not low < high:
        raise ValidationError(f"need low < high, got {low} and {high}")
    step = (high - low) / 3.0
    if value <= low + step:
        return "small"
    if value <= low + 2.0 * step:
        return "medium"
    return "large"


def ib_score(p_slight: float, p_moderate: float, p_significant: float) -> float:
    """Weighted survey percentages, weights 0 / 2 / 6."""
    for p in (p_slight, p_moderate, p_significant):
        if p < 0:
            raise ValidationError(f"percentage {p} is negative")
    total = p_slight + p_moderate + p_significant
    if abs(total - 1.0) > 1e-6:
        raise ValidationError(f"percentages sum to {total}, expected 1")
    return 0.0 * p_slight + 2.0 * p_moderate + 6.0 * p_significant


def ib_level(value: float) -> str:
    """[0,2) slight, [2,4) moderate, [4,6] significant."""
    if not (0.0 <= value <= 6.0):
        raise ValidationError(f"IB score {value} outside [0, 6]")
    if value < 2.0:
        return "slight"
    if value < 4.0:
        return "moderate"
    return "significant"


@dataclass
class DomainGapReport:
    dataset_id: str
    icv_value: float | None = None
    icv_level: str | None = None
    ib_value: float | None = None
    ib_level: str | None = None

    def as_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "icv_value": self.icv_value,
            "icv_level": self.icv_level,
            "ib_value": self.ib_value,
            "ib_level": self.ib_level,
        }


def icv_report(dataset_id: str, text_features: np.ndarray) -> DomainGapReport:
    value = icv(text_features)
    return DomainGapReport(
        dataset_id=dataset_id,
        icv_value=value,
        icv_level=None if value is None else icv_level(value),
    )


def ib_report(dataset_id: str, p_slight: float, p_moderate: float, p_significant: float) -> DomainGapReport:
    value = ib_score(p_slight, p_moderate, p_significant)
    return DomainGapReport(dataset_id=dataset_id, ib_value=value, ib_level=ib_level(value))
