"""Error metrics, per-split evaluation reports and cross-model comparison."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError


def _abs_errors(preds, labels) -> np.ndarray:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise InvalidInputError("need at least one prediction")
    return np.abs(p - y)


def mae(preds, labels) -> float:
    return float(np.mean(_abs_errors(preds, labels)))


def medae(preds, labels) -> float:
    """Median absolute error; even counts take the midpoint of the two central values."""
    return float(np.median(_abs_errors(preds, labels)))


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class MetricsReport:
    model_name: str
    split: Split
    mae: float
    medae: float
    mean_area_ratio: float
    feasibility_rate: float
    n_samples: int
    pooling: str = "per_node"

    def __post_init__(self):
        object.__setattr__(self, "split", Split(self.split))
        if self.mae < 0 or self.medae < 0:
            raise InvalidInputError("errors must be nonnegative")
        if not 0.0 <= self.feasibility_rate <= 1.0:
            raise InvalidInputError("feasibility_rate must lie in [0, 1]")

    def to_json(self) -> dict:
        d = asdict(self)
        d["split"] = self.split.value
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(**obj)


@dataclass(frozen=True)
class ComparisonRow:
    rank: int
    model_name: str
    mae: float
    medae: float
    mae_reduction_vs_worst_pct: float
    medae_reduction_vs_worst_pct: float


def relative_reduction(better: float, reference: float) -> float:
    """Percentage by which ``better`` lies below ``reference``."""
    if reference == 0:
        return 0.0
    return 100.0 * (reference - better) / reference


def compare(reports: list[MetricsReport]) -> list[ComparisonRow]:
    """Rank reports by MAE (ascending); reductions are relative to the worst model."""
    if len(reports) < 2:
        raise InvalidInputError("compare needs at least two reports")
    splits = {r.split for r in reports}
    if len(splits) != 1:
        raise InvalidInputError(f"reports come from different splits: {sorted(s.value for s in splits)}")
    ordered = sorted(reports, key=lambda r: (r.mae, r.medae, r.model_name))
    worst = ordered[-1]
    return [
        ComparisonRow(
            rank=i + 1,
            model_name=r.model_name,
            mae=r.mae,
            medae=r.medae,
            mae_reduction_vs_worst_pct=relative_reduction(r.mae, worst.mae),
            medae_reduction_vs_worst_pct=relative_reduction(r.medae, worst.medae),
        )
        for i, r in enumerate(ordered)
    ]
