"""Coefficient of determination and tabular result exports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data_io import _write_csv, fmt_float
from .errors import EmptyInput, LengthMismatch, ValidationError, ZeroVariance


def r_squared(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """1 - SS_res/SS_tot with the mean taken over the evaluated actuals.

    Unbounded below: predictions can be arbitrarily worse than the mean
    baseline, so negative values are legitimate and reported as-is.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise LengthMismatch(f"actual has {a.size} values, predicted has {p.size}")
    if a.size < 2:
        raise ZeroVariance("need at least 2 evaluated values")
    total = a - a.mean()
    ss_tot = float(total @ total)
    if ss_tot <= 0.0:
        raise ZeroVariance("actuals are constant on the evaluated set")
    resid = a - p
    return 1.0 - float(resid @ resid) / ss_tot


@dataclass
class EvalReport:
    """Per-task, per-variable result with its provenance."""

    task: str
    variable: str
    model: str
    seed: int
    per_fold_r2: list[float]
    filter_threshold: int | None = None
    lambda_: float | None = None
    test_r2: float | None = None
    n_train: int = 0
    n_test: int = 0
    runtime_s: float = 0.0

    VALID_TASKS = ("imputation", "extrapolation_states", "extrapolation_pair", "superres", "ablation")

    def validate(self) -> None:
        if self.task not in self.VALID_TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        for r2 in list(self.per_fold_r2) + ([self.test_r2] if self.test_r2 is not None else []):
            if r2 > 1.0 + 1e-9:
                raise ValidationError(f"R^2 {r2} exceeds 1")
        if self.n_train < 0 or self.n_test < 0:
            raise ValidationError("negative sample counts")


def export_scatter(
    actual: Sequence[float],
    predicted: Sequence[float],
    region_ids: Sequence[str],
    path,
) -> None:
    """``region_id,actual,predicted`` rows in ascending region order."""
    if len(actual) == 0:
        raise EmptyInput("nothing to export")
    if not (len(actual) == len(predicted) == len(region_ids)):
        raise LengthMismatch("scatter columns differ in length")
    order = sorted(range(len(region_ids)), key=lambda i: region_ids[i])
    rows = [
        (region_ids[i], fmt_float(actual[i]), fmt_float(predicted[i]))
        for i in order
    ]
    _write_csv(path, "region_id,actual,predicted", rows)


def export_choropleth(values: Mapping[str, float], path) -> None:
    """``region_id,value`` rows sorted by region id."""
    if not values:
        raise EmptyInput("nothing to export")
    rows = [(r, fmt_float(values[r])) for r in sorted(values)]
    _write_csv(path, "region_id,value", rows)
