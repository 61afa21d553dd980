"""The three predictors: ridge regression, inverse distance weighting,
and hierarchical median imputation.

Ridge standardizes features per-column with training statistics and leaves
the intercept unpenalized, so the regularization grid is scale-free.
Tuning sweeps a lambda grid with one eigendecomposition per fold, which
makes a 13-point sweep barely more expensive than a single fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AllFoldsDegenerate,
    DegenerateData,
    NoLabels,
    NonFiniteInput,
    NoSites,
    UnknownRegion,
)
from .spatial import RegionHierarchy, haversine_km

#: "lightly tuned" regularization: 13 log-spaced points over 1e-3..1e3.
LAMBDA_GRID_DEFAULT = tuple(float(x) for x in np.logspace(-3.0, 3.0, 13))

_ZERO_VAR_TOL = 1e-12


# --- ridge ---------------------------------------------------------------------


@dataclass
class RidgeModel:
    """Affine predictor on standardized features."""

    weights: np.ndarray
    intercept: float
    lambda_: float
    feature_means: np.ndarray
    feature_scales: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = (X - self.feature_means) / self.feature_scales
        return Z @ self.weights + self.intercept


def _check_inputs(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DegenerateData("X must be 2-D with at least one column")
    if X.shape[0] != y.shape[0]:
        raise DegenerateData("X and y row counts differ")
    if X.shape[0] < 2:
        raise DegenerateData("need at least 2 samples")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise NonFiniteInput("X or y contains NaN/inf")
    return X, y


def _standardize(X: np.ndarray):
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    zero_var = stds <= _ZERO_VAR_TOL
    scales = np.where(zero_var, 1.0, stds)
    return means, scales, zero_var


def _solve_penalized(G: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Solve (G + lam*I) w = b; lam = 0 falls back to a pseudo-inverse."""
    d = G.shape[0]
    if lam > 0:
        try:
            return np.linalg.solve(G + lam * np.eye(d), b)
        except np.linalg.LinAlgError:
            pass
    evals, Q = np.linalg.eigh(G)
    shifted = evals + lam
    tol = max(evals.max(), 0.0) * 1e-12
    inv = np.where(shifted > tol, 1.0 / np.where(shifted > tol, shifted, 1.0), 0.0)
    return Q @ (inv * (Q.T @ b))


def ridge_fit(X, y, lambda_: float) -> RidgeModel:
    """Closed-form ridge on standardized features, unpenalized intercept.

    Zero-variance columns get scale 1 and weight forced to 0 (median-filled
    regions can create constant columns in small folds).
    """
    if lambda_ < 0:
        raise DegenerateData("lambda must be >= 0")
    X, y = _check_inputs(X, y)
    means, scales, zero_var = _standardize(X)
    Z = (X - means) / scales
    y_mean = float(y.mean())
    G = Z.T @ Z
    b = Z.T @ (y - y_mean)
    w = _solve_penalized(G, b, lambda_)
    w[zero_var] = 0.0
    return RidgeModel(
        weights=w, intercept=y_mean, lambda_=float(lambda_),
        feature_means=means, feature_scales=scales,
    )


def _r2(actual: np.ndarray, predicted: np.ndarray) -> float:
    resid = actual - predicted
    total = actual - actual.mean()
    return 1.0 - float(resid @ resid) / float(total @ total)


@dataclass
class TuneResult:
    """Outcome of a lambda sweep: the winner, its refit model, and the
    per-fold validation metrics/predictions at the winning lambda."""

    lambda_star: float
    model: RidgeModel
    mean_r2: dict[float, float]
    fold_r2: list[float] = field(default_factory=list)
    fold_predictions: dict[int, np.ndarray] = field(default_factory=dict)
    fold_ids: list[int] = field(default_factory=list)


def ridge_tune(X, y, fold_of_row: Sequence[int], grid: Sequence[float]) -> TuneResult:
    """Pick the grid lambda maximizing mean validation R-squared across folds.

    Ties break toward the smaller lambda; the returned model is refit on
    all provided rows with the winner. A fold is usable when both sides
    have at least 2 rows and the validation actuals have variance; if no
    fold is usable the sweep cannot score anything.
    """
    if not grid:
        raise DegenerateData("lambda grid is empty")
    grid = sorted(float(g) for g in grid)
    X, y = _check_inputs(X, y)
    fold_of_row = np.asarray(fold_of_row)
    folds = sorted(set(fold_of_row.tolist()))
    if len(folds) < 2:
        raise DegenerateData("need at least 2 folds for tuning")

    usable: list[int] = []
    for f in folds:
        va = fold_of_row == f
        tr = ~va
        if va.sum() >= 2 and tr.sum() >= 2 and np.std(y[va]) > 0:
            usable.append(f)
    if not usable:
        raise AllFoldsDegenerate("no usable tuning fold")

    r2_by_lambda = {lam: [] for lam in grid}
    preds_by_fold: dict[int, dict[float, np.ndarray]] = {}
    for f in usable:
        va = fold_of_row == f
        tr = ~va
        means, scales, zero_var = _standardize(X[tr])
        Z = (X[tr] - means) / scales
        y_mean = float(y[tr].mean())
        G = Z.T @ Z
        b = Z.T @ (y[tr] - y_mean)
        evals, Q = np.linalg.eigh(G)
        Qb = Q.T @ b
        Zv = (X[va] - means) / scales
        tol = max(float(evals.max()), 0.0) * 1e-12
        preds_by_fold[f] = {}
        for lam in grid:
            shifted = evals + lam
            inv = np.where(shifted > tol, 1.0 / np.where(shifted > tol, shifted, 1.0), 0.0)
            w = Q @ (inv * Qb)
            w[zero_var] = 0.0
            pred = Zv @ w + y_mean
            preds_by_fold[f][lam] = pred
            r2_by_lambda[lam].append(_r2(y[va], pred))

    mean_r2 = {lam: float(np.mean(r2_by_lambda[lam])) for lam in grid}
    best = grid[0]
    for lam in grid[1:]:
        if mean_r2[lam] > mean_r2[best]:
            best = lam
    model = ridge_fit(X, y, best)
    return TuneResult(
        lambda_star=best,
        model=model,
        mean_r2=mean_r2,
        fold_r2=[_r2(y[fold_of_row == f], preds_by_fold[f][best]) for f in usable],
        fold_predictions={f: preds_by_fold[f][best] for f in usable},
        fold_ids=usable,
    )


# --- inverse distance weighting ---------------------------------------------------


@dataclass
class IdwModel:
    """Distance-power-weighted average over the k nearest training sites."""

    site_ids: np.ndarray
    site_lats: np.ndarray
    site_lons: np.ndarray
    site_values: np.ndarray
    power: float = 2.0
    neighbors: int = 12
    epsilon_km: float = 1e-6

    @classmethod
    def fit(
        cls,
        sites: Mapping[str, tuple[float, float, float]] | Sequence[tuple[str, float, float, float]],
        power: float = 2.0,
        neighbors: int = 12,
        epsilon_km: float = 1e-6,
    ) -> "IdwModel":
        """Sites as {id: (lat, lon, value)} or (id, lat, lon, value) rows."""
        if isinstance(sites, Mapping):
            rows = [(rid, *vals) for rid, vals in sites.items()]
        else:
            rows = list(sites)
        if not rows:
            raise NoSites("IDW needs at least one site")
        if power <= 0 or neighbors < 1 or epsilon_km <= 0:
            raise DegenerateData("IDW needs power > 0, neighbors >= 1, epsilon > 0")
        rows.sort(key=lambda r: r[0])  # id order makes distance ties deterministic
        ids, lats, lons, values = zip(*rows)
        return cls(
            site_ids=np.asarray(ids, dtype=object),
            site_lats=np.asarray(lats, dtype=float),
            site_lons=np.asarray(lons, dtype=float),
            site_values=np.asarray(values, dtype=float),
            power=float(power),
            neighbors=int(neighbors),
            epsilon_km=float(epsilon_km),
        )


def idw_predict(model: IdwModel, lat: float, lon: float) -> float:
    if model.site_ids.size == 0:
        raise NoSites("IDW model has no sites")
    dists = haversine_km(lat, lon, model.site_lats, model.site_lons)
    dists = np.atleast_1d(dists)
    k = min(model.neighbors, dists.size)
    # sites are pre-sorted by id; a stable sort keeps ties id-ascending
    nearest = np.argsort(dists, kind="stable")[:k]
    d = dists[nearest]
    v = model.site_values[nearest]
    if d[0] < model.epsilon_km:
        return float(v[0])
    w = d ** (-model.power)
    return float((w * v).sum() / w.sum())


def idw_predict_many(model: IdwModel, lats: Sequence[float], lons: Sequence[float]) -> np.ndarray:
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    return np.array([idw_predict(model, la, lo) for la, lo in zip(lats, lons)])


# --- hierarchical median -----------------------------------------------------------


@dataclass
class MedianModel:
    """County median where available, else state median, else national."""

    county_median: dict[str, float]
    state_median: dict[str, float]
    national_median: float
    county_of: dict[str, str]
    state_of_county: dict[str, str]


def median_fit(labels, hierarchy: RegionHierarchy) -> MedianModel:
    """Medians over labeled training zips only; even-sized sets use the
    mean of the two middle values. ``labels`` is a zip-level LabelTable or
    a plain {zip_id: value} mapping."""
    items = dict(labels) if isinstance(labels, Mapping) else dict(labels.values)
    if not items:
        raise NoLabels("no labeled zips")
    by_county: dict[str, list[float]] = {}
    by_state: dict[str, list[float]] = {}
    for zip_id, y in items.items():
        if zip_id not in hierarchy.county_of:
            raise UnknownRegion(zip_id)
        county = hierarchy.county_of[zip_id]
        by_county.setdefault(county, []).append(float(y))
        by_state.setdefault(hierarchy.state_of_county[county], []).append(float(y))
    return MedianModel(
        county_median={c: float(np.median(v)) for c, v in by_county.items()},
        state_median={s: float(np.median(v)) for s, v in by_state.items()},
        national_median=float(np.median(list(items.values()))),
        county_of=dict(hierarchy.county_of),
        state_of_county=dict(hierarchy.state_of_county),
    )


def median_predict(model: MedianModel, zip_id: str) -> float:
    county = model.county_of.get(zip_id)
    if county is None:
        raise UnknownRegion(zip_id)
    if county in model.county_median:
        return model.county_median[county]
    state = model.state_of_county[county]
    if state in model.state_median:
        return model.state_median[state]
    return model.national_median
