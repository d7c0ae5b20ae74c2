"""Multiple linear regression calibration, CV and forward feature selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import AggregatedDataset, PeriodSeries, RawSeries


class CalibrationError(ArithmeticError):
    """Numerical failure: degenerate design or target."""


class RankDeficient(CalibrationError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; collinear columns: {list(columns)}")
        self.columns = list(columns)


class InsufficientData(CalibrationError):
    pass


class FeatureMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    feature_names: tuple[str, ...]
    beta: np.ndarray  # intercept first
    target: str | None = None
    fitted_on: int = 0

    @property
    def intercept(self) -> float:
        return float(self.beta[0])

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.beta[1:].tolist()))


@dataclass(frozen=True)
class FitMetrics:
    r2: float
    rmse: float
    n: int


@dataclass(frozen=True)
class CvSummary:
    k: int
    per_fold_r2: tuple[float, ...]
    mean_r2: float
    ci95: tuple[float, float]


def _design(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X])


def _rank_offenders(A: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns of A (intercept first) that add nothing to the span of earlier ones."""
    offenders = []
    kept = []
    for j in range(A.shape[1]):
        trial = A[:, kept + [j]]
        if np.linalg.matrix_rank(trial) > len(kept):
            kept.append(j)
        else:
            offenders.append(names[j])
    return offenders


def fit_mlr(X, y, feature_names: Sequence[str] | None = None, target: str | None = None) -> CalibrationModel:
    """Least-squares fit of ``y ~ 1 + X``.

    Solved through SVD (``numpy.linalg.lstsq``) after an explicit rank
    check, so a degenerate design raises instead of returning a minimum-norm
    solution.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise FeatureMismatch(f"{len(names)} names for {p} columns")
    if len(y) != n:
        raise ValueError("X and y row counts differ")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise InsufficientData("X and y must not contain missing or infinite values")
    if n <= p + 1:
        raise InsufficientData(f"need more than P+1={p + 1} rows, got {n}")
    A = _design(X)
    if np.linalg.matrix_rank(A) < p + 1:
        raise RankDeficient(_rank_offenders(A, ("intercept",) + names))
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    if not np.isfinite(beta).all():
        raise CalibrationError("non-finite coefficients")
    beta.setflags(write=False)
    return CalibrationModel(names, beta, target, n)


def predict(model: CalibrationModel, X, feature_names: Sequence[str] | None = None) -> np.ndarray:
    """``[1|X] beta``; columns are bound by name when ``feature_names`` is given."""
    if isinstance(X, AggregatedDataset):
        feature_names, X = X.feature_names, X.X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :] if len(model.feature_names) > 1 else X[:, None]
    if feature_names is not None:
        feature_names = tuple(feature_names)
        missing = [f for f in model.feature_names if f not in feature_names]
        if missing:
            raise FeatureMismatch(f"features {missing} missing from input")
        X = X[:, [feature_names.index(f) for f in model.feature_names]]
    if X.shape[1] != len(model.feature_names):
        raise FeatureMismatch(f"model expects {len(model.feature_names)} features, got {X.shape[1]}")
    return _design(X) @ model.beta


def _check_pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if len(y) == 0 or len(y) != len(y_hat):
        raise ValueError("y and y_hat must be non-empty and of equal length")
    return y, y_hat


def r2(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise CalibrationError("R² undefined for a constant target")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def rmse(y, y_hat) -> float:
    y, y_hat = _check_pair(y, y_hat)
    return math.sqrt(float(np.mean((y - y_hat) ** 2)))


def evaluate(model: CalibrationModel, dataset: AggregatedDataset) -> FitMetrics:
    data = dataset.select(model.feature_names).usable()
    y_hat = predict(model, data.X)
    return FitMetrics(r2(data.y, y_hat), rmse(data.y, y_hat), len(data))


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle ``range(n)`` with ``seed`` and cut it into ``k`` near-equal folds."""
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, k)


def confidence_interval(scores, z: float = 1.96) -> tuple[float, float]:
    """Normal-approximation interval ``mean ± z * sd / sqrt(n)`` (sd with n - 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    m = float(scores.mean())
    sd = float(scores.std(ddof=1)) if len(scores) > 1 else 0.0
    half = z * sd / math.sqrt(len(scores))
    return m - half, m + half


def _cv_on_arrays(X, y, folds, names, target) -> CvSummary:
    scores = []
    for test in folds:
        train = np.ones(len(y), dtype=bool)
        train[test] = False
        model = fit_mlr(X[train], y[train], names, target)
        scores.append(r2(y[test], predict(model, X[test])))
    mean = float(np.mean(scores))
    lo, hi = confidence_interval(scores)
    return CvSummary(len(folds), tuple(scores), mean, (lo, hi))


def kfold_cv(dataset: AggregatedDataset, k: int = 10, features: Sequence[str] | None = None, seed: int = 0) -> CvSummary:
    """Mean out-of-fold R² over ``k`` shuffled folds of the usable rows."""
    if k < 2:
        raise ValueError("k must be at least 2")
    features = tuple(features) if features is not None else dataset.feature_names
    data = dataset.select(features).usable()
    if len(data) < 2 * k:
        raise InsufficientData(f"{k}-fold CV needs at least {2 * k} usable rows, got {len(data)}")
    return _cv_on_arrays(data.X, data.y, kfold_indices(len(data), k, seed), features, dataset.target)


@dataclass(frozen=True)
class SelectionStep:
    added: str
    features: tuple[str, ...]
    cv: CvSummary
    scores: dict[str, float] = field(default_factory=dict)  # candidate -> mean CV R² at this step


def forward_select(
    dataset: AggregatedDataset,
    always_in: Sequence[str],
    candidates: Sequence[str],
    k: int = 10,
    seed: int = 0,
) -> list[SelectionStep]:
    """Greedy forward selection by mean k-fold CV R².

    Every candidate is added in turn (the full trajectory is returned, no
    early stop). All evaluations share one fold assignment, computed on the
    rows complete in every considered column. Ties go to the
    lexicographically smallest name. Candidates that would make the design
    rank deficient score NaN; if every remaining one does, selection ends.
    """
    always_in = tuple(always_in)
    remaining = sorted(candidates)
    if not remaining:
        raise ValueError("no candidate features")
    if set(remaining) & set(always_in):
        raise ValueError("candidates and always_in overlap")
    if len(set(remaining)) != len(remaining):
        raise ValueError("duplicate candidates")
    if k < 2:
        raise ValueError("k must be at least 2")
    data = dataset.select(always_in + tuple(remaining)).usable()
    if len(data) < 2 * k:
        raise InsufficientData(f"{k}-fold CV needs at least {2 * k} usable rows, got {len(data)}")
    folds = kfold_indices(len(data), k, seed)

    steps = []
    chosen = list(always_in)
    while remaining:
        best = None
        scores = {}
        for cand in remaining:
            feats = tuple(chosen + [cand])
            try:
                cv = _cv_on_arrays(data.select(feats).X, data.y, folds, feats, dataset.target)
            except RankDeficient:
                scores[cand] = math.nan  # redundant given the chosen set
                continue
            scores[cand] = cv.mean_r2
            if best is None or cv.mean_r2 > best[1].mean_r2:
                best = (cand, cv)
        if best is None:
            break
        chosen.append(best[0])
        remaining.remove(best[0])
        steps.append(SelectionStep(best[0], tuple(chosen), best[1], scores))
    return steps


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    names: tuple[str, ...]
    values: np.ndarray

    @property
    def undefined(self) -> np.ndarray:
        return np.isnan(self.values)

    def __getitem__(self, pair):
        a, b = pair
        return float(self.values[self.names.index(a), self.names.index(b)])


def correlation_matrix(data, names: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pearson correlations over complete rows.

    Accepts an AggregatedDataset (features plus the target as ``y``), a
    RawSeries/PeriodSeries, or a plain 2-D array. Entries involving a
    zero-variance column are NaN.
    """
    if isinstance(data, AggregatedDataset):
        M = np.column_stack([data.X, data.y])
        names = data.feature_names + (data.target or "y",)
    elif isinstance(data, RawSeries):
        M, names = data.values, data.channels
    elif isinstance(data, PeriodSeries):
        M, names = data.values, data.names
    else:
        M = np.asarray(data, dtype=np.float64)
        names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(M.shape[1]))
    M = np.asarray(M, dtype=np.float64)
    M = M[np.isfinite(M).all(axis=1)]
    if len(M) < 2:
        raise InsufficientData("correlation needs at least two complete rows")
    C = M - M.mean(axis=0)
    ss = np.sqrt(np.sum(C * C, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        R = (C.T @ C) / np.outer(ss, ss)
    R = np.clip(R, -1.0, 1.0)
    R = (R + R.T) / 2
    defined = ss > 0
    R[~defined, :] = np.nan
    R[:, ~defined] = np.nan
    idx = np.flatnonzero(defined)
    R[idx, idx] = 1.0
    R.setflags(write=False)
    return CorrelationMatrix(tuple(names), R)


def model_document(model: CalibrationModel, **meta) -> str:
    """JSON text for ``model``; coefficients are written with 17 significant digits."""
    doc = {
        "kind": "mlr_calibration",
        "target": model.target,
        "feature_names": list(model.feature_names),
        "beta_names": ["intercept", *model.feature_names],
        "beta": "__BETA__",
        "fitted_on": model.fitted_on,
        **meta,
    }
    text = json.dumps(doc, indent=2, sort_keys=False, default=str, allow_nan=False)
    beta = "[" + ", ".join(format(float(b), ".17g") for b in model.beta) + "]"
    return text.replace('"__BETA__"', beta) + "\n"


def export_model(model: CalibrationModel, path, **meta) -> None:
    Path(path).write_text(model_document(model, **meta))


def load_model(path) -> CalibrationModel:
    doc = json.loads(Path(path).read_text())
    beta = np.asarray(doc["beta"], dtype=np.float64)
    beta.setflags(write=False)
    return CalibrationModel(tuple(doc["feature_names"]), beta, doc.get("target"), int(doc.get("fitted_on", 0)))
