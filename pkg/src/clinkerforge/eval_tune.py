"""Metrics, train/test splits, standardization, k-fold CV and grid search."""
from __future__ import annotations

import ast
import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .datamodel import Dataset, Split

log = logging.getLogger(__name__)


class ZeroTrueValue(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ConstantTarget(ValueError):
    pass


class TooFewRows(ValueError):
    pass


class ConstantColumnWarning(UserWarning):
    pass


# ------------------------------------------------------------------ metrics

def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} true values vs {b.size} predictions")
    if a.size == 0:
        raise LengthMismatch("empty input")
    return a, b


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error, in percent."""
    a, b = _pair(y_true, y_pred)
    if np.any(a == 0):
        raise ZeroTrueValue("MAPE is undefined when a true value is 0")
    return float(100.0 * np.mean(np.abs(b - a) / np.abs(a)))


def mae(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean(np.abs(b - a)))


def r2(y_true, y_pred) -> float:
    """``1 - RSS / TSS`` with the total sum of squares taken about the mean of the true values."""
    a, b = _pair(y_true, y_pred)
    tss = np.sum((a - a.mean()) ** 2)
    if tss == 0:
        raise ConstantTarget("R^2 is undefined for a constant target")
    return float(1.0 - np.sum((b - a) ** 2) / tss)


@dataclass(frozen=True)
class MetricReport:
    mae: float
    mape: float
    r2: float

    @classmethod
    def of(cls, y_true, y_pred) -> MetricReport:
        return cls(mae(y_true, y_pred), mape(y_true, y_pred), r2(y_true, y_pred))


def seed_summary(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample sd over repeated seeds."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


# ------------------------------------------------------------------ splits

@dataclass(frozen=True)
class TemporalHoldout:
    """Reserve the leading ``months`` calendar months as an unseen holdout."""

    months: int = 2


def split_train_test(ds: Dataset, ratio: float = 0.8, seed: int = 0, mode: str | TemporalHoldout = "random") -> Dataset:
    """Label rows Train/Test (and Holdout for a temporal holdout).

    Random mode shuffles with ``seed`` and puts ``round(ratio * n)`` rows in
    Train. A temporal holdout first labels every row before the cut-off month
    as Holdout, then splits the rest at random.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    n = len(ds)
    labels = np.empty(n, dtype=object)
    pool = np.arange(n)
    if isinstance(mode, TemporalHoldout):
        first = ds.timestamps.min().astype("datetime64[M]")
        cutoff = (first + np.timedelta64(mode.months, "M")).astype("datetime64[m]")
        hold = ds.timestamps < cutoff
        labels[hold] = Split.HOLDOUT.value
        pool = np.flatnonzero(~hold)
    elif mode != "random":
        raise ValueError(f"unknown split mode {mode!r}")
    rng = np.random.default_rng(seed)
    perm = pool[rng.permutation(len(pool))]
    n_train = int(round(ratio * len(pool)))
    labels[perm[:n_train]] = Split.TRAIN.value
    labels[perm[n_train:]] = Split.TEST.value
    return ds.with_split(labels)


def split_summary(ds: Dataset) -> pd.DataFrame:
    """Per-split row counts and target means/sds."""
    rows = []
    for label in (s.value for s in Split):
        mask = ds.split == label
        if not mask.any():
            continue
        row = {"split": label, "n": int(mask.sum())}
        for j, name in enumerate(ds.target_names):
            row[f"{name}_mean"] = float(np.mean(ds.targets[mask, j]))
            row[f"{name}_sd"] = float(np.std(ds.targets[mask, j]))
        rows.append(row)
    return pd.DataFrame(rows)


# ------------------------------------------------------------------ standardization

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> Standardizer:
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0:
            raise TooFewRows("cannot standardize on an empty training set")
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        const = sd == 0
        if const.any():
            warnings.warn(f"{int(const.sum())} constant column(s) left unscaled", ConstantColumnWarning,
                          stacklevel=3)
        return cls(np.where(const, 0.0, mean), np.where(const, 1.0, sd))

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


def standardize_fit_apply(train, *others) -> tuple[list[np.ndarray], Standardizer]:
    """z-score every matrix with statistics from ``train`` only."""
    s = Standardizer.fit(train)
    return [s.apply(train)] + [s.apply(o) for o in others], s


# ------------------------------------------------------------------ cross-validation

def kfold_indices(n: int, k: int = 4, seed: int = 0) -> list[np.ndarray]:
    """Shuffled folds partitioning ``range(n)``; the first ``n % k`` folds get one extra row."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise TooFewRows(f"{n} rows cannot form {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(k)]


def expand_grid(grid: Mapping[str, Sequence] | Sequence[Mapping[str, Any]]) -> list[dict[str, Any]]:
    """Cartesian product of a ``{param: values}`` map in key order, or a ready list of candidates."""
    if isinstance(grid, Mapping):
        keys = list(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    return [dict(c) for c in grid]


def parse_grid(text: str) -> dict[str, list]:
    """Parse ``param = v1, v2, ...`` lines (``#`` comments) into a grid map."""
    grid = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"grid line {lineno}: expected 'param = values'")
        key, values = (s.strip() for s in line.split("=", 1))
        parsed = []
        for v in values.split(","):
            v = v.strip()
            try:
                parsed.append(ast.literal_eval(v))
            except (ValueError, SyntaxError):
                parsed.append(v)
        grid[key] = parsed
    if not grid:
        raise ValueError("empty grid")
    return grid


@dataclass
class GridSearchResult:
    candidates: list[dict[str, Any]]
    mean_scores: np.ndarray  # mean validation MAPE; NaN for failed candidates
    fold_scores: np.ndarray
    errors: dict[int, str]
    best_index: int
    best_model: Any = None

    @property
    def best_params(self) -> dict[str, Any]:
        return self.candidates[self.best_index]

    def table(self) -> pd.DataFrame:
        df = pd.DataFrame(self.candidates)
        for f in range(self.fold_scores.shape[1]):
            df[f"fold{f}_mape"] = self.fold_scores[:, f]
        df["mean_val_mape"] = self.mean_scores
        df["error"] = [self.errors.get(i, "") for i in range(len(self.candidates))]
        df["best"] = np.arange(len(self.candidates)) == self.best_index
        return df


def grid_search(family: str, grid, X, y, k: int = 4, seed: int = 0, jobs: int = 1,
                on_fold: Callable[[int, int, np.ndarray, Any], None] | None = None,
                feature_names=(), target: str = "") -> GridSearchResult:
    """Exhaustive search scored by mean k-fold validation MAPE; ties go to the first candidate.

    The feature standardizer is refit on each training fold. ``on_fold`` is
    called as ``on_fold(candidate, fold, train_rows, fitted)`` for
    instrumentation. The winner is refit on all of ``X``.
    """
    from .models import fit_model

    candidates = expand_grid(grid)
    if not candidates:
        raise ValueError("grid is empty")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    folds = kfold_indices(len(y), k, seed)

    def run(ci: int):
        scores = np.full(k, np.nan)
        try:
            for f, val in enumerate(folds):
                train = np.setdiff1d(np.arange(len(y)), val)
                fitted = fit_model(family, X[train], y[train], candidates[ci], seed=seed, target=target)
                if on_fold is not None:
                    on_fold(ci, f, train, fitted)
                scores[f] = mape(y[val], fitted.predict(X[val]))
        except Exception as exc:  # recorded per candidate, which is then skipped
            log.warning("candidate %d (%s) failed: %s", ci, candidates[ci], exc)
            return scores, f"{type(exc).__name__}: {exc}"
        return scores, ""

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(len(candidates))))
    else:
        results = [run(i) for i in range(len(candidates))]
    fold_scores = np.array([r[0] for r in results])
    errors = {i: r[1] for i, r in enumerate(results) if r[1]}
    means = np.where(np.isnan(fold_scores).any(axis=1), np.nan, fold_scores.mean(axis=1))
    if np.all(np.isnan(means)):
        raise RuntimeError(f"every {family} candidate failed: {errors}")
    best = int(np.nanargmin(means))
    model = fit_model(family, X, y, candidates[best], seed=seed, feature_names=feature_names, target=target)
    return GridSearchResult(candidates, means, fold_scores, errors, best, model)
