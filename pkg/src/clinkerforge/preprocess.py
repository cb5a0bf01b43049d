"""Three-tier cleaning of aligned rows with a stage-by-stage loss account.

Stages run in a fixed order: unmatched rows, duplicate timestamps, rows with
missing cells, rows with negative compositions, then the 0.01 / 99.99
percentile filter. Every stage reports how many rows it removed so that
``raw - sum(removed) == final`` can be checked.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .datamodel import COMPOSITION_FEATURES, Dataset, GROUP_FEATURES

log = logging.getLogger(__name__)

STAGES: tuple[str, ...] = ("drop_unmatched", "dedupe", "drop_incomplete", "drop_negative", "percentile_filter")


class DegenerateColumn(UserWarning):
    pass


def _all_values(ds: Dataset) -> tuple[np.ndarray, tuple[str, ...]]:
    return np.column_stack([ds.features, ds.targets]), ds.feature_names + ds.target_names


def drop_unmatched(ds: Dataset, groups=("PP", "KF", "HM")) -> tuple[Dataset, int]:
    """Remove rows where any required input group has no join partner (all cells NaN)."""
    missing = np.zeros(len(ds), dtype=bool)
    for g in groups:
        cols = [ds.feature_names.index(c) for c in GROUP_FEATURES[g] if c in ds.feature_names]
        if cols:
            missing |= np.all(np.isnan(ds.features[:, cols]), axis=1)
    keep = np.flatnonzero(~missing)
    return ds.take(keep), int(missing.sum())


@dataclass(frozen=True)
class DedupeConflict:
    timestamp: str
    kept_row: int
    dropped_row: int


def dedupe(ds: Dataset) -> tuple[Dataset, int, list[DedupeConflict]]:
    """Keep the first row for each timestamp.

    Exact repeats vanish silently; a repeat whose values differ is still
    dropped but logged as a conflict.
    """
    t = ds.timestamps.astype(np.int64)
    _, first = np.unique(t, return_index=True)
    keep = np.zeros(len(ds), dtype=bool)
    keep[first] = True
    values, _ = _all_values(ds)
    conflicts = []
    first_of = dict(zip(t[first].tolist(), first.tolist()))
    for i in np.flatnonzero(~keep):
        k = first_of[int(t[i])]
        if not np.array_equal(values[i], values[k], equal_nan=True):
            ts = str(ds.timestamps[i])
            conflicts.append(DedupeConflict(ts, int(k), int(i)))
            log.warning("conflicting duplicate at %s: kept row %d, dropped row %d", ts, k, i)
    return ds.take(np.flatnonzero(keep)), int((~keep).sum()), conflicts


def drop_incomplete(ds: Dataset) -> tuple[Dataset, int]:
    """Remove rows with any NaN among features and targets."""
    values, _ = _all_values(ds)
    bad = np.isnan(values).any(axis=1)
    return ds.take(np.flatnonzero(~bad)), int(bad.sum())


def drop_negative(ds: Dataset) -> tuple[Dataset, int, int]:
    """Remove rows with a negative composition cell; process parameters may be negative.

    Returns the dataset, rows removed and negative cells seen.
    """
    values, names = _all_values(ds)
    cols = [j for j, c in enumerate(names) if c in COMPOSITION_FEATURES]
    neg = values[:, cols] < 0
    bad = neg.any(axis=1)
    return ds.take(np.flatnonzero(~bad)), int(bad.sum()), int(neg.sum())


def column_bounds(col: np.ndarray, lo: float, hi: float, method: str) -> tuple[float, float]:
    """Percentile bounds of one column.

    ``linear`` interpolates between order statistics. ``normal`` takes the
    same percentiles of a normal fitted by mean and sample sd; unlike the
    empirical estimator, it does not always cut a finite sample's extremes.
    """
    x = col[~np.isnan(col)]
    if method == "linear":
        a, b = np.quantile(x, [lo, hi], method="linear")
    elif method == "normal":
        mu = x.mean()
        sd = x.std(ddof=1) if len(x) > 1 else 0.0
        a, b = mu + special.ndtri(lo) * sd, mu + special.ndtri(hi) * sd
    else:
        raise ValueError(f"unknown quantile method {method!r}")
    return float(a), float(b)


def percentile_filter(ds: Dataset, lo: float = 0.0001, hi: float = 0.9999,
                      method: str = "linear") -> tuple[Dataset, int, dict[str, tuple[float, float]]]:
    """Remove rows with any value outside its column's [lo, hi] percentile bounds.

    Bounds are computed once on the input. A constant column warns with
    DegenerateColumn and filters nothing.
    """
    if len(ds) == 0:
        raise ValueError("percentile filter needs a non-empty dataset")
    if not 0 <= lo < hi <= 1:
        raise ValueError("need 0 <= lo < hi <= 1")
    values, names = _all_values(ds)
    bounds = {}
    out = np.zeros(len(ds), dtype=bool)
    for j, name in enumerate(names):
        col = values[:, j]
        finite = col[~np.isnan(col)]
        if finite.size == 0 or np.all(finite == finite[0]):
            warnings.warn(f"column {name} is constant; no percentile bounds applied", DegenerateColumn,
                          stacklevel=2)
            bounds[name] = (float(finite[0]), float(finite[0])) if finite.size else (np.nan, np.nan)
            continue
        a, b = column_bounds(col, lo, hi, method)
        bounds[name] = (a, b)
        out |= (col < a) | (col > b)
    return ds.take(np.flatnonzero(~out)), int(out.sum()), bounds


@dataclass(frozen=True)
class StageRecord:
    stage: str
    removed: int
    remaining: int


@dataclass
class CleaningReport:
    raw_rows: int
    stages: list[StageRecord] = field(default_factory=list)
    negative_cells: int = 0
    dedupe_conflicts: int = 0
    quantile_method: str = "normal"
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def final_rows(self) -> int:
        return self.stages[-1].remaining if self.stages else self.raw_rows

    @property
    def total_removed(self) -> int:
        return sum(s.removed for s in self.stages)

    def removed(self, stage: str) -> int:
        return next(s.removed for s in self.stages if s.stage == stage)

    def accounting_holds(self) -> bool:
        prev = self.raw_rows
        for s in self.stages:
            if s.remaining != prev - s.removed:
                return False
            prev = s.remaining
        return self.raw_rows - self.total_removed == self.final_rows

    def to_dict(self) -> dict:
        return {
            "raw_rows": self.raw_rows,
            "stages": [asdict(s) for s in self.stages],
            "final_rows": self.final_rows,
            "negative_cells": self.negative_cells,
            "dedupe_conflicts": self.dedupe_conflicts,
            "quantile_method": self.quantile_method,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text


def run_pipeline(ds: Dataset, lo: float = 0.0001, hi: float = 0.9999,
                 quantile_method: str = "normal") -> tuple[Dataset, CleaningReport]:
    """Apply the five stages in order and account for every removed row.

    The percentile stage defaults to fitted-normal bounds: with the
    interpolating estimator a sample of at most 10,000 rows always loses its
    minimum and maximum, so a second pass would never come out clean. Normal
    bounds are refitted until no row falls outside them (dropping an extreme
    row shrinks the sd and can expose another), which makes the whole
    pipeline idempotent. The linear method runs a single pass.
    """
    report = CleaningReport(len(ds), quantile_method=quantile_method)

    def record(name, removed, cur):
        report.stages.append(StageRecord(name, removed, len(cur)))

    ds, k = drop_unmatched(ds)
    record("drop_unmatched", k, ds)
    ds, k, conflicts = dedupe(ds)
    report.dedupe_conflicts = len(conflicts)
    record("dedupe", k, ds)
    ds, k = drop_incomplete(ds)
    record("drop_incomplete", k, ds)
    ds, k, cells = drop_negative(ds)
    report.negative_cells = cells
    record("drop_negative", k, ds)
    k = 0
    while len(ds):
        ds, step, bounds = percentile_filter(ds, lo, hi, quantile_method)
        report.bounds = bounds
        k += step
        if step == 0 or quantile_method != "normal":
            break
    record("percentile_filter", k, ds)
    return ds, report
