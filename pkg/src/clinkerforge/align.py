"""Residence-time alignment of the plant streams onto clinker production times.

Clinker rows carry production timestamps. Kiln feed, hot meal and process
data carry measurement timestamps, so each stream is looked up at its own
offset before the clinker time:

    kiln feed        latest sample at or before  t - 37 min
    hot meal         latest sample at or before  t - 21 min
    process data     time-weighted mean over     [t - 37 - 120, t - 37)
    clinker oxides   the clinker row itself
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import (
    Dataset,
    FEATURE_NAMES,
    GROUP_FEATURES,
    OXIDES,
    PP_NAMES,
    RawStreams,
    StreamTable,
    TARGET_NAMES,
    format_timestamps,
)


class EmptyWindow(ValueError):
    pass


@dataclass(frozen=True)
class ResidenceSchedule:
    """Material transit times in minutes."""

    kf_buffer: int = 1
    preheater: int = 16
    cooler: int = 20
    sampling_delay: int = 20
    hm_lag: int = 21  # calciner exit to clinker: cooler plus a one-minute margin

    @property
    def production_total(self) -> int:
        return self.kf_buffer + self.preheater + self.cooler

    @property
    def measurement_total(self) -> int:
        return self.production_total + self.sampling_delay

    @classmethod
    def zero(cls) -> ResidenceSchedule:
        return cls(0, 0, 0, 0, 0)


@dataclass(frozen=True)
class WindowPolicy:
    """Process-data window and the staleness limits for the as-of joins (minutes)."""

    width: int = 120
    kf_max_age: int = 60
    hm_max_age: int = 120

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("window width must be positive")
        if self.kf_max_age < 0 or self.hm_max_age < 0:
            raise ValueError("max ages must be non-negative")


def _minutes(t) -> np.ndarray:
    return np.asarray(t, dtype="datetime64[m]")


def production_time(kf_measured_at, sched: ResidenceSchedule = ResidenceSchedule()):
    """Clinker production time for kiln feed measured at ``kf_measured_at``."""
    return _minutes(kf_measured_at) + np.timedelta64(sched.production_total, "m")


def sampling_time(kf_measured_at, sched: ResidenceSchedule = ResidenceSchedule()):
    """Time the resulting clinker reaches the lab sampler."""
    return _minutes(kf_measured_at) + np.timedelta64(sched.measurement_total, "m")


def _window_weights(t: np.ndarray, start: int, end: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and overlap durations of samples intersecting ``[start, end)``.

    Sample ``i`` represents ``[t[i], t[i+1])``; the last sample extends to
    the window end.
    """
    lo = max(int(np.searchsorted(t, start, side="right")) - 1, 0)
    hi = int(np.searchsorted(t, end, side="left"))
    if hi <= lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    idx = np.arange(lo, hi)
    left = np.maximum(t[idx], start)
    nxt = np.append(t[idx[1:]], t[hi] if hi < len(t) else end)
    right = np.minimum(nxt, end)
    w = (right - left).astype(np.float64)
    keep = w > 0
    return idx[keep], w[keep]


def _window_mean(t: np.ndarray, v: np.ndarray, end: int, width: int) -> np.ndarray | None:
    idx, w = _window_weights(t, end - width, end)
    if idx.size == 0:
        return None
    block = v[idx]
    ww = w[:, None] * ~np.isnan(block)
    total = ww.sum(axis=0)
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, np.nansum(block * ww, axis=0) / safe, np.nan)


def window_average(timestamps, values, window_end, policy: WindowPolicy = WindowPolicy()) -> np.ndarray:
    """Time-weighted mean of a sorted stream over ``[window_end - width, window_end)``.

    Each sample is weighted by the time it represents inside the window.
    NaN cells drop out of their column's average.
    """
    t = _minutes(timestamps).astype(np.int64)
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    end = int(_minutes(window_end).astype(np.int64))
    out = _window_mean(t, v.reshape(len(t), -1), end, policy.width)
    if out is None:
        raise EmptyWindow(f"no samples intersect the window ending {np.datetime64(end, 'm')}")
    return out[0] if squeeze else out


def _asof(table_minutes: np.ndarray, at: np.ndarray, max_age: int) -> np.ndarray:
    """Index of the latest sample at or before each ``at`` within ``max_age``; -1 if none."""
    pos = np.searchsorted(table_minutes, at, side="right") - 1
    ok = pos >= 0
    ok[ok] = at[ok] - table_minutes[pos[ok]] <= max_age
    return np.where(ok, pos, -1)


@dataclass(frozen=True)
class AlignmentReport:
    n_clinker: int
    n_aligned: int
    dropped: tuple[str, ...] = field(default_factory=tuple)  # ISO timestamps of dropped rows

    @property
    def n_dropped(self) -> int:
        return self.n_clinker - self.n_aligned


def build_aligned_dataset(
    raw: RawStreams,
    sched: ResidenceSchedule = ResidenceSchedule(),
    policy: WindowPolicy = WindowPolicy(),
    keep_unmatched: bool = False,
) -> tuple[Dataset, AlignmentReport]:
    """Join every clinker row to its causally preceding KF, HM and PP features.

    Rows lacking any group are dropped and counted, unless ``keep_unmatched``
    is set, in which case the missing group is left as NaN so a later
    cleaning stage can account for it.
    """
    clk = raw.clinker
    t_clk = clk.minutes
    t_feed = t_clk - sched.production_total
    n = len(clk)

    kf_pos = _asof(raw.kf.minutes, t_feed, policy.kf_max_age)
    hm_pos = _asof(raw.hm.minutes, t_clk - sched.hm_lag, policy.hm_max_age)

    pp_t = raw.pp.minutes
    pp_feat = np.full((n, len(PP_NAMES)), np.nan)
    pp_ok = np.zeros(n, dtype=bool)
    for i in range(n):
        row = _window_mean(pp_t, raw.pp.values, int(t_feed[i]), policy.width)
        if row is not None:
            pp_feat[i] = row
            pp_ok[i] = True

    kf_feat = np.full((n, len(OXIDES)), np.nan)
    kf_feat[kf_pos >= 0] = raw.kf.values[kf_pos[kf_pos >= 0]]
    hm_feat = np.full((n, len(GROUP_FEATURES["HM"])), np.nan)
    hm_feat[hm_pos >= 0] = raw.hm.values[hm_pos[hm_pos >= 0]]
    co_feat = clk.values[:, : len(OXIDES)]
    targets = clk.values[:, len(OXIDES):]

    features = np.column_stack([pp_feat, kf_feat, hm_feat, co_feat])
    matched = pp_ok & (kf_pos >= 0) & (hm_pos >= 0)
    keep = np.ones(n, dtype=bool) if keep_unmatched else matched

    report = AlignmentReport(n, int(matched.sum()), tuple(format_timestamps(clk.timestamps[~matched])))
    ds = Dataset(clk.timestamps[keep], features[keep], targets[keep], FEATURE_NAMES, TARGET_NAMES,
                 meta={"unmatched": int((~matched).sum())})
    return ds, report


def shift_streams(raw: RawStreams, delta_minutes: int) -> RawStreams:
    """Every timestamp moved by ``delta_minutes``; used to check shift equivariance."""
    d = np.timedelta64(int(delta_minutes), "m")

    def mv(t: StreamTable) -> StreamTable:
        return StreamTable(t.name, t.timestamps + d, t.values, t.columns)

    return RawStreams(mv(raw.pp), mv(raw.kf), mv(raw.hm), mv(raw.clinker))
