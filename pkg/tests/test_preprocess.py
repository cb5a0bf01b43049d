import json
import warnings

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from clinkerforge.align import build_aligned_dataset
from clinkerforge.datamodel import FEATURE_NAMES, Dataset, GROUP_FEATURES
from clinkerforge.preprocess import (
    STAGES, DegenerateColumn, column_bounds, dedupe, drop_incomplete, drop_negative, drop_unmatched,
    percentile_filter, run_pipeline,
)
from clinkerforge.synthgen import DefectRates, GeneratorConfig, generate_history, inject_defects


def _ds(n=10, seed=0):
    rng = np.random.default_rng(seed)
    ts = np.datetime64("2020-01-01T00:37") + np.arange(n) * np.timedelta64(60, "m")
    X = np.abs(rng.normal(5, 1, size=(n, len(FEATURE_NAMES))))
    Y = rng.normal([60, 15, 14], [3, 3, 1], size=(n, 3))
    return Dataset(ts, X, Y)


def _set(ds, rows, col, value):
    X = ds.features.copy()
    X[rows, ds.feature_names.index(col)] = value
    return Dataset(ds.timestamps, X, ds.targets, ds.feature_names, ds.target_names)


def test_drop_unmatched_fixture():
    ds = _ds()
    X = ds.features.copy()
    kf = [ds.feature_names.index(c) for c in GROUP_FEATURES["KF"]]
    X[np.ix_([2, 7], kf)] = np.nan
    out, removed = drop_unmatched(Dataset(ds.timestamps, X, ds.targets))
    assert (len(out), removed) == (8, 2)
    assert 2 not in [list(ds.timestamps).index(t) for t in out.timestamps]


def test_drop_unmatched_identity():
    ds = _ds()
    out, removed = drop_unmatched(ds)
    assert removed == 0
    np.testing.assert_array_equal(out.features, ds.features)


def test_dedupe_identical_rows():
    ds = _ds(3)
    twice = ds.take([0, 0, 1, 2])
    out, removed, conflicts = dedupe(twice)
    assert (len(out), removed, conflicts) == (3, 1, [])


def test_dedupe_conflict_keeps_first(caplog):
    ds = _ds(3)
    d = ds.take([0, 1, 1, 2])
    X = d.features.copy()
    X[2, 0] += 1.0
    d = Dataset(d.timestamps, X, d.targets)
    with caplog.at_level("WARNING"):
        out, removed, conflicts = dedupe(d)
    assert removed == 1 and len(conflicts) == 1
    assert conflicts[0].kept_row == 1 and conflicts[0].dropped_row == 2
    np.testing.assert_array_equal(out.features[1], ds.features[1])
    assert "conflicting duplicate" in caplog.text


def test_dedupe_identity():
    ds = _ds()
    out, removed, _ = dedupe(ds)
    assert removed == 0 and len(out) == len(ds)


def test_drop_incomplete():
    ds = _set(_ds(), [4], "P7", np.nan)
    out, removed = drop_incomplete(ds)
    assert (len(out), removed) == (9, 1)
    assert drop_incomplete(_ds())[1] == 0


def test_drop_negative_composition_only():
    ds = _set(_ds(), [3], "KF_Cl", -0.01)
    ds = _set(ds, [5], "P26", -30.0)
    out, removed, cells = drop_negative(ds)
    assert (removed, cells) == (1, 1)
    assert ds.timestamps[5] in out.timestamps
    assert ds.timestamps[3] not in out.timestamps


def test_percentile_constant_column_warns():
    ds = _set(_ds(50), slice(None), "P1", 7.0)
    with pytest.warns(DegenerateColumn):
        out, removed, bounds = percentile_filter(ds, method="normal")
    assert bounds["P1"] == (7.0, 7.0)
    others = ds.select_columns([c for c in ds.feature_names if c != "P1"])
    assert removed == percentile_filter(others, method="normal")[1]


def test_percentile_uniform_column_tails():
    # 0.01 % per tail of 10,000 points: the interpolating bounds shave off
    # the single extreme at each end
    x = np.random.default_rng(0).uniform(size=10_000)
    a, b = column_bounds(x, 0.0001, 0.9999, "linear")
    removed = int(np.sum((x < a) | (x > b)))
    assert removed == 2


def test_percentile_bounds_methods():
    x = np.random.default_rng(1).normal(10, 2, size=5000)
    a, b = column_bounds(x, 0.0001, 0.9999, "normal")
    assert a == pytest.approx(x.mean() - 3.719016485 * x.std(ddof=1), rel=1e-9)
    assert b == pytest.approx(x.mean() + 3.719016485 * x.std(ddof=1), rel=1e-9)
    with pytest.raises(ValueError):
        column_bounds(x, 0.0001, 0.9999, "midpoint")


def test_percentile_empty_input():
    with pytest.raises(ValueError):
        percentile_filter(_ds().take(np.array([], dtype=int)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05), st.floats(0.0, 0.05), st.floats(0.0, 0.05),
       st.sampled_from(["linear", "normal"]))
def test_percentile_monotone(lo1, dlo, hi1, dhi, method):
    ds = _ds(300, seed=3)
    lo_wide, lo_narrow = lo1, lo1 + dlo
    hi_wide, hi_narrow = 1 - hi1, 1 - hi1 - dhi
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, wide, _ = percentile_filter(ds, lo_wide, hi_wide, method)
        _, narrow, _ = percentile_filter(ds, lo_narrow, hi_narrow, method)
    assert wide <= narrow


def test_clean_synthetic_input_zero_removals(aligned):
    ds, _ = aligned
    out, report = run_pipeline(ds)
    assert [s.removed for s in report.stages] == [0] * len(STAGES)
    assert len(out) == len(ds)


@pytest.fixture(scope="module")
def defective():
    cfg = GeneratorConfig(seed=21, defect_rates=DefectRates(0.01, 0.02, 0.003, 0.01))
    raw, _ = generate_history(cfg)
    bad, manifest = inject_defects(raw, cfg)
    ds, _ = build_aligned_dataset(bad, keep_unmatched=True)
    return ds, manifest


def test_stage_counts_equal_manifest(defective):
    ds, manifest = defective
    out, report = run_pipeline(ds)
    assert report.removed("drop_unmatched") == 0
    assert report.removed("dedupe") == manifest.count("duplicate")
    assert report.removed("drop_incomplete") == manifest.count("missing")
    assert report.removed("drop_negative") == manifest.count("negative")
    assert report.removed("percentile_filter") == manifest.count("outlier")
    assert report.accounting_holds()
    assert report.raw_rows - report.total_removed == report.final_rows == len(out)
    assert report.negative_cells == manifest.count("negative")


def test_pipeline_idempotent(defective):
    ds, _ = defective
    once, _ = run_pipeline(ds)
    twice, report = run_pipeline(once)
    assert report.total_removed == 0
    np.testing.assert_array_equal(once.features, twice.features)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 6), st.integers(0, 6))
@example(seed=1, n_nan=0, n_dup=0)  # one refit of the normal bounds exposes a second extreme row
def test_pipeline_accounting_property(seed, n_nan, n_dup):
    ds = _ds(120, seed % 1000)
    rng = np.random.default_rng(seed)
    X = ds.features.copy()
    X[rng.integers(0, 120, n_nan), rng.integers(0, 59, n_nan)] = np.nan
    ds = Dataset(ds.timestamps, X, ds.targets)
    ds = ds.take(np.sort(np.concatenate([np.arange(120), rng.integers(0, 120, n_dup)])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out, report = run_pipeline(ds)
        _, again = run_pipeline(out)
    assert report.accounting_holds()
    assert report.final_rows == len(out)
    assert again.total_removed == 0


def test_report_json(tmp_path, defective):
    ds, _ = defective
    _, report = run_pipeline(ds)
    report.to_json(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [s["stage"] for s in doc["stages"]] == list(STAGES)
    assert doc["final_rows"] == report.final_rows
