import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinkerforge.datamodel import FEATURE_NAMES, Dataset
from clinkerforge.eval_tune import (
    ConstantColumnWarning, ConstantTarget, LengthMismatch, MetricReport, TemporalHoldout, TooFewRows,
    ZeroTrueValue, grid_search, kfold_indices, mae, mape, parse_grid, r2, seed_summary, split_summary,
    split_train_test, standardize_fit_apply,
)


def test_mape_examples():
    assert mape([50, 60], [50, 60]) == 0.0
    assert mape([50, 60], [55, 54]) == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(ZeroTrueValue):
        mape([0.0, 1.0], [1.0, 1.0])


def test_mae_examples():
    assert mae([1, 2], [1, 2]) == 0.0
    assert mae([0, 0], [-1, 3]) == 2.0
    assert mae([4.5], [1.0]) == 3.5
    with pytest.raises(LengthMismatch):
        mae([1, 2], [1])
    with pytest.raises(LengthMismatch):
        mae([], [])


def test_r2_examples():
    y = np.array([1.0, 3.0, 2.0, 7.0])
    assert r2(y, y) == 1.0
    assert r2(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-15)
    assert r2(y, y[::-1]) < 0
    with pytest.raises(ConstantTarget):
        r2([2.0, 2.0], [1.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100), st.floats(-100, 100))
def test_r2_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=30)
    p = y + rng.normal(size=30)
    assert r2(a * y + b, a * p + b) == pytest.approx(r2(y, p), rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1, 100), min_size=1, max_size=20), st.integers(0, 1000))
def test_metric_ranges(y, seed):
    y = np.array(y)
    p = y + np.random.default_rng(seed).normal(size=len(y))
    assert mae(y, p) >= 0 and mape(y, p) >= 0
    if np.ptp(y) > 0:
        assert r2(y, p) <= 1
    rep = MetricReport.of(y, p) if np.ptp(y) > 0 else None
    if rep:
        assert rep.mae == mae(y, p)


def _ds(n, months=None, seed=0):
    rng = np.random.default_rng(seed)
    if months:
        start = np.datetime64("2020-01-01T00:00")
        ts = start + np.sort(rng.choice(months * 30 * 24, n, replace=False)) * np.timedelta64(60, "m")
    else:
        ts = np.datetime64("2020-01-01T00:00") + np.arange(n) * np.timedelta64(60, "m")
    return Dataset(ts, rng.normal(size=(n, len(FEATURE_NAMES))), rng.normal(50, 5, size=(n, 3)))


def test_split_ten_rows():
    ds = split_train_test(_ds(10), 0.8, seed=1)
    assert (len(ds.subset("Train")), len(ds.subset("Test"))) == (8, 2)


def test_split_deterministic_and_partition():
    ds = _ds(37)
    a, b = split_train_test(ds, 0.7, seed=3), split_train_test(ds, 0.7, seed=3)
    assert list(a.split) == list(b.split)
    assert list(split_train_test(ds, 0.7, seed=4).split) != list(a.split)
    union = np.sort(np.concatenate([a.subset("Train").timestamps, a.subset("Test").timestamps]))
    np.testing.assert_array_equal(union, ds.timestamps)


def test_temporal_holdout_first_two_months():
    ds = _ds(2000, months=24)
    out = split_train_test(ds, 0.8, seed=0, mode=TemporalHoldout(2))
    hold = out.split == "Holdout"
    cutoff = np.datetime64("2020-03-01T00:00")
    np.testing.assert_array_equal(hold, ds.timestamps < cutoff)
    rest = (~hold).sum()
    assert (out.split == "Train").sum() == round(0.8 * rest)
    summary = split_summary(out)
    assert list(summary["split"]) == ["Train", "Test", "Holdout"]
    assert summary["n"].sum() == 2000


def test_split_bad_args():
    with pytest.raises(ValueError):
        split_train_test(_ds(10), 1.0)
    with pytest.raises(ValueError):
        split_train_test(_ds(10), 0.8, mode="blocked")


def test_standardize_examples():
    train = np.array([[8.0, 1.0], [12.0, 1.0]])
    with pytest.warns(ConstantColumnWarning):
        (tr, other), s = standardize_fit_apply(train, np.array([[14.0, 1.0]]))
    assert other[0, 0] == pytest.approx(2.0)
    assert other[0, 1] == 1.0  # constant column passes through unchanged
    rng = np.random.default_rng(0)
    X = rng.normal(5, 3, size=(100, 4))
    (Z,), _ = standardize_fit_apply(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-10)


def test_kfold_examples():
    folds = kfold_indices(8, 4, seed=0)
    assert [len(f) for f in folds] == [2, 2, 2, 2]
    assert sorted([len(f) for f in kfold_indices(10, 4, seed=0)]) == [2, 2, 3, 3]
    with pytest.raises(TooFewRows):
        kfold_indices(3, 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 1000))
def test_kfold_partition(n, k, seed):
    if n < k:
        return
    folds = kfold_indices(n, k, seed)
    allidx = np.concatenate(folds)
    assert len(allidx) == n and len(np.unique(allidx)) == n
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def test_seed_summary():
    m, s = seed_summary([1.0, 2.0, 3.0])
    assert (m, s) == (2.0, 1.0)
    assert seed_summary([4.0]) == (4.0, 0.0)


def _ridge_problem(seed=0):
    rng = np.random.default_rng(seed)
    n, p = 80, 40
    X = rng.normal(size=(n, p))
    w = rng.normal(0, 0.3, size=p)
    y = 100 + X @ w + rng.normal(0, 1.0, size=n)
    return X, y


def test_grid_singleton():
    X, y = _ridge_problem()
    res = grid_search("ridge", {"lam2": [2.0]}, X, y, k=4, seed=0)
    assert res.best_index == 0 and res.best_params == {"lam2": 2.0}


def test_grid_recovers_ridge_lambda():
    # prior sd 0.3 and noise sd 1 on unit-variance columns put the optimum near 1 / 0.09
    X, y = _ridge_problem()
    res = grid_search("ridge", {"lam2": [1e-6, 11.0, 1e6]}, X, y, k=4, seed=0)
    assert res.best_params == {"lam2": 11.0}
    again = grid_search("ridge", {"lam2": [1e-6, 11.0, 1e6]}, X, y, k=4, seed=0)
    np.testing.assert_array_equal(res.mean_scores, again.mean_scores)
    assert list(res.table()["best"]) == [False, True, False]


def test_grid_failed_candidate_skipped():
    X, y = _ridge_problem()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = grid_search("ridge", {"lam2": [-1.0, 5.0]}, X, y, k=4, seed=0)
    assert 0 in res.errors and np.isnan(res.mean_scores[0])
    assert res.best_index == 1


def test_grid_no_leakage():
    X, y = _ridge_problem()
    folds = kfold_indices(len(y), 4, seed=0)
    seen = {}

    def record(ci, f, train, fitted):
        seen[f] = fitted.x_mean.copy()
        np.testing.assert_allclose(fitted.x_mean, X[train].mean(axis=0), rtol=1e-12)

    grid_search("ridge", {"lam2": [1.0]}, X, y, k=4, seed=0, on_fold=record)
    X2 = X.copy()
    X2[folds[0][0]] += 1000.0  # a fold-0 validation row
    before = dict(seen)
    X[:] = X2
    grid_search("ridge", {"lam2": [1.0]}, X, y, k=4, seed=0, on_fold=lambda ci, f, tr, m: seen.__setitem__(f, m.x_mean))
    np.testing.assert_array_equal(seen[0], before[0])
    assert not np.array_equal(seen[1], before[1])


def test_grid_threads_match_serial():
    X, y = _ridge_problem()
    a = grid_search("ridge", {"lam2": [0.1, 1.0, 10.0]}, X, y, jobs=1)
    b = grid_search("ridge", {"lam2": [0.1, 1.0, 10.0]}, X, y, jobs=3)
    np.testing.assert_array_equal(a.fold_scores, b.fold_scores)


def test_parse_grid():
    g = parse_grid("# comment\nC = 1, 10\nkernel = rbf\n")
    assert g == {"C": [1, 10], "kernel": ["rbf"]}
    with pytest.raises(ValueError):
        parse_grid("")
