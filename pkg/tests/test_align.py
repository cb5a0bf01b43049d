import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinkerforge.align import (
    EmptyWindow, ResidenceSchedule, WindowPolicy, build_aligned_dataset, production_time, sampling_time,
    shift_streams, window_average,
)
from clinkerforge.datamodel import GROUP_FEATURES, OXIDES, PP_NAMES, RawStreams, StreamTable
from clinkerforge.synthgen import GeneratorConfig, generate_history

T = np.datetime64


def test_schedule_totals():
    s = ResidenceSchedule()
    assert s.production_total == 37
    assert s.measurement_total == 57
    assert s.production_total == s.kf_buffer + s.preheater + s.cooler


def test_production_and_sampling_time():
    assert production_time(T("2020-01-01T08:00")) == T("2020-01-01T08:37")
    assert sampling_time(T("2020-01-01T08:00")) == T("2020-01-01T08:57")
    assert production_time(T("2020-01-01T08:00"), ResidenceSchedule.zero()) == T("2020-01-01T08:00")


def test_window_constant_stream():
    ts = T("2020-01-01T00:00") + np.arange(300).astype("timedelta64[m]")
    assert window_average(ts, np.full(300, 4.25), T("2020-01-01T04:00")) == 4.25


def test_window_weighted_two_samples():
    # samples cover 90 and 30 minutes of a 120-minute window
    ts = np.array([T("2020-01-01T08:00"), T("2020-01-01T09:30")])
    out = window_average(ts, np.array([10.0, 20.0]), T("2020-01-01T10:00"))
    assert out == pytest.approx(12.5, abs=1e-12)


def test_window_single_sample():
    ts = np.array([T("2020-01-01T07:00")])
    assert window_average(ts, np.array([3.0]), T("2020-01-01T08:00")) == 3.0


def test_window_uniform_is_arithmetic_mean(rng):
    ts = T("2020-01-01T00:00") + np.arange(240).astype("timedelta64[m]")
    v = rng.normal(size=(240, 3))
    out = window_average(ts, v, T("2020-01-01T03:00"))
    np.testing.assert_allclose(out, v[60:180].mean(axis=0), rtol=1e-12)


def test_window_empty():
    ts = np.array([T("2020-01-01T12:00")])
    with pytest.raises(EmptyWindow):
        window_average(ts, np.array([1.0]), T("2020-01-01T10:00"))


def test_window_policy_validation():
    with pytest.raises(ValueError):
        WindowPolicy(width=0)


def _tiny_streams(kf_times, clk_times, pp_start="2020-01-01T06:00"):
    pp_ts = T(pp_start) + np.arange(600).astype("timedelta64[m]")
    pp = StreamTable("PP", pp_ts, np.ones((600, len(PP_NAMES))), PP_NAMES)
    kf_ts = np.array([T(t) for t in kf_times])
    kf = StreamTable("KF", kf_ts, np.arange(len(kf_ts))[:, None] + np.zeros((1, 9)), GROUP_FEATURES["KF"])
    clk_ts = np.array([T(t) for t in clk_times])
    hm = StreamTable("HM", clk_ts - np.timedelta64(21, "m"), np.ones((len(clk_ts), 7)), GROUP_FEATURES["HM"])
    clk = StreamTable("CLK", clk_ts, np.ones((len(clk_ts), 12)),
                      GROUP_FEATURES["CO"] + ("CLK_Alite", "CLK_Belite", "CLK_Ferrite"))
    return RawStreams(pp, kf, hm, clk)


def test_kf_latest_at_or_before():
    raw = _tiny_streams(["2020-01-01T09:00", "2020-01-01T10:00"], ["2020-01-01T10:37"])
    ds, rep = build_aligned_dataset(raw)
    assert rep.n_dropped == 0
    assert ds.column("KF_CaO")[0] == 1.0  # the 10:00 row


def test_boundary_row_dropped():
    raw = _tiny_streams(["2020-01-01T09:00"], ["2020-01-01T08:37", "2020-01-01T09:37"])
    ds, rep = build_aligned_dataset(raw)
    assert rep.n_dropped == 1
    assert len(ds) == 1 and ds.timestamps[0] == T("2020-01-01T09:37")
    kept, _ = build_aligned_dataset(raw, keep_unmatched=True)
    assert len(kept) == 2 and np.isnan(kept.column("KF_CaO")[0])


def test_defect_free_history_no_drops(aligned, history):
    raw, _ = history
    ds, rep = aligned
    assert rep.n_dropped == 0
    assert len(ds) + rep.n_dropped == len(raw.clinker)
    assert ds.n_features == 59 and ds.targets.shape[1] == 3
    assert ds.is_strictly_increasing()
    assert not np.isnan(ds.features).any()


def test_pp_window_matches_direct_mean(history, aligned):
    raw, _ = history
    ds, _ = aligned
    i = 100
    end = ds.timestamps[i] - np.timedelta64(37, "m")
    mask = (raw.pp.timestamps >= end - np.timedelta64(120, "m")) & (raw.pp.timestamps < end)
    direct = raw.pp.values[mask].mean(axis=0)
    np.testing.assert_allclose(ds.features[i, :34], direct, rtol=1e-10)


def test_noise_free_alignment_recovers_law():
    raw, truth = generate_history(GeneratorConfig(seed=11, noise_sd=(0.0, 0.0, 0.0)))
    ds, _ = build_aligned_dataset(raw)
    ox = np.column_stack([ds.column("CLK_" + o) for o in OXIDES])
    p13 = ds.column("P13")
    pred = truth.phase_law(ox, p13)
    resid = ds.targets - pred
    r2 = 1 - (resid**2).sum(axis=0) / ((ds.targets - ds.targets.mean(axis=0)) ** 2).sum(axis=0)
    assert np.all(r2 > 0.999), r2


@settings(max_examples=8, deadline=None)
@given(st.integers(-100_000, 100_000))
def test_shift_equivariance(history, delta):
    raw, _ = history
    small = RawStreams(raw.pp.take(np.arange(1440)), raw.kf.take(np.arange(24)), raw.hm.take(np.arange(12)),
                       raw.clinker.take(np.arange(24)))
    a, ra = build_aligned_dataset(small)
    b, rb = build_aligned_dataset(shift_streams(small, delta))
    assert ra.n_dropped == rb.n_dropped
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.targets, b.targets)
    np.testing.assert_array_equal(b.timestamps - a.timestamps, np.timedelta64(delta, "m"))
