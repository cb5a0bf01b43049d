import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinkerforge.datamodel import FEATURE_NAMES, MAJOR_OXIDES, OXIDES, Dataset, DimensionMismatch
from clinkerforge.linear_models import RankDeficient
from clinkerforge.phase_equations import (
    FITTED_CASES, EquationCase, PhaseEquationSet, bogue_constants, bogue_standard, compare_equations,
    error_histogram, eval_equation, fit_clinker_equations, load_equation, oxide_columns, parse_equation,
    published_equation,
)

MEANS = np.array([64.62, 20.89, 5.24, 3.55])


def _oxide_ds(Y_fn, n=200, seed=0, k=9):
    rng = np.random.default_rng(seed)
    from clinkerforge.synthgen import CO_MEAN, CO_SD

    ox = CO_MEAN + CO_SD * rng.normal(size=(n, 9))
    X = np.zeros((n, len(FEATURE_NAMES)))
    for j, o in enumerate(OXIDES):
        X[:, FEATURE_NAMES.index("CLK_" + o)] = ox[:, j]
    ts = np.datetime64("2020-01-01T00:37") + np.arange(n) * np.timedelta64(60, "m")
    return Dataset(ts, X, Y_fn(ox, rng))


def test_case1_at_table_means():
    y = eval_equation(published_equation("MajorOnly"), MEANS)
    # hand arithmetic: 2.97*64.62 - 4.5*20.89 - 7.25*5.24 + 0.05*3.55 and the belite row likewise
    assert y[0] == pytest.approx(60.1039, abs=1e-9)
    assert y[1] == pytest.approx(14.3709, abs=1e-9)
    assert abs(y[0] - 60.10) <= 0.01 and abs(y[1] - 14.37) <= 0.01


def test_zero_input_zero_output():
    np.testing.assert_array_equal(eval_equation(published_equation("MajorOnly"), np.zeros(4)), 0.0)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        eval_equation(published_equation("MajorOnly"), np.zeros(5))
    with pytest.raises(DimensionMismatch):
        PhaseEquationSet(EquationCase.MAJOR_ONLY, np.zeros((3, 3)))


def test_clip_flag():
    eq = published_equation("MajorOnly")
    y = eval_equation(eq, np.array([0.0, 30.0, 0.0, 0.0]))
    assert y[0] < 0
    assert eval_equation(eq, np.array([0.0, 30.0, 0.0, 0.0]), clip=True)[0] == 0.0


@pytest.mark.parametrize("case", FITTED_CASES)
def test_fit_recovers_planted_coefficients(case):
    case = EquationCase(case)
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, len(case.oxides)))
    B = rng.normal(10, 5, size=3) if case.has_intercept else np.zeros(3)
    idx = [OXIDES.index(o) for o in case.oxides]
    ds = _oxide_ds(lambda ox, r: ox[:, idx] @ A.T + B + 100)
    if not case.has_intercept:
        ds = _oxide_ds(lambda ox, r: ox[:, idx] @ A.T)
    fitted = fit_clinker_equations(ds, case)
    np.testing.assert_allclose(fitted.A, A, atol=1e-6)
    np.testing.assert_allclose(fitted.B, B + (100 if case.has_intercept else 0), atol=1e-6)


def test_case1_matrix_recovered():
    A = published_equation("MajorOnly").A
    ds = _oxide_ds(lambda ox, r: ox[:, :4] @ A.T + 50)
    fitted = fit_clinker_equations(ds, "MajorOnly")
    # no intercept to absorb the shift, so refit without it
    ds0 = _oxide_ds(lambda ox, r: ox[:, :4] @ A.T)
    np.testing.assert_allclose(fit_clinker_equations(ds0, "MajorOnly").A, A, atol=1e-6)
    assert not np.allclose(fitted.A, A, atol=1e-6)


def test_rank_deficient():
    ds = _oxide_ds(lambda ox, r: ox[:, :3] + 50, n=4)
    with pytest.raises(RankDeficient):
        fit_clinker_equations(ds, "MajorMinorIntercept")
    with pytest.raises(ValueError):
        fit_clinker_equations(ds, "BogueStandard")


@pytest.fixture(scope="module")
def synth_ds(aligned):
    return aligned[0]


@pytest.mark.parametrize("case", FITTED_CASES)
def test_residuals_orthogonal_and_mean_zero(synth_ds, case):
    case = EquationCase(case)
    eq = fit_clinker_equations(synth_ds, case)
    X = oxide_columns(synth_ds, case.oxides)
    D = np.column_stack([X, np.ones(len(X))]) if case.has_intercept else X
    resid = synth_ds.targets - eval_equation(eq, X)
    scale = np.abs(D).max(axis=0) * np.abs(synth_ds.targets).max()
    assert np.all(np.abs(D.T @ resid) / (len(D) * scale[:, None]) <= 1e-8)
    comp = compare_equations([eq], synth_ds)
    if case.has_intercept:
        assert np.all(np.abs(comp.table["mean_error"]) <= 1e-8)


def test_case_mapes_similar(synth_ds):
    eqs = [fit_clinker_equations(synth_ds, c) for c in FITTED_CASES]
    t = compare_equations(eqs, synth_ds).table
    spread = t.groupby("phase")["MAPE"].agg(lambda m: m.max() - m.min())
    assert np.all(spread < 1.0), spread


def test_bogue_constants_round_trip(tmp_path):
    eq = bogue_constants()
    assert eq.oxides == MAJOR_OXIDES
    np.testing.assert_array_equal(eq.A[0], [4.071, -7.600, -6.718, -1.430])
    eq.save(tmp_path / "b.txt")
    back = load_equation(tmp_path / "b.txt")
    np.testing.assert_array_equal(back.A, eq.A)
    np.testing.assert_array_equal(back.B, eq.B)
    np.testing.assert_array_equal(back.aluminate[0], eq.aluminate[0])
    assert bogue_constants(tmp_path / "b.txt").case is EquationCase.BOGUE


def test_bogue_at_means_hand_arithmetic():
    c, s, a, f = MEANS
    hand = [4.071 * c - 7.600 * s - 6.718 * a - 1.430 * f,
            -3.071 * c + 8.602 * s + 5.068 * a + 1.079 * f,
            3.043 * f,
            2.650 * a - 1.692 * f]
    got = bogue_standard(MEANS, aluminate=True)
    np.testing.assert_allclose(got, hand, rtol=0, atol=1e-10)
    assert got[0] == pytest.approx(64.0252, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 80), min_size=4, max_size=4), st.lists(st.floats(0, 80), min_size=4, max_size=4),
       st.floats(-3, 3), st.floats(-3, 3))
def test_zero_intercept_linearity(x, y, a, b):
    x, y = np.array(x), np.array(y)
    for eq in (bogue_constants(), published_equation("MajorOnly")):
        lhs = eval_equation(eq, a * x + b * y)
        rhs = a * eval_equation(eq, x) + b * eval_equation(eq, y)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(bogue_standard(2 * x), 2 * bogue_standard(x), rtol=1e-12, atol=1e-12)


def test_fitted_beats_published_and_bogue(synth_ds):
    fitted = [fit_clinker_equations(synth_ds, c) for c in FITTED_CASES]
    others = [published_equation(c) for c in FITTED_CASES] + [bogue_constants()]
    t = compare_equations(fitted + others, synth_ds, names=[f"fit{i}" for i in range(4)]
                          + [f"pub{i}" for i in range(4)] + ["bogue"]).table
    for phase, g in t.groupby("phase"):
        fit_mae = g[g["equation"].str.startswith("fit")]["MAE"]
        other_mae = g[~g["equation"].str.startswith("fit")]["MAE"]
        assert fit_mae.max() < other_mae.min(), phase
    # least squares: the fitted set has the smallest squared error among sets on its own columns
    comp = compare_equations([fitted[0], published_equation("MajorOnly"), bogue_constants()], synth_ds,
                             names=["fit", "pub", "bogue"])
    for phase in ("Alite", "Belite", "Ferrite"):
        sse = [np.sum(comp.errors[n, phase] ** 2) for n in ("fit", "pub", "bogue")]
        assert sse[0] <= min(sse[1:])


def test_fitted_beats_misscaled_bogue(synth_ds, tmp_path):
    bogue = bogue_constants()
    bad = PhaseEquationSet(EquationCase.BOGUE, bogue.A * 1.25, bogue.B, bogue.oxides)
    bad.save(tmp_path / "bad.txt")
    t = compare_equations([fit_clinker_equations(synth_ds, "MajorOnly"), bogue_constants(tmp_path / "bad.txt")],
                          synth_ds, names=["fit", "bad"]).table
    for phase, g in t.groupby("phase"):
        assert g.set_index("equation").loc["fit", "MAE"] < g.set_index("equation").loc["bad", "MAE"]


def test_identical_equations_identical_rows(synth_ds):
    eq = published_equation("MajorMinor")
    t = compare_equations([eq, eq], synth_ds, names=["a", "b"]).table
    cols = ["MAPE", "MAE", "R2", "mean_error"]
    np.testing.assert_array_equal(t[t.equation == "a"][cols].to_numpy(), t[t.equation == "b"][cols].to_numpy())


def test_error_histogram_bins():
    h = error_histogram(np.array([-0.7, -0.1, 0.0, 0.2, 1.3]), width=0.5)
    assert h["count"].sum() == 5
    np.testing.assert_allclose(np.diff(h["bin_lo"]), 0.5)
    assert h["bin_lo"].iloc[0] == -1.0


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_equation("columns CaO intercept\nAlite 1 0\n")
    with pytest.raises(DimensionMismatch):
        parse_equation("case MajorOnly\ncolumns CaO SiO2 Al2O3 Fe2O3 intercept\nAlite 1 2 3\n")
    with pytest.raises(ValueError):
        parse_equation("case MajorOnly\ncolumns CaO SiO2 Al2O3 Fe2O3 intercept\nAlite 1 2 3 4 0\n")


def test_published_intercepts_shared():
    a, b = published_equation("MajorIntercept"), published_equation("MajorMinorIntercept")
    np.testing.assert_array_equal(a.B, b.B)
    np.testing.assert_array_equal(published_equation("MajorOnly").B, 0.0)
