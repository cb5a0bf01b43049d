"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import gpr_direct, normal_equations, ridge_closed_form, svr_dual_qp, tree_exhaustive
from clinkerforge.align import build_aligned_dataset, shift_streams
from clinkerforge.cli import run_pipeline_config
from clinkerforge.config import parse_config
from clinkerforge.datamodel import FEATURE_NAMES, OXIDES, Dataset, RawStreams, Split
from clinkerforge.eval_tune import mape, split_train_test
from clinkerforge.explain import background_sample, global_summary, shap_exact, shap_sampled
from clinkerforge.kernel_models import RBF, fit_gpr, fit_svr, predict_gpr, svr_dual_objective
from clinkerforge.linear_models import fit_elastic_net, fit_lasso, fit_ols, fit_ridge, kkt_residual
from clinkerforge.models import fit_model
from clinkerforge.neural import MlpConfig, MlpState, flatten_grad, mlp_grad, mse_loss
from clinkerforge.phase_equations import (
    FITTED_CASES, EquationCase, compare_equations, eval_equation, fit_clinker_equations, oxide_columns,
    published_equation,
)
from clinkerforge.preprocess import run_pipeline
from clinkerforge.synthgen import DefectRates, GeneratorConfig, generate_history, inject_defects
from clinkerforge.tree_models import TreeParams, fit_gbt, fit_tree


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def _lin_problem(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.5, 3, size=p) + rng.normal(size=p)
    return X, 3.0 + X @ rng.normal(size=p) + 0.5 * rng.normal(size=n)


def _z(X):
    return (X - X.mean(axis=0)) / X.std(axis=0)


def test_criterion_1_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    gaps = {}
    X, y = _lin_problem(200, 10, 0)
    ols, oracle = fit_ols(X, y), normal_equations(X, y)
    gaps["ols"] = max(abs(ols.raw_intercept - oracle[0]), np.abs(ols.coef - oracle[1:]).max())
    r = fit_ridge(X, y, 2.5)
    w_cf = ridge_closed_form(_z(X), y, 2.5)
    gaps["ridge"] = np.abs(r.weights - w_cf).max()
    kkt = []
    for seed in range(5):
        X, y = _lin_problem(80, 12, seed)
        for s in (fit_lasso(X, y, 0.05, tol=1e-10), fit_elastic_net(X, y, 0.05, 0.5, tol=1e-10)):
            kkt.append(kkt_residual(s, X, y))
    gaps["lasso/enet KKT"] = max(kkt)
    svr_gaps = []
    for n, seed in ((6, 0), (8, 1), (10, 2)):
        rng = np.random.default_rng(seed)
        Xs = rng.uniform(-2, 2, size=(n, 2))
        ys = np.sin(Xs[:, 0]) + 0.5 * Xs[:, 1] ** 2
        K = RBF.from_gamma(0.4)(Xs)
        s = fit_svr(Xs, ys, C=2.0, epsilon=0.05, gamma=0.4, tol=1e-3)
        full = np.zeros(n)
        rows = [int(np.flatnonzero(np.all(Xs == sv, axis=1))[0]) for sv in s.support_vectors]
        full[rows] = s.dual_coef
        beta = np.concatenate([np.maximum(full, 0), np.maximum(-full, 0)])
        svr_gaps.append(abs(svr_dual_objective(beta, K, ys, 0.05) - svr_dual_qp(K, ys, 2.0, 0.05)[0]))
    gaps["svr objective"] = max(svr_gaps)
    rng = np.random.default_rng(6)
    Xg, Q = rng.uniform(-2, 2, size=(10, 2)), rng.uniform(-2, 2, size=(7, 2))
    yg = np.sin(Xg[:, 0]) + Xg[:, 1]
    k = RBF(0.8, 1.3)
    g = fit_gpr(Xg, yg, k, noise=0.01, optimize_hyper=False, normalize_y=False)
    mean, cov = predict_gpr(g, Q)
    m_o, c_o = gpr_direct(k(Xg), k(Q, Xg), k(Q), yg, 0.01)
    gaps["gpr"] = max(np.abs(mean - m_o).max(), np.abs(cov - c_o).max())
    cart = 0.0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 31))
        Xc = rng.integers(0, 6, size=(n, 3)).astype(float)
        yc = rng.normal(size=n) + Xc[:, 0]
        depth = [None, 1, 2, 4][seed % 4]
        cart = max(cart, np.abs(fit_tree(Xc, yc, params=TreeParams(max_depth=depth)).predict(Xc)
                                - tree_exhaustive(Xc, yc, max_depth=depth)(Xc)).max())
    gaps["cart"] = cart
    shap = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        w, B, x = rng.normal(size=8), rng.normal(size=(50, 8)), rng.normal(size=8)
        a = shap_exact(lambda Z: Z @ w + 1.0, B, x)
        shap = max(shap, np.abs(a.shap_values - w * (x - B.mean(axis=0))).max())
    gaps["linear shap"] = shap
    elapsed = time.perf_counter() - t0
    ok = (gaps["ols"] <= 1e-8 and gaps["ridge"] <= 1e-8 and gaps["lasso/enet KKT"] <= 1e-6
          and gaps["svr objective"] <= 1e-3 and gaps["gpr"] <= 1e-8 and gaps["cart"] == 0.0
          and gaps["linear shap"] <= 1e-8 and elapsed < 120)
    verdict("C1 oracle equivalence", ok,
            ", ".join(f"{k}={v:.2e}" for k, v in gaps.items()) + f", {elapsed:.1f}s")


def test_criterion_2_numerical_checks(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        kind = "relu" if i % 2 else "leaky_relu"
        r = np.random.default_rng(int(rng.integers(1 << 31)))
        s = MlpState(r.normal(size=(5, 4)), r.normal(size=4), r.normal(size=4), float(r.normal()),
                     MlpConfig(hidden=4, activation=kind))
        X, y = rng.normal(size=(8, 5)), rng.normal(size=8)
        g = flatten_grad(mlp_grad(s, X, y))
        theta, h = s.params(), 1e-5
        fd = np.empty_like(theta)
        for j in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (mse_loss(s.with_params(up), X, y) - mse_loss(s.with_params(dn), X, y)) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12))
    rng = np.random.default_rng(7)
    X = rng.uniform(-2, 2, size=(30, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2
    noisy = fit_gpr(X, y, RBF(0.6, 1.0), noise=0.02, optimize_hyper=False)
    _, var = predict_gpr(noisy, rng.uniform(-3, 3, size=(300, 2)), return_cov=False, return_var=True)
    exact = fit_gpr(X, y, RBF(0.7, 1.0), noise=0.0, optimize_hyper=False)
    m0, v0 = predict_gpr(exact, X, return_cov=False, return_var=True)
    interp = max(np.abs(m0 - y).max(), np.abs(v0).max())
    mono = True
    for seed in range(10):
        r = np.random.default_rng(seed)
        Xt = r.normal(size=(40, 3))
        yt = Xt[:, 0] ** 2 + r.normal(size=40)
        gb = fit_gbt(Xt, yt, n_estimators=30, learning_rate=0.3, max_depth=2, reg_lambda=1.0, reg_alpha=0.5,
                     gamma=0.1, subsample=1.0, colsample_bytree=1.0)
        mono &= bool(np.all(np.diff(gb.train_loss) <= 1e-12 * gb.train_loss[:-1]))
    ok = worst <= 1e-4 and var.min() >= 0 and interp <= 1e-6 and mono
    verdict("C2 numerical checks", ok, f"mlp grad rel={worst:.2e}, gpr min var={var.min():.2e}, "
                                      f"interp gap={interp:.2e}, gbt loss monotone={mono}")


def test_criterion_3_pipeline_exactness(verdict):
    cfg = GeneratorConfig(seed=7, defect_rates=DefectRates(0.01, 0.02, 0.003, 0.01))
    raw, _ = generate_history(cfg)
    bad, manifest = inject_defects(raw, cfg)
    ds, _ = build_aligned_dataset(bad, keep_unmatched=True)
    out, report = run_pipeline(ds)
    stages = {"dedupe": "duplicate", "drop_incomplete": "missing", "drop_negative": "negative",
              "percentile_filter": "outlier"}
    counts = {st: (report.removed(st), manifest.count(kind)) for st, kind in stages.items()}
    exact = all(a == b for a, b in counts.values()) and report.removed("drop_unmatched") == 0
    identity = report.raw_rows - report.total_removed == report.final_rows == len(out)
    _, again = run_pipeline(out)
    ok = exact and identity and again.total_removed == 0
    verdict("C3 pipeline exactness", ok,
            ", ".join(f"{k} {a}/{b}" for k, (a, b) in counts.items())
            + f", {report.raw_rows}-{report.total_removed}={report.final_rows}, second pass {again.total_removed}")


def test_criterion_4_alignment_causality(verdict):
    raw, truth = generate_history(GeneratorConfig(seed=7, noise_sd=(0.0, 0.0, 0.0)))
    ds, _ = build_aligned_dataset(raw)
    ox = np.column_stack([ds.column("CLK_" + o) for o in OXIDES])
    resid = ds.targets - truth.phase_law(ox, ds.column("P13"))
    r2 = 1 - (resid**2).sum(axis=0) / ((ds.targets - ds.targets.mean(axis=0)) ** 2).sum(axis=0)
    small = RawStreams(raw.pp.take(np.arange(2880)), raw.kf.take(np.arange(48)), raw.hm.take(np.arange(24)),
                       raw.clinker.take(np.arange(48)))
    a, _ = build_aligned_dataset(small)
    invariant = True
    for delta in (-525_600, -37, 1, 59, 1440, 10_000_019):
        b, _ = build_aligned_dataset(shift_streams(small, delta))
        invariant &= bool(np.array_equal(a.features, b.features) and np.array_equal(a.targets, b.targets))
    ok = bool(np.all(r2 > 0.999)) and invariant
    verdict("C4 alignment causality", ok, f"min R2={r2.min():.9f}, shift invariant={invariant}")


BENCH_FAMILIES = ("gbt", "svr", "gpr", "nn")


def test_criterion_5_nonlinear_beats_linear(verdict):
    t0 = time.perf_counter()
    raw, _ = generate_history(GeneratorConfig(seed=7))
    ds, _ = build_aligned_dataset(raw)
    wins, lines = 0, []
    for seed in range(10):
        split = split_train_test(ds, 0.8, seed)
        tr, te = split.subset(Split.TRAIN), split.subset(Split.TEST)
        ok = True
        for j, phase in enumerate(ds.target_names):
            scores = {}
            for fam in ("lr",) + BENCH_FAMILIES:
                m = fit_model(fam, tr.features, tr.targets[:, j], seed=seed, feature_names=tr.feature_names,
                              target=phase)
                scores[fam] = mape(te.targets[:, j], m.predict(te.features))
            ok &= min(scores[f] for f in BENCH_FAMILIES) < scores["lr"]
        wins += ok
        lines.append(int(ok))
    elapsed = time.perf_counter() - t0
    verdict("C5 nonlinear below linear MAPE", wins >= 9 and elapsed < 600,
            f"ordering held on {wins}/10 seeds {lines}, {elapsed:.0f}s")


def test_criterion_6_equation_arithmetic(verdict):
    y = eval_equation(published_equation("MajorOnly"), np.array([64.62, 20.89, 5.24, 3.55]))
    hand_alite = 2.97 * 64.62 - 4.5 * 20.89 - 7.25 * 5.24 + 0.05 * 3.55
    hand_belite = -2.1 * 64.62 + 5.66 * 20.89 + 6.15 * 5.24 - 0.11 * 3.55
    arithmetic = (abs(y[0] - 60.10) <= 0.01 and abs(y[1] - 14.37) <= 0.01
                  and abs(y[0] - hand_alite) <= 1e-10 and abs(y[1] - hand_belite) <= 1e-10)
    raw, _ = generate_history(GeneratorConfig(seed=7))
    ds, _ = build_aligned_dataset(raw)
    rng = np.random.default_rng(6)
    recov = 0.0
    for case in map(EquationCase, FITTED_CASES):
        X = oxide_columns(ds, case.oxides)
        A = rng.normal(size=(3, X.shape[1]))
        B = rng.normal(20, 5, size=3) if case.has_intercept else np.zeros(3)
        planted = Dataset(ds.timestamps, ds.features, X @ A.T + B)
        eq = fit_clinker_equations(planted, case)
        recov = max(recov, np.abs(eq.A - A).max(), np.abs(eq.B - B).max())
    means = [np.abs(compare_equations([fit_clinker_equations(ds, c)], ds).table["mean_error"]).max()
             for c in map(EquationCase, FITTED_CASES) if c.has_intercept]
    ok = arithmetic and recov <= 1e-6 and max(means) <= 1e-8
    verdict("C6 equation arithmetic", ok, f"alite={y[0]:.4f}, belite={y[1]:.4f}, recovery gap={recov:.2e}, "
                                         f"intercept-case mean error={max(means):.2e}")


def test_criterion_7_shap_fidelity(verdict):
    raw, _ = generate_history(GeneratorConfig(seed=7))
    ds, _ = build_aligned_dataset(raw)
    split = split_train_test(ds, 0.8, 7)
    tr, te = split.subset(Split.TRAIN), split.subset(Split.TEST)
    m = fit_model("gbt", tr.features, tr.column("CLK_Alite"), seed=7, feature_names=tr.feature_names,
                  target="CLK_Alite")
    co = [FEATURE_NAMES.index("CLK_" + o) for o in OXIDES]
    bg = background_sample(tr.features, 100, seed=7)
    pts = te.features[:20]
    summ = global_summary(m.predict, pts, bg, features=co, feature_names=OXIDES)
    gaps = summ.base_values + summ.phi.sum(axis=1) - m.predict(pts)
    local = np.abs(gaps).max()
    within = True
    for i in range(3):
        exact = shap_exact(m.predict, bg, pts[i], features=co)
        est = shap_sampled(m.predict, bg, pts[i], n_samples=2048, seed=i, features=co)
        within &= bool(np.all(np.abs(est.shap_values - exact.shap_values) <= 3 * est.se))
    cao = OXIDES.index("CaO")
    top = summ.ranking[0]
    ok = local <= 1e-8 and within and top == "CaO" and summ.sign_corr[cao] > 0
    verdict("C7 shap fidelity", ok, f"local gap={local:.2e}, sampled within 3SE={within}, top={top}, "
                                   f"CaO share={summ.share[cao]:.2f}, CaO sign corr={summ.sign_corr[cao]:+.2f}")


REDUCED_CONFIG = """
synth.duration_days = 10
synth.duplicate_frac = 0.01
synth.missing_frac = 0.02
synth.negative_frac = 0.003
synth.outlier_frac = 0.01
tune.families = lr, ridge, gbt, nn
model.gbt.n_estimators = 40
model.nn.epochs = 20
explain.points = 5
explain.background = 30
report.radar_family = lr
"""


def test_criterion_8_reproducibility(verdict, tmp_path):
    cfg = parse_config(REDUCED_CONFIG, "reduced.cfg")
    runs = [tmp_path / "a", tmp_path / "b"]
    manifests = [run_pipeline_config(cfg, out, seed=7) for out in runs]
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*.csv"))
    other = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*.csv"))
    differing = [str(f) for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    stored = [json.loads((r / "manifest.json").read_text())["manifest_hash"] for r in runs]
    same_hash = manifests[0]["manifest_hash"] == manifests[1]["manifest_hash"] == stored[0] == stored[1]
    ok = files == other and len(files) > 0 and not differing and same_hash
    verdict("C8 reproducibility", ok, f"{len(files)} CSV artifacts, differing={differing}, "
                                     f"manifest hash match={same_hash}")
