"""Shapley attributions with interventional (background-replacement) expectations.

A coalition value is the mean model output when the features in the
coalition take the explained point's values and all other explained
features take each background row's values in turn:

    v(S) = mean_b f(x_S, b_~S)
    phi_j = sum_{S not containing j} |S|! (n - |S| - 1)! / n! * (v(S + j) - v(S))

Features outside the explained set stay at the point's values, so local
accuracy ``v(empty) + sum(phi) = f(x)`` always holds.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Callable, Sequence

import numpy as np
import pandas as pd


class TooManyFeatures(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


Predict = Callable[[np.ndarray], np.ndarray]
BACKGROUND_ROWS = 100
_CHUNK_ROWS = 200_000
_SE_FLOOR = 1e-10


@dataclass(frozen=True)
class Attribution:
    base_value: float
    shap_values: np.ndarray
    x: np.ndarray  # values of the explained features at the point
    prediction: float
    feature_names: tuple[str, ...] = ()
    se: np.ndarray | None = None  # sampling mode only

    def local_gap(self) -> float:
        return float(self.base_value + self.shap_values.sum() - self.prediction)


def background_sample(X, n: int = BACKGROUND_ROWS, seed: int = 0) -> np.ndarray:
    """``n`` rows drawn without replacement (all rows if there are fewer)."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) <= n:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(len(X), n, replace=False))
    return X[idx]


def _setup(background, x, features):
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64).ravel()
    if len(B) == 0:
        raise ValueError("empty background")
    if B.shape[1] != x.size:
        raise ValueError(f"background has {B.shape[1]} columns, point has {x.size}")
    feats = np.arange(x.size) if features is None else np.asarray(features, dtype=np.int64)
    return B, x, feats


def coalition_values(predict: Predict, background, x, masks, features=None) -> np.ndarray:
    """``v(S)`` for each boolean row of ``masks`` (columns index ``features``)."""
    B, x, feats = _setup(background, x, features)
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    m = len(B)
    base = B.copy()
    others = np.setdiff1d(np.arange(x.size), feats)
    base[:, others] = x[others]
    out = np.empty(len(masks))
    step = max(1, _CHUNK_ROWS // m)
    for start in range(0, len(masks), step):
        mk = masks[start:start + step]
        Z = np.repeat(base[None], len(mk), axis=0)
        full = np.zeros((len(mk), x.size), dtype=bool)
        full[:, feats] = mk
        Z = np.where(full[:, None, :], x, Z)
        pred = np.asarray(predict(Z.reshape(-1, x.size)), dtype=np.float64)
        out[start:start + step] = pred.reshape(len(mk), m).mean(axis=1)
    return out


def _all_masks(n: int) -> np.ndarray:
    codes = np.arange(2**n)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(bool)


def shapley_weights(n: int) -> np.ndarray:
    """Weight of a coalition of size s (s = 0..n-1) in a player's marginal-contribution sum."""
    return np.array([factorial(s) * factorial(n - s - 1) / factorial(n) for s in range(n)])


def shap_exact(predict: Predict, background, x, max_features: int = 12, features=None,
               feature_names: Sequence[str] = ()) -> Attribution:
    """Enumerate all 2^n coalitions of the explained features."""
    B, x, feats = _setup(background, x, features)
    n = len(feats)
    if n > max_features:
        raise TooManyFeatures(f"{n} features exceed the exact-enumeration limit {max_features}")
    masks = _all_masks(n)
    v = coalition_values(predict, B, x, masks, feats)
    w = shapley_weights(n)
    size = masks.sum(axis=1)
    codes = np.arange(2**n)
    phi = np.zeros(n)
    for j in range(n):
        without = codes[(codes >> j) & 1 == 0]
        phi[j] = np.sum(w[size[without]] * (v[without | (1 << j)] - v[without]))
    return Attribution(float(v[0]), phi, x[feats].copy(), float(v[-1]), tuple(feature_names))


def _kernel_solve(Z, v, base, delta):
    """Least squares of ``v - base`` on coalition indicators with ``sum(phi) = delta`` enforced."""
    n = Z.shape[1]
    if n == 1:
        return np.array([delta])
    D = Z[:, :-1].astype(np.float64) - Z[:, -1:].astype(np.float64)
    r = v - base - Z[:, -1] * delta
    head, *_ = np.linalg.lstsq(D, r, rcond=None)
    return np.append(head, delta - head.sum())


def shap_sampled(predict: Predict, background, x, n_samples: int = 2048, seed: int = 0, features=None,
                 feature_names: Sequence[str] = (), n_boot: int = 200) -> Attribution:
    """Kernel estimator on coalitions drawn from the Shapley kernel, with efficiency imposed exactly.

    Coalitions come in complementary pairs; sizes follow
    ``p(s) ~ (n - 1) / (s (n - s))`` and members are uniform within a size,
    so the regression is unweighted. Standard errors are the bootstrap sd of
    the estimate over resampled pairs, floored at round-off level.
    """
    B, x, feats = _setup(background, x, features)
    n = len(feats)
    if n_samples < 2 * (n + 1):
        raise InsufficientSamples(f"need at least {2 * (n + 1)} coalition samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    ends = coalition_values(predict, B, x, np.array([np.zeros(n, bool), np.ones(n, bool)]), feats)
    base, fx = float(ends[0]), float(ends[1])
    delta = fx - base
    if n == 1:
        return Attribution(base, np.array([delta]), x[feats].copy(), fx, tuple(feature_names), np.zeros(1))
    sizes = np.arange(1, n)
    p = (n - 1) / (sizes * (n - sizes))
    n_pairs = n_samples // 2
    s = rng.choice(sizes, size=n_pairs, p=p / p.sum())
    keys = rng.random((n_pairs, n))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    half = ranks < s[:, None]
    Z = np.concatenate([half, ~half])
    v = coalition_values(predict, B, x, Z, feats)
    phi = _kernel_solve(Z, v, base, delta)
    boots = np.empty((n_boot, n))
    for b in range(n_boot):
        pick = rng.integers(0, n_pairs, n_pairs)
        rows = np.concatenate([pick, pick + n_pairs])
        boots[b] = _kernel_solve(Z[rows], v[rows], base, delta)
    # floor at solver round-off: paired sampling is exact for games without
    # interactions above second order, where the bootstrap spread is ~1e-16
    se = np.maximum(boots.std(axis=0, ddof=1), _SE_FLOOR * max(abs(delta), np.abs(phi).max(), 1.0))
    return Attribution(base, phi, x[feats].copy(), fx, tuple(feature_names), se)


@dataclass(frozen=True)
class GlobalAttributionSummary:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray
    sign_corr: np.ndarray  # Pearson correlation of feature value with its phi
    phi: np.ndarray  # (points, features)
    values: np.ndarray  # (points, features)
    base_values: np.ndarray

    @property
    def ranking(self) -> list[str]:
        order = np.lexsort((np.arange(len(self.mean_abs)), -self.mean_abs))
        return [self.feature_names[i] for i in order]

    @property
    def share(self) -> np.ndarray:
        total = self.mean_abs.sum()
        return self.mean_abs / total if total > 0 else np.zeros_like(self.mean_abs)

    def table(self) -> pd.DataFrame:
        df = pd.DataFrame({"feature": self.feature_names, "mean_abs_shap": self.mean_abs,
                           "share": self.share, "sign_corr": self.sign_corr})
        order = [self.feature_names.index(f) for f in self.ranking]
        df = df.iloc[order].reset_index(drop=True)
        df.insert(0, "rank", np.arange(1, len(df) + 1))
        return df

    def beeswarm(self) -> pd.DataFrame:
        """Long table with columns feature, value, phi, point_id."""
        k, p = self.phi.shape
        return pd.DataFrame({
            "feature": np.tile(np.array(self.feature_names, dtype=object), k),
            "value": self.values.ravel(),
            "phi": self.phi.ravel(),
            "point_id": np.repeat(np.arange(k), p),
        })


def _corr(a, b) -> float:
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def global_summary(predict: Predict, X_test, background, features=None, feature_names: Sequence[str] = (),
                   mode: str = "exact", n_samples: int = 2048, seed: int = 0) -> GlobalAttributionSummary:
    """Explain every test row and aggregate mean |phi| and value-phi directionality per feature."""
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    if len(X_test) == 0:
        raise ValueError("empty test set")
    rows = []
    for i, x in enumerate(X_test):
        if mode == "exact":
            rows.append(shap_exact(predict, background, x, features=features))
        elif mode == "sampled":
            rows.append(shap_sampled(predict, background, x, n_samples, seed + i, features=features))
        else:
            raise ValueError(f"unknown SHAP mode {mode!r}")
    phi = np.array([a.shap_values for a in rows])
    vals = np.array([a.x for a in rows])
    names = tuple(feature_names) or tuple(f"x{j}" for j in range(phi.shape[1]))
    corr = np.array([_corr(vals[:, j], phi[:, j]) for j in range(phi.shape[1])])
    return GlobalAttributionSummary(names, np.abs(phi).mean(axis=0), corr, phi, vals,
                                    np.array([a.base_value for a in rows]))
