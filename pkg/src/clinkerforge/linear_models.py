"""Ordinary least squares, ridge, lasso and elastic net.

All four share one predictor, ``y = theta0 + z @ theta`` where ``z`` is the
input after the stored per-column standardization. The penalized fits
minimize

    (1 / 2n) * (RSS + lam2 * ||theta||^2) + lam1 * ||theta||_1

with the intercept left unpenalized, so ``lam1`` above ``max|Z'y| / n``
zeroes every weight and ``lam1 = 0`` gives ridge with penalty ``lam2``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import serialize
from .datamodel import check_columns


class RankDeficient(ValueError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class MaxIterExceeded(RuntimeWarning):
    pass


CD_TOL = 1e-7
CD_MAX_SWEEPS = 10_000


@dataclass
class LinearModelState:
    intercept: float
    weights: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    lam1: float = 0.0
    lam2: float = 0.0
    kind: str = "ols"
    n_iter: int = 0
    converged: bool = True
    rank: int | None = None
    objective_history: list = field(default_factory=list, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.weights)

    @property
    def coef(self) -> np.ndarray:
        """Weights on the original (unstandardized) columns."""
        return self.weights / self.x_scale

    @property
    def raw_intercept(self) -> float:
        return float(self.intercept - self.x_mean @ self.coef)

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)

    def to_payload(self):
        meta = {"intercept": self.intercept, "lam1": self.lam1, "lam2": self.lam2, "kind": self.kind,
                "n_iter": self.n_iter, "converged": self.converged, "rank": self.rank}
        return meta, {"weights": self.weights, "x_mean": self.x_mean, "x_scale": self.x_scale}

    @classmethod
    def from_payload(cls, meta, arrays) -> LinearModelState:
        return cls(meta["intercept"], arrays["weights"], arrays["x_mean"], arrays["x_scale"],
                   meta["lam1"], meta["lam2"], meta["kind"], meta["n_iter"], meta["converged"], meta["rank"])

    def save(self, path) -> None:
        meta, arrays = self.to_payload()
        serialize.save(path, "linear", meta, arrays)


def predict_linear(state: LinearModelState, X) -> np.ndarray:
    X = check_columns(X, state.n_features)
    return state.intercept + ((X - state.x_mean) / state.x_scale) @ state.weights


def _prepare(X, y, standardize: bool):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X {X.shape} and y {y.shape} disagree")
    mean = X.mean(axis=0)
    if standardize:
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        scale = np.ones(X.shape[1])
    Z = (X - mean) / scale
    return Z, y, mean, scale


def fit_ols(X, y) -> LinearModelState:
    """Least squares through an SVD-based solver; rank deficiency gives the minimum-norm solution."""
    Z, y, mean, scale = _prepare(X, y, standardize=False)
    ybar = y.mean()
    theta, _, rank, _ = linalg.lstsq(Z, y - ybar, lapack_driver="gelsd")
    if rank < Z.shape[1]:
        warnings.warn(f"design matrix rank {rank} < {Z.shape[1]} columns; minimum-norm solution",
                      RankDeficientWarning, stacklevel=2)
    return LinearModelState(float(ybar), theta, mean, scale, kind="ols", rank=int(rank))


def fit_ridge(X, y, lam2: float, standardize: bool = True) -> LinearModelState:
    """Minimize ``RSS + lam2 * ||theta||^2`` by the normal equations."""
    if lam2 < 0:
        raise ValueError("lam2 must be >= 0")
    Z, y, mean, scale = _prepare(X, y, standardize)
    ybar = y.mean()
    A = Z.T @ Z + lam2 * np.eye(Z.shape[1])
    b = Z.T @ (y - ybar)
    try:
        theta = linalg.solve(A, b, assume_a="pos")
    except linalg.LinAlgError:
        theta = linalg.lstsq(A, b)[0]
    return LinearModelState(float(ybar), theta, mean, scale, lam2=float(lam2), kind="ridge")


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def penalized_objective(Z, yc, theta, lam1, lam2) -> float:
    n = len(yc)
    r = yc - Z @ theta
    return float((r @ r + lam2 * theta @ theta) / (2 * n) + lam1 * np.abs(theta).sum())


def _coordinate_descent(Z, yc, lam1, lam2, tol, max_sweeps, theta0=None):
    n, p = Z.shape
    G = Z.T @ Z / n
    g = Z.T @ yc / n
    diag = np.diag(G) + lam2 / n
    theta = np.zeros(p) if theta0 is None else theta0.copy()
    history = [penalized_objective(Z, yc, theta, lam1, lam2)]
    Gtheta = G @ theta
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if diag[j] == 0:
                continue
            old = theta[j]
            rho = g[j] - Gtheta[j] + G[j, j] * old
            new = soft_threshold(rho, lam1) / diag[j]
            if new != old:
                Gtheta += G[:, j] * (new - old)
                theta[j] = new
                max_change = max(max_change, abs(new - old))
        history.append(penalized_objective(Z, yc, theta, lam1, lam2))
        if max_change < tol:
            return theta, sweep, True, history
    return theta, max_sweeps, False, history


def fit_elastic_net(X, y, lam1: float, lam2: float, standardize: bool = True,
                    tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS) -> LinearModelState:
    """Cyclic coordinate descent with soft-thresholding.

    Stops when the largest coefficient change in a sweep is below ``tol``.
    Running out of sweeps warns with MaxIterExceeded and returns the last
    iterate with ``converged=False``.
    """
    if lam1 < 0 or lam2 < 0:
        raise ValueError("penalties must be >= 0")
    Z, y, mean, scale = _prepare(X, y, standardize)
    ybar = y.mean()
    theta, sweeps, ok, history = _coordinate_descent(Z, y - ybar, lam1, lam2, tol, max_sweeps)
    if not ok:
        warnings.warn(f"coordinate descent stopped after {sweeps} sweeps", MaxIterExceeded, stacklevel=2)
    kind = "lasso" if lam2 == 0 else "elastic_net"
    return LinearModelState(float(ybar), theta, mean, scale, float(lam1), float(lam2), kind, sweeps, ok,
                            objective_history=history)


def fit_lasso(X, y, lam1: float, standardize: bool = True, tol: float = CD_TOL,
              max_sweeps: int = CD_MAX_SWEEPS) -> LinearModelState:
    return fit_elastic_net(X, y, lam1, 0.0, standardize, tol, max_sweeps)


def lambda_max(X, y, standardize: bool = True) -> float:
    """Smallest ``lam1`` at which every lasso weight is zero."""
    Z, y, _, _ = _prepare(X, y, standardize)
    return float(np.max(np.abs(Z.T @ (y - y.mean()))) / len(y))


def kkt_residual(state: LinearModelState, X, y) -> float:
    """Largest violation of the subgradient optimality conditions (standardized space)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    Z = (X - state.x_mean) / state.x_scale
    n = len(y)
    r = y - state.intercept - Z @ state.weights
    grad = Z.T @ r / n - state.lam2 * state.weights / n
    nz = state.weights != 0
    res = np.zeros_like(grad)
    res[nz] = np.abs(grad[nz] - state.lam1 * np.sign(state.weights[nz]))
    res[~nz] = np.maximum(np.abs(grad[~nz]) - state.lam1, 0.0)
    return float(max(res.max(initial=0.0), abs(r.mean())))


def load_linear(path) -> LinearModelState:
    family, meta, arrays = serialize.load(path)
    if family != "linear":
        raise serialize.FormatError(f"expected a linear model, found {family!r}")
    return LinearModelState.from_payload(meta, arrays)
