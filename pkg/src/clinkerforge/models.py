"""Uniform fit/predict wrapper over the nine regression families.

A :class:`FittedModel` bundles the family state with the feature
standardizer it was trained behind and, for SVR and the MLP, the target
scaling, so a saved model predicts from raw feature rows on its own.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from . import kernel_models as km
from . import linear_models as lm
from . import neural as nn
from . import serialize
from . import tree_models as tm
from .datamodel import check_columns

FAMILIES: tuple[str, ...] = ("lr", "lasso", "ridge", "enet", "rf", "gbt", "svr", "gpr", "nn")
FAMILY_LABELS: dict[str, str] = {
    "lr": "LR", "lasso": "Lasso", "ridge": "Ridge", "enet": "ElasticNet", "rf": "RF",
    "gbt": "GBT", "svr": "SVR", "gpr": "GPR", "nn": "NN",
}
NONLINEAR: tuple[str, ...] = ("gpr", "svr", "nn", "gbt")

# Desk-scale defaults, on standardized features. Penalties are in the
# (1/2n) objective units of linear_models.
DEFAULTS: dict[str, dict[str, Any]] = {
    "lr": {},
    "lasso": {"lam1": 0.01},
    "ridge": {"lam2": 1.0},
    "enet": {"lam1": 0.01, "lam2": 1.0},
    "rf": {"n_estimators": 100, "max_depth": 12, "max_features": 0.75, "min_samples_leaf": 1},
    "gbt": {"n_estimators": 300, "learning_rate": 0.05, "max_depth": 3, "reg_lambda": 1.0, "reg_alpha": 0.0,
            "gamma": 0.0, "subsample": 0.8, "colsample_bytree": 1.0, "min_child_weight": 1.0},
    "svr": {"C": 3.0, "epsilon": 0.1, "gamma": 0.005},
    "gpr": {"lengthscale": 10.0, "signal_variance": 1.0, "noise_level": 0.1, "alpha": 1e-10,
            "restarts": 0, "optimize": True, "kernel": "rbf+white"},
    "nn": {"hidden": 64, "activation": "relu", "dropout": 0.1, "optimizer": "adam", "lr": 1e-3,
           "weight_decay": 1e-4, "momentum": 0.9, "epochs": 150, "batch_size": 32},
}

# Belite uses a scaled RBF with fixed diagonal regularization instead of a White term.
PHASE_OVERRIDES: dict[tuple[str, str], dict[str, Any]] = {
    ("gpr", "belite"): {"kernel": "scaled_rbf", "alpha": 0.1, "scale": 1.0},
}


def default_params(family: str, phase: str | None = None) -> dict[str, Any]:
    if family not in DEFAULTS:
        raise KeyError(f"unknown model family {family!r}; choose from {', '.join(FAMILIES)}")
    params = dict(DEFAULTS[family])
    if phase is not None:
        params.update(PHASE_OVERRIDES.get((family, phase.lower()), {}))
    return params


def _gpr_kernel(p: Mapping[str, Any]):
    rbf = km.RBF(p["lengthscale"], p["signal_variance"], variance_bounds=(1e-2, 1e2))
    kind = p.get("kernel", "rbf+white")
    if kind == "rbf+white":
        return km.Sum(rbf, km.White(p["noise_level"]))
    if kind == "scaled_rbf":
        return km.Product(p.get("scale", 1.0), km.RBF(p["lengthscale"], 1.0), scale_bounds=(1e-2, 1e2))
    if kind == "rbf":
        return rbf
    raise ValueError(f"unknown GPR kernel {kind!r}")


def _fit_state(family: str, X, y, p: Mapping[str, Any], seed: int):
    if family == "lr":
        return lm.fit_ols(X, y)
    if family == "lasso":
        return lm.fit_lasso(X, y, p["lam1"])
    if family == "ridge":
        return lm.fit_ridge(X, y, p["lam2"])
    if family == "enet":
        return lm.fit_elastic_net(X, y, p["lam1"], p["lam2"])
    if family == "rf":
        return tm.fit_random_forest(X, y, n_estimators=p["n_estimators"], max_depth=p["max_depth"],
                                    max_features=p["max_features"], min_samples_leaf=p["min_samples_leaf"],
                                    seed=seed)
    if family == "gbt":
        keys = ("n_estimators", "learning_rate", "max_depth", "reg_lambda", "reg_alpha", "gamma",
                "subsample", "colsample_bytree", "min_child_weight")
        return tm.fit_gbt(X, y, **{k: p[k] for k in keys}, seed=seed)
    if family == "svr":
        return km.fit_svr(X, y, C=p["C"], epsilon=p["epsilon"], gamma=p["gamma"], selection="second_order")
    if family == "gpr":
        return km.fit_gpr(X, y, _gpr_kernel(p), noise=p["alpha"], restarts=p["restarts"],
                          optimize_hyper=p["optimize"], normalize_y=True, seed=seed)
    if family == "nn":
        cfg = nn.MlpConfig(**{k: p[k] for k in ("hidden", "activation", "dropout", "optimizer", "lr",
                                                  "weight_decay", "momentum", "epochs", "batch_size")})
        return nn.mlp_train(X, y, cfg, seed=seed)
    raise KeyError(f"unknown model family {family!r}")


STATE_TYPES: dict[str, Callable] = {
    "lr": lm.LinearModelState, "lasso": lm.LinearModelState, "ridge": lm.LinearModelState,
    "enet": lm.LinearModelState, "rf": tm.ForestState, "gbt": tm.BoosterState,
    "svr": km.SvrState, "gpr": km.GprState, "nn": nn.MlpState,
}
SCALE_TARGET = ("svr", "nn")


@dataclass
class FittedModel:
    family: str
    params: dict
    state: Any
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    feature_names: tuple[str, ...] = ()
    target: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return FAMILY_LABELS[self.family]

    def transform(self, X) -> np.ndarray:
        X = check_columns(X, len(self.x_mean))
        return (X - self.x_mean) / self.x_scale

    def predict(self, X) -> np.ndarray:
        return self.state.predict(self.transform(X)) * self.y_scale + self.y_mean

    def save(self, path) -> None:
        meta, arrays = self.state.to_payload()
        arrays = {"state_" + k: v for k, v in arrays.items()}
        arrays["x_mean"] = self.x_mean
        arrays["x_scale"] = self.x_scale
        doc = {"params": self.params, "state": meta, "y_mean": self.y_mean, "y_scale": self.y_scale,
               "feature_names": list(self.feature_names), "target": self.target, "seed": self.seed,
               "extra": self.extra}
        serialize.save(path, self.family, doc, arrays)


def load_model(path) -> FittedModel:
    family, doc, arrays = serialize.load(path)
    if family not in STATE_TYPES:
        raise serialize.FormatError(f"unknown model family {family!r}")
    state_arrays = {k[len("state_"):]: v for k, v in arrays.items() if k.startswith("state_")}
    state = STATE_TYPES[family].from_payload(doc["state"], state_arrays)
    return FittedModel(family, doc["params"], state, arrays["x_mean"], arrays["x_scale"], doc["y_mean"],
                       doc["y_scale"], tuple(doc["feature_names"]), doc["target"], doc["seed"], doc["extra"])


def fit_model(family: str, X, y, params: Mapping[str, Any] | None = None, seed: int = 0,
              feature_names=(), target: str = "", standardize: bool = True) -> FittedModel:
    """Standardize features on ``X``, fit ``family`` and wrap the result."""
    from .eval_tune import Standardizer

    full = default_params(family, target.replace("CLK_", "") if target else None)
    if params:
        unknown = set(params) - set(full)
        if unknown:
            raise KeyError(f"unknown {family} hyperparameters: {sorted(unknown)}")
        full.update(params)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if standardize:
        scaler = Standardizer.fit(X)
    else:
        scaler = Standardizer(np.zeros(X.shape[1]), np.ones(X.shape[1]))
    Xs = scaler.apply(X)
    y_mean, y_scale = 0.0, 1.0
    if family in SCALE_TARGET:
        y_mean = float(y.mean())
        y_scale = float(y.std()) or 1.0
    state = _fit_state(family, Xs, (y - y_mean) / y_scale, full, seed)
    return FittedModel(family, full, state, scaler.mean, scaler.scale, y_mean, y_scale,
                       tuple(feature_names), target, seed)
