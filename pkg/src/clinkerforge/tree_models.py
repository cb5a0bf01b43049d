"""Regression trees, bagged random forests and second-order gradient boosting.

One tree grower serves all three. It works on per-row gradients ``g`` and
hessians ``h``; plain regression uses ``g = -y, h = 1``, for which the
optimal leaf weight ``-G / (H + lam)`` is the leaf mean when ``lam = 0``.
A split's gain is

    0.5 * [S(G_L)^2 / (H_L + lam) + S(G_R)^2 / (H_R + lam) - S(G)^2 / (H + lam)] - gamma

where ``S`` soft-thresholds by ``reg_alpha``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import serialize
from .datamodel import check_columns


class EmptyData(ValueError):
    pass


GAIN_RTOL = 1e-12
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    min_child_weight: float = 0.0
    reg_lambda: float = 0.0
    reg_alpha: float = 0.0
    gamma: float = 0.0
    ccp_alpha: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise ValueError("min_samples_leaf >= 1 and min_samples_split >= 2 required")
        if self.reg_lambda < 0 or self.reg_alpha < 0 or self.gamma < 0 or self.ccp_alpha < 0:
            raise ValueError("regularization terms must be >= 0")


def _soft(G, alpha):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def _score(G, H, p: TreeParams):
    """``S(G)^2 / (H + lam)`` with 0/0 taken as 0."""
    sg = _soft(G, p.reg_alpha)
    den = H + p.reg_lambda
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, sg * sg / np.where(den > 0, den, 1.0), 0.0)


def leaf_weight(G: float, H: float, p: TreeParams) -> float:
    den = H + p.reg_lambda
    return float(-_soft(G, p.reg_alpha) / den) if den > 0 else 0.0


@dataclass
class RegressionTree:
    """Nodes in preorder; ``feature == -1`` marks a leaf holding ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    grad_sum: np.ndarray
    hess_sum: np.ndarray
    n_features: int
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max(initial=0))

    def apply(self, X, columns=None) -> np.ndarray:
        """Leaf index for each row.

        ``columns`` maps the tree's feature indices to columns of a wider
        ``X``, which avoids slicing per tree in an ensemble.
        """
        if columns is None:
            X = check_columns(X, self.n_features)
            feature = self.feature
        else:
            X = np.asarray(X, dtype=np.float64)
            feature = np.where(self.feature >= 0, np.asarray(columns)[np.maximum(self.feature, 0)], -1)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.flatnonzero(feature[node] >= 0)
        while rows.size:
            nd = node[rows]
            go_left = X[rows, feature[nd]] <= self.threshold[nd]
            nxt = np.where(go_left, self.left[nd], self.right[nd])
            node[rows] = nxt
            rows = rows[feature[nxt] >= 0]
        return node

    def predict(self, X, columns=None) -> np.ndarray:
        return self.value[self.apply(X, columns)]

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        names = ("feature", "threshold", "left", "right", "value", "n_samples", "grad_sum", "hess_sum")
        return {prefix + k: getattr(self, k) for k in names}

    @classmethod
    def from_arrays(cls, arrays, n_features, params: TreeParams, prefix: str = "") -> RegressionTree:
        get = lambda k: arrays[prefix + k]  # noqa: E731
        return cls(get("feature"), get("threshold"), get("left"), get("right"), get("value"),
                   get("n_samples"), get("grad_sum"), get("hess_sum"), n_features, params)


def _best_split(Xn, g, h, features, p: TreeParams):
    """Best (gain, feature, threshold) over ``features`` for one node, or None."""
    m = len(g)
    block = Xn[:, features]
    order = np.argsort(block, axis=0, kind="stable")
    xs = np.take_along_axis(block, order, axis=0)
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    G, H = g.sum(), h.sum()
    GR, HR = G - GL, H - HL
    parent = _score(G, H, p)
    gain = 0.5 * (_score(GL, HL, p) + _score(GR, HR, p) - parent) - p.gamma
    nl = np.arange(1, m)[:, None]
    valid = (xs[1:] > xs[:-1]) & (nl >= p.min_samples_leaf) & (m - nl >= p.min_samples_leaf)
    if p.min_child_weight > 0:
        valid &= (HL >= p.min_child_weight) & (HR >= p.min_child_weight)
    gain = np.where(valid, gain, -np.inf)
    col_best = gain.max(axis=0)
    best = col_best.max()
    tol = GAIN_RTOL * max(abs(parent), 1.0)
    if not np.isfinite(best) or best <= tol:
        return None
    # equal partitions reached through a different summation order differ in
    # the last bits, so ties are gains within TIE_RTOL of the best
    f = int(np.flatnonzero(col_best >= best - TIE_RTOL * abs(best))[0])  # lowest feature
    k = int(np.flatnonzero(gain[:, f] >= col_best[f] - TIE_RTOL * abs(col_best[f]))[0])  # lowest threshold
    best = gain[k, f]
    lo, hi = xs[k, f], xs[k + 1, f]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return float(best), int(features[f]), float(thr)


def fit_tree(X, y=None, grad=None, hess=None, params: TreeParams = TreeParams(),
             max_features: int | None = None, rng: np.random.Generator | None = None) -> RegressionTree:
    """Grow one tree greedily, depth first, then apply cost-complexity pruning.

    Pass ``y`` for plain regression or ``grad``/``hess`` for a boosting round.
    ``max_features`` draws that many candidate features at every node.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyData("no training rows")
    if grad is None:
        if y is None:
            raise ValueError("need y or grad")
        grad = -np.asarray(y, dtype=np.float64).ravel()
        hess = np.ones_like(grad)
    else:
        grad = np.asarray(grad, dtype=np.float64).ravel()
        hess = np.ones_like(grad) if hess is None else np.asarray(hess, dtype=np.float64).ravel()
    n, nf = X.shape
    if max_features is not None and max_features < nf and rng is None:
        raise ValueError("feature subsampling needs an rng")

    feat, thr, left, right, val, ns, gs, hs = [], [], [], [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feat)
        g, h = grad[rows], hess[rows]
        G, H = float(g.sum()), float(h.sum())
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(leaf_weight(G, H, params))
        ns.append(len(rows))
        gs.append(G)
        hs.append(H)
        if params.max_depth is not None and depth >= params.max_depth:
            return node
        if len(rows) < params.min_samples_split or len(rows) < 2 * params.min_samples_leaf:
            return node
        if max_features is not None and max_features < nf:
            features = np.sort(rng.choice(nf, size=max_features, replace=False))
        else:
            features = np.arange(nf)
        split = _best_split(X[rows], g, h, features, params)
        if split is None:
            return node
        _, f, t = split
        mask = X[rows, f] <= t
        feat[node], thr[node] = f, t
        left[node] = grow(rows[mask], depth + 1)
        right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(n), 0)
    tree = RegressionTree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                          np.array(right, dtype=np.int64), np.array(val), np.array(ns, dtype=np.int64),
                          np.array(gs), np.array(hs), nf, params)
    if params.ccp_alpha > 0:
        tree = prune(tree, params.ccp_alpha)
    return tree


def _node_risk(tree: RegressionTree, total_h: float) -> np.ndarray:
    """Objective of each node as a leaf, scaled like an impurity over the root."""
    p = tree.params
    return (-_score(tree.grad_sum, tree.hess_sum, p) + 2.0 * p.gamma) / total_h


def prune(tree: RegressionTree, ccp_alpha: float) -> RegressionTree:
    """Weakest-link pruning: collapse the subtree with the smallest effective alpha while it is <= ccp_alpha."""
    feature = tree.feature.copy()
    risk = _node_risk(tree, tree.hess_sum[0])
    n = tree.n_nodes
    while True:
        leaf_risk = np.zeros(n)
        n_leaves = np.zeros(n, dtype=np.int64)
        for i in range(n - 1, -1, -1):  # children follow parents in preorder
            if feature[i] < 0:
                leaf_risk[i], n_leaves[i] = risk[i], 1
            else:
                l, r = tree.left[i], tree.right[i]
                leaf_risk[i] = leaf_risk[l] + leaf_risk[r]
                n_leaves[i] = n_leaves[l] + n_leaves[r]
        reachable = np.zeros(n, dtype=bool)
        reachable[0] = True
        for i in range(n):
            if reachable[i] and feature[i] >= 0:
                reachable[tree.left[i]] = reachable[tree.right[i]] = True
        internal = np.flatnonzero(reachable & (feature >= 0))
        if internal.size == 0:
            break
        eff = (risk[internal] - leaf_risk[internal]) / (n_leaves[internal] - 1)
        k = int(np.argmin(eff))
        if eff[k] > ccp_alpha:
            break
        feature[internal[k]] = -1
    return _compact(tree, feature)


def _compact(tree: RegressionTree, feature: np.ndarray) -> RegressionTree:
    order, stack = [], [0]
    while stack:
        i = stack.pop()
        order.append(i)
        if feature[i] >= 0:
            stack.extend([tree.right[i], tree.left[i]])
    remap = {old: new for new, old in enumerate(order)}
    idx = np.array(order)
    f = feature[idx]
    left = np.array([remap[tree.left[i]] if feature[i] >= 0 else -1 for i in order], dtype=np.int64)
    right = np.array([remap[tree.right[i]] if feature[i] >= 0 else -1 for i in order], dtype=np.int64)
    thr = np.where(f >= 0, tree.threshold[idx], 0.0)
    return RegressionTree(f, thr, left, right, tree.value[idx], tree.n_samples[idx], tree.grad_sum[idx],
                          tree.hess_sum[idx], tree.n_features, tree.params)


# ------------------------------------------------------------------ random forest

@dataclass
class ForestState:
    trees: list
    bootstrap_indices: list
    max_features: float
    oob_error: float
    oob_prediction: np.ndarray
    seed: int = 0

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, X) -> np.ndarray:
        return predict_forest(self, X)

    def to_payload(self):
        arrays = {}
        for t, tree in enumerate(self.trees):
            arrays.update(tree.arrays(f"t{t:04d}_"))
            arrays[f"t{t:04d}_rows"] = self.bootstrap_indices[t]
        arrays["oob_prediction"] = self.oob_prediction
        meta = {"n_trees": len(self.trees), "n_features": self.n_features, "max_features": self.max_features,
                "oob_error": self.oob_error, "seed": self.seed, "params": asdict(self.trees[0].params)}
        return meta, arrays

    @classmethod
    def from_payload(cls, meta, arrays) -> ForestState:
        params = TreeParams(**meta["params"])
        trees = [RegressionTree.from_arrays(arrays, meta["n_features"], params, f"t{t:04d}_")
                 for t in range(meta["n_trees"])]
        rows = [arrays[f"t{t:04d}_rows"] for t in range(meta["n_trees"])]
        return cls(trees, rows, meta["max_features"], meta["oob_error"], arrays["oob_prediction"], meta["seed"])


def n_candidate_features(max_features: float, p: int) -> int:
    return int(min(p, max(1, round(max_features * p))))


def fit_random_forest(X, y, n_estimators: int = 100, max_depth: int | None = None, max_features: float = 1.0,
                      min_samples_leaf: int = 1, min_samples_split: int = 2, bootstrap: bool = True,
                      ccp_alpha: float = 0.0, seed: int = 0) -> ForestState:
    """Bagged regression trees with per-node feature subsampling and out-of-bag error."""
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    params = TreeParams(max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                        min_samples_split=min_samples_split, ccp_alpha=ccp_alpha)
    k = n_candidate_features(max_features, p)
    children = np.random.SeedSequence(seed).spawn(n_estimators)
    trees, indices = [], []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for child in children:
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree = fit_tree(X[rows], y[rows], params=params, max_features=k if k < p else None, rng=rng)
        trees.append(tree)
        indices.append(rows)
        if bootstrap:
            oob = np.ones(n, dtype=bool)
            oob[rows] = False
            if oob.any():
                oob_sum[oob] += tree.predict(X[oob])
                oob_cnt[oob] += 1
    seen = oob_cnt > 0
    oob_pred = np.where(seen, oob_sum / np.where(seen, oob_cnt, 1), np.nan)
    oob_error = float(np.mean((oob_pred[seen] - y[seen]) ** 2)) if seen.any() else float("nan")
    return ForestState(trees, indices, float(max_features), oob_error, oob_pred, seed)


def predict_forest(state: ForestState, X) -> np.ndarray:
    X = check_columns(X, state.n_features)
    return np.mean([t.predict(X) for t in state.trees], axis=0)


# ------------------------------------------------------------------ boosting

@dataclass
class BoosterState:
    base_score: float
    trees: list
    learning_rate: float
    feature_subsets: list
    train_loss: np.ndarray
    n_features: int
    params: TreeParams = field(default_factory=TreeParams)
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    seed: int = 0

    def predict(self, X) -> np.ndarray:
        return predict_gbt(self, X)

    def to_payload(self):
        arrays = {"train_loss": self.train_loss}
        for t, tree in enumerate(self.trees):
            arrays.update(tree.arrays(f"t{t:04d}_"))
            arrays[f"t{t:04d}_cols"] = self.feature_subsets[t]
        meta = {"base_score": self.base_score, "n_trees": len(self.trees), "learning_rate": self.learning_rate,
                "n_features": self.n_features, "params": asdict(self.params), "subsample": self.subsample,
                "colsample_bytree": self.colsample_bytree, "seed": self.seed}
        return meta, arrays

    @classmethod
    def from_payload(cls, meta, arrays) -> BoosterState:
        params = TreeParams(**meta["params"])
        trees, cols = [], []
        for t in range(meta["n_trees"]):
            c = arrays[f"t{t:04d}_cols"]
            trees.append(RegressionTree.from_arrays(arrays, len(c), params, f"t{t:04d}_"))
            cols.append(c)
        return cls(meta["base_score"], trees, meta["learning_rate"], cols, arrays["train_loss"],
                   meta["n_features"], params, meta["subsample"], meta["colsample_bytree"], meta["seed"])


def fit_gbt(X, y, n_estimators: int = 100, learning_rate: float = 0.1, max_depth: int = 3,
            reg_lambda: float = 1.0, reg_alpha: float = 0.0, gamma: float = 0.0, subsample: float = 1.0,
            colsample_bytree: float = 1.0, min_child_weight: float = 1.0, seed: int = 0) -> BoosterState:
    """Squared-loss gradient boosting: each round fits a tree to ``g = f - y, h = 1``."""
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    if not (0 < subsample <= 1 and 0 < colsample_bytree <= 1):
        raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    params = TreeParams(max_depth=max_depth, min_child_weight=min_child_weight, reg_lambda=reg_lambda,
                        reg_alpha=reg_alpha, gamma=gamma)
    rng = np.random.default_rng(seed)
    base = float(y.mean())
    f = np.full(n, base)
    trees, subsets, loss = [], [], [float(np.mean((y - f) ** 2))]
    n_rows = max(1, int(round(subsample * n)))
    n_cols = max(1, int(round(colsample_bytree * p)))
    for _ in range(n_estimators):
        rows = np.sort(rng.choice(n, size=n_rows, replace=False)) if n_rows < n else np.arange(n)
        cols = np.sort(rng.choice(p, size=n_cols, replace=False)) if n_cols < p else np.arange(p)
        g = f - y
        tree = fit_tree(X[np.ix_(rows, cols)], grad=g[rows], hess=np.ones(len(rows)), params=params)
        f = f + learning_rate * tree.predict(X, cols)
        trees.append(tree)
        subsets.append(cols)
        loss.append(float(np.mean((y - f) ** 2)))
    return BoosterState(base, trees, float(learning_rate), subsets, np.array(loss), p, params,
                        float(subsample), float(colsample_bytree), seed)


def predict_gbt(state: BoosterState, X) -> np.ndarray:
    X = check_columns(X, state.n_features)
    out = np.full(len(X), state.base_score)
    for tree, cols in zip(state.trees, state.feature_subsets):
        out += state.learning_rate * tree.predict(X, cols)
    return out


def _load(path, family, cls):
    fam, meta, arrays = serialize.load(path)
    if fam != family:
        raise serialize.FormatError(f"expected {family}, found {fam!r}")
    return cls.from_payload(meta, arrays)


def load_forest(path) -> ForestState:
    return _load(path, "forest", ForestState)


def load_gbt(path) -> BoosterState:
    return _load(path, "gbt", BoosterState)
