"""Support vector regression and Gaussian process regression with RBF kernels.

SVR solves the epsilon-insensitive dual with sequential minimal optimization.
GPR factors ``K + noise * I`` once by Cholesky and picks kernel
hyperparameters by maximizing the log marginal likelihood.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from . import serialize
from .datamodel import DimensionMismatch, check_columns


class NotPositiveDefinite(linalg.LinAlgError):
    pass


class MaxIterExceeded(RuntimeWarning):
    pass


# ------------------------------------------------------------------ kernels

def _sqdist(A, B) -> np.ndarray:
    return cdist(A, B, "sqeuclidean")


@dataclass(frozen=True)
class RBF:
    """``variance * exp(-|x - x'|^2 / (2 * lengthscale^2))``."""

    lengthscale: float = 1.0
    variance: float = 1.0
    lengthscale_bounds: tuple[float, float] = (1e-2, 1e3)
    variance_bounds: tuple[float, float] | None = None  # None keeps the variance fixed

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be > 0")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")

    @classmethod
    def from_gamma(cls, gamma: float, variance: float = 1.0) -> RBF:
        """The ``exp(-gamma * |x - x'|^2)`` parameterization."""
        if gamma <= 0:
            raise ValueError("gamma must be > 0")
        return cls(lengthscale=float(np.sqrt(0.5 / gamma)), variance=variance)

    @property
    def gamma(self) -> float:
        return 0.5 / self.lengthscale**2

    def __call__(self, A, B=None) -> np.ndarray:
        B = A if B is None else B
        return self.variance * np.exp(-0.5 * _sqdist(A, B) / self.lengthscale**2)

    def diag(self, A) -> np.ndarray:
        return np.full(len(A), self.variance)

    # log-space hyperparameters for the marginal-likelihood search
    def free(self) -> list[tuple[str, tuple[float, float]]]:
        out = []
        if self.lengthscale_bounds is not None:
            out.append(("lengthscale", self.lengthscale_bounds))
        if self.variance_bounds is not None:
            out.append(("variance", self.variance_bounds))
        return out

    def theta(self) -> np.ndarray:
        return np.log([getattr(self, name) for name, _ in self.free()])

    def with_theta(self, theta) -> RBF:
        return replace(self, **{name: float(np.exp(t)) for (name, _), t in zip(self.free(), theta)})

    def gram_grad(self, X) -> tuple[np.ndarray, list[np.ndarray]]:
        D = _sqdist(X, X)
        K = self.variance * np.exp(-0.5 * D / self.lengthscale**2)
        grads = []
        for name, _ in self.free():
            grads.append(K * D / self.lengthscale**2 if name == "lengthscale" else K)
        return K, grads


@dataclass(frozen=True)
class White:
    """Independent noise: ``noise`` on the diagonal of a set with itself, zero across sets."""

    noise: float = 1.0
    noise_bounds: tuple[float, float] | None = (1e-5, 1e1)

    def __call__(self, A, B=None) -> np.ndarray:
        if B is None or B is A:
            return self.noise * np.eye(len(A))
        return np.zeros((len(A), len(B)))

    def diag(self, A) -> np.ndarray:
        return np.full(len(A), self.noise)

    def free(self):
        return [] if self.noise_bounds is None else [("noise", self.noise_bounds)]

    def theta(self) -> np.ndarray:
        return np.log([self.noise]) if self.free() else np.empty(0)

    def with_theta(self, theta) -> White:
        return replace(self, noise=float(np.exp(theta[0]))) if self.free() else self

    def gram_grad(self, X):
        K = self.noise * np.eye(len(X))
        return K, [K] if self.free() else []


@dataclass(frozen=True)
class Product:
    """Constant times a kernel, ``scale * k``."""

    scale: float
    kernel: RBF
    scale_bounds: tuple[float, float] | None = None

    def __call__(self, A, B=None) -> np.ndarray:
        return self.scale * self.kernel(A, B)

    def diag(self, A) -> np.ndarray:
        return self.scale * self.kernel.diag(A)

    def free(self):
        own = [] if self.scale_bounds is None else [("scale", self.scale_bounds)]
        return own + self.kernel.free()

    def theta(self) -> np.ndarray:
        own = [np.log(self.scale)] if self.scale_bounds is not None else []
        return np.concatenate([own, self.kernel.theta()])

    def with_theta(self, theta) -> Product:
        k = 1 if self.scale_bounds is not None else 0
        scale = float(np.exp(theta[0])) if k else self.scale
        return replace(self, scale=scale, kernel=self.kernel.with_theta(theta[k:]))

    def gram_grad(self, X):
        K, grads = self.kernel.gram_grad(X)
        own = [self.scale * K] if self.scale_bounds is not None else []
        return self.scale * K, own + [self.scale * g for g in grads]


@dataclass(frozen=True)
class Sum:
    left: object
    right: object

    def __call__(self, A, B=None) -> np.ndarray:
        return self.left(A, B) + self.right(A, B)

    def diag(self, A) -> np.ndarray:
        return self.left.diag(A) + self.right.diag(A)

    def free(self):
        return self.left.free() + self.right.free()

    def theta(self) -> np.ndarray:
        return np.concatenate([self.left.theta(), self.right.theta()])

    def with_theta(self, theta) -> Sum:
        k = len(self.left.free())
        return Sum(self.left.with_theta(theta[:k]), self.right.with_theta(theta[k:]))

    def gram_grad(self, X):
        Kl, gl = self.left.gram_grad(X)
        Kr, gr = self.right.gram_grad(X)
        return Kl + Kr, gl + gr


def kernel_eval(spec, x, x2) -> float:
    """Kernel value for two single points."""
    x = np.asarray(x, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x.shape != x2.shape:
        raise DimensionMismatch(f"points of dimension {x.size} and {x2.size}")
    a, b = x[None, :], x2[None, :]
    # a White kernel only sees a point paired with itself
    return float(spec(a, a if np.array_equal(x, x2) else b)[0, 0])


def kernel_bounds(spec) -> list[tuple[float, float]]:
    return [(np.log(lo), np.log(hi)) for _, (lo, hi) in spec.free()]


def kernel_params(spec) -> dict:
    """Flat description used in serialized states."""
    if isinstance(spec, RBF):
        return {"kind": "rbf", "lengthscale": spec.lengthscale, "variance": spec.variance}
    if isinstance(spec, White):
        return {"kind": "white", "noise": spec.noise}
    if isinstance(spec, Product):
        return {"kind": "product", "scale": spec.scale, "kernel": kernel_params(spec.kernel)}
    if isinstance(spec, Sum):
        return {"kind": "sum", "left": kernel_params(spec.left), "right": kernel_params(spec.right)}
    raise TypeError(f"unknown kernel {spec!r}")


def kernel_from_params(d: dict):
    kind = d["kind"]
    if kind == "rbf":
        return RBF(d["lengthscale"], d["variance"])
    if kind == "white":
        return White(d["noise"])
    if kind == "product":
        return Product(d["scale"], kernel_from_params(d["kernel"]))
    if kind == "sum":
        return Sum(kernel_from_params(d["left"]), kernel_from_params(d["right"]))
    raise ValueError(f"unknown kernel kind {kind!r}")


def fixed(spec):
    """Copy of ``spec`` with every hyperparameter frozen."""
    if isinstance(spec, RBF):
        return replace(spec, lengthscale_bounds=None, variance_bounds=None)
    if isinstance(spec, White):
        return replace(spec, noise_bounds=None)
    if isinstance(spec, Product):
        return replace(spec, scale_bounds=None, kernel=fixed(spec.kernel))
    if isinstance(spec, Sum):
        return Sum(fixed(spec.left), fixed(spec.right))
    raise TypeError(f"unknown kernel {spec!r}")


# ------------------------------------------------------------------ SVR

@dataclass
class SvrState:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha - alpha*
    bias: float
    C: float
    epsilon: float
    gamma: float
    n_iter: int = 0
    converged: bool = True
    kkt_gap: float = 0.0

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]

    def predict(self, X) -> np.ndarray:
        return predict_svr(self, X)

    def to_payload(self):
        meta = {"bias": self.bias, "C": self.C, "epsilon": self.epsilon, "gamma": self.gamma,
                "n_iter": self.n_iter, "converged": self.converged, "kkt_gap": self.kkt_gap,
                "n_features": self.support_vectors.shape[1]}
        return meta, {"support_vectors": self.support_vectors, "dual_coef": self.dual_coef}

    @classmethod
    def from_payload(cls, meta, arrays) -> SvrState:
        sv = arrays["support_vectors"].reshape(-1, meta["n_features"])
        return cls(sv, arrays["dual_coef"], meta["bias"], meta["C"], meta["epsilon"], meta["gamma"],
                   meta["n_iter"], meta["converged"], meta["kkt_gap"])


def svr_dual_objective(beta: np.ndarray, K: np.ndarray, y: np.ndarray, epsilon: float) -> float:
    """``0.5 b'Qb + p'b`` for ``beta = [alpha; alpha*]`` (minimization form)."""
    n = len(y)
    a, a_star = beta[:n], beta[n:]
    d = a - a_star
    return float(0.5 * d @ K @ d + epsilon * (a + a_star).sum() - y @ d)


def _smo(K, y, C, epsilon, tol, max_iter, second_order):
    n = len(y)
    z = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    QD = np.diag(K)[idx]
    beta = np.zeros(2 * n)
    G = p.copy()
    tau = 1e-12
    gap = np.inf
    for it in range(1, max_iter + 1):
        up = ((z > 0) & (beta < C)) | ((z < 0) & (beta > 0))
        low = ((z > 0) & (beta > 0)) | ((z < 0) & (beta < C))
        score = -z * G
        s_up = np.where(up, score, -np.inf)
        s_low = np.where(low, score, np.inf)
        i = int(np.argmax(s_up))
        m_val = s_up[i]
        j_first = int(np.argmin(s_low))
        gap = m_val - s_low[j_first]
        if gap < tol:
            return beta, G, it - 1, True, gap
        Ki = K[idx[i]][idx]
        Qi = z[i] * z * Ki
        if second_order:
            b_t = m_val - score
            cand = low & (b_t > 0)
            a_t = QD[i] + QD - 2.0 * z[i] * z * Qi
            a_t = np.where(a_t > 0, a_t, tau)
            gain = np.where(cand, -(b_t**2) / a_t, np.inf)
            j = int(np.argmin(gain))
        else:
            j = j_first
        Kj = K[idx[j]][idx]
        Qj = z[j] * z * Kj
        old_i, old_j = beta[i], beta[j]
        if z[i] != z[j]:
            quad = QD[i] + QD[j] + 2.0 * Qi[j]
            quad = quad if quad > 0 else tau
            delta = (-G[i] - G[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            elif beta[i] < 0:
                beta[i] = 0.0
                beta[j] = -diff
            if diff > 0:  # C_i - C_j == 0
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            elif beta[j] > C:
                beta[j] = C
                beta[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Qi[j]
            quad = quad if quad > 0 else tau
            delta = (G[i] - G[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            elif beta[j] < 0:
                beta[j] = 0.0
                beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            elif beta[i] < 0:
                beta[i] = 0.0
                beta[j] = total
        G += Qi * (beta[i] - old_i) + Qj * (beta[j] - old_j)
    return beta, G, max_iter, False, gap


def _svr_bias(beta, G, z, C) -> float:
    yG = z * G
    free = (beta > 0) & (beta < C)
    if free.any():
        rho = yG[free].mean()
    else:
        at_ub = beta >= C
        at_lb = beta <= 0
        ub_set = (at_ub & (z < 0)) | (at_lb & (z > 0))
        lb_set = (at_ub & (z > 0)) | (at_lb & (z < 0))
        ub = yG[ub_set].min(initial=np.inf)
        lb = yG[lb_set].max(initial=-np.inf)
        rho = 0.5 * (ub + lb)
    return float(-rho)


def fit_svr(X, y, C: float = 1.0, epsilon: float = 0.1, gamma: float = 0.1, tol: float = 1e-3,
            max_iter: int = 1_000_000, selection: str = "max_violating") -> SvrState:
    """Epsilon-insensitive SVR with an RBF kernel ``exp(-gamma |x - x'|^2)``.

    ``selection="max_violating"`` picks the maximal KKT-violating pair;
    ``"second_order"`` keeps the first index and picks the partner by
    second-order gain, which converges in fewer iterations.
    """
    if C <= 0 or epsilon < 0 or gamma <= 0:
        raise ValueError("need C > 0, epsilon >= 0, gamma > 0")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    K = RBF.from_gamma(gamma)(X)
    beta, G, it, ok, gap = _smo(K, y, C, epsilon, tol, max_iter, selection == "second_order")
    if not ok:
        warnings.warn(f"SMO stopped after {it} iterations (gap {gap:.3g})", MaxIterExceeded, stacklevel=2)
    z = np.concatenate([np.ones(n), -np.ones(n)])
    b = _svr_bias(beta, G, z, C)
    coef = beta[:n] - beta[n:]
    sv = coef != 0
    return SvrState(X[sv].copy(), coef[sv], b, float(C), float(epsilon), float(gamma), it, ok, float(gap))


def predict_svr(state: SvrState, X) -> np.ndarray:
    X = check_columns(X, state.n_features)
    if len(state.dual_coef) == 0:
        return np.full(len(X), state.bias)
    return RBF.from_gamma(state.gamma)(X, state.support_vectors) @ state.dual_coef + state.bias


# ------------------------------------------------------------------ GPR

@dataclass
class GprState:
    X_train: np.ndarray
    kernel: object
    noise: float  # added to the training diagonal only
    L: np.ndarray
    alpha: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    log_marginal_likelihood: float = float("nan")
    jitter: float = 0.0
    restarts: int = 0

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]

    def predict(self, X) -> np.ndarray:
        return predict_gpr(self, X, return_cov=False)[0]

    def to_payload(self):
        meta = {"kernel": kernel_params(self.kernel), "noise": self.noise, "y_mean": self.y_mean,
                "y_scale": self.y_scale, "log_marginal_likelihood": self.log_marginal_likelihood,
                "jitter": self.jitter, "restarts": self.restarts, "n_features": self.n_features}
        return meta, {"X_train": self.X_train, "L": self.L, "alpha": self.alpha}

    @classmethod
    def from_payload(cls, meta, arrays) -> GprState:
        n = len(arrays["alpha"])
        return cls(arrays["X_train"].reshape(n, meta["n_features"]), kernel_from_params(meta["kernel"]),
                   meta["noise"], arrays["L"].reshape(n, n), arrays["alpha"], meta["y_mean"],
                   meta["y_scale"], meta["log_marginal_likelihood"], meta["jitter"], meta["restarts"])


def cholesky_with_jitter(K: np.ndarray, retries: int = 3) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor; on failure add ``1e-10 * trace / n`` (times 10 per retry).

    A factor with a vanishing diagonal counts as a failure, which catches
    exactly singular matrices that LAPACK factors through rounding.
    """
    n = len(K)
    base = 1e-10 * np.trace(K) / n if n else 0.0
    floor = 1e-7 * np.sqrt(max(np.trace(K) / max(n, 1), 1e-300))
    jitter = 0.0
    for attempt in range(retries + 1):
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True, check_finite=True)
            if n == 0 or np.min(np.diag(L)) > floor:
                return L, jitter
        except linalg.LinAlgError:
            pass
        jitter = base * 10.0**attempt
    raise NotPositiveDefinite(f"kernel matrix not positive definite after {retries} jitter retries")


def _lml(kernel, X, y, noise) -> tuple[float, np.ndarray, tuple]:
    K, grads = kernel.gram_grad(X)
    K = K + noise * np.eye(len(X))
    L, jitter = cholesky_with_jitter(K)
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(y) * np.log(2 * np.pi)
    if grads:
        Kinv = linalg.cho_solve((L, True), np.eye(len(y)))
        W = np.outer(alpha, alpha) - Kinv
        grad = np.array([0.5 * np.einsum("ij,ji->", W, g) for g in grads])
    else:
        grad = np.empty(0)
    return float(lml), grad, (L, alpha, jitter)


def log_marginal_likelihood(kernel, X, y, noise: float = 0.0) -> float:
    return _lml(kernel, np.asarray(X, float), np.asarray(y, float), noise)[0]


def fit_gpr(X, y, kernel=None, noise: float = 1e-10, restarts: int = 0, optimize_hyper: bool = True,
            normalize_y: bool = True, seed: int = 0, max_n: int = 4000) -> GprState:
    """Gaussian process regression with marginal-likelihood hyperparameter search.

    ``noise`` is added to the training diagonal only. The search starts from
    the given kernel and, for ``restarts > 0``, from that many log-uniform
    draws inside the bounds; the best optimum wins. With
    ``optimize_hyper=False`` the kernel is used as given.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) > max_n:
        raise ValueError(f"{len(X)} training rows exceed the GPR cap of {max_n}")
    kernel = RBF() if kernel is None else kernel
    if normalize_y:
        y_mean, y_scale = float(y.mean()), float(y.std())
        y_scale = y_scale if y_scale > 0 else 1.0
    else:
        y_mean, y_scale = 0.0, 1.0
    yn = (y - y_mean) / y_scale

    if optimize_hyper and kernel.free():
        bounds = kernel_bounds(kernel)

        def neg(theta):
            try:
                val, grad, _ = _lml(kernel.with_theta(theta), X, yn, noise)
            except NotPositiveDefinite:
                return np.inf, np.zeros_like(theta)
            return -val, -grad

        rng = np.random.default_rng(seed)
        starts = [np.clip(kernel.theta(), [b[0] for b in bounds], [b[1] for b in bounds])]
        for _ in range(restarts):
            starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))
        best = None
        for s in starts:
            res = optimize.minimize(neg, s, jac=True, method="L-BFGS-B", bounds=bounds)
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is not None:
            kernel = kernel.with_theta(best.x)
    lml, _, (L, alpha, jitter) = _lml(fixed(kernel), X, yn, noise)
    return GprState(X.copy(), kernel, float(noise), L, alpha, y_mean, y_scale, lml, jitter, restarts)


def predict_gpr(state: GprState, X, return_cov: bool = True, return_var: bool = False):
    """Predictive mean and covariance (or variance) at ``X``.

    The covariance is for the latent function plus any White term in the
    kernel; the training-diagonal ``noise`` is not added back.
    """
    X = check_columns(X, state.n_features)
    Ks = state.kernel(X, state.X_train)
    mean = Ks @ state.alpha * state.y_scale + state.y_mean
    if not (return_cov or return_var):
        return mean, None
    V = linalg.solve_triangular(state.L, Ks.T, lower=True)
    if return_var:
        var = state.kernel.diag(X) - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0) * state.y_scale**2
    cov = state.kernel(X) - V.T @ V
    cov = 0.5 * (cov + cov.T) * state.y_scale**2
    return mean, cov


def _load(path, family, cls):
    fam, meta, arrays = serialize.load(path)
    if fam != family:
        raise serialize.FormatError(f"expected {family}, found {fam!r}")
    return cls.from_payload(meta, arrays)


def load_svr(path) -> SvrState:
    return _load(path, "svr", SvrState)


def load_gpr(path) -> GprState:
    return _load(path, "gpr", GprState)
