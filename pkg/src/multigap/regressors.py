"""Kernel regressors mapping descriptors to quality scores.

Two predictors are provided as scikit-learn style estimators:

* :class:`RbfSvr` — epsilon-insensitive support vector regression with an RBF
  kernel, trained by sequential minimal optimization on the dual (maximal
  KKT-violating pair selection).
* :class:`RqGpr` — exact Gaussian process regression with a rational
  quadratic kernel, predictive mean only, solved by Cholesky factorization.

All regression math runs at 64-bit precision. Training is single-threaded and
deterministic; fitted models are immutable and safe to share for concurrent
prediction.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import NumericalError, UndefinedCorrelationError
from .metrics import plcc, srocc

# Floor for the curvature of a two-variable subproblem, as in standard SMO
# implementations.
_CURVATURE_FLOOR = 1e-12


def _squared_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    sx = np.einsum("ij,ij->i", X, X)
    sy = np.einsum("ij,ij->i", Y, Y)
    d = sx[:, None] + sy[None, :] - 2.0 * (X @ Y.T)
    np.maximum(d, 0.0, out=d)
    return d


def _symmetrize(K: np.ndarray, diagonal: float) -> np.ndarray:
    # mirror the upper triangle so K[j, i] is bitwise K[i, j]
    upper = np.triu(K, 1)
    out = upper + upper.T
    np.fill_diagonal(out, diagonal)
    return out


def rbf_kernel(x, y, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2); in (0, 1]."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = x - y
    return float(np.exp(-gamma * (d @ d)))


def rbf_kernel_matrix(X, Y=None, *, gamma: float) -> np.ndarray:
    """Pairwise RBF kernel; exactly symmetric with unit diagonal when Y is X."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    X = np.asarray(X, dtype=np.float64)
    if Y is None:
        K = np.exp(-gamma * _squared_distances(X, X))
        return _symmetrize(K, 1.0)
    return np.exp(-gamma * _squared_distances(X, np.asarray(Y, dtype=np.float64)))


def rq_kernel(x, y, sigma2: float, length_scale: float, alpha: float) -> float:
    """sigma2 * (1 + ||x - y||^2 / (2 * alpha * length_scale^2))^(-alpha).

    A scale mixture of RBF kernels; recovers the squared-exponential as
    alpha grows. Result in (0, sigma2].
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    _check_rq_params(sigma2, length_scale, alpha)
    d = x - y
    return float(
        sigma2 * (1.0 + (d @ d) / (2.0 * alpha * length_scale**2)) ** (-alpha)
    )


def _check_rq_params(sigma2, length_scale, alpha):
    for name, value in (
        ("sigma2", sigma2),
        ("length_scale", length_scale),
        ("alpha", alpha),
    ):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")


def rq_kernel_matrix(X, Y=None, *, sigma2: float, length_scale: float, alpha: float) -> np.ndarray:
    _check_rq_params(sigma2, length_scale, alpha)
    X = np.asarray(X, dtype=np.float64)
    if Y is None:
        d = _squared_distances(X, X)
        K = sigma2 * (1.0 + d / (2.0 * alpha * length_scale**2)) ** (-alpha)
        return _symmetrize(K, sigma2)
    d = _squared_distances(X, np.asarray(Y, dtype=np.float64))
    return sigma2 * (1.0 + d / (2.0 * alpha * length_scale**2)) ** (-alpha)


# ---------------------------------------------------------------------------
# SMO solver for the epsilon-SVR dual
#
# Variables are doubled: t = [a+, a-], both in [0, C], with sign vector
# s = [+1..., -1...]. The dual is
#
#   minimize  0.5 t' Qbar t + p' t,   Qbar[a,b] = s_a s_b K[a%n, b%n],
#             p = [eps - y; eps + y],  subject to s' t = 0.
#
# The working set is the maximal violating pair; convergence when the KKT
# violation m(t) - M(t) drops to tol.
# ---------------------------------------------------------------------------


@dataclass
class _SmoResult:
    beta: np.ndarray  # a+ - a-, per training point
    bias: float
    n_iter: int
    kkt_violation: float
    converged: bool


def _smo_solve(K: np.ndarray, y: np.ndarray, C: float, epsilon: float,
               tol: float, max_iter: int) -> _SmoResult:
    n = y.size
    s = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([epsilon - y, epsilon + y])
    t = np.zeros(2 * n)
    G = p.copy()
    Kdiag = np.diagonal(K)

    it = 0
    violation = np.inf
    while it < max_iter:
        crit = -s * G
        up = ((s > 0) & (t < C)) | ((s < 0) & (t > 0))
        low = ((s < 0) & (t < C)) | ((s > 0) & (t > 0))
        crit_up = np.where(up, crit, -np.inf)
        crit_low = np.where(low, crit, np.inf)
        i = int(np.argmax(crit_up))
        j = int(np.argmin(crit_low))
        m_up = crit_up[i]
        m_low = crit_low[j]
        if not np.isfinite(m_up) or not np.isfinite(m_low):
            violation = 0.0
            break
        violation = m_up - m_low
        if violation <= tol:
            break
        it += 1

        ia, ja = i % n, j % n
        kij = K[ia, ja]
        old_ti, old_tj = t[i], t[j]
        if s[i] != s[j]:
            quad = Kdiag[ia] + Kdiag[ja] - 2.0 * kij  # signed Q_ij = -kij
            quad = max(quad, _CURVATURE_FLOOR)
            delta = (-G[i] - G[j]) / quad
            diff = t[i] - t[j]
            t[i] += delta
            t[j] += delta
            if diff > 0:
                if t[j] < 0:
                    t[j] = 0.0
                    t[i] = diff
                if t[i] > C:
                    t[i] = C
                    t[j] = C - diff
            else:
                if t[i] < 0:
                    t[i] = 0.0
                    t[j] = -diff
                if t[j] > C:
                    t[j] = C
                    t[i] = C + diff
        else:
            quad = Kdiag[ia] + Kdiag[ja] - 2.0 * kij
            quad = max(quad, _CURVATURE_FLOOR)
            delta = (G[i] - G[j]) / quad
            pair_sum = t[i] + t[j]
            t[i] -= delta
            t[j] += delta
            if pair_sum > C:
                if t[i] > C:
                    t[i] = C
                    t[j] = pair_sum - C
                if t[j] > C:
                    t[j] = C
                    t[i] = pair_sum - C
            else:
                if t[j] < 0:
                    t[j] = 0.0
                    t[i] = pair_sum
                if t[i] < 0:
                    t[i] = 0.0
                    t[j] = pair_sum

        # rank-two gradient update from the Q-columns of i and j
        kcol_i = K[:, ia]
        kcol_j = K[:, ja]
        di = s[i] * (t[i] - old_ti)
        dj = s[j] * (t[j] - old_tj)
        if di != 0.0:
            G[:n] += di * kcol_i
            G[n:] -= di * kcol_i
        if dj != 0.0:
            G[:n] += dj * kcol_j
            G[n:] -= dj * kcol_j

    converged = violation <= tol

    # bias from the KKT conditions: average -s*G over free variables, else the
    # midpoint of the bound-derived interval
    yG = s * G
    free = (t > 0) & (t < C)
    if np.any(free):
        rho = float(yG[free].mean())
    else:
        at_zero = t <= 0
        at_c = t >= C
        upper_set = (at_c & (s < 0)) | (at_zero & (s > 0))
        lower_set = (at_c & (s > 0)) | (at_zero & (s < 0))
        ub = float(yG[upper_set].min()) if np.any(upper_set) else np.inf
        lb = float(yG[lower_set].max()) if np.any(lower_set) else -np.inf
        if np.isinf(ub) and np.isinf(lb):
            rho = 0.0
        elif np.isinf(ub):
            rho = lb
        elif np.isinf(lb):
            rho = ub
        else:
            rho = 0.5 * (ub + lb)

    return _SmoResult(
        beta=t[:n] - t[n:],
        bias=-rho,
        n_iter=it,
        kkt_violation=float(max(violation, 0.0)),
        converged=converged,
    )


class RbfSvr(RegressorMixin, BaseEstimator):
    """Epsilon-SVR with RBF kernel, trained by SMO on the dual.

    Parameters
    ----------
    C : float
        Box constraint on the dual coefficients.
    epsilon : float
        Half-width of the insensitive tube.
    gamma : float
        RBF kernel width, k(x, y) = exp(-gamma ||x - y||^2).
    tol : float
        KKT violation at which training stops.
    max_iter : int
        Cap on pairwise coordinate updates; if reached, the best iterate is
        kept, ``converged_`` is False and a ConvergenceWarning is issued.

    Attributes
    ----------
    support_ : indices of training points kept as support vectors
    support_vectors_ : ndarray (n_sv, n_features)
    dual_coef_ : ndarray (n_sv,), the nonzero a+ - a- values, each in [-C, C]
    intercept_ : float
    kkt_violation_ : KKT violation at exit
    converged_ : bool
    """

    def __init__(self, C=1.0, epsilon=0.1, gamma=1.0, tol=1e-3, max_iter=10_000_000):
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("training needs at least 2 samples")
        if self.C <= 0 or self.epsilon < 0 or self.gamma <= 0 or self.tol <= 0:
            raise ValueError(
                f"invalid hyperparameters C={self.C}, epsilon={self.epsilon}, "
                f"gamma={self.gamma}, tol={self.tol}"
            )
        K = rbf_kernel_matrix(X, gamma=self.gamma)
        result = _smo_solve(
            K, y, float(self.C), float(self.epsilon), float(self.tol),
            int(self.max_iter),
        )
        if not result.converged:
            warnings.warn(
                f"SMO stopped at max_iter={self.max_iter} with KKT violation "
                f"{result.kkt_violation:.3g}",
                ConvergenceWarning,
            )
        sv = result.beta != 0.0
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = X[sv].copy()
        self.dual_coef_ = result.beta[sv].copy()
        self.intercept_ = result.bias
        self.kkt_violation_ = result.kkt_violation
        self.converged_ = result.converged
        self.n_iter_ = result.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=np.float64)
        if len(self.dual_coef_) == 0:
            return np.full(X.shape[0], self.intercept_)
        K = rbf_kernel_matrix(X, self.support_vectors_, gamma=self.gamma)
        return K @ self.dual_coef_ + self.intercept_


class RqGpr(RegressorMixin, BaseEstimator):
    """Exact GP regression with a rational quadratic kernel (mean predictor).

    Parameters
    ----------
    length_scale, alpha : float
        Kernel length scale and shape (mixture) parameter.
    signal_variance : float or None
        Kernel amplitude sigma^2; None means use var(y) at fit time.
    noise_variance : float
        Observation noise added to the kernel diagonal.

    Attributes
    ----------
    X_train_ : ndarray (n, d)
    weights_ : ndarray (n,), solution of (K + noise I) w = y
    jitter_ : diagonal jitter that was needed for a successful Cholesky
    signal_variance_ : the amplitude actually used
    """

    def __init__(self, length_scale=1.0, alpha=1.0, signal_variance=None,
                 noise_variance=1e-2):
        self.length_scale = length_scale
        self.alpha = alpha
        self.signal_variance = signal_variance
        self.noise_variance = noise_variance

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.noise_variance < 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")
        sigma2 = self.signal_variance
        if sigma2 is None:
            sigma2 = float(np.var(y))
            if sigma2 == 0.0:
                sigma2 = 1.0
        _check_rq_params(sigma2, self.length_scale, self.alpha)

        K = rq_kernel_matrix(
            X, sigma2=sigma2, length_scale=self.length_scale, alpha=self.alpha
        )
        A = K + self.noise_variance * np.eye(len(y))
        self._factor, self.jitter_ = _cholesky_with_jitter(A)
        self.weights_ = cho_solve(self._factor, y)
        self.X_train_ = X.copy()
        self.signal_variance_ = sigma2
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        K_star = rq_kernel_matrix(
            X,
            self.X_train_,
            sigma2=self.signal_variance_,
            length_scale=self.length_scale,
            alpha=self.alpha,
        )
        return K_star @ self.weights_


def _cholesky_with_jitter(A: np.ndarray):
    """Factor A, retrying with escalating diagonal jitter.

    Jitter starts at 1e-8 * trace/n and grows tenfold up to 1e-2 * trace/n;
    beyond that the matrix is treated as genuinely indefinite.
    """
    scale = float(np.trace(A)) / len(A)
    jitter = 0.0
    factor_level = 1e-8
    while True:
        try:
            return cho_factor(A + jitter * np.eye(len(A)), lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        next_jitter = factor_level * scale
        if factor_level > 1e-2:
            raise NumericalError(
                f"Cholesky failed even with jitter up to {jitter:.3g}"
            )
        jitter = next_jitter
        factor_level *= 10.0


# ---------------------------------------------------------------------------
# Validation-set hyperparameter search
# ---------------------------------------------------------------------------


@dataclass
class HyperparamGrid:
    """Candidate lists per hyperparameter plus the selection metric.

    Candidates are enumerated in a fixed order with the regularization-
    controlling parameter outermost (C ascending for the SVR, length_scale
    descending for the GPR); ties keep the earlier candidate, so equal scores
    resolve toward stronger regularization.
    """

    params: dict[str, list[float]] = field(default_factory=dict)
    metric: str = "plcc"

    def __post_init__(self):
        if self.metric not in ("plcc", "srocc"):
            raise ValueError(f"unknown selection metric {self.metric!r}")
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise ValueError("grid must have at least one candidate per parameter")

    def n_points(self) -> int:
        out = 1
        for v in self.params.values():
            out *= len(v)
        return out

    def candidates(self, kind: str):
        names = list(self.params)
        ordered = []
        for name in names:
            values = sorted(float(v) for v in self.params[name])
            if kind == "gpr" and name == "length_scale":
                values = values[::-1]
            ordered.append(values)
        if kind == "svr" and "C" in names:
            names.insert(0, names.pop(names.index("C")))
            ordered.insert(0, ordered.pop(list(self.params).index("C")))
        elif kind == "gpr" and "length_scale" in names:
            idx = names.index("length_scale")
            names.insert(0, names.pop(idx))
            ordered.insert(0, ordered.pop(idx))
        for combo in itertools.product(*ordered):
            yield dict(zip(names, combo))


def default_svr_grid(n_features: int, metric: str = "plcc") -> HyperparamGrid:
    d = float(n_features)
    return HyperparamGrid(
        params={
            "C": [1.0, 10.0, 100.0],
            "epsilon": [0.05, 0.1, 0.2],
            "gamma": [0.1 / d, 1.0 / d, 10.0 / d],
        },
        metric=metric,
    )


def default_gpr_grid(n_features: int, y, metric: str = "plcc") -> HyperparamGrid:
    var_y = float(np.var(np.asarray(y, dtype=np.float64)))
    if var_y == 0.0:
        var_y = 1.0
    root_d = float(np.sqrt(n_features))
    return HyperparamGrid(
        params={
            "length_scale": [0.5 * root_d, 1.0 * root_d, 2.0 * root_d],
            "alpha": [0.5, 1.0, 2.0],
            "signal_variance": [var_y],
            "noise_variance": [1e-2 * var_y, 1e-1 * var_y, var_y],
        },
        metric=metric,
    )


def make_regressor(kind: str, params: dict):
    if kind == "svr":
        return RbfSvr(**params)
    if kind == "gpr":
        return RqGpr(**params)
    raise ValueError(f"unknown regressor kind {kind!r}")


def grid_search(X_train, y_train, X_val, y_val, grid: HyperparamGrid, kind: str):
    """Exhaustive search over the grid, scored on the validation split.

    Returns (best_params, best_score, best_model); the model is the one fitted
    on the training split during the search. Candidates whose predictions make
    the metric undefined (e.g. constant output) are skipped.
    """
    score_fn = plcc if grid.metric == "plcc" else srocc
    best = None
    for params in grid.candidates(kind):
        model = make_regressor(kind, params).fit(X_train, y_train)
        try:
            score = score_fn(y_val, model.predict(X_val))
        except UndefinedCorrelationError:
            continue
        if best is None or score > best[1]:
            best = (params, score, model)
    if best is None:
        raise NumericalError(
            "no grid candidate produced a defined validation score"
        )
    return best


# ---------------------------------------------------------------------------
# Model persistence: versioned npz dump of all fields; round-trips preserve
# predictions exactly (float64 arrays are stored losslessly).
# ---------------------------------------------------------------------------

_DUMP_VERSION = 1


def save_regressor(model, file) -> None:
    """Dump a fitted model to a path or binary file object."""
    if isinstance(model, RbfSvr):
        check_is_fitted(model, "dual_coef_")
        fields = dict(
            format_version=_DUMP_VERSION,
            kind="svr",
            C=model.C,
            epsilon=model.epsilon,
            gamma=model.gamma,
            tol=model.tol,
            max_iter=model.max_iter,
            support_vectors=model.support_vectors_,
            dual_coef=model.dual_coef_,
            support=model.support_,
            intercept=model.intercept_,
            kkt_violation=model.kkt_violation_,
            converged=model.converged_,
            n_features=model.n_features_in_,
        )
    elif isinstance(model, RqGpr):
        check_is_fitted(model, "weights_")
        fields = dict(
            format_version=_DUMP_VERSION,
            kind="gpr",
            length_scale=model.length_scale,
            alpha=model.alpha,
            signal_variance=model.signal_variance_,
            noise_variance=model.noise_variance,
            X_train=model.X_train_,
            weights=model.weights_,
            jitter=model.jitter_,
            n_features=model.n_features_in_,
        )
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    if hasattr(file, "write"):
        np.savez(file, **fields)
    else:
        # write through a handle so numpy does not append ".npz" to the name
        with open(file, "wb") as fh:
            np.savez(fh, **fields)


def load_regressor(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != _DUMP_VERSION:
            raise NumericalError(f"unsupported model dump version {version}")
        kind = str(data["kind"])
        if kind == "svr":
            model = RbfSvr(
                C=float(data["C"]),
                epsilon=float(data["epsilon"]),
                gamma=float(data["gamma"]),
                tol=float(data["tol"]),
                max_iter=int(data["max_iter"]),
            )
            model.support_vectors_ = data["support_vectors"]
            model.dual_coef_ = data["dual_coef"]
            model.support_ = data["support"]
            model.intercept_ = float(data["intercept"])
            model.kkt_violation_ = float(data["kkt_violation"])
            model.converged_ = bool(data["converged"])
            model.n_features_in_ = int(data["n_features"])
            return model
        if kind == "gpr":
            model = RqGpr(
                length_scale=float(data["length_scale"]),
                alpha=float(data["alpha"]),
                signal_variance=float(data["signal_variance"]),
                noise_variance=float(data["noise_variance"]),
            )
            model.X_train_ = data["X_train"]
            model.weights_ = data["weights"]
            model.signal_variance_ = float(data["signal_variance"])
            model.jitter_ = float(data["jitter"])
            model.n_features_in_ = int(data["n_features"])
            return model
        raise NumericalError(f"unknown regressor kind {kind!r} in dump")
