"""Preference-based learning of quadratic agent objectives.

A pairwise comparison (x1 vs x2, opponents fixed) is explained by a
sigmoid whose log-odds are the objective difference scaled by a
dissimilarity measure of the two candidates.  Parameters are the
Cholesky factor of the quadratic term, the linear term, and the coupling
matrix, packed into a flat bounded vector and fitted by Adam followed by
a projected limited-memory BFGS.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import as_vector
from .exceptions import EmptyDatasetError
from .solvers import EPS_CHOL, QuadraticAgentObjective

DISSIMILARITY_KINDS = ("log-linf", "l2", "sqrt-l2")


@lru_cache(maxsize=None)
def _tril_rc(n: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(n)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


@lru_cache(maxsize=None)
def _default_bounds(n_own: int, n_others: int) -> tuple[np.ndarray, np.ndarray]:
    size = ThetaVector.expected_length(n_own, n_others)
    lower = np.full(size, -np.inf)
    lower[ThetaVector._diag_positions(n_own)] = EPS_CHOL
    upper = np.full(size, np.inf)
    lower.flags.writeable = False
    upper.flags.writeable = False
    return lower, upper


@dataclass(frozen=True)
class ThetaVector:
    """Flat bounded parameter vector of one QuadraticAgentObjective.

    Packing order: lower triangle of L row-major, then q, then A
    row-major.  Diagonal entries of L are bounded below by EPS_CHOL;
    values are projected into the bounds at construction.
    """

    values: np.ndarray
    n_own: int
    n_others: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        size = self.expected_length(self.n_own, self.n_others)
        values = as_vector(self.values, size, "values")
        lower = self.lower
        upper = self.upper
        if lower is None and upper is None:
            lower, upper = _default_bounds(self.n_own, self.n_others)
        else:
            if lower is None:
                lower = _default_bounds(self.n_own, self.n_others)[0]
            else:
                lower = as_vector(lower, size, "lower")
            if upper is None:
                upper = np.full(size, np.inf)
            else:
                upper = as_vector(upper, size, "upper")
            if np.any(lower > upper):
                raise ValueError("theta bounds require lower <= upper")
        object.__setattr__(self, "values", np.clip(values, lower, upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @staticmethod
    def expected_length(n_own: int, n_others: int) -> int:
        return n_own * (n_own + 1) // 2 + n_own + n_others * n_own

    @staticmethod
    def _diag_positions(n_own: int) -> np.ndarray:
        rows, cols = _tril_rc(n_own)
        return np.flatnonzero(rows == cols)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def with_values(self, values) -> "ThetaVector":
        return replace(self, values=np.asarray(values, dtype=float))

    def project(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self.lower, self.upper)

    @classmethod
    def initial(cls, n_own: int, n_others: int) -> "ThetaVector":
        """Identity L, zero q and A: a well-conditioned neutral start."""
        L = np.eye(n_own)
        return cls.from_objective(
            QuadraticAgentObjective(L, np.zeros(n_own), np.zeros((n_others, n_own)))
        )

    @classmethod
    def from_objective(cls, obj: QuadraticAgentObjective, lower=None, upper=None) -> "ThetaVector":
        rows, cols = _tril_rc(obj.dim)
        vals = np.concatenate([obj.chol[rows, cols], obj.q, obj.A.ravel()])
        return cls(vals, obj.dim, obj.n_others, lower, upper)

    def to_objective(self) -> QuadraticAgentObjective:
        L, q, A = self.split()
        return QuadraticAgentObjective(L, q, A)

    def split(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n, no = self.n_own, self.n_others
        k = n * (n + 1) // 2
        L = np.zeros((n, n))
        rows, cols = _tril_rc(n)
        L[rows, cols] = self.values[:k]
        q = self.values[k : k + n].copy()
        A = self.values[k + n :].reshape(no, n).copy()
        return L, q, A


def pinned_curvature_template(
    n_own: int, n_others: int, p_diag: float = 1.0, coupling_bound: float | None = None
) -> ThetaVector:
    """Template whose quadratic term is frozen at p_diag * I.

    Pairwise labels carry no information about an objective's overall
    scale, and a free quadratic term lets training flatten the curvature
    instead of moving the minimizer.  Locking the Cholesky entries
    (lower == upper) makes q — hence the implied best response — the
    moving part.  coupling_bound boxes the interaction block at
    |A| <= coupling_bound, with 0 pinning it to zero; None leaves it free.
    """
    if p_diag <= 0:
        raise ValueError("p_diag must be > 0")
    if coupling_bound is not None and coupling_bound < 0:
        raise ValueError("coupling_bound must be >= 0 or None")
    rows, cols = _tril_rc(n_own)
    k = n_own * (n_own + 1) // 2
    size = ThetaVector.expected_length(n_own, n_others)
    vals = np.zeros(size)
    lower = np.full(size, -np.inf)
    upper = np.full(size, np.inf)
    diag = rows == cols
    vals[:k][diag] = math.sqrt(p_diag)
    lower[:k] = np.where(diag, math.sqrt(p_diag), 0.0)
    upper[:k] = lower[:k]
    if coupling_bound is not None:
        lower[k + n_own :] = -coupling_bound
        upper[k + n_own :] = coupling_bound
    return ThetaVector(vals, n_own, n_others, lower, upper)


@dataclass(frozen=True)
class TrainConfig:
    adam_iters: int = 500
    adam_lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lbfgs_max_iters: int = 1000
    lbfgs_history: int = 10
    reg_weight: float = 0.001
    eps_d: float = 1e-6
    p_clamp: float = 1e-12
    dissimilarity: str = "log-linf"

    def __post_init__(self):
        if self.adam_iters < 0 or self.lbfgs_max_iters < 0:
            raise ValueError("iteration counts must be nonnegative")
        if not (0 < self.adam_lr and 0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("invalid Adam constants")
        if self.adam_eps <= 0 or self.lbfgs_history < 1:
            raise ValueError("invalid optimizer constants")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if self.eps_d <= 0:
            raise ValueError("eps_d must be > 0")
        if not 0 < self.p_clamp < 0.5:
            raise ValueError("p_clamp must lie in (0, 0.5)")
        if self.dissimilarity not in DISSIMILARITY_KINDS:
            raise ValueError(f"dissimilarity must be one of {DISSIMILARITY_KINDS}")


def dissimilarity(x1, x2, eps_d: float = 1e-6, kind: str = "log-linf") -> float:
    """Scale for the preference log-odds; strictly positive even at x1=x2."""
    x1 = as_vector(x1, name="x1")
    x2 = as_vector(x2, x1.shape[0], "x2")
    dist_inf = float(np.max(np.abs(x1 - x2), initial=0.0))
    if kind == "log-linf":
        return math.log(dist_inf + 1.0 + eps_d)
    if kind == "l2":
        return float(np.linalg.norm(x1 - x2)) + eps_d
    if kind == "sqrt-l2":
        return math.sqrt(float(np.linalg.norm(x1 - x2))) + eps_d
    raise ValueError(f"dissimilarity must be one of {DISSIMILARITY_KINDS}")


def _inv_logit(t: float) -> float:
    # 1/(1+exp(t)), overflow-safe on both branches
    if t >= 0:
        e = math.exp(-t)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(t))


def _inv_logit_vec(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    e = np.exp(-t[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(t[~pos]))
    return out


def pref_probability(
    obj: QuadraticAgentObjective,
    x1,
    x2,
    x_others,
    eps_d: float = 1e-6,
    kind: str = "log-linf",
) -> float:
    """Probability that x1 is preferred over x2 given the opponents."""
    j1 = obj.value(x1, x_others)
    j2 = obj.value(x2, x_others)
    d = dissimilarity(x1, x2, eps_d, kind)
    return _inv_logit((j1 - j2) / d)


def cross_entropy(p: int, p_hat: float, p_clamp: float = 1e-12) -> float:
    ph = min(max(p_hat, p_clamp), 1.0 - p_clamp)
    if p == 1:
        return -math.log(ph)
    if p == 0:
        return -math.log(1.0 - ph)
    raise ValueError("p must be 0 or 1")


@dataclass(frozen=True)
class _StackedData:
    """Dataset columns stacked for vectorized loss/gradient evaluation."""

    X1: np.ndarray
    X2: np.ndarray
    XO: np.ndarray
    pi: np.ndarray
    d: np.ndarray

    @property
    def m(self) -> int:
        return self.X1.shape[0]


def _stack_dataset(dataset, n_own: int, n_others: int, cfg: TrainConfig) -> _StackedData:
    if len(dataset) == 0:
        raise EmptyDatasetError("preference dataset is empty")
    X1 = np.stack([as_vector(s.x1, n_own, "x1") for s in dataset])
    X2 = np.stack([as_vector(s.x2, n_own, "x2") for s in dataset])
    XO = np.stack([as_vector(s.x_others, n_others, "x_others") for s in dataset])
    pi = np.array([float(s.label) for s in dataset])
    diff = np.abs(X1 - X2)
    dist_inf = diff.max(axis=1) if n_own else np.zeros(len(dataset))
    if cfg.dissimilarity == "log-linf":
        d = np.log(dist_inf + 1.0 + cfg.eps_d)
    elif cfg.dissimilarity == "l2":
        d = np.linalg.norm(X1 - X2, axis=1) + cfg.eps_d
    else:
        d = np.sqrt(np.linalg.norm(X1 - X2, axis=1)) + cfg.eps_d
    return _StackedData(X1, X2, XO, pi, d)


def _loss_and_grad_values(
    values: np.ndarray, n_own: int, n_others: int, data: _StackedData, cfg: TrainConfig
):
    """Loss/gradient on a raw packed vector (hot path: no dataclass churn)."""
    k = n_own * (n_own + 1) // 2
    rows, cols = _tril_rc(n_own)
    L = np.zeros((n_own, n_own))
    L[rows, cols] = values[:k]
    q = values[k : k + n_own]
    A = values[k + n_own :].reshape(n_others, n_own)

    X1, X2, XO = data.X1, data.X2, data.XO
    X1L = X1 @ L
    X2L = X2 @ L
    coup = XO @ A
    V1 = 0.5 * np.einsum("ij,ij->i", X1L, X1L) + X1 @ q + np.einsum("ij,ij->i", coup, X1)
    V2 = 0.5 * np.einsum("ij,ij->i", X2L, X2L) + X2 @ q + np.einsum("ij,ij->i", coup, X2)
    t = (V1 - V2) / data.d
    p_hat = _inv_logit_vec(t)
    ph = np.clip(p_hat, cfg.p_clamp, 1.0 - cfg.p_clamp)
    ce = -(data.pi * np.log(ph) + (1.0 - data.pi) * np.log(1.0 - ph))
    loss = cfg.reg_weight * float(values @ values) + float(ce.mean())

    # d(ce)/dt = pi - p_hat; zero where the clamp is active
    active = (p_hat >= cfg.p_clamp) & (p_hat <= 1.0 - cfg.p_clamp)
    w = (data.pi - p_hat) * active / (data.d * data.m)
    dX = X1 - X2
    g_q = w @ dX
    g_A = XO.T @ (w[:, None] * dX)
    S = X1.T @ (w[:, None] * X1) - X2.T @ (w[:, None] * X2)
    g_L = np.tril(S @ L)
    grad = np.concatenate([g_L[rows, cols], g_q, g_A.ravel()])
    grad += 2.0 * cfg.reg_weight * values
    return loss, grad


def _loss_and_grad(theta: ThetaVector, data: _StackedData, cfg: TrainConfig):
    """Regularized mean cross-entropy and its exact gradient in theta."""
    return _loss_and_grad_values(theta.values, theta.n_own, theta.n_others, data, cfg)


def training_loss(theta: ThetaVector, dataset, cfg: TrainConfig) -> float:
    data = _stack_dataset(dataset, theta.n_own, theta.n_others, cfg)
    return _loss_and_grad(theta, data, cfg)[0]


def training_gradient(theta: ThetaVector, dataset, cfg: TrainConfig) -> np.ndarray:
    data = _stack_dataset(dataset, theta.n_own, theta.n_others, cfg)
    return _loss_and_grad(theta, data, cfg)[1]


@dataclass
class AdamState:
    theta: ThetaVector
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def init(cls, theta: ThetaVector) -> "AdamState":
        return cls(theta, np.zeros(theta.size), np.zeros(theta.size), 0)


def adam_step(state: AdamState, grad: np.ndarray, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update followed by projection onto the bounds."""
    t = state.step + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * grad * grad
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    vals = state.theta.values - cfg.adam_lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return AdamState(state.theta.with_values(state.theta.project(vals)), m, v, t)


def _two_loop(g, pairs):
    qv = g.copy()
    alphas = []
    for s, y, r in reversed(pairs):
        a = r * (s @ qv)
        alphas.append(a)
        qv -= a * y
    s, y, _ = pairs[-1]
    qv *= (s @ y) / (y @ y)
    for (s, y, r), a in zip(pairs, reversed(alphas)):
        b = r * (y @ qv)
        qv += (a - b) * s
    return qv


def _projected_lbfgs(theta: ThetaVector, fg, cfg: TrainConfig, tol: float = 1e-8):
    """Limited-memory BFGS with gradient projection and a projected
    backtracking Armijo line search.  Returns (best_loss, best_values,
    line_search_failed)."""
    x = theta.project(theta.values)
    f, g = fg(x)
    best_f, best_x = f, x.copy()
    pairs: deque = deque(maxlen=cfg.lbfgs_history)
    failed = False
    stall = 0
    for _ in range(cfg.lbfgs_max_iters):
        pg = x - theta.project(x - g)
        if float(np.max(np.abs(pg), initial=0.0)) <= tol:
            break
        d = -_two_loop(g, list(pairs)) if pairs else -g
        if d @ g >= 0:  # guard: curvature info gave a non-descent direction
            d = -g
        alpha = 1.0
        ok = False
        for _ in range(60):
            x_new = theta.project(x + alpha * d)
            step = x_new - x
            gstep = float(g @ step)
            if gstep >= 0 and not np.allclose(step, 0):
                alpha *= 0.5
                continue
            f_new, g_new = fg(x_new)
            if f_new <= f + 1e-4 * gstep:
                ok = True
                break
            alpha *= 0.5
        if not ok:
            failed = True
            break
        # secondary stop: objective has flatlined (relative decrease below
        # float-noise scale for several consecutive accepted steps)
        if f - f_new <= 1e-11 * max(1.0, abs(f_new)):
            stall += 1
        else:
            stall = 0
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
        if stall >= 3:
            break
    return best_f, best_x, failed


def train(theta_init: ThetaVector, dataset, cfg: TrainConfig) -> ThetaVector:
    """Fit theta by Adam then projected L-BFGS; returns the lowest-loss
    iterate seen (never worse than theta_init)."""
    data = _stack_dataset(dataset, theta_init.n_own, theta_init.n_others, cfg)
    n_own, n_others = theta_init.n_own, theta_init.n_others

    def fg(values: np.ndarray):
        return _loss_and_grad_values(values, n_own, n_others, data, cfg)

    f0, _ = fg(theta_init.values)
    best_f, best_x = f0, theta_init.values.copy()

    state = AdamState.init(theta_init)
    for _ in range(cfg.adam_iters):
        f, g = fg(state.theta.values)
        if f < best_f:
            best_f, best_x = f, state.theta.values.copy()
        state = adam_step(state, g, cfg)
    f, _ = fg(state.theta.values)
    if f < best_f:
        best_f, best_x = f, state.theta.values.copy()

    lb_f, lb_x, failed = _projected_lbfgs(state.theta, fg, cfg)
    if lb_f < best_f:
        best_f, best_x = lb_f, lb_x
    if failed:
        warnings.warn(
            "quasi-Newton line search failed; returning best iterate seen",
            RuntimeWarning,
            stacklevel=2,
        )
    return theta_init.with_values(best_x)


class PreferenceModel(ClassifierMixin, BaseEstimator):
    """Binary preference classifier over candidate pairs for one agent.

    Rows of X are [x1, x2, x_others] concatenated; y holds 1 when x1 is
    preferred.  ``n_own`` fixes the column split.
    """

    def __init__(
        self,
        n_own: int = 1,
        reg_weight: float = 0.001,
        eps_d: float = 1e-6,
        dissimilarity: str = "log-linf",
        adam_iters: int = 500,
        adam_lr: float = 0.001,
        lbfgs_max_iters: int = 1000,
        lbfgs_history: int = 10,
    ):
        self.n_own = n_own
        self.reg_weight = reg_weight
        self.eps_d = eps_d
        self.dissimilarity = dissimilarity
        self.adam_iters = adam_iters
        self.adam_lr = adam_lr
        self.lbfgs_max_iters = lbfgs_max_iters
        self.lbfgs_history = lbfgs_history

    def _config(self) -> TrainConfig:
        return TrainConfig(
            adam_iters=self.adam_iters,
            adam_lr=self.adam_lr,
            lbfgs_max_iters=self.lbfgs_max_iters,
            lbfgs_history=self.lbfgs_history,
            reg_weight=self.reg_weight,
            eps_d=self.eps_d,
            dissimilarity=self.dissimilarity,
        )

    def _split(self, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] < 2 * self.n_own:
            raise ValueError("X rows must concatenate [x1, x2, x_others]")
        n = self.n_own
        return X[:, :n], X[:, n : 2 * n], X[:, 2 * n :]

    def fit(self, X, y):
        from .games import PreferenceSample

        X1, X2, XO = self._split(X)
        y = np.asarray(y)
        if y.shape[0] != X1.shape[0]:
            raise ValueError("X and y length mismatch")
        dataset = [
            PreferenceSample(x1, x2, xo, int(label))
            for x1, x2, xo, label in zip(X1, X2, XO, y)
        ]
        cfg = self._config()
        theta0 = ThetaVector.initial(self.n_own, XO.shape[1])
        self.theta_ = train(theta0, dataset, cfg)
        self.objective_ = self.theta_.to_objective()
        self.loss_ = training_loss(self.theta_, dataset, cfg)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        X1, X2, XO = self._split(X)
        p1 = np.array(
            [
                pref_probability(self.objective_, a, b, o, self.eps_d, self.dissimilarity)
                for a, b, o in zip(X1, X2, XO)
            ]
        )
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)
