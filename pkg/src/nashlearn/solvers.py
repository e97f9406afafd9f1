"""Convex QP and quadratic-game solvers.

``solve_qp`` is a small dense ADMM solver (over-relaxed splitting with an
active-set polish step for machine-precision KKT residuals).  ``solve_gne``
computes variational generalized Nash equilibria of quadratic games by
projected extragradient on the stacked pseudo-gradient, falling back to
damped Gauss-Seidel best responses when the coupling makes the game
operator non-monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from ._validation import as_matrix, as_vector
from .exceptions import InfeasibleProblemError, SolverConvergenceError
from .games import AffineConstraints, AgentLayout, BoxSet, ConstrainedGame

# Parameter-space floor for Cholesky diagonals; keeps every learned P_i
# strictly positive definite.
EPS_CHOL = 1e-4


@dataclass(frozen=True)
class QuadraticAgentObjective:
    """One agent's quadratic objective in Cholesky parameterization.

    value(x_i, x_o) = 0.5 x_i' L L' x_i + q' x_i + x_o' A x_i, with L lower
    triangular and positive on the diagonal so P = L L' is SPD.
    """

    chol: np.ndarray
    q: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        L = as_matrix(self.chol, name="chol")
        if L.shape[0] != L.shape[1]:
            raise ValueError("chol must be square")
        if not np.array_equal(L, np.tril(L)):
            raise ValueError("chol must be lower triangular")
        if np.any(np.diag(L) <= 0):
            raise ValueError("chol diagonal must be positive")
        q = as_vector(self.q, L.shape[0], "q")
        A = as_matrix(self.A, name="A")
        if A.shape[1] != L.shape[0]:
            raise ValueError("A must have one column per own decision variable")
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "_P", L @ L.T)

    @property
    def dim(self) -> int:
        return self.chol.shape[0]

    @property
    def n_others(self) -> int:
        return self.A.shape[0]

    @property
    def P(self) -> np.ndarray:
        return self._P

    def value(self, xi, x_others) -> float:
        xi = as_vector(xi, self.dim, "xi")
        xo = as_vector(x_others, self.n_others, "x_others")
        return float(0.5 * xi @ (self._P @ xi) + self.q @ xi + xo @ (self.A @ xi))

    def grad(self, xi, x_others) -> np.ndarray:
        xi = as_vector(xi, self.dim, "xi")
        xo = as_vector(x_others, self.n_others, "x_others")
        return self._P @ xi + self.q + self.A.T @ xo

    @classmethod
    def from_quadratic(cls, P, q, A=None) -> "QuadraticAgentObjective":
        P = as_matrix(P, name="P")
        q = as_vector(q, P.shape[0], "q")
        if A is None:
            A = np.zeros((0, P.shape[0]))
        return cls(np.linalg.cholesky(P), q, A)

    def with_exploration(self, delta: float, center) -> "QuadraticAgentObjective":
        """Fold an exploration term (delta/2)||x_i - center||^2 into P and q."""
        if delta == 0.0:
            return self
        center = as_vector(center, self.dim, "center")
        return QuadraticAgentObjective.from_quadratic(
            self._P + delta * np.eye(self.dim), self.q - delta * center, self.A
        )


@dataclass(frozen=True)
class GNESolution:
    x: np.ndarray
    residual: float
    iterations: int
    status: str  # converged | max-iterations | non-monotone-warning
    gamma: float  # extragradient step used; needed to recompute the residual


@dataclass
class ADMMResult:
    """Raw QP solve outcome.  Duals follow the convention y > 0 at an
    upper-active row and y < 0 at a lower-active row."""

    x: np.ndarray
    y: np.ndarray
    status: str  # converged | max-iterations | infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool


def _polish(P, q, A, l, u, x, y, res_before):
    """Active-set refinement: solve the KKT system of the faces selected by
    the dual signs; accept only when the KKT error strictly improves."""
    n = P.shape[0]
    eq = l == u
    act_l = ((y < -1e-10) | eq) & ~(y > 1e-10)
    act_u = (y > 1e-10) & ~eq
    rows = np.flatnonzero(act_l | act_u)
    if rows.size == 0:
        x_p = cho_solve(cho_factor(P), -q)
        y_p = np.zeros_like(y)
    else:
        Aact = A[rows]
        b = np.where(act_l, l, u)[rows]
        na = rows.size
        K = np.block([[P, Aact.T], [Aact, np.zeros((na, na))]])
        K_reg = K.copy()
        K_reg[n:, n:] -= 1e-9 * np.eye(na)  # quasi-definite regularization
        rhs = np.concatenate([-q, b])
        try:
            lu = lu_factor(K_reg)
        except np.linalg.LinAlgError:
            return x, y, False
        sol = lu_solve(lu, rhs)
        for _ in range(3):  # iterative refinement against the exact KKT matrix
            sol += lu_solve(lu, rhs - K @ sol)
        x_p = sol[:n]
        y_p = np.zeros_like(y)
        y_p[rows] = sol[n:]
    if not np.all(np.isfinite(x_p)):
        return x, y, False
    Ax = A @ x_p
    viol = max(
        float(np.max(Ax - u, initial=0.0)),
        float(np.max(l - Ax, initial=0.0)),
    )
    dual = float(np.max(np.abs(P @ x_p + q + A.T @ y_p), initial=0.0))
    sign_bad = 0.0
    free = ~eq
    if np.any(act_u & free):
        sign_bad = max(sign_bad, float(np.max(-y_p[act_u & free], initial=0.0)))
    if np.any(act_l & free):
        sign_bad = max(sign_bad, float(np.max(y_p[act_l & free], initial=0.0)))
    if max(viol, dual, sign_bad) < res_before:
        return x_p, y_p, True
    return x, y, False


def admm_qp(
    P,
    q,
    A,
    l,
    u,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    rho0: float = 0.1,
    eq_scale: float = 1e3,
    x0=None,
) -> ADMMResult:
    """Minimize 0.5 x'Px + q'x subject to l <= Ax <= u.

    Over-relaxed ADMM with per-row penalties (equality rows weighted by
    ``eq_scale``), periodic rho rebalancing, a primal-infeasibility
    certificate, and a direct-solve polish on convergence.
    """
    P = as_matrix(P, name="P")
    n = P.shape[0]
    q = as_vector(q, n, "q")
    A = as_matrix(A, name="A")
    m = A.shape[0]
    l = as_vector(l, m, "l")
    u = as_vector(u, m, "u")

    if m == 0:
        x = cho_solve(cho_factor(P), -q)
        r_d = float(np.max(np.abs(P @ x + q), initial=0.0))
        return ADMMResult(x, np.zeros(0), "converged", 0, 0.0, r_d, True)

    rho = np.full(m, rho0)
    rho[l == u] *= eq_scale

    def factor(rho_vec):
        return cho_factor(P + sigma * np.eye(n) + (A.T * rho_vec) @ A)

    fac = factor(rho)
    x = np.zeros(n) if x0 is None else as_vector(x0, n, "x0").copy()
    z = np.clip(A @ x, l, u)
    y = np.zeros(m)

    finite_u = np.isfinite(u)
    finite_l = np.isfinite(l)
    r_prim = r_dual = np.inf

    for k in range(1, max_iter + 1):
        rhs = sigma * x - q + A.T @ (rho * z - y)
        x_t = cho_solve(fac, rhs)
        z_t = A @ x_t
        x = alpha * x_t + (1.0 - alpha) * x
        z_pre = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(z_pre + y / rho, l, u)
        dy = rho * (z_pre - z_new)
        y = y + dy
        z = z_new

        Ax = A @ x
        r_prim = float(np.max(np.abs(Ax - z), initial=0.0))
        r_dual = float(np.max(np.abs(P @ x + q + A.T @ y), initial=0.0))
        if max(r_prim, r_dual) <= tol:
            res = max(r_prim, r_dual)
            x, y, pol = _polish(P, q, A, l, u, x, y, res)
            return ADMMResult(x, y, "converged", k, r_prim, r_dual, pol)

        if k >= 50 and k % 25 == 0:
            ndy = float(np.max(np.abs(dy), initial=0.0))
            if ndy > 1e-12:
                eps_inf = 1e-6
                if float(np.max(np.abs(A.T @ dy), initial=0.0)) <= eps_inf * ndy:
                    dplus = np.maximum(dy, 0.0)
                    dminus = np.minimum(dy, 0.0)
                    ok = np.all(dplus[~finite_u] <= eps_inf * ndy) and np.all(
                        -dminus[~finite_l] <= eps_inf * ndy
                    )
                    if ok:
                        support = float(u[finite_u] @ dplus[finite_u] + l[finite_l] @ dminus[finite_l])
                        if support <= -eps_inf * ndy:
                            return ADMMResult(x, y, "infeasible", k, r_prim, r_dual, False)

        if k % 100 == 0:
            num = r_prim / max(
                float(np.max(np.abs(Ax), initial=0.0)),
                float(np.max(np.abs(z), initial=0.0)),
                1e-10,
            )
            den = r_dual / max(
                float(np.max(np.abs(P @ x), initial=0.0)),
                float(np.max(np.abs(A.T @ y), initial=0.0)),
                float(np.max(np.abs(q), initial=0.0)),
                1e-10,
            )
            if num > 0 and den > 0:
                ratio = float(np.sqrt(num / den))
                if ratio > 5.0 or ratio < 0.2:
                    rho = np.clip(rho * ratio, 1e-6, 1e6)
                    fac = factor(rho)

    return ADMMResult(x, y, "max-iterations", max_iter, r_prim, r_dual, False)


def _assemble_rows(n: int, box: BoxSet | None, shared: AffineConstraints | None):
    """Stack box/inequality/equality rows as l <= Ax <= u, dropping free rows."""
    blocks_A, blocks_l, blocks_u = [], [], []
    if box is not None:
        keep = np.isfinite(box.lower) | np.isfinite(box.upper)
        if np.any(keep):
            blocks_A.append(np.eye(n)[keep])
            blocks_l.append(box.lower[keep])
            blocks_u.append(box.upper[keep])
    if shared is not None and shared.n_ineq:
        blocks_A.append(shared.G)
        blocks_l.append(np.full(shared.n_ineq, -np.inf))
        blocks_u.append(-shared.g0)
    if shared is not None and shared.n_eq:
        blocks_A.append(shared.H)
        blocks_l.append(-shared.h0)
        blocks_u.append(-shared.h0)
    if not blocks_A:
        return np.zeros((0, n)), np.zeros(0), np.zeros(0)
    return np.vstack(blocks_A), np.concatenate(blocks_l), np.concatenate(blocks_u)


def solve_qp(
    P,
    q,
    box: BoxSet | None = None,
    shared: AffineConstraints | None = None,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    x0=None,
) -> np.ndarray:
    """Minimize 0.5 x'Px + q'x over a box intersected with affine constraints."""
    P = as_matrix(P, name="P")
    n = P.shape[0]
    q = as_vector(q, n, "q")
    A, l, u = _assemble_rows(n, box, shared)
    res = admm_qp(P, q, A, l, u, tol=tol, max_iter=max_iter, x0=x0)
    if res.status == "infeasible":
        raise InfeasibleProblemError("QP infeasible")
    if res.status == "max-iterations":
        raise SolverConvergenceError(
            f"QP did not reach tolerance {tol:g} in {max_iter} iterations",
            residuals=(res.primal_residual, res.dual_residual),
        )
    return res.x


def project(
    point,
    box: BoxSet | None = None,
    shared: AffineConstraints | None = None,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Euclidean projection onto the box intersected with affine constraints."""
    point = as_vector(point, name="point")
    if (shared is None or shared.is_empty) and box is not None:
        return box.project(point)
    if shared is None or shared.is_empty:
        return point.copy()
    n = point.shape[0]
    return solve_qp(np.eye(n), -point, box, shared, tol=tol, max_iter=max_iter, x0=point)


def _layout_of(objectives: Sequence[QuadraticAgentObjective]) -> AgentLayout:
    return AgentLayout(tuple(obj.dim for obj in objectives))


def pseudo_gradient(objectives, x, exploration=None) -> np.ndarray:
    """Stacked per-agent own-block gradients, optionally with exploration
    pull terms delta*(x_i - center_i)."""
    layout = _layout_of(objectives)
    x = as_vector(x, layout.n, "x")
    g = np.empty(layout.n)
    for i, obj in enumerate(objectives):
        blk = layout.block(i)
        gi = obj.grad(x[blk], x[layout.others_index(i)])
        if exploration is not None and exploration[i] is not None:
            delta, center = exploration[i]
            gi = gi + delta * (x[blk] - as_vector(center, obj.dim, "center"))
        g[blk] = gi
    return g


def game_operator(objectives, exploration=None) -> tuple[np.ndarray, np.ndarray]:
    """Matrix/offset (M, c) with pseudo_gradient(x) = M x + c."""
    layout = _layout_of(objectives)
    n = layout.n
    M = np.zeros((n, n))
    c = np.zeros(n)
    for i, obj in enumerate(objectives):
        blk = layout.block(i)
        rows = np.arange(blk.start, blk.stop)
        M[blk, blk] = obj.P
        oth = layout.others_index(i)
        if oth.size:
            M[np.ix_(rows, oth)] = obj.A.T
        c[blk] = obj.q
        if exploration is not None and exploration[i] is not None:
            delta, center = exploration[i]
            M[blk, blk] += delta * np.eye(obj.dim)
            c[blk] -= delta * as_vector(center, obj.dim, "center")
    return M, c


def spectral_norm(M, max_iter: int = 300, rtol: float = 1e-12) -> float:
    """Largest singular value by power iteration on M'M (deterministic start)."""
    M = as_matrix(M, name="M")
    n = M.shape[1]
    if n == 0:
        return 0.0
    v = np.ones(n) / np.sqrt(n)
    s_prev = -1.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        s = float(np.linalg.norm(M @ v))
        if abs(s - s_prev) <= rtol * max(s, 1.0):
            break
        s_prev = s
    return s


def _fold_exploration(objectives, exploration):
    if exploration is None:
        return tuple(objectives)
    out = []
    for obj, ex in zip(objectives, exploration):
        if ex is None:
            out.append(obj)
        else:
            delta, center = ex
            out.append(obj.with_exploration(float(delta), center))
    return tuple(out)


def best_response(
    i: int,
    objectives,
    x_others,
    game: ConstrainedGame,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Agent i's exact best response with the other blocks held fixed."""
    obj = objectives[i]
    layout = game.layout
    xo = as_vector(x_others, game.n - layout.dims[i], "x_others")
    q_eff = obj.q + obj.A.T @ xo
    sliced = game.shared.slice_for_agent(layout, i, xo)
    try:
        return solve_qp(obj.P, q_eff, game.local[i], sliced, tol=tol, max_iter=max_iter)
    except InfeasibleProblemError as exc:
        raise InfeasibleProblemError(
            f"best-response infeasible given opponents (agent {i})"
        ) from exc


def solve_gne(
    game: ConstrainedGame,
    exploration=None,
    tol: float = 1e-8,
    max_iter: int = 20_000,
    warm_start=None,
    stall_window: int = 200,
) -> GNESolution:
    """Variational GNE of a quadratic game by projected extragradient.

    The residual is ||x - proj(x - gamma F(x))||_2 for the reported gamma.
    Box-only games are first checked for an interior stationary point of
    the stacked linear system, which is an exact equilibrium whenever it
    falls inside the box (each agent objective is strictly convex in its
    own block).  Otherwise a non-monotone operator (negative eigenvalue of
    the symmetrized game matrix, or an extragradient stall over
    ``stall_window`` iterations) is reported as non-monotone-warning and
    triggers a damped Gauss-Seidel best-response fallback (500 sweeps,
    damping 0.5): for non-monotone games the extragradient point can be a
    spurious boundary equilibrium, and cyclic best response instead selects
    an equilibrium that is stable under the game's own response dynamics.
    """
    if game.objectives is None:
        raise ValueError("game has no quadratic objectives to solve")
    objectives = game.objectives
    layout = game.layout
    M, c = game_operator(objectives, exploration)
    box = game.joint_box()
    box_only = game.shared.is_empty

    def proj(v: np.ndarray) -> np.ndarray:
        if box_only:
            return box.project(v)
        return project(v, box, game.shared, tol=tol)

    lip = spectral_norm(M)
    gamma = 0.9 / max(lip, 1e-8)
    nonmonotone = float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T)))) < -1e-10

    # Interior shortcut: each P_i is SPD, so a stationary point of the stacked
    # system that lies inside the box is an exact equilibrium no matter the
    # sign of the coupling (own-block stationarity there is a global best
    # response).  Projected iterations can instead latch onto boundary
    # equilibria of non-monotone games, so prefer the interior solution
    # whenever it exists.
    if box_only:
        try:
            cand = np.linalg.solve(M, -c)
        except np.linalg.LinAlgError:
            cand = None
        if (
            cand is not None
            and np.all(np.isfinite(cand))
            and np.all(cand >= box.lower)
            and np.all(cand <= box.upper)
        ):
            r = float(np.linalg.norm(cand - proj(cand - gamma * (M @ cand + c))))
            if r <= tol:
                return GNESolution(x=cand, residual=r, iterations=0, status="converged", gamma=gamma)

    x = proj(np.zeros(layout.n) if warm_start is None else as_vector(warm_start, layout.n))
    best_x = x.copy()
    best_r = np.inf
    stall = 0
    status = "max-iterations"
    iterations = 0

    for k in range(1, max_iter + 1):
        iterations = k
        y = proj(x - gamma * (M @ x + c))
        r = float(np.linalg.norm(x - y))
        if r < best_r:
            best_r, stall = r, 0
            best_x = x.copy()
        else:
            stall += 1
        if r <= tol:
            status = "converged"
            break
        if stall >= stall_window:
            status = "non-monotone-warning"
            break
        x = proj(x - gamma * (M @ y + c))

    stalled = status == "non-monotone-warning"
    if nonmonotone or stalled:
        eff = _fold_exploration(objectives, exploration)
        xf = best_x.copy()
        try:
            for _ in range(500):
                for i in range(layout.n_agents):
                    xi = best_response(i, eff, xf[layout.others_index(i)], game, tol=tol)
                    blk = layout.block(i)
                    xf[blk] = 0.5 * xf[blk] + 0.5 * xi
                iterations += 1
                rf = float(np.linalg.norm(xf - proj(xf - gamma * (M @ xf + c))))
                if rf <= tol:
                    best_r = rf
                    best_x = xf.copy()
                    break
                if rf < best_r:
                    best_r = rf
                    best_x = xf.copy()
                if not np.all(np.isfinite(xf)) or np.linalg.norm(xf) > 1e12:
                    break
        except (InfeasibleProblemError, SolverConvergenceError):
            pass  # keep the best iterate found so far
        if nonmonotone:
            status = "non-monotone-warning"
        elif best_r <= tol:
            status = "converged"

    return GNESolution(x=best_x, residual=best_r, iterations=iterations, status=status, gamma=gamma)
