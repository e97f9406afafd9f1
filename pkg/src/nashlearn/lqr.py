"""Feedback-Nash linear-quadratic games used as a benchmark with known structure.

N agents share the linear plant xi(t+1) = A xi(t) + B u(t), each owning a
column block of B and applying static feedback u_i = -K_i xi.  An agent's
objective over candidate gains is the squared Frobenius distance to its
finite-horizon best-response gain, which is zero exactly at a feedback
Nash profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_vector, ensure_rng
from .exceptions import EvaluationError, RiccatiDivergenceError, SolverConvergenceError
from .games import AgentLayout, BoxSet, ConstrainedGame, PreferenceOracle
from .games import AffineConstraints


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time plant with per-agent input column blocks."""

    A: np.ndarray
    B: np.ndarray
    dims: tuple[int, ...]  # input widths m_i, summing to B's column count

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        B = as_matrix(self.B, shape=(A.shape[0], None), name="B")
        dims = tuple(int(d) for d in self.dims)
        if any(d < 1 for d in dims) or sum(dims) != B.shape[1]:
            raise ValueError("input partition must cover B's columns exactly")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "dims", dims)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_agents(self) -> int:
        return len(self.dims)

    def input_slice(self, i: int) -> slice:
        off = sum(self.dims[:i])
        return slice(off, off + self.dims[i])

    def input_block(self, i: int) -> np.ndarray:
        return self.B[:, self.input_slice(i)]


@dataclass(frozen=True)
class LQRCost:
    """One agent's quadratic stage cost and evaluation horizon."""

    Q: np.ndarray
    R: np.ndarray
    horizon: int = 50

    def __post_init__(self):
        Q = as_matrix(self.Q, name="Q")
        R = as_matrix(self.R, name="R")
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        np.linalg.cholesky(R)  # PD check
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class GainProfile:
    """Per-agent feedback gains K_i (m_i x n_states)."""

    gains: tuple[np.ndarray, ...]

    def __post_init__(self):
        gains = tuple(as_matrix(K, name="K") for K in self.gains)
        n = gains[0].shape[1]
        if any(K.shape[1] != n for K in gains):
            raise ValueError("all gains must share the state dimension")
        object.__setattr__(self, "gains", gains)

    @property
    def n_states(self) -> int:
        return self.gains[0].shape[1]

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack(self.gains)

    def replace_gain(self, i: int, K_i) -> "GainProfile":
        gains = list(self.gains)
        gains[i] = as_matrix(K_i, shape=self.gains[i].shape, name="K_i")
        return GainProfile(tuple(gains))

    @classmethod
    def zeros(cls, system: LinearSystem) -> "GainProfile":
        return cls(tuple(np.zeros((d, system.n_states)) for d in system.dims))

    @classmethod
    def from_stacked(cls, K, dims) -> "GainProfile":
        K = as_matrix(K, name="K")
        out, off = [], 0
        for d in dims:
            out.append(K[off : off + d])
            off += d
        return cls(tuple(out))


def closed_loop(system: LinearSystem, profile: GainProfile) -> np.ndarray:
    return system.A - system.B @ profile.stacked


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(as_matrix(M, name="M")))))


def random_system(
    n_states: int,
    m: int,
    target_radius: float,
    rng=None,
    dims: tuple[int, ...] | None = None,
) -> LinearSystem:
    """Gaussian system with A rescaled to the requested spectral radius."""
    if n_states < 1 or m < 1 or target_radius <= 0:
        raise ValueError("need n_states, m >= 1 and target_radius > 0")
    rng = ensure_rng(rng)
    while True:
        A0 = rng.standard_normal((n_states, n_states))
        rho = spectral_radius(A0)
        if rho > 0:
            break
    A = target_radius * A0 / rho
    B = rng.standard_normal((n_states, m))
    return LinearSystem(A, B, dims if dims is not None else (m,))


def _horizon(costs, T: int | None) -> int:
    return int(T) if T is not None else int(costs[0].horizon)


def best_response_gain(
    system: LinearSystem,
    cost: LQRCost,
    i: int,
    profile: GainProfile,
    T: int | None = None,
    divergence_norm: float = 1e12,
) -> np.ndarray:
    """Stage-0 gain of the T-step backward value recursion against the
    opponents' gains held fixed."""
    T = int(T) if T is not None else int(cost.horizon)
    Bi = system.input_block(i)
    A_tilde = system.A.copy()
    for j in range(system.n_agents):
        if j != i:
            A_tilde -= system.input_block(j) @ profile.gains[j]
    P = cost.Q.copy()
    K = np.zeros((Bi.shape[1], system.n_states))
    for _ in range(T):
        BtP = Bi.T @ P
        K = np.linalg.solve(cost.R + BtP @ Bi, BtP @ A_tilde)
        P = cost.Q + A_tilde.T @ P @ (A_tilde - Bi @ K)
        P = 0.5 * (P + P.T)
        if not np.all(np.isfinite(P)) or np.linalg.norm(P) > divergence_norm:
            raise RiccatiDivergenceError(
                f"Riccati divergence for agent {i}: value iterate exceeded "
                f"{divergence_norm:g} (non-stabilizable configuration)"
            )
    return K


def br_deviation(
    i: int,
    profile: GainProfile,
    system: LinearSystem,
    costs,
    T: int | None = None,
) -> float:
    """Squared Frobenius distance from K_i to its best response."""
    K_star = best_response_gain(system, costs[i], i, profile, T)
    return float(np.sum((K_star - profile.gains[i]) ** 2))


def nash_gains(
    system: LinearSystem,
    costs,
    T: int | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 1000,
    initial: GainProfile | None = None,
    damping: float = 1.0,
) -> GainProfile:
    """Feedback Nash profile by cyclic iterated best response.

    damping < 1 relaxes each update, K_i <- (1-damping) K_i + damping BR_i,
    which can stabilize oscillating sweeps at the price of slower progress.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    profile = initial if initial is not None else GainProfile.zeros(system)
    trace = []
    for _ in range(max_sweeps):
        for i in range(system.n_agents):
            br = best_response_gain(system, costs[i], i, profile, T)
            if damping < 1.0:
                br = (1.0 - damping) * profile.gains[i] + damping * br
            profile = profile.replace_gain(i, br)
        dev = max(
            br_deviation(i, profile, system, costs, T) for i in range(system.n_agents)
        )
        trace.append(dev)
        if dev <= tol:
            return profile
    raise SolverConvergenceError(
        f"iterated best response did not reach deviation {tol:g} in "
        f"{max_sweeps} sweeps",
        residuals=trace[-10:],
    )


def simulate(
    system: LinearSystem,
    profile: GainProfile,
    costs,
    xi0,
    T: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop rollout; per-agent cost sums stage terms j = 0..T inclusive."""
    T = _horizon(costs, T)
    xi = as_vector(xi0, system.n_states, "xi0")
    Acl = closed_loop(system, profile)
    traj = np.empty((T + 1, system.n_states))
    traj[0] = xi
    for j in range(T):
        traj[j + 1] = Acl @ traj[j]
    total = np.zeros(system.n_agents)
    for i in range(system.n_agents):
        Ki = profile.gains[i]
        U = traj @ Ki.T  # u_i(j) = -K_i xi(j); sign drops in the quadratic
        total[i] = float(
            np.einsum("jk,kl,jl->", traj, costs[i].Q, traj)
            + np.einsum("jk,kl,jl->", U, costs[i].R, U)
        )
    return traj, total


@dataclass(frozen=True)
class ProfileEvaluation:
    normalized_rmse: float
    max_deviation: float
    per_agent_rmse: np.ndarray
    deviations: np.ndarray
    cost_learned: np.ndarray
    cost_reference: np.ndarray


def evaluate_profile(
    system: LinearSystem,
    costs,
    profile_learned: GainProfile,
    profile_reference: GainProfile,
    n_states: int = 100,
    T: int | None = None,
    rng=None,
) -> ProfileEvaluation:
    """Cost-based comparison over random initial states.

    The compared cost per state is the sum over agents; the RMSE of the
    difference is normalized by the reference cost range.  Per-agent
    normalized RMSEs are also reported (NaN where an agent's range is 0).
    """
    rng = ensure_rng(rng)
    T = _horizon(costs, T)
    n_agents = system.n_agents
    states = rng.standard_normal((n_states, system.n_states))
    cl = np.empty((n_states, n_agents))
    cs = np.empty((n_states, n_agents))
    # an unstable learned profile overflows to inf cost; keep the inf, drop the noise
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n_states):
            cl[s] = simulate(system, profile_learned, costs, states[s], T)[1]
            cs[s] = simulate(system, profile_reference, costs, states[s], T)[1]
        tot_l = cl.sum(axis=1)
        tot_s = cs.sum(axis=1)
        denom = float(tot_s.max() - tot_s.min())
        if denom <= 0:
            raise EvaluationError("degenerate normalizer: reference costs have zero range")
        rmse = float(np.sqrt(np.mean((tot_l - tot_s) ** 2))) / denom
        per_agent = np.full(n_agents, np.nan)
        for i in range(n_agents):
            rng_i = float(cs[:, i].max() - cs[:, i].min())
            if rng_i > 0:
                per_agent[i] = float(np.sqrt(np.mean((cl[:, i] - cs[:, i]) ** 2))) / rng_i
    devs = np.array(
        [br_deviation(i, profile_learned, system, costs, T) for i in range(n_agents)]
    )
    return ProfileEvaluation(
        normalized_rmse=rmse,
        max_deviation=float(devs.max()),
        per_agent_rmse=per_agent,
        deviations=devs,
        cost_learned=tot_l,
        cost_reference=tot_s,
    )


# ---------------------------------------------------------------------------
# glue between gain profiles and the flat game layout


def gain_layout(system: LinearSystem) -> AgentLayout:
    return AgentLayout(tuple(d * system.n_states for d in system.dims))


def profile_to_vector(profile: GainProfile) -> np.ndarray:
    return np.concatenate([K.ravel() for K in profile.gains])


def vector_to_profile(x, system: LinearSystem) -> GainProfile:
    layout = gain_layout(system)
    x = as_vector(x, layout.n, "x")
    gains = []
    for i, d in enumerate(system.dims):
        gains.append(x[layout.block(i)].reshape(d, system.n_states))
    return GainProfile(tuple(gains))


def lqr_game(system: LinearSystem, gain_bound: float = 10.0) -> ConstrainedGame:
    """Box-constrained game over vectorized gains (entries in +-gain_bound)."""
    layout = gain_layout(system)
    local = tuple(BoxSet.cube(layout.dims[i], -gain_bound, gain_bound) for i in range(layout.n_agents))
    return ConstrainedGame(layout, local, AffineConstraints.empty(layout.n))


def lqr_preference_oracle(system: LinearSystem, costs, T: int | None = None) -> PreferenceOracle:
    """Oracle comparing best-response deviations of two candidate gains."""
    T = _horizon(costs, T)
    layout = gain_layout(system)

    def make_objective(i: int):
        def J(xi: np.ndarray, x_others: np.ndarray) -> float:
            x = layout.combine(i, xi, x_others)
            return br_deviation(i, vector_to_profile(x, system), system, costs, T)

        return J

    return PreferenceOracle([make_objective(i) for i in range(system.n_agents)])


def benchmark_costs(system: LinearSystem, horizon: int = 50) -> list[LQRCost]:
    """Each agent penalizes the state slice aligned with its input block
    (unit weights) and its own effort with an identity R."""
    costs = []
    for i in range(system.n_agents):
        sl = system.input_slice(i)
        if sl.stop > system.n_states:
            raise ValueError("state dimension too small for the diagonal Q pattern")
        Q = np.zeros((system.n_states, system.n_states))
        Q[sl, sl] = np.eye(system.dims[i])
        costs.append(LQRCost(Q, np.eye(system.dims[i]), horizon))
    return costs
