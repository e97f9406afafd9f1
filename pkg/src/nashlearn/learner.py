"""Active learning of generalized Nash equilibria from preference queries.

Each iteration solves an exploration-exploitation game built from the
current surrogate objectives, perturbs each agent's best response with
decaying noise, asks the oracle to compare the two candidates, and
retrains the surrogates on the grown datasets.  Exploration weight and
noise amplitude decay polynomially to user-set floors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_vector
from .exceptions import FeasibleSamplingError, InfeasibleProblemError
from .games import (
    AgentLayout,
    BoxSet,
    ConstrainedGame,
    PreferenceSample,
    sample_feasible,
)
from .preferences import ThetaVector, TrainConfig, train
from .solvers import GNESolution, QuadraticAgentObjective, best_response, solve_gne


@dataclass(frozen=True)
class ScheduleConfig:
    """Decay schedules for exploration weight delta and noise amplitude sigma."""

    delta: float
    sigma: float = 0.3
    delta_floor: float = 0.001
    sigma_floor: float = 0.001
    p_delta: float = 5.0
    p_sigma: float = 4.0
    k_max: int = 100

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.sigma < 0 or self.delta_floor < 0 or self.sigma_floor < 0:
            raise ValueError("sigma and floors must be >= 0")
        if self.delta_floor > self.delta or self.sigma_floor > self.sigma:
            raise ValueError("floors must not exceed initial values")
        if self.p_delta < 1 or self.p_sigma < 1:
            raise ValueError("decay exponents must be >= 1")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


def delta_schedule(k: int, cfg: ScheduleConfig) -> float:
    if not 1 <= k <= cfg.k_max:
        raise ValueError(f"k must lie in [1, {cfg.k_max}]")
    return max(cfg.delta * (1.0 - k / cfg.k_max) ** cfg.p_delta, cfg.delta_floor)


def sigma_schedule(k: int, cfg: ScheduleConfig) -> float:
    if not 1 <= k <= cfg.k_max:
        raise ValueError(f"k must lie in [1, {cfg.k_max}]")
    return max(cfg.sigma * (1.0 - k / cfg.k_max) ** cfg.p_sigma, cfg.sigma_floor)


@dataclass
class IterationRecord:
    k: int
    delta: float
    sigma: float
    x: np.ndarray
    solver_status: str
    solver_residual: float
    solver_iterations: int
    retries: int = 0
    metrics: dict = field(default_factory=dict)


@dataclass
class ALState:
    """Loop state after k completed iterations.

    Randomness is derived from (seed, iteration, agent), so identical
    seeds replay identical traces regardless of retry counts elsewhere.
    """

    k: int
    seed: int
    thetas: list
    datasets: list
    history: list
    x_last: np.ndarray | None = None
    final_solution: GNESolution | None = None


def agent_rng(seed: int, k: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k, i)))


def exploration_center(
    i: int,
    game: ConstrainedGame,
    dataset,
    rng: np.random.Generator,
    mode: str = "uniform",
    sampling_box: BoxSet | None = None,
    candidates=512,
) -> np.ndarray:
    """Draw agent i's exploration anchor from its local box.

    ``mode="space-filling"`` scores a candidate pool by distance to the
    agent's previously queried decisions and returns the farthest
    candidate; with no data it falls back to a uniform draw.
    """
    box = sampling_box if sampling_box is not None else game.local[i]
    if not box.bounded:
        raise FeasibleSamplingError(
            f"agent {i} has an unbounded box; supply a bounded sampling box"
        )
    if mode == "uniform":
        return rng.uniform(box.lower, box.upper)
    if mode != "space-filling":
        raise ValueError("mode must be 'uniform' or 'space-filling'")
    pool = [s.x1 for s in dataset] + [s.x2 for s in dataset]
    if not pool:
        return rng.uniform(box.lower, box.upper)
    pool = np.asarray(pool)
    if isinstance(candidates, int):
        cand = rng.uniform(box.lower, box.upper, size=(candidates, box.dim))
    else:
        cand = np.asarray(candidates, dtype=float).reshape(-1, box.dim)
    # maximize the distance to the closest visited point
    dists = np.linalg.norm(cand[:, None, :] - pool[None, :, :], axis=2).min(axis=1)
    return cand[int(np.argmax(dists))].copy()


def query_gnep(
    thetas,
    centers,
    delta_k: float,
    game: ConstrainedGame,
    warm_start=None,
    tol: float = 1e-8,
    max_iter: int = 20_000,
) -> GNESolution:
    """Equilibrium of the surrogate game with exploration pull toward the
    centers; delta_k=0 gives the plain learned-game equilibrium."""
    objectives = tuple(
        th.to_objective() if isinstance(th, ThetaVector) else th for th in thetas
    )
    exploration = [(delta_k, as_vector(c, objectives[i].dim, "center")) for i, c in enumerate(centers)]
    return solve_gne(
        game.with_objectives(objectives),
        exploration,
        tol=tol,
        max_iter=max_iter,
        warm_start=warm_start,
    )


def perturbed_best_response(
    i: int,
    objectives,
    x_others,
    sigma_k: float,
    rng: np.random.Generator,
    game: ConstrainedGame,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact best response and its noise-perturbed copy.

    The perturbation is uniform in [-0.5, 0.5] per coordinate, scaled by
    sigma_k and the response's max-norm; it may leave the feasible set.
    """
    objectives = tuple(
        th.to_objective() if isinstance(th, ThetaVector) else th for th in objectives
    )
    x_hat = best_response(i, objectives, x_others, game)
    w = rng.uniform(-0.5, 0.5, size=x_hat.shape[0])
    x_two = x_hat + sigma_k * w * float(np.max(np.abs(x_hat), initial=0.0))
    return x_hat, x_two


def al_iteration(
    state: ALState,
    oracle,
    game: ConstrainedGame,
    schedule: ScheduleConfig,
    train_cfg: TrainConfig | None = None,
    *,
    exploration_mode: str = "uniform",
    sampling_box=None,
    solver_tol: float = 1e-8,
    solver_max_iter: int = 20_000,
    metrics_fn=None,
    max_retries: int = 5,
) -> ALState:
    """One query-compare-retrain step; returns a new state, leaving the
    input state untouched on any failure."""
    if state.k >= schedule.k_max:
        raise ValueError(f"loop already ran k_max={schedule.k_max} iterations")
    train_cfg = train_cfg if train_cfg is not None else TrainConfig()
    k = state.k + 1
    dk = delta_schedule(k, schedule)
    sk = sigma_schedule(k, schedule)
    layout = game.layout
    n_agents = layout.n_agents
    rngs = [agent_rng(state.seed, k, i) for i in range(n_agents)]
    objectives = tuple(th.to_objective() for th in state.thetas)
    game_obj = game.with_objectives(objectives)

    retries = 0
    while True:
        centers = [
            exploration_center(
                i,
                game,
                state.datasets[i],
                rngs[i],
                mode=exploration_mode,
                sampling_box=sampling_box[i] if sampling_box is not None else None,
            )
            for i in range(n_agents)
        ]
        exploration = [(dk, centers[i]) for i in range(n_agents)]
        try:
            sol = solve_gne(
                game_obj,
                exploration,
                tol=solver_tol,
                max_iter=solver_max_iter,
                warm_start=state.x_last,
            )
            x_k = sol.x
            pairs = []
            for i in range(n_agents):
                xo = layout.others(i, x_k)
                _, x_two = perturbed_best_response(i, objectives, xo, sk, rngs[i], game)
                pairs.append((layout.extract(i, x_k), x_two, xo))
            break
        except InfeasibleProblemError as exc:
            retries += 1
            if retries > max_retries:
                raise InfeasibleProblemError(
                    f"iteration {k}: best response stayed infeasible after "
                    f"{max_retries} retries with fresh exploration centers"
                ) from exc

    labels = [oracle.query(i, x1, x2, xo) for i, (x1, x2, xo) in enumerate(pairs)]
    new_datasets = [
        state.datasets[i] + [PreferenceSample(*pairs[i], labels[i])]
        for i in range(n_agents)
    ]
    new_thetas = [
        train(state.thetas[i], new_datasets[i], train_cfg) for i in range(n_agents)
    ]
    record = IterationRecord(
        k=k,
        delta=dk,
        sigma=sk,
        x=x_k.copy(),
        solver_status=sol.status,
        solver_residual=sol.residual,
        solver_iterations=sol.iterations,
        retries=retries,
    )
    if metrics_fn is not None:
        record.metrics = dict(metrics_fn(k, x_k, new_thetas) or {})
    return ALState(
        k=k,
        seed=state.seed,
        thetas=new_thetas,
        datasets=new_datasets,
        history=state.history + [record],
        x_last=x_k.copy(),
    )


def _agent_candidate(
    game: ConstrainedGame,
    i: int,
    x_others,
    rng: np.random.Generator,
    sampling_box: BoxSet | None = None,
) -> np.ndarray:
    """One feasible decision for agent i with the others fixed."""
    box = sampling_box if sampling_box is not None else game.local[i]
    if game.shared.is_empty:
        if not box.bounded:
            raise FeasibleSamplingError(
                f"agent {i} has an unbounded box; supply a bounded sampling box"
            )
        return rng.uniform(box.lower, box.upper)
    layout = game.layout
    sliced = game.shared.slice_for_agent(layout, i, x_others)
    slice_game = ConstrainedGame(
        AgentLayout((layout.dims[i],)), (game.local[i],), sliced
    )
    return sample_feasible(slice_game, 1, rng, sampling_box=[box])[0]


def initial_datasets(
    oracle,
    game: ConstrainedGame,
    m0: int,
    seed: int,
    sampling_box=None,
) -> list:
    """Per-agent datasets of m0 labelled pairs at feasible joint points."""
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    layout = game.layout
    datasets = []
    for i in range(layout.n_agents):
        rng = agent_rng(seed, 0, i)
        box_i = sampling_box[i] if sampling_box is not None else None
        boxes = list(sampling_box) if sampling_box is not None else None
        joints = sample_feasible(game, m0, rng, sampling_box=boxes)
        samples = []
        for j in range(m0):
            xo = layout.others(i, joints[j])
            x1 = _agent_candidate(game, i, xo, rng, box_i)
            x2 = _agent_candidate(game, i, xo, rng, box_i)
            samples.append(PreferenceSample(x1, x2, xo, oracle.query(i, x1, x2, xo)))
        datasets.append(samples)
    return datasets


def run(
    oracle,
    game: ConstrainedGame,
    schedule: ScheduleConfig,
    seed: int = 0,
    m0: int = 50,
    train_cfg: TrainConfig | None = None,
    *,
    exploration_mode: str = "uniform",
    sampling_box=None,
    theta_init=None,
    solver_tol: float = 1e-8,
    solver_max_iter: int = 20_000,
    metrics_fn=None,
    iteration_callback=None,
) -> tuple[np.ndarray, ALState]:
    """Full loop: initial datasets, k_max iterations, final equilibrium of
    the learned game (no exploration, warm-started from the last query).

    ``theta_init(n_own, n_others)`` supplies each agent's surrogate template
    (parameter bounds included); defaults to ``ThetaVector.initial``.
    ``iteration_callback(state)`` runs after every completed iteration,
    e.g. to stream the newest history record to disk.
    """
    train_cfg = train_cfg if train_cfg is not None else TrainConfig()
    theta_init = theta_init if theta_init is not None else ThetaVector.initial
    layout = game.layout
    datasets = initial_datasets(oracle, game, m0, seed, sampling_box=sampling_box)
    thetas = []
    for i in range(layout.n_agents):
        theta0 = theta_init(layout.dims[i], layout.n - layout.dims[i])
        thetas.append(train(theta0, datasets[i], train_cfg))
    state = ALState(k=0, seed=seed, thetas=thetas, datasets=datasets, history=[])
    for _ in range(schedule.k_max):
        state = al_iteration(
            state,
            oracle,
            game,
            schedule,
            train_cfg,
            exploration_mode=exploration_mode,
            sampling_box=sampling_box,
            solver_tol=solver_tol,
            solver_max_iter=solver_max_iter,
            metrics_fn=metrics_fn,
        )
        if iteration_callback is not None:
            iteration_callback(state)
    objectives = tuple(th.to_objective() for th in state.thetas)
    sol = solve_gne(
        game.with_objectives(objectives),
        None,
        tol=solver_tol,
        max_iter=solver_max_iter,
        warm_start=state.x_last,
    )
    state.final_solution = sol
    return sol.x.copy(), state


class GNELearner(BaseEstimator):
    """Estimator wrapper around the preference-based equilibrium learner.

    fit(game, oracle) runs the full loop; the learned equilibrium lands in
    ``equilibrium_`` with surrogates in ``objectives_`` and the iteration
    trace in ``history_``.
    """

    def __init__(
        self,
        delta: float = 1.0,
        sigma: float = 0.3,
        delta_floor: float = 0.001,
        sigma_floor: float = 0.001,
        p_delta: float = 5.0,
        p_sigma: float = 4.0,
        k_max: int = 100,
        m0: int = 50,
        reg_weight: float = 0.001,
        eps_d: float = 1e-6,
        dissimilarity: str = "log-linf",
        adam_iters: int = 500,
        adam_lr: float = 0.001,
        lbfgs_max_iters: int = 1000,
        lbfgs_history: int = 10,
        exploration: str = "uniform",
        theta_init=None,
        solver_tol: float = 1e-8,
        random_state: int | None = 0,
    ):
        self.delta = delta
        self.sigma = sigma
        self.delta_floor = delta_floor
        self.sigma_floor = sigma_floor
        self.p_delta = p_delta
        self.p_sigma = p_sigma
        self.k_max = k_max
        self.m0 = m0
        self.reg_weight = reg_weight
        self.eps_d = eps_d
        self.dissimilarity = dissimilarity
        self.adam_iters = adam_iters
        self.adam_lr = adam_lr
        self.lbfgs_max_iters = lbfgs_max_iters
        self.lbfgs_history = lbfgs_history
        self.exploration = exploration
        self.theta_init = theta_init
        self.solver_tol = solver_tol
        self.random_state = random_state

    def _schedule(self) -> ScheduleConfig:
        return ScheduleConfig(
            delta=self.delta,
            sigma=self.sigma,
            delta_floor=self.delta_floor,
            sigma_floor=self.sigma_floor,
            p_delta=self.p_delta,
            p_sigma=self.p_sigma,
            k_max=self.k_max,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            adam_iters=self.adam_iters,
            adam_lr=self.adam_lr,
            lbfgs_max_iters=self.lbfgs_max_iters,
            lbfgs_history=self.lbfgs_history,
            reg_weight=self.reg_weight,
            eps_d=self.eps_d,
            dissimilarity=self.dissimilarity,
        )

    def fit(self, game: ConstrainedGame, oracle, metrics_fn=None, sampling_box=None):
        if self.random_state is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        else:
            seed = int(self.random_state)
        before = oracle.query_count
        x, state = run(
            oracle,
            game,
            self._schedule(),
            seed=seed,
            m0=self.m0,
            train_cfg=self._train_config(),
            exploration_mode=self.exploration,
            sampling_box=sampling_box,
            theta_init=self.theta_init,
            solver_tol=self.solver_tol,
            metrics_fn=metrics_fn,
        )
        self.equilibrium_ = x
        self.state_ = state
        self.thetas_ = state.thetas
        self.objectives_ = tuple(th.to_objective() for th in state.thetas)
        self.history_ = state.history
        self.n_queries_ = oracle.query_count - before
        return self
