"""Experiment runner: problem registry, config parsing, seeded runs, CSV output.

A run directory holds the config snapshot, the per-iteration CSV (flushed
row by row so aborted runs keep their partial trace), the final surrogate
parameters, and a plain-text summary.  Floats are serialized with 17
significant digits so identical (config, seed) pairs reproduce byte-identical
CSVs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigError
from .games import (
    AffineConstraints,
    AgentLayout,
    BoxSet,
    ConstrainedGame,
    PreferenceOracle,
    game_from_json,
    make_preference_oracle,
)
from .learner import ScheduleConfig, run as run_loop
from .preferences import ThetaVector, TrainConfig, pinned_curvature_template
from .solvers import QuadraticAgentObjective, game_operator, solve_gne
from . import lqr as lqr_mod

_BASE_COLUMNS = (
    "k",
    "delta",
    "sigma",
    "solver_status",
    "solver_residual",
    "solver_iterations",
    "retries",
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    problem: str
    schedule: ScheduleConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    problem_params: dict = field(default_factory=dict)
    m0: int = 50
    seed: int = 0
    repeat: int = 1
    out_dir: str | None = None
    rmse_every: int = 10
    exploration: str = "uniform"

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "problem_params": dict(self.problem_params),
            "schedule": {
                "delta": self.schedule.delta,
                "sigma": self.schedule.sigma,
                "delta_floor": self.schedule.delta_floor,
                "sigma_floor": self.schedule.sigma_floor,
                "p_delta": self.schedule.p_delta,
                "p_sigma": self.schedule.p_sigma,
                "k_max": self.schedule.k_max,
            },
            "training": {
                "adam_iters": self.train.adam_iters,
                "adam_lr": self.train.adam_lr,
                "adam_beta1": self.train.adam_beta1,
                "adam_beta2": self.train.adam_beta2,
                "adam_eps": self.train.adam_eps,
                "lbfgs_max_iters": self.train.lbfgs_max_iters,
                "lbfgs_history": self.train.lbfgs_history,
                "reg_weight": self.train.reg_weight,
                "eps_d": self.train.eps_d,
                "p_clamp": self.train.p_clamp,
                "dissimilarity": self.train.dissimilarity,
            },
            "m0": self.m0,
            "seed": self.seed,
            "repeat": self.repeat,
            "out_dir": self.out_dir,
            "rmse_every": self.rmse_every,
            "exploration": self.exploration,
        }


_TOP_KEYS = {
    "problem",
    "problem_params",
    "schedule",
    "training",
    "m0",
    "seed",
    "repeat",
    "out_dir",
    "rmse_every",
    "exploration",
}
_SCHEDULE_KEYS = {"delta", "sigma", "delta_floor", "sigma_floor", "p_delta", "p_sigma", "k_max"}
_TRAIN_KEYS = {
    "adam_iters",
    "adam_lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "lbfgs_max_iters",
    "lbfgs_history",
    "reg_weight",
    "eps_d",
    "p_clamp",
    "dissimilarity",
}
_INT_KEYS = {"k_max", "m0", "seed", "repeat", "rmse_every", "adam_iters", "lbfgs_max_iters", "lbfgs_history"}


def _check_keys(doc: dict, allowed: set, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path.rstrip('.') or 'top level'}: must be a mapping")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}{key}: unknown key")


def _coerce_ints(doc: dict, path: str) -> dict:
    out = {}
    for key, val in doc.items():
        if key in _INT_KEYS:
            if isinstance(val, bool) or (isinstance(val, float) and not val.is_integer()):
                raise ConfigError(f"{path}{key}: must be an integer")
            try:
                val = int(val)
            except (TypeError, ValueError):
                raise ConfigError(f"{path}{key}: must be an integer") from None
        out[key] = val
    return out


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config mapping; unknown keys and broken invariants are
    reported with their key path."""
    _check_keys(doc, _TOP_KEYS, "")
    if "problem" not in doc:
        raise ConfigError("problem: required key missing")
    if not isinstance(doc["problem"], str):
        raise ConfigError("problem: must be a string")

    sched_doc = doc.get("schedule", {})
    _check_keys(sched_doc, _SCHEDULE_KEYS, "schedule.")
    if "delta" not in sched_doc:
        raise ConfigError("schedule.delta: required key missing")
    try:
        schedule = ScheduleConfig(**_coerce_ints(sched_doc, "schedule."))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"schedule: {exc}") from None

    train_doc = doc.get("training", {})
    _check_keys(train_doc, _TRAIN_KEYS, "training.")
    try:
        train = TrainConfig(**_coerce_ints(train_doc, "training."))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"training: {exc}") from None

    scalars = _coerce_ints(
        {k: doc[k] for k in ("m0", "seed", "repeat", "rmse_every") if k in doc}, ""
    )
    m0 = scalars.get("m0", 50)
    seed = scalars.get("seed", 0)
    repeat = scalars.get("repeat", 1)
    rmse_every = scalars.get("rmse_every", 10)
    if m0 < 1:
        raise ConfigError("m0: must be >= 1")
    if repeat < 1:
        raise ConfigError("repeat: must be >= 1")
    if rmse_every < 1:
        raise ConfigError("rmse_every: must be >= 1")
    exploration = doc.get("exploration", "uniform")
    if exploration not in ("uniform", "space-filling"):
        raise ConfigError("exploration: must be 'uniform' or 'space-filling'")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("out_dir: must be a string path")
    params = doc.get("problem_params", {})
    if not isinstance(params, dict):
        raise ConfigError("problem_params: must be a mapping")

    return ExperimentConfig(
        problem=doc["problem"],
        schedule=schedule,
        train=train,
        problem_params=dict(params),
        m0=m0,
        seed=seed,
        repeat=repeat,
        out_dir=out_dir,
        rmse_every=rmse_every,
        exploration=exploration,
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    return parse_config(doc)


# ---------------------------------------------------------------------------
# problem registry


@dataclass
class Problem:
    problem_id: str
    game: ConstrainedGame
    make_oracle: Callable[[], PreferenceOracle]
    reference: np.ndarray | None = None
    metric_columns: tuple = ()
    metrics_fn: Callable | None = None  # (k, x, thetas) -> dict
    final_metrics: Callable | None = None  # (x, thetas) -> dict
    sampling_box: tuple | None = None
    theta_init: Callable | None = None  # (n_own, n_others) -> ThetaVector


_REGISTRY: dict[str, tuple[Callable, str]] = {}


def register_problem(problem_id: str, builder: Callable, description: str = ""):
    """Add a problem builder(params, cfg) -> Problem under a unique id."""
    if problem_id in _REGISTRY:
        raise ValueError(f"duplicate problem id {problem_id!r}")
    _REGISTRY[problem_id] = (builder, description)


def available_problems() -> dict[str, str]:
    return {pid: desc for pid, (_, desc) in sorted(_REGISTRY.items())}


def build_problem(problem_id: str, params: dict, cfg: ExperimentConfig) -> Problem:
    if problem_id not in _REGISTRY:
        raise ConfigError(
            f"unknown problem id {problem_id!r}; available: "
            + ", ".join(sorted(_REGISTRY))
        )
    return _REGISTRY[problem_id][0](dict(params), cfg)


def _err_inf_metrics(reference: np.ndarray):
    def metrics(k, x, thetas):
        return {"err_inf": float(np.max(np.abs(x - reference)))}

    def final(x, thetas):
        return {"err_inf": float(np.max(np.abs(x - reference)))}

    return metrics, final


def _build_synthetic(params: dict, cfg: ExperimentConfig) -> Problem:
    _check_keys(
        params, {"dims", "instance_seed", "coupling", "box_bound"}, "problem_params."
    )
    dims = tuple(int(d) for d in params.get("dims", [1, 1]))
    instance_seed = int(params.get("instance_seed", 0))
    coupling = float(params.get("coupling", 0.25))
    bound = float(params.get("box_bound", 5.0))
    rng = np.random.default_rng(instance_seed)
    layout = AgentLayout(dims)
    n = layout.n

    while True:
        objectives = []
        for i, ni in enumerate(dims):
            L = np.tril(0.3 * rng.standard_normal((ni, ni)), -1) + np.diag(
                rng.uniform(0.8, 1.5, ni)
            )
            q = rng.standard_normal(ni)
            A = coupling * rng.standard_normal((n - ni, ni)) / np.sqrt(n)
            objectives.append(QuadraticAgentObjective(L, q, A))
        M, c = game_operator(objectives)
        # keep the stacked operator strongly monotone so the equilibrium is unique
        if np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) > 0.05:
            break
        coupling *= 0.5
    x_star = np.linalg.solve(M, -c)
    scale = min(1.0, 0.6 * bound / max(float(np.max(np.abs(x_star))), 1e-12))
    objectives = [
        QuadraticAgentObjective(o.chol, o.q * scale, o.A) for o in objectives
    ]
    x_star = x_star * scale

    boxes = tuple(BoxSet.cube(ni, -bound, bound) for ni in dims)
    game = ConstrainedGame(layout, boxes, AffineConstraints.empty(n))
    hidden = [
        (lambda xi, xo, o=o: o.value(xi, xo)) for o in objectives
    ]
    metrics, final = _err_inf_metrics(x_star)
    return Problem(
        problem_id="synthetic-quadratic",
        game=game,
        make_oracle=lambda: make_preference_oracle(hidden),
        reference=x_star,
        metric_columns=("err_inf",),
        metrics_fn=metrics,
        final_metrics=final,
    )


def _build_lqr(params: dict, cfg: ExperimentConfig) -> Problem:
    _check_keys(
        params,
        {
            "n_states",
            "m",
            "n_agents",
            "system_seed",
            "horizon",
            "target_radius",
            "gain_bound",
            "eval_states",
            "eval_seed",
            "p_diag",
            "coupling_bound",
            "sampling_radius",
            "reference_damping",
        },
        "problem_params.",
    )
    n_states = int(params.get("n_states", 6))
    m = int(params.get("m", 6))
    n_agents = int(params.get("n_agents", 3))
    system_seed = int(params.get("system_seed", 0))
    horizon = int(params.get("horizon", 50))
    target_radius = float(params.get("target_radius", 1.1))
    gain_bound = float(params.get("gain_bound", 10.0))
    eval_states = int(params.get("eval_states", 100))
    eval_seed = int(params.get("eval_seed", 10_000 + system_seed))
    # the hidden objective is a squared BR deviation, so its own-block
    # curvature is exactly 2I; pinning the surrogate there removes the
    # scale degree of freedom that pairwise labels cannot identify
    p_diag = params.get("p_diag", 2.0)
    p_diag = None if p_diag is None else float(p_diag)
    coupling_bound = params.get("coupling_bound", 0.1)
    coupling_bound = None if coupling_bound is None else float(coupling_bound)
    sampling_radius = params.get("sampling_radius", 0.7)
    sampling_radius = None if sampling_radius is None else float(sampling_radius)
    reference_damping = float(params.get("reference_damping", 1.0))
    if m % n_agents != 0:
        raise ConfigError("problem_params.m: must be divisible by n_agents")

    rng = np.random.default_rng(system_seed)
    dims = (m // n_agents,) * n_agents
    system = lqr_mod.random_system(n_states, m, target_radius, rng, dims)
    costs = lqr_mod.benchmark_costs(system, horizon)
    profile_star = lqr_mod.nash_gains(
        system, costs, T=horizon, damping=reference_damping
    )
    x_star = lqr_mod.profile_to_vector(profile_star)
    game = lqr_mod.lqr_game(system, gain_bound)
    theta_init = None
    if p_diag is not None:
        def theta_init(n_own, n_others, _p=p_diag, _c=coupling_bound):
            return pinned_curvature_template(n_own, n_others, _p, _c)
    sampling = None
    if sampling_radius is not None:
        sampling = tuple(
            BoxSet.cube(d, -sampling_radius, sampling_radius) for d in game.layout.dims
        )
    k_max = cfg.schedule.k_max
    every = cfg.rmse_every

    def metrics(k, x, thetas):
        profile = lqr_mod.vector_to_profile(x, system)
        out = {}
        devs = []
        for i in range(n_agents):
            try:
                d = lqr_mod.br_deviation(i, profile, system, costs, horizon)
            except lqr_mod.RiccatiDivergenceError:
                d = float("nan")
            out[f"br_dev_{i}"] = d
            devs.append(d)
        out["max_br_dev"] = float(np.nanmax(devs)) if devs else float("nan")
        if k % every == 0 or k == k_max:
            ev = lqr_mod.evaluate_profile(
                system,
                costs,
                profile,
                profile_star,
                n_states=eval_states,
                T=horizon,
                rng=np.random.default_rng(eval_seed),
            )
            out["normalized_rmse"] = ev.normalized_rmse
        return out

    def final(x, thetas):
        profile = lqr_mod.vector_to_profile(x, system)
        ev = lqr_mod.evaluate_profile(
            system,
            costs,
            profile,
            profile_star,
            n_states=eval_states,
            T=horizon,
            rng=np.random.default_rng(eval_seed),
        )
        return {
            "max_br_dev": ev.max_deviation,
            "normalized_rmse": ev.normalized_rmse,
        }

    columns = tuple(f"br_dev_{i}" for i in range(n_agents)) + (
        "max_br_dev",
        "normalized_rmse",
    )
    return Problem(
        problem_id="lqr-game",
        game=game,
        make_oracle=lambda: lqr_mod.lqr_preference_oracle(system, costs, horizon),
        reference=x_star,
        metric_columns=columns,
        metrics_fn=metrics,
        final_metrics=final,
        sampling_box=sampling,
        theta_init=theta_init,
    )


def _build_pavel(params: dict, cfg: ExperimentConfig) -> Problem:
    # 10 scalar producers with linear price coupling; transcribed from the
    # distributed NE-seeking literature (Salehisadaghiani & Pavel line of
    # examples): J_i = c_i x_i - x_i (600 - sum(x)), c_i = 10 (1 + i/2),
    # x_i in [7, 100].
    _check_keys(params, set(), "problem_params.")
    n = 10
    c = np.array([n * (1.0 + i / 2.0) for i in range(n)])

    def make_hidden(i: int):
        def J(xi, xo):
            total = float(xi[0]) + float(np.sum(xo))
            return float(c[i] * xi[0] - xi[0] * (60.0 * n - total))

        return J

    hidden = [make_hidden(i) for i in range(n)]
    # stationarity stacks to (I + ones) x = 600 - c, interior of the boxes
    M = np.eye(n) + np.ones((n, n))
    x_star = np.linalg.solve(M, 600.0 - c)
    layout = AgentLayout((1,) * n)
    boxes = tuple(BoxSet.cube(1, 7.0, 100.0) for _ in range(n))
    game = ConstrainedGame(layout, boxes, AffineConstraints.empty(n))
    metrics, final = _err_inf_metrics(x_star)
    return Problem(
        problem_id="pavel-ex1",
        game=game,
        make_oracle=lambda: make_preference_oracle(hidden),
        reference=x_star,
        metric_columns=("err_inf",),
        metrics_fn=metrics,
        final_metrics=final,
    )


def _build_facchinei_a1(params: dict, cfg: ExperimentConfig) -> Problem:
    # Internet-switching game, Facchinei & Kanzow 2009 test problem A.1:
    # J_i = -x_i/sum(x) * (1 - sum(x)), boxes x_1 in [0.3, 0.5],
    # x_i in [0.01, 100] otherwise, shared constraint sum(x) <= 1.
    _check_keys(params, set(), "problem_params.")
    n = 10

    def make_hidden(i: int):
        def J(xi, xo):
            total = float(xi[0]) + float(np.sum(xo))
            return float(-xi[0] / total * (1.0 - total))

        return J

    hidden = [make_hidden(i) for i in range(n)]
    layout = AgentLayout((1,) * n)
    boxes = (BoxSet.cube(1, 0.3, 0.5),) + tuple(
        BoxSet.cube(1, 0.01, 100.0) for _ in range(n - 1)
    )
    shared = AffineConstraints(
        np.ones((1, n)), np.array([-1.0]), np.zeros((0, n)), np.zeros(0)
    )
    game = ConstrainedGame(layout, boxes, shared)
    # rejection sampling needs a pool that mostly satisfies sum(x) <= 1
    sampling = (BoxSet.cube(1, 0.3, 0.5),) + tuple(
        BoxSet.cube(1, 0.01, 0.055) for _ in range(n - 1)
    )
    return Problem(
        problem_id="facchinei-A1",
        game=game,
        make_oracle=lambda: make_preference_oracle(hidden),
        sampling_box=sampling,
    )


def _build_game_file(params: dict, cfg: ExperimentConfig) -> Problem:
    _check_keys(params, {"path", "reference"}, "problem_params.")
    if "path" not in params:
        raise ConfigError("problem_params.path: required key missing")
    try:
        game = game_from_json(Path(params["path"]).read_text())
    except OSError as exc:
        raise ConfigError(f"problem_params.path: cannot read game file: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"problem_params.path: malformed game file: {exc}") from None
    if game.objectives is None:
        raise ConfigError("problem_params.path: game file declares no objectives")
    objectives = game.objectives
    hidden = [(lambda xi, xo, o=o: o.value(xi, xo)) for o in objectives]
    reference = None
    metrics = final = None
    columns = ()
    if params.get("reference") is not None:
        reference = np.asarray(params["reference"], dtype=float)
        if reference.shape != (game.n,):
            raise ConfigError("problem_params.reference: wrong length")
        metrics, final = _err_inf_metrics(reference)
        columns = ("err_inf",)
    # hand the learner a game without the generating objectives attached
    bare = ConstrainedGame(game.layout, game.local, game.shared)
    return Problem(
        problem_id="quadratic-game-file",
        game=bare,
        make_oracle=lambda: make_preference_oracle(hidden),
        reference=reference,
        metric_columns=columns,
        metrics_fn=metrics,
        final_metrics=final,
    )


def _stub_builder(problem_id: str, source: str):
    def builder(params: dict, cfg: ExperimentConfig):
        raise ConfigError(
            f"problem {problem_id!r} is a placeholder: its objectives come from "
            f"{source} and must be transcribed from that reference. Serialize the "
            "transcribed game and run it via 'quadratic-game-file', or register "
            "a builder with register_problem()."
        )

    return builder


register_problem(
    "synthetic-quadratic",
    _build_synthetic,
    "random strongly monotone quadratic game with a known equilibrium",
)
register_problem(
    "lqr-game",
    _build_lqr,
    "feedback-Nash LQR game over vectorized gains (best-response deviation oracle)",
)
register_problem(
    "pavel-ex1",
    _build_pavel,
    "10-agent linear-price market game (transcribed; known equilibrium)",
)
register_problem(
    "facchinei-A1",
    _build_facchinei_a1,
    "internet-switching game with a shared capacity constraint (transcribed)",
)
register_problem(
    "quadratic-game-file",
    _build_game_file,
    "quadratic game loaded from a serialized game file",
)
register_problem(
    "picheny-4.1",
    _stub_builder("picheny-4.1", "Picheny et al. (2019), example 4.1"),
    "stub: 2-agent nonlinear game, objectives must be transcribed",
)
register_problem(
    "facchinei-A3",
    _stub_builder("facchinei-A3", "Facchinei & Kanzow (2009), test problem A.3"),
    "stub: 3-agent coupled-constraint game, objectives must be transcribed",
)


# ---------------------------------------------------------------------------
# running and persistence


@dataclass
class RunRecord:
    config: dict
    seed: int
    columns: list
    rows: list
    x_final: np.ndarray
    thetas: list
    query_count: int
    wall_time: float
    final_metrics: dict
    final_status: str
    final_residual: float


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return "nan"
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def _row_values(record, layout_n: int, metric_columns, reference) -> list:
    row = [
        record.k,
        record.delta,
        record.sigma,
        record.solver_status,
        record.solver_residual,
        record.solver_iterations,
        record.retries,
    ]
    row.extend(record.x[j] for j in range(layout_n))
    for name in metric_columns:
        row.append(record.metrics.get(name, float("nan")))
    if reference is not None:
        row.extend(reference[j] for j in range(layout_n))
    return row


def run_columns(problem: Problem) -> list:
    n = problem.game.n
    cols = list(_BASE_COLUMNS)
    cols += [f"x_{j}" for j in range(n)]
    cols += list(problem.metric_columns)
    if problem.reference is not None:
        cols += [f"star_{j}" for j in range(n)]
    return cols


def run_experiment(
    cfg: ExperimentConfig,
    seed: int | None = None,
    out_dir=None,
    problem: Problem | None = None,
) -> RunRecord:
    """Execute one seeded run; rows are flushed to the run directory as the
    loop progresses so an abort still leaves a partial trace."""
    seed = cfg.seed if seed is None else int(seed)
    if problem is None:
        problem = build_problem(cfg.problem, cfg.problem_params, cfg)
    oracle = problem.make_oracle()
    columns = run_columns(problem)
    n = problem.game.n

    run_dir = None
    csv_handle = None
    if out_dir is not None:
        run_dir = Path(out_dir) / f"run-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        snapshot = cfg.to_dict()
        snapshot["seed"] = seed
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n")
        csv_handle = open(run_dir / "iterations.csv", "w")
        csv_handle.write(",".join(columns) + "\n")
        csv_handle.flush()

    rows: list = []

    def on_iteration(state):
        row = _row_values(state.history[-1], n, problem.metric_columns, problem.reference)
        rows.append(row)
        if csv_handle is not None:
            csv_handle.write(",".join(_fmt(v) for v in row) + "\n")
            csv_handle.flush()

    t0 = time.perf_counter()
    try:
        x_final, state = run_loop(
            oracle,
            problem.game,
            cfg.schedule,
            seed=seed,
            m0=cfg.m0,
            train_cfg=cfg.train,
            exploration_mode=cfg.exploration,
            sampling_box=problem.sampling_box,
            theta_init=problem.theta_init,
            metrics_fn=problem.metrics_fn,
            iteration_callback=on_iteration,
        )
    finally:
        if csv_handle is not None:
            csv_handle.close()
    wall = time.perf_counter() - t0

    final_metrics = (
        dict(problem.final_metrics(x_final, state.thetas))
        if problem.final_metrics is not None
        else {}
    )
    snapshot = cfg.to_dict()
    snapshot["seed"] = seed
    record = RunRecord(
        config=snapshot,
        seed=seed,
        columns=columns,
        rows=rows,
        x_final=x_final,
        thetas=state.thetas,
        query_count=oracle.query_count,
        wall_time=wall,
        final_metrics=final_metrics,
        final_status=state.final_solution.status,
        final_residual=state.final_solution.residual,
    )
    if run_dir is not None:
        write_thetas(record.thetas, run_dir / "theta_final.json")
        (run_dir / "summary.txt").write_text(summary_text(record))
    return record


def summary_text(record: RunRecord) -> str:
    lines = [
        f"problem: {record.config['problem']}",
        f"seed: {record.seed}",
        f"iterations: {len(record.rows)}",
        f"oracle_queries: {record.query_count}",
        f"final_status: {record.final_status}",
        f"final_residual: {_fmt(record.final_residual)}",
        f"wall_time_s: {record.wall_time:.3f}",
    ]
    for key in sorted(record.final_metrics):
        lines.append(f"final_{key}: {_fmt(record.final_metrics[key])}")
    lines.append("x_final: " + " ".join(_fmt(v) for v in record.x_final))
    return "\n".join(lines) + "\n"


def write_thetas(thetas, path):
    doc = {
        "agents": [
            {
                "n_own": th.n_own,
                "n_others": th.n_others,
                "values": [float(v) for v in th.values],
            }
            for th in thetas
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_thetas(path) -> list:
    doc = json.loads(Path(path).read_text())
    return [
        ThetaVector(np.array(a["values"], dtype=float), int(a["n_own"]), int(a["n_others"]))
        for a in doc["agents"]
    ]


def export_csv(record: RunRecord, path):
    """Header plus one row per iteration; floats carry 17 significant digits
    so re-importing and re-exporting is byte-stable."""
    lines = [",".join(record.columns)]
    for row in record.rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def import_csv(path) -> tuple[list, list]:
    text = Path(path).read_text().strip().split("\n")
    columns = text[0].split(",")
    rows = []
    for line in text[1:]:
        row = []
        for cell in line.split(","):
            try:
                row.append(float(cell))
            except ValueError:
                row.append(cell)
        rows.append(row)
    return columns, rows


def run_repeats(cfg: ExperimentConfig, out_dir=None) -> tuple[list, dict]:
    """cfg.repeat seeded runs (seeds cfg.seed, cfg.seed+1, ...) plus
    median/IQR aggregation of the final metrics."""
    records = [
        run_experiment(cfg, seed=cfg.seed + r, out_dir=out_dir)
        for r in range(cfg.repeat)
    ]
    aggregate: dict = {}
    keys = sorted({k for rec in records for k in rec.final_metrics})
    for key in keys:
        vals = np.array([rec.final_metrics[key] for rec in records], dtype=float)
        aggregate[key] = {
            "median": float(np.median(vals)),
            "iqr": float(np.percentile(vals, 75) - np.percentile(vals, 25)),
        }
    if out_dir is not None and aggregate:
        lines = [
            f"{key}: median={_fmt(stats['median'])} iqr={_fmt(stats['iqr'])}"
            for key, stats in aggregate.items()
        ]
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "aggregate.txt").write_text("\n".join(lines) + "\n")
    return records, aggregate


def evaluate_run(run_dir) -> dict:
    """Recompute final metrics from a stored run: rebuild the problem,
    re-solve the learned game, and re-evaluate."""
    run_dir = Path(run_dir)
    try:
        cfg = parse_config(json.loads((run_dir / "config.json").read_text()))
    except OSError as exc:
        raise ConfigError(f"cannot read run directory {run_dir}: {exc}") from None
    thetas = read_thetas(run_dir / "theta_final.json")
    problem = build_problem(cfg.problem, cfg.problem_params, cfg)
    objectives = tuple(th.to_objective() for th in thetas)
    sol = solve_gne(problem.game.with_objectives(objectives))
    out = {
        "problem": cfg.problem,
        "seed": cfg.seed,
        "solver_status": sol.status,
        "solver_residual": sol.residual,
        "x": sol.x,
    }
    if problem.final_metrics is not None:
        out.update(problem.final_metrics(sol.x, thetas))
    if problem.reference is not None:
        out["err_inf"] = float(np.max(np.abs(sol.x - problem.reference)))
    return out
