"""Game structures: decision layouts, constraint sets, and preference oracles.

A game couples N agents, each owning a block of the joint decision vector
``x = (x_1, ..., x_N)``.  Local constraints are per-agent boxes; shared
constraints are affine inequalities ``G x + g0 <= 0`` and equalities
``H x + h0 = 0`` over the joint vector.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ._validation import as_matrix, as_vector, ensure_rng
from .exceptions import DimensionMismatchError, FeasibleSamplingError


@dataclass(frozen=True)
class AgentLayout:
    """Block layout of the joint decision vector across agents."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 1 or any(d < 1 for d in self.dims):
            raise ValueError("need at least one agent, each with dimension >= 1")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def n_agents(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    def offset(self, i: int) -> int:
        return sum(self.dims[:i])

    def block(self, i: int) -> slice:
        """Index slice of agent i's block in the joint vector."""
        off = self.offset(i)
        return slice(off, off + self.dims[i])

    def others_index(self, i: int) -> np.ndarray:
        """Joint-vector indices of all blocks except agent i's, ascending."""
        idx = np.arange(self.n)
        blk = self.block(i)
        return np.concatenate([idx[: blk.start], idx[blk.stop :]])

    def extract(self, i: int, x) -> np.ndarray:
        x = as_vector(x, self.n, "x")
        return x[self.block(i)].copy()

    def others(self, i: int, x) -> np.ndarray:
        x = as_vector(x, self.n, "x")
        return x[self.others_index(i)].copy()

    def insert(self, i: int, xi, x) -> np.ndarray:
        """Return a copy of x with agent i's block replaced by xi."""
        x = as_vector(x, self.n, "x").copy()
        x[self.block(i)] = as_vector(xi, self.dims[i], "xi")
        return x

    def combine(self, i: int, xi, x_others) -> np.ndarray:
        """Assemble the joint vector from agent i's block and the rest."""
        xi = as_vector(xi, self.dims[i], "xi")
        xo = as_vector(x_others, self.n - self.dims[i], "x_others")
        x = np.empty(self.n)
        x[self.block(i)] = xi
        x[self.others_index(i)] = xo
        return x


@dataclass(frozen=True)
class BoxSet:
    """Componentwise bounds ``lower <= x <= upper``; entries may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_vector(self.lower, name="lower")
        hi = as_vector(self.upper, self.dim_of(lo), "upper")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @staticmethod
    def dim_of(lo) -> int:
        return int(np.asarray(lo).shape[0])

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = as_vector(x, self.dim, "x")
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, x) -> np.ndarray:
        return np.clip(as_vector(x, self.dim, "x"), self.lower, self.upper)

    @classmethod
    def unbounded(cls, dim: int) -> "BoxSet":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def cube(cls, dim: int, low: float, high: float) -> "BoxSet":
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))


@dataclass(frozen=True)
class AffineConstraints:
    """Shared constraints ``G x + g0 <= 0`` and ``H x + h0 = 0``."""

    G: np.ndarray
    g0: np.ndarray
    H: np.ndarray
    h0: np.ndarray

    def __post_init__(self):
        G = as_matrix(self.G, name="G")
        H = as_matrix(self.H, name="H")
        g0 = as_vector(self.g0, G.shape[0], "g0")
        h0 = as_vector(self.h0, H.shape[0], "h0")
        if G.shape[1] != H.shape[1]:
            raise DimensionMismatchError("G and H must act on the same dimension")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g0", g0)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h0", h0)

    @classmethod
    def empty(cls, n: int) -> "AffineConstraints":
        return cls(np.zeros((0, n)), np.zeros(0), np.zeros((0, n)), np.zeros(0))

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def n_ineq(self) -> int:
        return self.G.shape[0]

    @property
    def n_eq(self) -> int:
        return self.H.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.n_ineq == 0 and self.n_eq == 0

    def satisfied(self, x, tol_eq: float = 1e-8) -> bool:
        x = as_vector(x, self.n, "x")
        if self.n_ineq and np.any(self.G @ x + self.g0 > tol_eq):
            return False
        if self.n_eq and np.max(np.abs(self.H @ x + self.h0), initial=0.0) > tol_eq:
            return False
        return True

    def slice_for_agent(self, layout: AgentLayout, i: int, x_others) -> "AffineConstraints":
        """Constraints on x_i alone, with the other agents' blocks fixed.

        Row r of ``G x + g0`` becomes ``G_i x_i + (G_o x_o + g0)`` and
        likewise for equalities.
        """
        xo = as_vector(x_others, self.n - layout.dims[i], "x_others")
        blk = layout.block(i)
        oth = layout.others_index(i)
        return AffineConstraints(
            self.G[:, blk],
            self.g0 + self.G[:, oth] @ xo,
            self.H[:, blk],
            self.h0 + self.H[:, oth] @ xo,
        )


@dataclass(frozen=True)
class ConstrainedGame:
    """An N-agent game: layout, local boxes, shared affine constraints.

    ``objectives`` holds per-agent quadratic objectives when the game is
    directly solvable; it is None for games whose objectives live behind a
    preference oracle.
    """

    layout: AgentLayout
    local: tuple[BoxSet, ...]
    shared: AffineConstraints
    objectives: tuple | None = None

    def __post_init__(self):
        local = tuple(self.local)
        if len(local) != self.layout.n_agents:
            raise DimensionMismatchError("one local box per agent required")
        for i, box in enumerate(local):
            if box.dim != self.layout.dims[i]:
                raise DimensionMismatchError(f"box {i} has dimension {box.dim}, expected {self.layout.dims[i]}")
        if self.shared.n != self.layout.n:
            raise DimensionMismatchError("shared constraints act on the wrong dimension")
        object.__setattr__(self, "local", local)
        if self.objectives is not None:
            objectives = tuple(self.objectives)
            if len(objectives) != self.layout.n_agents:
                raise DimensionMismatchError("one objective per agent required")
            object.__setattr__(self, "objectives", objectives)

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def n_agents(self) -> int:
        return self.layout.n_agents

    def joint_box(self) -> BoxSet:
        """Concatenation of the local boxes over the joint vector."""
        return BoxSet(
            np.concatenate([b.lower for b in self.local]),
            np.concatenate([b.upper for b in self.local]),
        )

    def with_objectives(self, objectives) -> "ConstrainedGame":
        return replace(self, objectives=tuple(objectives))


def feasible(game: ConstrainedGame, x, tol_eq: float = 1e-8) -> bool:
    """True iff x satisfies every box, inequality, and equality constraint.

    Inequalities are allowed ``tol_eq`` slack; equalities are checked in
    infinity norm against the same tolerance.
    """
    x = as_vector(x, game.n, "x")
    for i, box in enumerate(game.local):
        if not box.contains(x[game.layout.block(i)], tol=tol_eq):
            return False
    return game.shared.satisfied(x, tol_eq=tol_eq)


def _equality_projector(shared: AffineConstraints):
    """Least-squares projector onto {x : Hx + h0 = 0} (pseudo-inverse based)."""
    H_pinv = np.linalg.pinv(shared.H)

    def proj(X: np.ndarray) -> np.ndarray:
        return X - (X @ shared.H.T + shared.h0) @ H_pinv.T

    return proj


def sample_feasible(
    game: ConstrainedGame,
    count: int,
    rng=None,
    sampling_box: Sequence[BoxSet] | None = None,
    min_rate: float = 1e-4,
    tol_eq: float = 1e-8,
) -> np.ndarray:
    """Draw ``count`` feasible joint vectors by rejection sampling.

    Uniform draws come from the local boxes (or from ``sampling_box`` when
    a box is unbounded).  When equality constraints are present, draws are
    first projected onto the equality subspace and then rejection-tested
    against the remaining constraints.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = ensure_rng(rng)
    boxes = list(sampling_box) if sampling_box is not None else list(game.local)
    if len(boxes) != game.n_agents:
        raise DimensionMismatchError("one sampling box per agent required")
    for i, box in enumerate(boxes):
        if not box.bounded:
            raise FeasibleSamplingError(
                f"agent {i} has an unbounded box; supply a bounded sampling_box"
            )
    lo = np.concatenate([b.lower for b in boxes])
    hi = np.concatenate([b.upper for b in boxes])

    project_eq = _equality_projector(game.shared) if game.shared.n_eq else None

    budget = max(10_000, math.ceil(count / min_rate))
    batch = max(64, min(4096, 4 * count))
    accepted: list[np.ndarray] = []
    trials = 0
    while len(accepted) < count:
        if trials >= budget:
            raise FeasibleSamplingError(
                f"feasible sampling failed: acceptance rate below {min_rate:g} "
                f"after {trials} of {budget} budgeted trials"
            )
        X = rng.uniform(lo, hi, size=(batch, game.n))
        trials += batch
        if project_eq is not None:
            X = project_eq(X)
        for x in X:
            if feasible(game, x, tol_eq=tol_eq):
                accepted.append(x)
                if len(accepted) == count:
                    break
        # early failure check once past the floor of the budget
        if trials >= 10_000 and len(accepted) < min_rate * trials:
            raise FeasibleSamplingError(
                f"feasible sampling failed: acceptance rate below {min_rate:g} "
                f"after {trials} of {budget} budgeted trials"
            )
    return np.asarray(accepted)


@dataclass
class PreferenceSample:
    """One labelled pairwise comparison for a single agent.

    ``x2`` may violate constraints (noise-perturbed candidates are allowed
    to step outside the feasible set).
    """

    x1: np.ndarray
    x2: np.ndarray
    x_others: np.ndarray
    label: int

    def __post_init__(self):
        self.x1 = as_vector(self.x1, name="x1")
        self.x2 = as_vector(self.x2, self.x1.shape[0], "x2")
        self.x_others = as_vector(self.x_others, name="x_others")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        self.label = int(self.label)


# A preference dataset is a plain list of samples; M grows by one per AL step.
PreferenceDataset = list


class PreferenceOracle:
    """Answers pairwise preference queries against hidden objectives.

    ``query`` returns 1 exactly when the first candidate is weakly
    preferred (ties included), 0 otherwise.  The query counter increases
    monotonically and is safe under concurrent per-agent calls.
    """

    def __init__(self, objectives: Sequence[Callable[[np.ndarray, np.ndarray], float]]):
        self._objectives = list(objectives)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def n_agents(self) -> int:
        return len(self._objectives)

    @property
    def query_count(self) -> int:
        return self._count

    def query(self, i: int, x1, x2, x_others) -> int:
        x1 = as_vector(x1, name="x1")
        x2 = as_vector(x2, x1.shape[0], "x2")
        xo = as_vector(x_others, name="x_others")
        j1 = float(self._objectives[i](x1, xo))
        j2 = float(self._objectives[i](x2, xo))
        with self._lock:
            self._count += 1
        return 1 if j1 <= j2 else 0

    def true_value(self, i: int, xi, x_others) -> float:
        """Hidden objective value, for evaluation/diagnostics only.

        Never used by the learner; does not count as a query.
        """
        return float(self._objectives[i](as_vector(xi), as_vector(x_others)))


def make_preference_oracle(
    objectives: Sequence[Callable[[np.ndarray, np.ndarray], float]],
) -> PreferenceOracle:
    """Wrap black-box per-agent objectives ``J_i(x_i, x_others)`` as an oracle."""
    return PreferenceOracle(objectives)


# ---------------------------------------------------------------------------
# serialization


def _vec_to_list(v: np.ndarray) -> list:
    out = []
    for x in v:
        if np.isposinf(x):
            out.append("inf")
        elif np.isneginf(x):
            out.append("-inf")
        else:
            out.append(float(x))
    return out


def _vec_from_list(lst) -> np.ndarray:
    return np.array([float(x) for x in lst], dtype=float)


def game_to_dict(game: ConstrainedGame) -> dict:
    """Plain-data form of a game (matrices row-major, infinities as strings)."""
    doc: dict = {
        "dims": list(game.layout.dims),
        "local": [
            {"lower": _vec_to_list(b.lower), "upper": _vec_to_list(b.upper)}
            for b in game.local
        ],
        "shared": {
            "G": [list(map(float, row)) for row in game.shared.G],
            "g0": list(map(float, game.shared.g0)),
            "H": [list(map(float, row)) for row in game.shared.H],
            "h0": list(map(float, game.shared.h0)),
        },
    }
    if game.objectives is not None:
        doc["objectives"] = [
            {
                "chol": [list(map(float, row)) for row in obj.chol],
                "q": list(map(float, obj.q)),
                "A": [list(map(float, row)) for row in obj.A],
            }
            for obj in game.objectives
        ]
    return doc


def game_from_dict(doc: dict) -> ConstrainedGame:
    from .solvers import QuadraticAgentObjective  # deferred: avoids import cycle

    layout = AgentLayout(tuple(doc["dims"]))
    local = tuple(
        BoxSet(_vec_from_list(b["lower"]), _vec_from_list(b["upper"])) for b in doc["local"]
    )
    sh = doc.get("shared")
    if sh is None:
        shared = AffineConstraints.empty(layout.n)
    else:
        shared = AffineConstraints(
            np.array(sh["G"], dtype=float).reshape(len(sh["G"]), layout.n)
            if sh["G"]
            else np.zeros((0, layout.n)),
            _vec_from_list(sh["g0"]),
            np.array(sh["H"], dtype=float).reshape(len(sh["H"]), layout.n)
            if sh["H"]
            else np.zeros((0, layout.n)),
            _vec_from_list(sh["h0"]),
        )
    objectives = None
    if "objectives" in doc:
        objectives = tuple(
            QuadraticAgentObjective(
                np.array(o["chol"], dtype=float),
                _vec_from_list(o["q"]),
                np.array(o["A"], dtype=float).reshape(-1, len(o["q"])),
            )
            for o in doc["objectives"]
        )
    return ConstrainedGame(layout, local, shared, objectives)


def game_to_json(game: ConstrainedGame, indent: int | None = 2) -> str:
    return json.dumps(game_to_dict(game), indent=indent)


def game_from_json(text: str) -> ConstrainedGame:
    return game_from_dict(json.loads(text))
