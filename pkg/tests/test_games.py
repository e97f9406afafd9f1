import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashlearn.exceptions import FeasibleSamplingError
from nashlearn.games import (
    AffineConstraints,
    AgentLayout,
    BoxSet,
    ConstrainedGame,
    PreferenceSample,
    feasible,
    game_from_json,
    game_to_json,
    make_preference_oracle,
    sample_feasible,
)


def test_layout_offsets_and_blocks():
    lay = AgentLayout((2, 3, 1))
    assert lay.n == 6 and lay.n_agents == 3
    assert lay.offset(0) == 0 and lay.offset(1) == 2 and lay.offset(2) == 5
    x = np.arange(6.0)
    assert np.array_equal(lay.extract(1, x), [2.0, 3.0, 4.0])
    assert np.array_equal(lay.others(1, x), [0.0, 1.0, 5.0])


def test_layout_combine_inverts_extract_others():
    lay = AgentLayout((2, 3, 1))
    x = np.arange(6.0)
    for i in range(3):
        back = lay.combine(i, lay.extract(i, x), lay.others(i, x))
        assert np.array_equal(back, x)


def test_layout_insert_replaces_block_only():
    lay = AgentLayout((1, 2))
    x = np.zeros(3)
    out = lay.insert(1, [5.0, 6.0], x)
    assert np.array_equal(out, [0.0, 5.0, 6.0])
    assert np.array_equal(x, np.zeros(3))  # no aliasing


def test_layout_rejects_empty_and_nonpositive():
    with pytest.raises(ValueError):
        AgentLayout(())
    with pytest.raises(ValueError):
        AgentLayout((2, 0))


def test_box_contains_and_project():
    box = BoxSet.cube(2, -1.0, 2.0)
    assert box.contains([0.0, 0.0])
    assert not box.contains([3.0, 0.0])
    assert np.array_equal(box.project([3.0, -4.0]), [2.0, -1.0])


def test_box_unbounded_flag():
    assert not BoxSet.unbounded(3).bounded
    assert BoxSet.cube(3, 0.0, 1.0).bounded
    with pytest.raises(ValueError):
        BoxSet([0.0, 0.0], [1.0])


def test_affine_empty_is_always_satisfied():
    c = AffineConstraints.empty(4)
    assert c.is_empty
    assert c.satisfied(np.random.default_rng(0).standard_normal(4))


def test_affine_satisfied_tolerances():
    # x1 + x2 <= 1 and x1 - x2 == 0
    c = AffineConstraints(
        np.array([[1.0, 1.0]]), np.array([-1.0]),
        np.array([[1.0, -1.0]]), np.array([0.0]),
    )
    assert c.satisfied([0.5, 0.5])
    assert not c.satisfied([0.7, 0.5])
    assert not c.satisfied([0.2, 0.3])


def test_affine_slice_for_agent_folds_opponents():
    # x0 + 2 x1 <= 3 seen from agent 0 at x1 = 1 becomes x0 <= 1
    lay = AgentLayout((1, 1))
    c = AffineConstraints(np.array([[1.0, 2.0]]), np.array([-3.0]), np.zeros((0, 2)), np.zeros(0))
    sl = c.slice_for_agent(lay, 0, np.array([1.0]))
    assert sl.satisfied([0.9])
    assert not sl.satisfied([1.1])


def test_game_dimension_checks():
    lay = AgentLayout((1, 1))
    boxes = (BoxSet.cube(1, 0, 1), BoxSet.cube(1, 0, 1))
    game = ConstrainedGame(lay, boxes, AffineConstraints.empty(2))
    assert game.n == 2
    with pytest.raises(ValueError):
        ConstrainedGame(lay, boxes[:1], AffineConstraints.empty(2))


def test_feasible_checks_boxes_and_shared():
    lay = AgentLayout((1, 1))
    boxes = (BoxSet.cube(1, 0.0, 1.0),) * 2
    shared = AffineConstraints(np.ones((1, 2)), np.array([-1.0]), np.zeros((0, 2)), np.zeros(0))
    game = ConstrainedGame(lay, boxes, shared)
    assert feasible(game, [0.4, 0.4])
    assert not feasible(game, [0.9, 0.9])
    assert not feasible(game, [-0.1, 0.5])


def test_sample_feasible_respects_shared_constraint():
    lay = AgentLayout((1, 1))
    boxes = (BoxSet.cube(1, 0.0, 1.0),) * 2
    shared = AffineConstraints(np.ones((1, 2)), np.array([-1.0]), np.zeros((0, 2)), np.zeros(0))
    game = ConstrainedGame(lay, boxes, shared)
    pts = sample_feasible(game, 64, np.random.default_rng(3))
    assert pts.shape == (64, 2)
    assert all(feasible(game, p) for p in pts)


def test_sample_feasible_unbounded_raises():
    lay = AgentLayout((1,))
    game = ConstrainedGame(lay, (BoxSet.unbounded(1),), AffineConstraints.empty(1))
    with pytest.raises(FeasibleSamplingError):
        sample_feasible(game, 4, np.random.default_rng(0))


def test_sample_feasible_deterministic_under_seed():
    lay = AgentLayout((2,))
    game = ConstrainedGame(lay, (BoxSet.cube(2, -1, 1),), AffineConstraints.empty(2))
    a = sample_feasible(game, 16, np.random.default_rng(7))
    b = sample_feasible(game, 16, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_preference_sample_rejects_bad_label():
    with pytest.raises(ValueError):
        PreferenceSample(np.zeros(1), np.zeros(1), np.zeros(1), 2)


def test_oracle_label_convention_and_count():
    # agent 0 minimizes (x0 - 0.3)^2: closer candidate wins, ties -> 1
    oracle = make_preference_oracle([lambda xi, xo: (xi[0] - 0.3) ** 2])
    assert oracle.query(0, [0.3], [0.9], []) == 1
    assert oracle.query(0, [0.9], [0.3], []) == 0
    assert oracle.query(0, [0.2], [0.4], []) == 1  # exact tie prefers the first
    assert oracle.query_count == 3


def test_oracle_true_value_not_counted():
    oracle = make_preference_oracle([lambda xi, xo: float(xi[0] + xo[0])])
    v = oracle.true_value(0, [1.0], [2.0])
    assert v == 3.0
    assert oracle.query_count == 0


def test_game_json_roundtrip_preserves_everything():
    lay = AgentLayout((1, 2))
    boxes = (BoxSet.cube(1, -1, 1), BoxSet([0.0, -np.inf], [np.inf, 2.0]))
    shared = AffineConstraints(
        np.array([[1.0, 1.0, 0.0]]), np.array([-1.0]),
        np.array([[0.0, 1.0, -1.0]]), np.array([0.5]),
    )
    game = ConstrainedGame(lay, boxes, shared)
    back = game_from_json(game_to_json(game))
    assert back.layout.dims == lay.dims
    for b0, b1 in zip(game.local, back.local):
        assert np.array_equal(b0.lower, b1.lower) and np.array_equal(b0.upper, b1.upper)
    assert np.array_equal(back.shared.G, shared.G)
    assert np.array_equal(back.shared.h0, shared.h0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_combine_extract_property(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(1, 4, size=rng.integers(2, 5)))
    lay = AgentLayout(dims)
    x = rng.standard_normal(lay.n)
    i = int(rng.integers(0, len(dims)))
    assert np.allclose(lay.combine(i, lay.extract(i, x), lay.others(i, x)), x)
