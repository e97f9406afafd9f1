import numpy as np
import pytest
from sklearn.base import clone

from nashlearn.exceptions import FeasibleSamplingError
from nashlearn.games import (
    AffineConstraints,
    AgentLayout,
    BoxSet,
    ConstrainedGame,
    PreferenceSample,
    make_preference_oracle,
)
from nashlearn.learner import (
    ALState,
    GNELearner,
    ScheduleConfig,
    agent_rng,
    al_iteration,
    delta_schedule,
    exploration_center,
    initial_datasets,
    run,
    sigma_schedule,
)
from nashlearn.preferences import ThetaVector, TrainConfig, pinned_curvature_template
from nashlearn.solvers import QuadraticAgentObjective, game_operator


def _two_agent_game(bound=5.0):
    lay = AgentLayout((1, 1))
    boxes = (BoxSet.cube(1, -bound, bound),) * 2
    return ConstrainedGame(lay, boxes, AffineConstraints.empty(2))


def _hidden_pair(coupling=0.25):
    o1 = QuadraticAgentObjective(np.eye(1), np.array([-1.0]), np.array([[coupling]]))
    o2 = QuadraticAgentObjective(np.eye(1), np.array([0.5]), np.array([[coupling]]))
    return o1, o2


# --- schedules ----------------------------------------------------------------


def test_delta_schedule_midpoint_and_floor():
    cfg = ScheduleConfig(delta=5.0, sigma=0.3, k_max=100)
    assert delta_schedule(50, cfg) == 0.15625  # 5 * 0.5^5, exact in binary
    assert delta_schedule(100, cfg) == 0.001
    assert sigma_schedule(50, cfg) == 0.01875  # 0.3 * 0.5^4
    assert sigma_schedule(100, cfg) == 0.001


def test_schedules_monotone_nonincreasing():
    cfg = ScheduleConfig(delta=2.0, sigma=0.3, k_max=60)
    ds = [delta_schedule(k, cfg) for k in range(1, 61)]
    ss = [sigma_schedule(k, cfg) for k in range(1, 61)]
    assert all(a >= b for a, b in zip(ds, ds[1:]))
    assert all(a >= b for a, b in zip(ss, ss[1:]))
    assert ds[-1] == cfg.delta_floor and ss[-1] == cfg.sigma_floor


def test_schedule_rejects_out_of_range_k():
    cfg = ScheduleConfig(delta=1.0, k_max=10)
    with pytest.raises(ValueError):
        delta_schedule(0, cfg)
    with pytest.raises(ValueError):
        delta_schedule(11, cfg)


def test_schedule_config_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(delta=0.0)
    with pytest.raises(ValueError):
        ScheduleConfig(delta=1.0, delta_floor=2.0)
    with pytest.raises(ValueError):
        ScheduleConfig(delta=1.0, p_delta=0.5)


# --- rng / sampling -----------------------------------------------------------


def test_agent_rng_streams_are_stable_and_distinct():
    a = agent_rng(7, 3, 0).standard_normal(4)
    b = agent_rng(7, 3, 0).standard_normal(4)
    c = agent_rng(7, 3, 1).standard_normal(4)
    d = agent_rng(7, 4, 0).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_exploration_center_uniform_stays_in_box():
    game = _two_agent_game(bound=2.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = exploration_center(0, game, [], rng)
        assert -2.0 <= c[0] <= 2.0


def test_exploration_center_honors_sampling_box():
    game = _two_agent_game(bound=10.0)
    rng = np.random.default_rng(1)
    small = BoxSet.cube(1, -0.5, 0.5)
    for _ in range(50):
        c = exploration_center(0, game, [], rng, sampling_box=small)
        assert -0.5 <= c[0] <= 0.5


def test_exploration_center_unbounded_raises():
    lay = AgentLayout((1,))
    game = ConstrainedGame(lay, (BoxSet.unbounded(1),), AffineConstraints.empty(1))
    with pytest.raises(FeasibleSamplingError):
        exploration_center(0, game, [], np.random.default_rng(0))


def test_exploration_center_space_filling_avoids_queried_points():
    game = _two_agent_game(bound=1.0)
    rng = np.random.default_rng(3)
    # all data sits at the left edge; the farthest candidate must sit right
    ds = [
        PreferenceSample(np.array([-1.0]), np.array([-0.95]), np.array([0.0]), 1)
        for _ in range(5)
    ]
    c = exploration_center(0, game, ds, rng, mode="space-filling")
    assert c[0] > 0.5


# --- loop bookkeeping ----------------------------------------------------------


def test_initial_datasets_sizes_and_query_count():
    o1, o2 = _hidden_pair()
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    ds = initial_datasets(oracle, game, m0=12, seed=0)
    assert [len(d) for d in ds] == [12, 12]
    assert oracle.query_count == 24


def test_al_iteration_grows_every_dataset_by_one():
    o1, o2 = _hidden_pair()
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    sched = ScheduleConfig(delta=1.0, sigma=0.3, k_max=5)
    cfg = TrainConfig(adam_iters=30, lbfgs_max_iters=20)
    ds = initial_datasets(oracle, game, m0=6, seed=1)
    thetas = [ThetaVector.initial(1, 1) for _ in range(2)]
    state = ALState(k=0, seed=1, thetas=thetas, datasets=ds, history=[])
    q0 = oracle.query_count
    state = al_iteration(state, oracle, game, sched, cfg)
    assert state.k == 1
    assert [len(d) for d in state.datasets] == [7, 7]
    assert oracle.query_count - q0 == 2  # one query per agent per iteration
    rec = state.history[-1]
    assert rec.k == 1 and rec.x.shape == (2,)
    assert rec.delta == delta_schedule(1, sched)
    assert rec.sigma == sigma_schedule(1, sched)


def test_al_iteration_immutable_input_state():
    o1, o2 = _hidden_pair()
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    sched = ScheduleConfig(delta=1.0, k_max=3)
    cfg = TrainConfig(adam_iters=10, lbfgs_max_iters=10)
    ds = initial_datasets(oracle, game, m0=4, seed=2)
    thetas = [ThetaVector.initial(1, 1) for _ in range(2)]
    state0 = ALState(k=0, seed=2, thetas=thetas, datasets=ds, history=[])
    al_iteration(state0, oracle, game, sched, cfg)
    assert state0.k == 0 and [len(d) for d in state0.datasets] == [4, 4]
    assert state0.history == []


def test_al_iteration_refuses_past_k_max():
    sched = ScheduleConfig(delta=1.0, k_max=1)
    state = ALState(k=1, seed=0, thetas=[], datasets=[], history=[])
    with pytest.raises(ValueError):
        al_iteration(state, None, _two_agent_game(), sched)


def test_run_bookkeeping_and_query_budget():
    o1, o2 = _hidden_pair()
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    sched = ScheduleConfig(delta=1.0, sigma=0.3, k_max=8)
    cfg = TrainConfig(adam_iters=40, lbfgs_max_iters=30)
    x, state = run(oracle, game, sched, seed=3, m0=10, train_cfg=cfg)
    assert oracle.query_count == 2 * (10 + 8)
    assert len(state.history) == 8
    assert all(len(d) == 18 for d in state.datasets)
    assert state.final_solution is not None
    assert x.shape == (2,)


def test_run_identical_seeds_reproduce_bitwise():
    o1, o2 = _hidden_pair()
    game = _two_agent_game()
    sched = ScheduleConfig(delta=1.0, sigma=0.3, k_max=5)
    cfg = TrainConfig(adam_iters=25, lbfgs_max_iters=20)
    xa, sa = run(make_preference_oracle([o1.value, o2.value]), game, sched, seed=11, m0=8, train_cfg=cfg)
    xb, sb = run(make_preference_oracle([o1.value, o2.value]), game, sched, seed=11, m0=8, train_cfg=cfg)
    np.testing.assert_array_equal(xa, xb)
    for ra, rb in zip(sa.history, sb.history):
        np.testing.assert_array_equal(ra.x, rb.x)
        assert ra.solver_residual == rb.solver_residual
    xc, _ = run(make_preference_oracle([o1.value, o2.value]), game, sched, seed=12, m0=8, train_cfg=cfg)
    assert not np.array_equal(xa, xc)


def test_run_learns_self_consistent_quadratic_game():
    # hidden objectives inside the surrogate family: the loop should land
    # near the stationary equilibrium of the hidden game
    o1, o2 = _hidden_pair()
    M, c = game_operator([o1, o2])
    x_star = np.linalg.solve(M, -c)
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    sched = ScheduleConfig(delta=2.0, sigma=0.3, k_max=40)
    x, _ = run(oracle, game, sched, seed=0, m0=30)
    assert np.max(np.abs(x - x_star)) < 0.1


def test_run_theta_init_template_is_used():
    o1, o2 = _hidden_pair()
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    sched = ScheduleConfig(delta=1.0, k_max=2)
    cfg = TrainConfig(adam_iters=10, lbfgs_max_iters=10)

    def template(n_own, n_others):
        return pinned_curvature_template(n_own, n_others, p_diag=3.0, coupling_bound=0.0)

    _, state = run(oracle, game, sched, seed=5, m0=6, train_cfg=cfg, theta_init=template)
    for th in state.thetas:
        np.testing.assert_allclose(th.to_objective().P, 3.0 * np.eye(1), atol=1e-12)
        assert th.to_objective().A[0, 0] == 0.0


# --- estimator wrapper -----------------------------------------------------------


def test_gnelearner_sklearn_contract_and_fit():
    est = GNELearner(delta=1.0, k_max=4, m0=6, adam_iters=20, lbfgs_max_iters=15, random_state=0)
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()

    o1, o2 = _hidden_pair()
    oracle = make_preference_oracle([o1.value, o2.value])
    game = _two_agent_game()
    est.fit(game, oracle)
    assert est.equilibrium_.shape == (2,)
    assert len(est.history_) == 4
    assert est.n_queries_ == 2 * (6 + 4)
    assert len(est.objectives_) == 2


def test_gnelearner_random_state_controls_reproducibility():
    o1, o2 = _hidden_pair()
    game = _two_agent_game()
    kw = dict(delta=1.0, k_max=3, m0=5, adam_iters=15, lbfgs_max_iters=10)
    a = GNELearner(random_state=1, **kw).fit(game, make_preference_oracle([o1.value, o2.value]))
    b = GNELearner(random_state=1, **kw).fit(game, make_preference_oracle([o1.value, o2.value]))
    np.testing.assert_array_equal(a.equilibrium_, b.equilibrium_)
