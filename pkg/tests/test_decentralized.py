import numpy as np
import pytest

from rmpsim.batch import disable_fast_paths
from rmpsim.centralized import RobotTeamSpec, SubtaskAssignment, build_rmp_tree, compute_control
from rmpsim.core import State, evaluate_gds_leaf
from rmpsim.decentralized import (NeighborView, StaleViewError, build_forest,
                                  compute_control_decentralized, decentralized_pushforward,
                                  evaluate_partial_leaf, forest_quantities, neighbor_view,
                                  team_control)
from rmpsim.leaves import (CollisionAvoidanceParams, DamperParams, DistancePreservationAParams,
                           DistancePreservationBParams, GoalAttractorAParams,
                           make_collision_avoidance, make_damper, make_distance_preservation_a,
                           make_distance_preservation_b, make_goal_attractor_a)
from rmpsim.scenario import builtin
from rmpsim.sim import lyapunov_decentralized

COLL = CollisionAvoidanceParams(0.5, 1.0, 1e-8, 1.0)
DA = DistancePreservationAParams(1.0, 1.0, 1.0, 2.0)
ATTR = GoalAttractorAParams((1.0, 1.0), 10.0, 1.0, 0.3, 10.0, 0.1, 1.0)


def fig4_forest():
    subs = []
    for p in ((1, 2), (2, 3), (1, 3)):
        subs.append(SubtaskAssignment(f"coll{p}", p, make_collision_avoidance, COLL))
        subs.append(SubtaskAssignment(f"dist{p}", p, make_distance_preservation_a, DA))
    subs.append(SubtaskAssignment("goal", (1,), make_goal_attractor_a, ATTR))
    return build_forest(RobotTeamSpec((1, 2, 3, 4), 2), subs)


def test_forest_structure():
    f = fig4_forest()
    names = lambda i: {f.subtasks[k].name for k in f.trees[i]}
    assert names(1) == {"coll(1, 2)", "dist(1, 2)", "coll(1, 3)", "dist(1, 3)", "goal"}
    assert "goal" not in names(2) | names(3)
    assert f.trees[4] == [] and f.neighbors[4] == []
    assert f.neighbors[1] == [2, 3]


def pair_forest(params=COLL, maker=make_collision_avoidance):
    return build_forest(RobotTeamSpec((1, 2), 2), [SubtaskAssignment("p", (1, 2), maker, params)])


def test_partial_pushforward_examples():
    f = pair_forest()
    q = np.array([[1.0, 0.0], [0.0, 0.0]])
    v = np.array([[-1.0, 0.0], [0.0, 0.0]])
    s = decentralized_pushforward(f, 1, 0, State(q[0], v[0]), neighbor_view(f, 1, q, v))
    assert s.x[0] == pytest.approx(1.0) and s.xdot[0] == pytest.approx(-2.0)
    v[1] = (-1.0, 0.0)
    s = decentralized_pushforward(f, 1, 0, State(q[0], v[0]), neighbor_view(f, 1, q, v))
    assert s.xdot[0] == pytest.approx(-2.0)
    full = f.subtasks[0].task_map.jacobian(q.ravel()) @ v.ravel()
    assert full[0] == pytest.approx(0.0)


def test_velocity_decomposition(rng):
    f = fig4_forest()
    for _ in range(20):
        q = np.array([[0, 0], [1.0, 0.1], [0.2, 1.0], [5, 5]]) + 0.1 * rng.normal(size=(4, 2))
        v = rng.normal(size=(4, 2))
        for k, st in enumerate(f.subtasks):
            idx = [j - 1 for j in st.participants]
            total = st.task_map.jacobian(q[idx].ravel()) @ v[idx].ravel()
            parts = sum(decentralized_pushforward(f, i, k, State(q[i - 1], v[i - 1]),
                                                  neighbor_view(f, i, q, v)).xdot
                        for i in st.participants)
            assert np.allclose(parts, total, rtol=0, atol=1e-13)


def test_partial_leaf_trivial_cases():
    _, const = make_distance_preservation_a(DA, (1, 2))
    s = State([0.3], [0.7])
    a, b = evaluate_partial_leaf(const, s), evaluate_gds_leaf(const, s)
    assert np.allclose(a.f, b.f) and np.allclose(a.M, b.M)
    _, coll = make_collision_avoidance(COLL, (1, 2))
    r = evaluate_partial_leaf(coll, State([1.3], [0.0]))
    assert np.allclose(r.f, -coll.potential_grad(np.array([1.3])))


def test_partial_leaf_collision_values():
    # z = 1, zdot = -1, alpha = 1, eps = 1e-8, eta = 1: w = 1, w' = -4, u = 1 + eps, u' = -2
    eps = 1e-8
    _, coll = make_collision_avoidance(COLL, (1, 2))
    u = 1 + eps
    gds = evaluate_gds_leaf(coll, State([1.0], [-1.0]))
    # f = -alpha w w' - eta G zd - xi, xi = 1/2 w' u zd^2
    assert gds.f[0] == pytest.approx(4.0 + u + 2.0 * u, rel=1e-14)
    assert gds.M[0, 0] == pytest.approx(u + 1.0, rel=1e-14)
    # half-Gdot term driven by the true position rate r: -1/2 (w' r u) zd
    for rate in (-1.0, 0.0, -3.0):
        p = evaluate_partial_leaf(coll, State([1.0], [-1.0]), np.array([rate]))
        assert p.f[0] == pytest.approx(4.0 + u - 2.0 * rate * u, rel=1e-14)
        assert p.M[0, 0] == pytest.approx(gds.M[0, 0])
    # for a 1-D leaf moving at its own rate the two forms coincide; they split
    # once the other participant moves
    same = evaluate_partial_leaf(coll, State([1.0], [-1.0]))
    assert same.f[0] == pytest.approx(gds.f[0], rel=1e-14)
    moved = evaluate_partial_leaf(coll, State([1.0], [-1.0]), np.array([0.0]))
    assert abs(moved.f[0] - gds.f[0]) > 1.0


def test_partial_leaf_differs_for_2d_metric():
    _, attr = make_goal_attractor_a(ATTR, 1)
    s = State([0.2, -0.1], [0.5, 0.8])
    p, g = evaluate_partial_leaf(attr, s), evaluate_gds_leaf(attr, s)
    w = attr.info["weight"](s.x)
    dw = -(ATTR.w_u - ATTR.w_l) * (w - ATTR.w_l) / (ATTR.w_u - ATTR.w_l) / ATTR.sigma ** 2 * s.x
    half = 0.5 * (dw @ s.xdot) * s.xdot
    full = (dw @ s.xdot) * s.xdot - 0.5 * (s.xdot @ s.xdot) * dw
    assert np.allclose(g.f - p.f, half - full, rtol=1e-10, atol=1e-14)
    assert np.abs(half - full).max() > 1e-3


def test_damper_only_robot():
    f = build_forest(RobotTeamSpec((1,), 2), [SubtaskAssignment("d", (1,), make_damper,
                                                                DamperParams(2.0, 1.0))])
    a = compute_control_decentralized(f, 1, State([0.0, 0.0], [1.0, -2.0]), NeighborView(1, {}))
    assert np.allclose(a.a, [-0.5, 1.0])


def test_single_rmpb_edge_equals_centralized(rng):
    team = RobotTeamSpec((1, 2), 2)
    subs = [SubtaskAssignment("b", (1, 2), make_distance_preservation_b,
                              DistancePreservationBParams(0.7, 1.0, 2.0))]
    f = disable_fast_paths(build_forest(team, subs))
    tree = build_rmp_tree(team, subs)
    for _ in range(10):
        q, v = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        central = compute_control(tree, State(q.ravel(), v.ravel()))
        for k, i in enumerate(team.ids):
            a = compute_control_decentralized(f, i, State(q[k], v[k]), neighbor_view(f, i, q, v)).a
            assert np.abs(a - central[k]).max() <= 1e-12


def test_mirror_symmetry():
    f = pair_forest(DA, make_distance_preservation_a)
    q = np.array([[0.7, 0.0], [-0.7, 0.0]])
    v = np.array([[0.2, 0.1], [-0.2, -0.1]])
    out = team_control(disable_fast_paths(f), q, v)
    assert np.allclose(out[0], -out[1])


def test_stale_views():
    f = fig4_forest()
    q, v = np.zeros((4, 2)), np.zeros((4, 2))
    q[1], q[2] = (1.0, 0.0), (0.0, 1.0)
    view = neighbor_view(f, 2, q, v)
    with pytest.raises(StaleViewError):
        compute_control_decentralized(f, 1, State(q[0], v[0]), view)
    partial = NeighborView(1, {2: State(q[1], v[1])})
    with pytest.raises(StaleViewError):
        compute_control_decentralized(f, 1, State(q[0], v[0]), partial)


def test_lyapunov_examples():
    damp = build_forest(RobotTeamSpec((1,), 2), [SubtaskAssignment("d", (1,), make_damper,
                                                                   DamperParams(1.0, 1.0))])
    assert lyapunov_decentralized(damp, State([0.0, 0.0], [1.0, 0.0])) == pytest.approx(0.5)
    team = RobotTeamSpec((1, 2), 2)
    subs = [SubtaskAssignment("b", (1, 2), make_distance_preservation_b,
                              DistancePreservationBParams(0.5, 1.0, 2.0))]
    for forest in (build_forest(team, subs), disable_fast_paths(build_forest(team, subs))):
        q = np.array([0.0, 0.0, 1.0, 0.0])
        K, phi, _ = forest_quantities(forest, q, np.array([1.0, 0.0, 1.0, 0.0]))
        assert np.allclose(K, [0.5, 0.5])
        assert phi == pytest.approx(0.5 * 0.25)
        s = State(q, [1.0, 0.0, 1.0, 0.0])
        assert lyapunov_decentralized(forest, s) == pytest.approx(1.0 + phi)


@pytest.mark.parametrize("name", ["fig3a", "fig3b", "fig7", "fig8-decentralized",
                                  "cyclic-pursuit"])
def test_batch_matches_generic(name, rng):
    s = builtin(name)
    fast = s.closed_loop("decentralized").policy_tree
    slow = disable_fast_paths(s.closed_loop("decentralized").policy_tree)
    x0 = s.initial_state()
    n = (s.team.size, s.dim)
    for _ in range(3):
        q = x0.x.reshape(n) + 0.03 * rng.normal(size=n)
        v = 0.3 * rng.normal(size=n)
        a, b = team_control(fast, q, v), team_control(slow, q, v)
        assert np.abs(a - b).max() <= 1e-10 * max(1.0, np.abs(b).max())
        k1, p1, g1 = forest_quantities(fast, q, v)
        k2, p2, g2 = forest_quantities(slow, q, v)
        assert np.allclose(k1, k2, rtol=1e-10, atol=1e-14)
        assert p1 == pytest.approx(p2, rel=1e-10, abs=1e-14)
        assert np.allclose(g1, g2, rtol=1e-10, atol=1e-14)
