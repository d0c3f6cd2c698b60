import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rmpsim.centralized import RobotTeamSpec, SubtaskAssignment, build_rmp_tree, compute_control
from rmpsim.core import (AffineMap, NaturalRMP, State, curvature_Xi, curvature_xi,
                         evaluate_gds_leaf, pullback, resolve)
from rmpsim.decentralized import build_forest, decentralized_pushforward, neighbor_view
from rmpsim.leaves import (CollisionAvoidanceParams, DistancePreservationBParams, PairDistanceMap,
                           make_collision_avoidance, make_distance_preservation_b)
from rmpsim.scenario import emit, parse
from rmpsim.verify import fd_check, fd_curvature, random_metric_leaf

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec2 = arrays(np.float64, 2, elements=finite)
seeds = st.integers(0, 2 ** 32 - 1)
SETTINGS = settings(max_examples=60, deadline=None)


@SETTINGS
@given(seeds, vec2, vec2)
def test_curvature_matches_finite_differences(seed, x, xd):
    leaf = random_metric_leaf(np.random.default_rng(seed))
    Xi, xi = fd_curvature(leaf.metric, x, xd)
    s = State(x, xd)
    scale = 1.0 + np.abs(Xi).max() + np.abs(xi).max()
    assert np.abs(curvature_Xi(leaf, s) - Xi).max() <= 1e-5 * scale
    assert np.abs(curvature_xi(leaf, s) - xi).max() <= 1e-5 * scale


@SETTINGS
@given(seeds)
def test_pullback_is_additive(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    maps = [AffineMap(rng.normal(size=(m, n)), rng.normal(size=m)) for _ in range(2)]
    rmps = []
    for _ in range(2):
        L = rng.normal(size=(m, m))
        rmps.append(NaturalRMP(rng.normal(size=m), L @ L.T))
    s = State(rng.normal(size=n), rng.normal(size=n))
    both = pullback(list(zip(rmps, maps)), s)
    parts = [pullback([(r, t)], s) for r, t in zip(rmps, maps)]
    assert np.allclose(both.f, parts[0].f + parts[1].f)
    assert np.allclose(both.M, parts[0].M + parts[1].M)


@SETTINGS
@given(seeds)
def test_resolve_solves_full_rank(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(4, 4))
    M = L @ L.T + 0.1 * np.eye(4)
    f = rng.normal(size=4)
    a = resolve(NaturalRMP(f, M)).a
    assert np.allclose(M @ a, f, atol=1e-9 * (1 + np.abs(f).max()))


@SETTINGS
@given(vec2, vec2, vec2, vec2)
def test_pair_distance_jacobian(xi, xj, vi, vj):
    q = np.r_[xi, xj]
    if np.linalg.norm(xi - xj) < 1e-2:
        return
    m = PairDistanceMap(2)
    assert fd_check(m.value, q, derivative=m.jacobian) <= 1e-5
    # Jdot qdot against the second directional derivative
    v = np.r_[vi, vj]
    h = 1e-4
    sdd = (m.value(q + h * v) - 2 * m.value(q) + m.value(q - h * v)) / h ** 2
    assert np.allclose(m.jac_rate_times_vel(q, v), sdd, atol=1e-4 * (1 + np.abs(sdd).max()))


@SETTINGS
@given(st.floats(0.05, 3.0), st.floats(-3.0, 3.0))
def test_collision_leaf_inertia_positive(z, zd):
    _, leaf = make_collision_avoidance(CollisionAvoidanceParams(0.01, 1.0, 1e-6, 1.0), (1, 2))
    r = evaluate_gds_leaf(leaf, State([z], [zd]))
    assert r.M[0, 0] > 0 and np.isfinite(r.f).all()


@SETTINGS
@given(vec2, vec2, vec2, vec2, st.floats(0.1, 2.0), st.floats(0.5, 3.0), st.floats(0.1, 3.0))
def test_rmpb_pair_accelerations(xi, xj, vi, vj, d, c, eta):
    # equal masses: internal forces cancel, only damping changes total momentum
    if np.linalg.norm(xi - xj) < 1e-3:
        return
    team = RobotTeamSpec((1, 2), 2)
    tree = build_rmp_tree(team, [SubtaskAssignment(
        "b", (1, 2), make_distance_preservation_b, DistancePreservationBParams(d, c, eta))])
    a = compute_control(tree, State(np.r_[xi, xj], np.r_[vi, vj]))
    assert np.allclose(a[0] + a[1], -(eta / c) * (vi + vj), atol=1e-9 * (1 + np.abs(a).max()))


@SETTINGS
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (3, 2), elements=finite))
def test_partial_rates_sum_to_joint_rate(q, v):
    if min(np.linalg.norm(q[i] - q[j]) for i, j in ((0, 1), (0, 2), (1, 2))) < 0.05:
        return
    coll = CollisionAvoidanceParams(0.01, 1.0, 1e-6, 1.0)
    subs = [SubtaskAssignment(f"c{p}", p, make_collision_avoidance, coll)
            for p in ((1, 2), (1, 3), (2, 3))]
    forest = build_forest(RobotTeamSpec((1, 2, 3), 2), subs)
    for k, sub in enumerate(forest.subtasks):
        idx = [j - 1 for j in sub.participants]
        total = sub.task_map.jacobian(q[idx].ravel()) @ v[idx].ravel()
        part = sum(decentralized_pushforward(forest, i, k, State(q[i - 1], v[i - 1]),
                                             neighbor_view(forest, i, q, v)).xdot
                   for i in sub.participants)
        assert np.allclose(part, total, atol=1e-12)


@SETTINGS
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=4),
       st.floats(1e-3, 0.1), st.sampled_from(["rk4", "semi-implicit-euler"]))
def test_scenario_round_trip(points, dt, integrator):
    robots = ",".join(f'{{"id": {k + 1}, "position": [{x!r}, {y!r}]}}'
                      for k, (x, y) in enumerate(points))
    text = (f'{{"robots": [{robots}], "subtasks": [{{"kind": "damper", "participants": [1], '
            f'"params": {{"c": 1.0, "eta": 2.0}}}}], '
            f'"sim": {{"dt": {dt!r}, "t_final": 1.0, "integrator": "{integrator}"}}}}')
    s = parse(text)
    assert parse(emit(s)) == s
