"""Acceptance checks shared by ``rmpsim verify`` and the test suite.

Every check returns a :class:`CheckResult` holding the measured value and the
tolerance it was held to. Long-horizon runs use the horizons in
``ACCEPTANCE_HORIZON``; the default horizons of some built-ins are too short
for some runs to settle.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .centralized import RobotTeamSpec, SubtaskAssignment, build_flat_tree, build_rmp_tree
from .core import State, curvature_Xi, curvature_xi, rmpflow_policy
from .decentralized import build_forest, compute_control_decentralized, neighbor_view
from .leaves import (CollisionAvoidanceParams, DamperParams, DistancePreservationAParams,
                     DistancePreservationBParams, GoalAttractorAParams, GoalAttractorBParams,
                     make_collision_avoidance, make_damper, make_distance_preservation_a,
                     make_distance_preservation_b, make_goal_attractor_a, make_goal_attractor_b)
from .scenario import PENTAGON_EDGES, builtin, formation_graph, pentagon
from .sim import SimConfig, run
from .verify import (PotentialGraph, compare_trajectories, edge_sum_controller,
                     fd_curvature, potential_controller, potential_gradient, random_metric_leaf,
                     rollout)

LYAPUNOV_TOL = 1e-6
CONVERGENCE_TOL = 1e-3
ACCEPTANCE_HORIZON = {"fig3a": 40.0, "fig3b": 40.0, "fig7": 40.0}
FINE_DT = 1e-3


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.criterion}. {self.name}: value={self.value:.3e} "
                f"tol={self.tolerance:.1e} ({self.seconds:.1f}s)")

    def to_json(self) -> dict:
        out = asdict(self)
        out["value"] = _jsonable(self.value)
        out["detail"] = {k: _jsonable(v) for k, v in self.detail.items()}
        return out


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# 1. RMP formation controller vs the closed-form degree-normalized controller


def closed_form_comparison(scenario=None, dt: float | None = None, t_final: float | None = None) -> dict:
    """Run a pure-RMPb formation scenario and the closed-form controller side by side."""
    s = builtin("fig7") if scenario is None else scenario
    cfg = SimConfig(dt or s.sim.dt, t_final or s.sim.t_final, mode="centralized")
    t0 = time.perf_counter()
    log = run(s, cfg)
    graph = formation_graph(s)
    x0 = s.initial_state()
    ref = rollout(lambda q, v: edge_sum_controller(graph, q, v), x0.x, x0.xdot,
                  cfg.dt, cfg.n_steps, (s.team.size, s.dim))
    elapsed = time.perf_counter() - t0
    return {"max_deviation": compare_trajectories(log, ref), "seconds": elapsed,
            "dt": cfg.dt, "t_final": cfg.t_final, "terminated": log.terminated}


def check_controller_equivalence() -> CheckResult:
    t0 = time.perf_counter()
    cmp = closed_form_comparison()
    seconds = time.perf_counter() - t0
    ok = cmp["max_deviation"] <= 1e-9 and seconds < 5.0 and not cmp["terminated"]
    res = CheckResult(1, "RMP vs closed-form formation controller (fig7)", ok,
                      cmp["max_deviation"], 1e-9, {"runtime_limit_s": 5.0, **cmp})
    res.seconds = seconds
    return res


# ---------------------------------------------------------------------------
# 2. collision floor


@_timed
def check_collision_free() -> CheckResult:
    s = builtin("fig8-centralized")
    t0 = time.perf_counter()
    log = run(s)
    elapsed = time.perf_counter() - t0
    d_s = s.safety_distance()
    dmin = float(log.min_distance.min())
    ok = dmin > d_s and not log.terminated and elapsed < 10.0
    return CheckResult(2, "collision-free fig8 (min distance > d_S)", ok, dmin, d_s,
                       {"runtime_s": elapsed, "runtime_limit_s": 10.0,
                        "terminated": log.terminated, "termination": log.termination})


# ---------------------------------------------------------------------------
# 3/4. Lyapunov monotonicity and convergence


def lyapunov_run(name: str, dt: float = FINE_DT, mode: str | None = None, cadence: int = 100):
    s = builtin(name)
    t_final = ACCEPTANCE_HORIZON.get(name, s.sim.t_final)
    cfg = SimConfig(dt, t_final, mode=mode or s.sim.mode, cadence=cadence,
                    monitor_lyapunov=True)
    return run(s, cfg)


def _lyapunov_check(criterion, title, names, need_convergence) -> CheckResult:
    worst = -math.inf
    detail = {}
    ok = True
    for name in names:
        log = lyapunov_run(name)
        f = log.final()
        worst = max(worst, log.max_lyapunov_increase)
        entry = {"max_increase": log.max_lyapunov_increase, "terminated": log.terminated,
                 "qdot_inf": f["qdot_inf"], "grad_norm": f["grad_norm"], "t_final": f["t"]}
        ok &= (not log.terminated) and log.max_lyapunov_increase <= LYAPUNOV_TOL
        if need_convergence:
            entry["converged"] = log.converged(CONVERGENCE_TOL)
            ok &= entry["converged"]
        detail[name] = entry
    return CheckResult(criterion, title, bool(ok), worst, LYAPUNOV_TOL, detail)


@_timed
def check_centralized_stability() -> CheckResult:
    return _lyapunov_check(3, "centralized Lyapunov decrease and convergence (fig3a, fig7)",
                           ("fig3a", "fig7"), True)


@_timed
def check_decentralized_stability() -> CheckResult:
    return _lyapunov_check(4, "decentralized Lyapunov decrease (fig8, cyclic pursuit)",
                           ("fig8-decentralized", "cyclic-pursuit"), False)


# ---------------------------------------------------------------------------
# 5. decentralized = centralized for constant product-space metrics


def _random_positions(rng, n, spread=2.0, min_sep=0.2):
    while True:
        q = rng.uniform(-spread, spread, size=(n, 2))
        if n < 2 or min(np.linalg.norm(q[i] - q[j])
                        for i, j in itertools.combinations(range(n), 2)) > min_sep:
            return q


def random_product_team(rng):
    """2 to 6 robots, a random connected edge set of RMPb edges, random dampers."""
    n = int(rng.integers(2, 7))
    ids = tuple(range(1, n + 1))
    pairs = list(itertools.combinations(ids, 2))
    chain = [(k, k + 1) for k in range(1, n)]
    extra = [p for p in pairs if p not in chain and rng.random() < 0.4]
    subtasks = []
    for i, j in chain + extra:
        p = DistancePreservationBParams(d_ij=float(rng.uniform(0.3, 1.5)),
                                        c=float(rng.uniform(0.2, 3.0)),
                                        eta=float(rng.uniform(0.1, 3.0)),
                                        alpha=float(rng.uniform(0.2, 3.0)))
        subtasks.append(SubtaskAssignment(f"b{i}_{j}", (i, j), make_distance_preservation_b, p))
    for i in ids:
        if rng.random() < 0.7:
            p = DamperParams(c=float(rng.uniform(0.01, 2.0)), eta=float(rng.uniform(0.1, 2.0)))
            subtasks.append(SubtaskAssignment(f"damp{i}", (i,), make_damper, p))
    return RobotTeamSpec(ids, 2), subtasks


@_timed
def check_product_equivalence(samples: int = 100, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        team, subtasks = random_product_team(rng)
        q = _random_positions(rng, team.size)
        v = rng.normal(size=q.shape)
        central = rmpflow_policy(build_rmp_tree(team, subtasks),
                                 State(q.ravel(), v.ravel())).a.reshape(q.shape)
        forest = build_forest(team, subtasks)
        for k, rid in enumerate(team.ids):
            view = neighbor_view(forest, rid, q, v)
            a = compute_control_decentralized(forest, rid, State(q[k], v[k]), view).a
            worst = max(worst, float(np.abs(a - central[k]).max()))
    return CheckResult(5, "decentralized = centralized on constant product metrics",
                       worst <= 1e-10, worst, 1e-10, {"samples": samples})


# ---------------------------------------------------------------------------
# 6. original vs degree-normalized potential controllers


def _edge_lengths(graph, q):
    q = np.asarray(q).reshape(len(graph.ids), graph.dim)
    ix = {rid: k for k, rid in enumerate(graph.ids)}
    return np.array([np.linalg.norm(q[ix[i]] - q[ix[j]]) for i, j in graph.edges])


@_timed
def check_degree_normalization(dt: float = 0.01, t_final: float = 60.0) -> CheckResult:
    target = pentagon(0.4)
    d = {e: float(np.linalg.norm(target[e[0] - 1] - target[e[1] - 1])) for e in PENTAGON_EDGES}
    base = PotentialGraph(tuple(range(1, 6)), PENTAGON_EDGES, d, eta=2.0)
    q0 = pentagon(1.0)
    n = int(round(t_final / dt))
    detail, finals, ok = {}, {}, True
    for norm in ("original", "degree-normalized"):
        graph = base.with_normalization(norm)
        log = rollout(lambda q, v: potential_controller(graph, q, v), q0, np.zeros_like(q0),
                      dt, n, q0.shape)
        grad = float(np.abs(potential_gradient(graph, log.q[-1])).max())
        speed = float(np.abs(log.qdot[-1]).max())
        finals[norm] = _edge_lengths(graph, log.q[-1])
        detail[norm] = {"grad_inf": grad, "qdot_inf": speed}
        ok &= grad < CONVERGENCE_TOL and speed < CONVERGENCE_TOL
    gap = float(np.abs(finals["original"] - finals["degree-normalized"]).max())
    detail["t_final"] = t_final
    return CheckResult(6, "original and degree-normalized controllers reach the same shape",
                       bool(ok and gap <= 1e-3), gap, 1e-3, detail)


# ---------------------------------------------------------------------------
# 7. fig3a vs fig3b


def formation_contrast(arrive_tol: float = 0.05) -> dict:
    out = {}
    for name in ("fig3a", "fig3b"):
        s = builtin(name)
        log = run(s, SimConfig(s.sim.dt, ACCEPTANCE_HORIZON[name]))
        leader = s.meta["leader"]
        goal = s.goals()[leader]
        gap = np.linalg.norm(log.q[:, s.team.index(leader)] - goal, axis=1)
        err = log.edge_errors.max(axis=1)
        arrived = np.flatnonzero(gap < arrive_tol)
        end = int(arrived[0]) if arrived.size else len(err) - 1
        d_min = min(e[2] for e in s.edges())
        out[name] = {"transit_end_t": float(log.t[end]), "arrived": bool(arrived.size),
                     "transit_max_error": float(err[:end + 1].max()),
                     "final_error": float(err[-1]), "final_error_ratio": float(err[-1] / d_min),
                     "final_goal_gap": float(gap[-1]), "terminated": log.terminated}
    return out


@_timed
def check_formation_contrast() -> CheckResult:
    c = formation_contrast()
    a, b = c["fig3a"], c["fig3b"]
    ok = (a["transit_max_error"] < b["transit_max_error"] and a["final_error_ratio"] < 0.05
          and a["final_goal_gap"] < 0.05 and not a["terminated"] and not b["terminated"])
    return CheckResult(7, "RMPa keeps the formation better than RMPb (fig3)", bool(ok),
                       a["transit_max_error"] / b["transit_max_error"], 1.0, c)


# ---------------------------------------------------------------------------
# 8. curvature terms vs finite differences


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(1.0, float(np.abs(b).max())))


@_timed
def check_curvature(samples: int = 100, seed: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        dim = int(rng.integers(1, 5))
        leaf = random_metric_leaf(rng, dim)
        s = State(rng.normal(size=dim), rng.normal(size=dim))
        Xi_fd, xi_fd = fd_curvature(leaf.metric, s.x, s.xdot)
        worst = max(worst, _rel(curvature_Xi(leaf, s), Xi_fd), _rel(curvature_xi(leaf, s), xi_fd))
    return CheckResult(8, "analytic curvature terms vs central differences", worst <= 1e-5,
                       worst, 1e-5, {"samples": samples})


# ---------------------------------------------------------------------------
# 9. tree shape does not change the policy


def random_mixed_team(rng, n: int = 4):
    ids = tuple(range(1, n + 1))
    subtasks = []
    for i, j in itertools.combinations(ids, 2):
        subtasks.append(SubtaskAssignment(
            f"coll{i}_{j}", (i, j), make_collision_avoidance,
            CollisionAvoidanceParams(d_S=0.1, alpha=float(rng.uniform(1e-5, 1.0)),
                                     epsilon=float(rng.uniform(1e-8, 1e-2)),
                                     eta=float(rng.uniform(0.1, 1.0)))))
        if rng.random() < 0.5:
            subtasks.append(SubtaskAssignment(
                f"a{i}_{j}", (i, j), make_distance_preservation_a,
                DistancePreservationAParams(d_ij=float(rng.uniform(0.3, 1.5)), c=1.0,
                                            alpha=1.0, eta=2.0)))
        else:
            subtasks.append(SubtaskAssignment(
                f"b{i}_{j}", (i, j), make_distance_preservation_b,
                DistancePreservationBParams(d_ij=float(rng.uniform(0.3, 1.5)), c=1.0, eta=2.0)))
    goal = tuple(rng.uniform(-1, 1, size=2))
    subtasks.append(SubtaskAssignment("attr_a", (1,), make_goal_attractor_a,
                                      GoalAttractorAParams(goal, 10.0, 0.5, 0.3, 10.0, 1.0, 1.0)))
    subtasks.append(SubtaskAssignment("attr_b", (2,), make_goal_attractor_b,
                                      GoalAttractorBParams(goal, 1.0, 1.0, 1.0)))
    for i in ids:
        subtasks.append(SubtaskAssignment(f"damp{i}", (i,), make_damper, DamperParams(0.01, 1.0)))
    return RobotTeamSpec(ids, 2), subtasks


@_timed
def check_tree_invariance(samples: int = 100, seed: int = 9) -> CheckResult:
    rng = np.random.default_rng(seed)
    team, subtasks = random_mixed_team(rng)
    flat = build_flat_tree(team, subtasks)
    nested = build_rmp_tree(team, subtasks, nested=True)
    worst = 0.0
    for _ in range(samples):
        q = _random_positions(rng, team.size, spread=1.5, min_sep=0.3)
        v = rng.normal(size=q.shape) * 0.5
        s = State(q.ravel(), v.ravel())
        a1, a2 = rmpflow_policy(flat, s).a, rmpflow_policy(nested, s).a
        worst = max(worst, float(np.abs(a1 - a2).max()))
    depth = max(len(nested.path(leaf.name)) for leaf in nested.leaves())
    return CheckResult(9, "root acceleration independent of tree shape", worst <= 1e-10, worst,
                       1e-10, {"samples": samples, "nested_depth": depth})


# ---------------------------------------------------------------------------

CHECKS = {
    1: check_controller_equivalence,
    2: check_collision_free,
    3: check_centralized_stability,
    4: check_decentralized_stability,
    5: check_product_equivalence,
    6: check_degree_normalization,
    7: check_formation_contrast,
    8: check_curvature,
    9: check_tree_invariance,
}

SUITES = {
    "curvature": (8,),
    "equivalence": (1, 5, 6, 9),
    "lyapunov": (3, 4),
    "collision": (2,),
    "formation": (7,),
    "all": tuple(range(1, 10)),
}


def run_suite(name: str) -> list:
    if name not in SUITES:
        raise KeyError(name)
    return [CHECKS[k]() for k in SUITES[name]]
