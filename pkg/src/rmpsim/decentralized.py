"""Partial RMPflow: one single-level RMP-tree per robot, local state only.

Each robot i sees the leaf of subtask k through the partial Jacobian
``J^i = d psi_k / d q_i``. The leaf velocity it uses, ``J^i qdot_i``, ignores
the motion of the other participants; the half-Gdot curvature term of the
partial leaf and the ``Jdot^i qdot_i`` term of the pullback are where their
motion (read from the neighbor snapshot) enters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import plan_for_forest
from .centralized import ConfigurationError, RobotTeamSpec, _check
from .core import (CanonicalRMP, EvaluationError, GDSLeaf, NaturalRMP, State, TaskMap,
                   curvature_Xi, metric_partials_dx, metric_rate, resolve)


class StaleViewError(ConfigurationError):
    """A neighbor snapshot is missing or from a different control step."""


@dataclass
class SharedSubtask:
    name: str
    participants: tuple
    task_map: TaskMap
    leaf: GDSLeaf
    assignment: object = None


@dataclass
class RMPForest:
    """Per-robot one-level trees over shared subtask definitions."""

    team: RobotTeamSpec
    subtasks: list
    trees: dict  # robot id -> list of subtask indices (K_i)
    neighbors: dict = field(default_factory=dict)  # robot id -> sorted neighbor ids


@dataclass
class NeighborView:
    """Snapshot of the states of robot ``robot``'s neighbors at one control step."""

    robot: int
    states: dict
    step: int = 0


def build_forest(team: RobotTeamSpec, subtasks) -> RMPForest:
    _check(team, subtasks)
    shared = []
    for st in subtasks:
        task_map, leaf = st.build(team.dim)
        shared.append(SharedSubtask(st.name, st.participants, task_map, leaf, st))
    trees = {i: [k for k, s in enumerate(shared) if i in s.participants] for i in team.ids}
    neighbors = {i: sorted({j for k in trees[i] for j in shared[k].participants} - {i})
                 for i in team.ids}
    return RMPForest(team, shared, trees, neighbors)


def neighbor_view(forest: RMPForest, robot: int, q, qdot, step: int = 0) -> NeighborView:
    """Snapshot the neighbors of ``robot`` from joint arrays shaped (N, dim)."""
    team = forest.team
    q = np.asarray(q, dtype=float).reshape(team.size, team.dim)
    qdot = np.asarray(qdot, dtype=float).reshape(team.size, team.dim)
    states = {j: State(q[team.index(j)], qdot[team.index(j)]) for j in forest.neighbors[robot]}
    return NeighborView(robot, states, step)


@dataclass
class _LocalLeaf:
    z: np.ndarray       # leaf position
    zdot_i: np.ndarray  # leaf velocity from robot i's motion only
    zdot: np.ndarray    # full leaf velocity
    J_i: np.ndarray     # partial Jacobian
    Jdot_i_qdot_i: np.ndarray


def _local_leaf(forest: RMPForest, robot: int, k: int, own_state: State,
                neighbors: NeighborView) -> _LocalLeaf:
    st = forest.subtasks[k]
    if robot not in st.participants:
        raise ConfigurationError(f"robot {robot} does not take part in {st.name!r}")
    n = forest.team.dim
    q_parts, qd_parts, own = [], [], []
    for j in st.participants:
        if j == robot:
            s = own_state
        else:
            s = neighbors.states.get(j)
            if s is None:
                raise StaleViewError(f"robot {robot} has no state for neighbor {j} ({st.name})")
        q_parts.append(s.x)
        qd_parts.append(s.xdot)
        own.append(j == robot)
    q = np.concatenate(q_parts)
    qd = np.concatenate(qd_parts)
    v_i = np.concatenate([qd_parts[p] if own[p] else np.zeros(n) for p in range(len(own))])
    p_i = own.index(True)
    blk = slice(p_i * n, (p_i + 1) * n)
    try:
        z = st.task_map.value(q)
        J = st.task_map.jacobian(q)
        jdot = st.task_map.jac_rate_apply(q, qd, v_i)
    except EvaluationError as err:
        raise err.with_path((f"robot{robot}", st.name)) from err
    return _LocalLeaf(z, J @ v_i, J @ qd, J[:, blk], jdot)


def decentralized_pushforward(forest: RMPForest, robot: int, k: int, own_state: State,
                              neighbors: NeighborView) -> State:
    """Leaf state seen by ``robot``: (psi(q_Ik), J^i qdot_i)."""
    loc = _local_leaf(forest, robot, k, own_state, neighbors)
    return State(loc.z, loc.zdot_i)


def evaluate_partial_leaf(leaf: GDSLeaf, leaf_state: State, position_rate=None) -> NaturalRMP:
    """f = -grad Phi - B zdot - 1/2 [d_z g_i rate]_i zdot, M = G + Xi_G at (z, zdot).

    ``position_rate`` is the rate at which the leaf position actually moves;
    it defaults to ``leaf_state.xdot`` (no other participant moving).
    """
    z, zd = leaf_state.x, leaf_state.xdot
    rate = zd if position_rate is None else np.asarray(position_rate, dtype=float)
    G = np.asarray(leaf.metric(z, zd), dtype=float)
    B = np.asarray(leaf.damping(z, zd), dtype=float)
    M = G + curvature_Xi(leaf, leaf_state)
    f = -np.atleast_1d(leaf.potential_grad(z)) - B @ zd
    T = metric_partials_dx(leaf, z, zd)
    if T is not None:
        f = f - 0.5 * metric_rate(T, rate) @ zd
    if not (np.isfinite(f).all() and np.isfinite(M).all()):
        raise EvaluationError("non-finite partial leaf evaluation", leaf.label)
    return NaturalRMP(f, M)


def _check_view(forest, robot, neighbors: NeighborView, step=None):
    if neighbors.robot != robot:
        raise StaleViewError(f"view belongs to robot {neighbors.robot}, not {robot}")
    missing = [j for j in forest.neighbors[robot] if j not in neighbors.states]
    if missing:
        raise StaleViewError(f"robot {robot} view lacks neighbors {missing}")
    if step is not None and neighbors.step != step:
        raise StaleViewError(f"robot {robot} view is from step {neighbors.step}, expected {step}")


def robot_root_rmp(forest: RMPForest, robot: int, own_state: State,
                   neighbors: NeighborView) -> NaturalRMP:
    _check_view(forest, robot, neighbors)
    n = forest.team.dim
    f = np.zeros(n)
    M = np.zeros((n, n))
    for k in forest.trees[robot]:
        loc = _local_leaf(forest, robot, k, own_state, neighbors)
        leaf = forest.subtasks[k].leaf
        try:
            rmp = evaluate_partial_leaf(leaf, State(loc.z, loc.zdot_i), loc.zdot)
        except EvaluationError as err:
            raise err.with_path((f"robot{robot}", forest.subtasks[k].name)) from err
        f += loc.J_i.T @ (rmp.f - rmp.M @ loc.Jdot_i_qdot_i)
        M += loc.J_i.T @ rmp.M @ loc.J_i
    return NaturalRMP(f, M)


def compute_control_decentralized(forest: RMPForest, robot: int, own_state: State,
                                  neighbors: NeighborView) -> CanonicalRMP:
    """Canonical RMP on robot ``robot``'s configuration space."""
    return resolve(robot_root_rmp(forest, robot, own_state, neighbors))


def team_control(forest: RMPForest, q, qdot, step: int = 0) -> np.ndarray:
    """Synchronous update: every robot snapshots its neighbors, then solves."""
    team = forest.team
    q = np.asarray(q, dtype=float).reshape(team.size, team.dim)
    qdot = np.asarray(qdot, dtype=float).reshape(team.size, team.dim)
    fast = plan_for_forest(forest)
    if fast is not None:
        a = fast.team_accel(q, qdot)
        if a is not None:
            return a
    out = np.zeros((team.size, team.dim))
    for r, i in enumerate(team.ids):
        view = neighbor_view(forest, i, q, qdot, step)
        out[r] = compute_control_decentralized(forest, i, State(q[r], qdot[r]), view).a
    return out


def forest_quantities(forest: RMPForest, q, qdot):
    """Per-robot kinetic terms K_i, total potential Phi and its gradient on q."""
    team = forest.team
    q = np.asarray(q, dtype=float).reshape(team.size, team.dim)
    qdot = np.asarray(qdot, dtype=float).reshape(team.size, team.dim)
    fast = plan_for_forest(forest)
    if fast is not None:
        return (fast.kinetic_partial(q, qdot), fast.energy(q, qdot)[1],
                fast.potential_grad(q))
    kinetic = np.zeros(team.size)
    for r, i in enumerate(team.ids):
        view = neighbor_view(forest, i, q, qdot)
        own = State(q[r], qdot[r])
        for k in forest.trees[i]:
            loc = _local_leaf(forest, i, k, own, view)
            G = forest.subtasks[k].leaf.metric(loc.z, loc.zdot_i)
            kinetic[r] += 0.5 * loc.zdot_i @ G @ loc.zdot_i
    phi = 0.0
    grad = np.zeros((team.size, team.dim))
    for st in forest.subtasks:
        idx = [team.index(j) for j in st.participants]
        qk = q[idx].ravel()
        z = st.task_map.value(qk)
        phi += float(st.leaf.potential(z))
        g = st.task_map.jacobian(qk).T @ np.atleast_1d(st.leaf.potential_grad(z))
        grad[idx] += g.reshape(len(idx), team.dim)
    return kinetic, phi, grad
