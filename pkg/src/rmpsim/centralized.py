"""Centralized RMP-tree construction for robot teams."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .batch import plan_for_tree
from .core import (RMPTree, SelectionMap, State, backward_pass, compiled, compose,
                   forward_pass, node_metric, node_potential, node_potential_grad, resolve)


class ConfigurationError(ValueError):
    """Team or subtask definitions are inconsistent."""


@dataclass(frozen=True)
class RobotTeamSpec:
    """Robots with ids ``ids`` (joint chart in ascending id order), ``dim`` each."""

    ids: tuple
    dim: int = 2
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(sorted(int(i) for i in self.ids))
        if not ids:
            raise ConfigurationError("a team needs at least one robot")
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate robot ids in {self.ids}")
        if self.dim <= 0:
            raise ConfigurationError("robot dimension must be positive")
        object.__setattr__(self, "ids", ids)

    @property
    def size(self) -> int:
        return len(self.ids)

    def index(self, robot) -> int:
        try:
            return self.ids.index(robot)
        except ValueError:
            raise ConfigurationError(f"unknown robot id {robot}") from None

    def block(self, robot) -> np.ndarray:
        k = self.index(robot)
        return np.arange(k * self.dim, (k + 1) * self.dim)

    def blocks(self, robots) -> np.ndarray:
        return np.concatenate([self.block(r) for r in robots])


@dataclass
class SubtaskAssignment:
    """A leaf constructor applied to the participant set ``participants``.

    ``constructor(params, robots, dim=...)`` must return (TaskMap, GDSLeaf);
    ``robots`` is the single id for unary subtasks and the sorted id tuple
    otherwise.
    """

    name: str
    participants: tuple
    constructor: Callable
    params: object

    def __post_init__(self):
        parts = tuple(sorted(int(p) for p in self.participants))
        if not parts:
            raise ConfigurationError(f"subtask {self.name!r} has no participants")
        if len(set(parts)) != len(parts):
            raise ConfigurationError(f"subtask {self.name!r} repeats a participant")
        self.participants = parts

    def build(self, dim: int):
        robots = self.participants[0] if len(self.participants) == 1 else self.participants
        return self.constructor(self.params, robots, dim=dim)


def _node_name(participants) -> str:
    return "robots{" + ",".join(str(p) for p in participants) + "}"


def _check(team: RobotTeamSpec, subtasks):
    names = set()
    for st in subtasks:
        for p in st.participants:
            team.index(p)
        if st.name in names:
            raise ConfigurationError(f"duplicate subtask name {st.name!r}")
        names.add(st.name)


def build_rmp_tree(team: RobotTeamSpec, subtasks, nested: bool = False) -> RMPTree:
    """Root on the joint chart, one node per distinct participant set, leaves below.

    With ``nested=True`` each participant-set node hangs under the smallest
    existing strict superset node (latest defined on ties) instead of the
    root, which reproduces the layered shape of a hand-built team tree.
    """
    _check(team, subtasks)
    tree = RMPTree(team.size * team.dim)
    tree.team = team
    sets = []
    for st in subtasks:
        if st.participants not in sets:
            sets.append(st.participants)
    order = sorted(range(len(sets)), key=lambda k: (-len(sets[k]), k))
    placed = {}
    for k in order:
        ps = sets[k]
        parent = tree.root
        if nested:
            supers = [q for q in placed if set(ps) < set(q)]
            if supers:
                parent_set = min(supers, key=lambda q: (len(q), -sets.index(q)))
                parent = placed[parent_set]
        if parent == tree.root:
            idx = team.blocks(ps)
        else:
            parent_set = tree.nodes[parent].meta["participants"]
            local = RobotTeamSpec(parent_set, team.dim)
            idx = local.blocks(ps)
        name = _node_name(ps)
        tree.add_node(name, parent, SelectionMap(tree.nodes[parent].dim, idx, name),
                      participants=ps)
        placed[ps] = name
    for st in subtasks:
        task_map, leaf = st.build(team.dim)
        tree.add_leaf(st.name, placed[st.participants], task_map, leaf, subtask=st)
    return tree


def build_flat_tree(team: RobotTeamSpec, subtasks) -> RMPTree:
    """Two-level tree: every leaf attached to the root by its composed map."""
    _check(team, subtasks)
    tree = RMPTree(team.size * team.dim)
    tree.team = team
    for st in subtasks:
        task_map, leaf = st.build(team.dim)
        sel = SelectionMap(tree.dim, team.blocks(st.participants))
        tree.add_leaf(st.name, tree.root, compose(task_map, sel, st.name), leaf, subtask=st)
    return tree


def _joint_state(tree: RMPTree, joint_state) -> State:
    if not isinstance(joint_state, State):
        joint_state = State(*joint_state)
    if joint_state.dim != tree.dim:
        raise ConfigurationError(f"joint state has dim {joint_state.dim}, team needs {tree.dim}")
    return joint_state


def compute_control(tree: RMPTree, joint_state) -> np.ndarray:
    """Run RMPflow on the team tree; returns accelerations shaped (N, dim)."""
    s = _joint_state(tree, joint_state)
    team = tree.team
    fast = plan_for_tree(tree)
    if fast is not None:
        a = fast.accel(s.x, s.xdot)
        if a is not None:
            return a.reshape(team.size, team.dim)
    plan = compiled(tree)
    rmp = plan.natural(s.x, s.xdot) if plan is not None else backward_pass(tree, forward_pass(tree, s))
    a = resolve(rmp).a
    return a.reshape(team.size, team.dim)


def root_quantities(tree: RMPTree, joint_state):
    """(G_root, Phi_root, grad Phi_root) at the given joint state."""
    s = _joint_state(tree, joint_state)
    states = forward_pass(tree, s)
    return (node_metric(tree, states), node_potential(tree, states),
            node_potential_grad(tree, states))
