"""RMP data model, RMP-algebra operators, RMP-tree container and GDS leaves.

Conventions
-----------
Metric partials are third-order arrays ``T`` with ``T[r, i, k]`` the
derivative of entry ``G[r, i]`` with respect to coordinate ``k`` (position
for ``metric_dx``, velocity for ``metric_dxdot``). Column ``i`` of ``G`` is
``g_i`` so ``T[:, i, :]`` is the Jacobian of ``g_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import math

import numpy as np

SYMMETRY_TOL = 1e-9
PSD_TOL = -1e-9
PINV_RCOND = 1e-8
FD_STEP = 1e-6


class ContractViolation(ValueError):
    """Inputs do not satisfy an operation's preconditions."""


class EvaluationError(RuntimeError):
    """A task map or leaf could not be evaluated at the given state.

    ``path`` lists node names from the root down to the failing node once
    the error has propagated through a tree.
    """

    def __init__(self, message: str, label: str = "", path: tuple = ()):
        super().__init__(message)
        self.message = message
        self.label = label
        self.path = tuple(path)

    def with_path(self, path):
        err = type(self)(self.message, self.label, path)
        err.__cause__ = self.__cause__
        return err

    def __str__(self):
        parts = [self.message]
        if self.label:
            parts.append(f"[{self.label}]")
        if self.path:
            parts.append("at " + "/".join(str(p) for p in self.path))
        return " ".join(parts)


class BarrierDomainError(EvaluationError):
    """Collision barrier evaluated at or inside the safety distance."""


class CoincidentRobotsError(EvaluationError):
    """Two robots occupy the same position where a map needs their direction."""


def _vec(a) -> np.ndarray:
    if type(a) is np.ndarray and a.ndim == 1 and a.dtype == np.float64:
        return a
    return np.atleast_1d(np.asarray(a, dtype=float))


def _all_finite(*arrays) -> bool:
    # a sum is NaN/inf iff some entry is (barring overflow near 1e308)
    return all(math.isfinite(float(np.sum(a))) for a in arrays)


@dataclass(frozen=True)
class State:
    """Coordinate/velocity pair on a chart."""

    x: np.ndarray
    xdot: np.ndarray

    def __post_init__(self):
        x = _vec(self.x)
        xdot = _vec(self.xdot)
        if x.ndim != 1 or x.shape != xdot.shape:
            raise ContractViolation(f"state shapes differ: {x.shape} vs {xdot.shape}")
        if not _all_finite(x, xdot):
            raise ContractViolation("state has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xdot", xdot)

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @classmethod
    def _trusted(cls, x, xdot):
        # internal fast path: arrays already produced by validated operations
        s = object.__new__(cls)
        object.__setattr__(s, "x", x)
        object.__setattr__(s, "xdot", xdot)
        return s


def check_inertia(M: np.ndarray, what: str = "M") -> None:
    """Raise ContractViolation unless M is symmetric PSD within tolerance."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation(f"{what} must be square, got {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL:
        raise ContractViolation(f"{what} is not symmetric")
    if M.size and np.linalg.eigvalsh(0.5 * (M + M.T)).min() < PSD_TOL:
        raise ContractViolation(f"{what} is not positive semidefinite")


@dataclass
class NaturalRMP:
    """Force/inertia pair [f, M]."""

    f: np.ndarray
    M: np.ndarray

    def validate(self) -> "NaturalRMP":
        if self.f.shape != (self.M.shape[0],):
            raise ContractViolation(f"f {self.f.shape} does not match M {self.M.shape}")
        check_inertia(self.M)
        return self


@dataclass
class CanonicalRMP:
    """Acceleration/inertia pair (a, M)."""

    a: np.ndarray
    M: np.ndarray

    def validate(self) -> "CanonicalRMP":
        if self.a.shape != (self.M.shape[0],):
            raise ContractViolation(f"a {self.a.shape} does not match M {self.M.shape}")
        check_inertia(self.M)
        return self


# ---------------------------------------------------------------------------
# task maps


class TaskMap:
    """Smooth map psi: R^n -> R^m with Jacobian and curvature evaluators.

    ``jac_rate_times_vel(x, xdot)`` returns ``Jdot(x, xdot) @ xdot``, the
    second directional derivative of psi along xdot.
    """

    def __init__(self, dim_in: int, dim_out: int, value: Callable, jacobian: Callable,
                 jac_rate_times_vel: Callable, name: str = ""):
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self._value = value
        self._jacobian = jacobian
        self._jdot = jac_rate_times_vel
        self.name = name

    def value(self, x):
        return _vec(self._value(x))

    def jacobian(self, x):
        return np.asarray(self._jacobian(x), dtype=float).reshape(self.dim_out, self.dim_in)

    def jac_rate_times_vel(self, x, xdot):
        return _vec(self._jdot(x, xdot))

    def evaluate(self, x, xdot):
        """(psi(x), J(x), Jdot(x, xdot) xdot) in one call."""
        return self.value(x), self.jacobian(x), self.jac_rate_times_vel(x, xdot)

    def jac_rate_apply(self, x, xdot, v):
        """Return ``Jdot(x, xdot) @ v``.

        The second derivative of psi is a symmetric bilinear form, so the
        mixed term follows from two evaluations of the quadratic one.
        """
        return 0.25 * (self.jac_rate_times_vel(x, xdot + v) - self.jac_rate_times_vel(x, xdot - v))

    def __repr__(self):
        return f"{type(self).__name__}({self.name or ''} {self.dim_in}->{self.dim_out})"


class SelectionMap(TaskMap):
    """Coordinate selection y = x[indices]; J is a constant 0/1 matrix."""

    def __init__(self, dim_in: int, indices, name: str = ""):
        self.indices = np.asarray(indices, dtype=int)
        J = np.zeros((len(self.indices), dim_in))
        J[np.arange(len(self.indices)), self.indices] = 1.0
        self._J = J
        self._ix = np.ix_(self.indices, self.indices)
        zero = np.zeros(len(self.indices))
        super().__init__(dim_in, len(self.indices), lambda x: x[self.indices],
                         lambda x: J, lambda x, xd: zero, name)

    def value(self, x):
        return x[self.indices]

    def jacobian(self, x):
        return self._J

    def jac_rate_times_vel(self, x, xdot):
        return np.zeros(self.dim_out)

    def jac_rate_apply(self, x, xdot, v):
        return np.zeros(self.dim_out)


class AffineMap(TaskMap):
    """y = A x + b with constant A. ``offset`` may be reassigned (moving goals)."""

    def __init__(self, A, offset=None, name: str = ""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        self.offset = np.zeros(A.shape[0]) if offset is None else _vec(offset).copy()
        super().__init__(A.shape[1], A.shape[0], None, None, None, name)

    def value(self, x):
        return self.A @ x + self.offset

    def jacobian(self, x):
        return self.A

    def jac_rate_times_vel(self, x, xdot):
        return np.zeros(self.dim_out)

    def jac_rate_apply(self, x, xdot, v):
        return np.zeros(self.dim_out)


class IdentityMap(AffineMap):
    def __init__(self, dim: int, name: str = "identity"):
        super().__init__(np.eye(dim), name=name)

    def value(self, x):
        return x


def identity_map(dim: int, name: str = "identity") -> AffineMap:
    return IdentityMap(dim, name=name)


def compose(outer: TaskMap, inner: TaskMap, name: str = "") -> TaskMap:
    """Return outer o inner, with J and Jdot xdot from the chain rule."""
    if outer.dim_in != inner.dim_out:
        raise ContractViolation(f"cannot compose {outer} after {inner}")

    def value(x):
        return outer.value(inner.value(x))

    def jacobian(x):
        return outer.jacobian(inner.value(x)) @ inner.jacobian(x)

    def jdot(x, xd):
        y = inner.value(x)
        yd = inner.jacobian(x) @ xd
        return outer.jac_rate_times_vel(y, yd) + outer.jacobian(y) @ inner.jac_rate_times_vel(x, xd)

    return TaskMap(inner.dim_in, outer.dim_out, value, jacobian, jdot,
                   name or f"{outer.name}o{inner.name}")


# ---------------------------------------------------------------------------
# GDS leaves


def zero_partials(x, xdot):
    """Sentinel partials for metrics constant in the corresponding argument."""
    m = len(x)
    return np.zeros((m, m, m))


@dataclass
class GDSLeaf:
    """Geometric dynamical system (G, B, Phi) defining a leaf policy.

    ``metric_dx`` / ``metric_dxdot`` return the partial tensors described in
    the module docstring. Passing ``None`` selects central finite differences
    of ``metric``; passing :func:`zero_partials` marks the metric as constant
    in that argument.
    """

    dim: int
    metric: Callable[[np.ndarray, np.ndarray], np.ndarray]
    damping: Callable[[np.ndarray, np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], float]
    potential_grad: Callable[[np.ndarray], np.ndarray]
    metric_dx: Optional[Callable] = None
    metric_dxdot: Optional[Callable] = None
    label: str = ""
    info: dict = field(default_factory=dict)


def _fd_metric_partials(metric, x, xdot, wrt_velocity: bool, h: float = FD_STEP):
    m = len(x)
    T = np.empty((m, m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = h
        if wrt_velocity:
            T[:, :, k] = (metric(x, xdot + e) - metric(x, xdot - e)) / (2 * h)
        else:
            T[:, :, k] = (metric(x + e, xdot) - metric(x - e, xdot)) / (2 * h)
    return T


def metric_partials_dx(leaf: GDSLeaf, x, xdot):
    if leaf.metric_dx is zero_partials:
        return None
    if leaf.metric_dx is None:
        return _fd_metric_partials(leaf.metric, x, xdot, wrt_velocity=False)
    return leaf.metric_dx(x, xdot)


def metric_partials_dxdot(leaf: GDSLeaf, x, xdot):
    if leaf.metric_dxdot is zero_partials:
        return None
    if leaf.metric_dxdot is None:
        return _fd_metric_partials(leaf.metric, x, xdot, wrt_velocity=True)
    return leaf.metric_dxdot(x, xdot)


def _check_leaf_state(leaf: GDSLeaf, s: State):
    if s.dim != leaf.dim:
        raise ContractViolation(f"state dim {s.dim} does not match leaf dim {leaf.dim}")


def curvature_Xi(leaf: GDSLeaf, s: State) -> np.ndarray:
    """Xi_G = 1/2 sum_i xdot_i d_xdot g_i."""
    _check_leaf_state(leaf, s)
    T = metric_partials_dxdot(leaf, s.x, s.xdot)
    if T is None:
        return np.zeros((leaf.dim, leaf.dim))
    return 0.5 * np.einsum("rik,i->rk", T, s.xdot)


def metric_rate(T, rate) -> np.ndarray:
    """Column-wise assembly [d_x g_i rate]_i of the position partials."""
    return np.einsum("rik,k->ri", T, rate)


def curvature_xi(leaf: GDSLeaf, s: State) -> np.ndarray:
    """xi_G = Gdot_x xdot - 1/2 grad_x (xdot^T G xdot)."""
    _check_leaf_state(leaf, s)
    T = metric_partials_dx(leaf, s.x, s.xdot)
    if T is None:
        return np.zeros(leaf.dim)
    v = s.xdot
    return metric_rate(T, v) @ v - 0.5 * np.einsum("r,rik,i->k", v, T, v)


def _finite_or_raise(leaf: GDSLeaf, **arrays):
    for name, arr in arrays.items():
        if not _all_finite(arr):
            raise EvaluationError(f"non-finite {name} in leaf evaluation", leaf.label)


def _leaf_force_inertia(leaf: GDSLeaf, s: State):
    x, xd = s.x, s.xdot
    G = np.asarray(leaf.metric(x, xd), dtype=float)
    B = np.asarray(leaf.damping(x, xd), dtype=float)
    grad = _vec(leaf.potential_grad(x))
    M = G if leaf.metric_dxdot is zero_partials else G + curvature_Xi(leaf, s)
    f = -grad - B @ xd
    if leaf.metric_dx is not zero_partials:
        f = f - curvature_xi(leaf, s)
    return f, M


def evaluate_gds_leaf(leaf: GDSLeaf, s: State) -> NaturalRMP:
    """Natural-form RMP of a GDS: M = G + Xi_G, f = -grad Phi - B xdot - xi_G."""
    _check_leaf_state(leaf, s)
    f, M = _leaf_force_inertia(leaf, s)
    _finite_or_raise(leaf, metric=M, force=f)
    return NaturalRMP(f, M)


# ---------------------------------------------------------------------------
# RMP-algebra


def pushforward(parent_state: State, task_map: TaskMap) -> State:
    """(psi(x), J(x) xdot)."""
    if parent_state.dim != task_map.dim_in:
        raise ContractViolation(
            f"state dim {parent_state.dim} does not match map input {task_map.dim_in}")
    x = parent_state.x
    if isinstance(task_map, SelectionMap):
        idx = task_map.indices
        return State._trusted(x[idx], parent_state.xdot[idx])
    if isinstance(task_map, AffineMap):
        xd = parent_state.xdot if isinstance(task_map, IdentityMap) else task_map.A @ parent_state.xdot
        return State._trusted(task_map.value(x), xd)
    return State(task_map.value(x), task_map.jacobian(x) @ parent_state.xdot)


def pullback(children, parent_state: State) -> NaturalRMP:
    """f = sum J^T (f_v - M_v Jdot xdot), M = sum J^T M_v J."""
    n = parent_state.dim
    f = np.zeros(n)
    M = np.zeros((n, n))
    x, xd = parent_state.x, parent_state.xdot
    for rmp, task_map in children:
        if task_map.dim_in != n:
            raise ContractViolation(f"{task_map} input does not match parent dim {n}")
        if rmp.f.shape != (task_map.dim_out,) or rmp.M.shape != (task_map.dim_out,) * 2:
            raise ContractViolation(f"child RMP does not match {task_map} output")
        if isinstance(task_map, SelectionMap):
            idx = task_map.indices
            f[idx] += rmp.f
            M[task_map._ix] += rmp.M
            continue
        if isinstance(task_map, IdentityMap):
            f += rmp.f
            M += rmp.M
            continue
        J = task_map.jacobian(x)
        f += J.T @ (rmp.f - rmp.M @ task_map.jac_rate_times_vel(x, xd))
        M += J.T @ rmp.M @ J
    return NaturalRMP(f, M)


def resolve(rmp: NaturalRMP) -> CanonicalRMP:
    """a = M^+ f with singular values below 1e-8 of the largest dropped."""
    if not _all_finite(rmp.f, rmp.M):
        raise ContractViolation("cannot resolve a non-finite RMP")
    if rmp.M.size == 0:
        return CanonicalRMP(np.zeros(0), rmp.M)
    a = np.linalg.pinv(rmp.M, rcond=PINV_RCOND, hermitian=False) @ rmp.f
    return CanonicalRMP(a, rmp.M)


# ---------------------------------------------------------------------------
# RMP-tree


@dataclass
class _Node:
    name: str
    dim: int
    parent: Optional[str] = None
    task_map: Optional[TaskMap] = None
    leaf: Optional[GDSLeaf] = None
    children: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


class RMPTree:
    """Directed tree of chart nodes; edges carry task maps, leaves carry GDSs.

    Nodes are added parent-first, so the structure is a tree by construction.
    """

    def __init__(self, root_dim: int, root: str = "root"):
        self.root = root
        self.nodes = {root: _Node(root, int(root_dim))}

    def _attach(self, name, parent, task_map, leaf=None, meta=None):
        if name in self.nodes:
            raise ContractViolation(f"duplicate node {name!r}")
        if parent not in self.nodes:
            raise ContractViolation(f"unknown parent {parent!r}")
        pnode = self.nodes[parent]
        if pnode.leaf is not None:
            raise ContractViolation(f"leaf {parent!r} cannot have children")
        if task_map.dim_in != pnode.dim:
            raise ContractViolation(
                f"edge {parent}->{name}: map input {task_map.dim_in} != parent dim {pnode.dim}")
        if leaf is not None and leaf.dim != task_map.dim_out:
            raise ContractViolation(f"leaf {name!r} dim {leaf.dim} != map output {task_map.dim_out}")
        self.nodes[name] = _Node(name, task_map.dim_out, parent, task_map, leaf, meta=meta or {})
        pnode.children.append(name)
        return name

    def add_node(self, name: str, parent: str, task_map: TaskMap, **meta) -> str:
        return self._attach(name, parent, task_map, meta=meta)

    def add_leaf(self, name: str, parent: str, task_map: TaskMap, leaf: GDSLeaf, **meta) -> str:
        return self._attach(name, parent, task_map, leaf, meta=meta)

    @property
    def dim(self) -> int:
        return self.nodes[self.root].dim

    def leaves(self):
        return [n for n in self.nodes.values() if n.leaf is not None]

    def path(self, name: str) -> tuple:
        out = []
        while name is not None:
            out.append(name)
            name = self.nodes[name].parent
        return tuple(reversed(out))

    def edge_map(self, name: str) -> TaskMap:
        return self.nodes[name].task_map


def forward_pass(tree: RMPTree, root_state: State) -> dict:
    """Push the root state to every node; returns {node name: State}."""
    if root_state.dim != tree.dim:
        raise ContractViolation(f"root state dim {root_state.dim} != tree dim {tree.dim}")
    states = {tree.root: root_state}
    stack = [tree.root]
    while stack:
        name = stack.pop()
        s = states[name]
        for child in tree.nodes[name].children:
            try:
                states[child] = pushforward(s, tree.nodes[child].task_map)
            except EvaluationError as err:
                raise err.with_path(tree.path(child)) from err
            stack.append(child)
    return states


def _backward(tree: RMPTree, states: dict, name: str, leaf_eval) -> NaturalRMP:
    node = tree.nodes[name]
    if node.leaf is not None:
        try:
            return leaf_eval(node.leaf, states[name])
        except EvaluationError as err:
            raise err.with_path(tree.path(name)) from err
    children = [(_backward(tree, states, c, leaf_eval), tree.nodes[c].task_map)
                for c in node.children]
    return pullback(children, states[name])


def backward_pass(tree: RMPTree, states: dict, leaf_eval=evaluate_gds_leaf) -> NaturalRMP:
    """Evaluate leaves and pull their RMPs back to the root."""
    return _backward(tree, states, tree.root, leaf_eval)


def rmpflow_policy(tree: RMPTree, root_state: State) -> CanonicalRMP:
    """Forward pass, leaf evaluation, backward pass, resolve at the root."""
    states = forward_pass(tree, root_state)
    return resolve(backward_pass(tree, states))


def node_metric(tree: RMPTree, states: dict, name: Optional[str] = None,
                which: str = "metric") -> np.ndarray:
    """Metric (or damping) of a node, pulled back from its leaves."""
    name = tree.root if name is None else name
    node = tree.nodes[name]
    s = states[name]
    if node.leaf is not None:
        return np.asarray(getattr(node.leaf, which)(s.x, s.xdot), dtype=float)
    G = np.zeros((node.dim, node.dim))
    for c in node.children:
        J = tree.nodes[c].task_map.jacobian(s.x)
        G += J.T @ node_metric(tree, states, c, which) @ J
    return G


def node_potential(tree: RMPTree, states: dict) -> float:
    """Root potential: the sum of leaf potentials at their pushed-forward states."""
    total = 0.0
    for leaf_node in tree.leaves():
        try:
            total += float(leaf_node.leaf.potential(states[leaf_node.name].x))
        except EvaluationError as err:
            raise err.with_path(tree.path(leaf_node.name)) from err
    return total


def node_potential_grad(tree: RMPTree, states: dict, name: Optional[str] = None) -> np.ndarray:
    """Gradient of the root potential with respect to the node coordinates."""
    name = tree.root if name is None else name
    node = tree.nodes[name]
    s = states[name]
    if node.leaf is not None:
        return _vec(node.leaf.potential_grad(s.x))
    g = np.zeros(node.dim)
    for c in node.children:
        g += tree.nodes[c].task_map.jacobian(s.x).T @ node_potential_grad(tree, states, c)
    return g


# ---------------------------------------------------------------------------
# flattened evaluation


@dataclass
class _FlatLeaf:
    name: str
    root_idx: Optional[np.ndarray]  # None: the leaf map acts on the whole root chart
    ix: tuple
    task_map: TaskMap
    leaf: GDSLeaf


class CompiledTree:
    """Evaluation plan for trees whose inner edges are all coordinate selections.

    Each leaf is evaluated on its slice of the root coordinates and its pulled
    back RMP is scattered straight into the root, skipping the intermediate
    nodes. Selections have zero Jdot and 0/1 Jacobians, so this is the same
    sum as the node-by-node backward pass, only reordered.
    """

    def __init__(self, tree: "RMPTree"):
        self.tree = tree
        self.n_nodes = len(tree.nodes)
        self.items = []
        for node in tree.leaves():
            idx = np.arange(tree.dim)
            for name in tree.path(node.name)[1:-1]:
                tm = tree.nodes[name].task_map
                if not isinstance(tm, SelectionMap):
                    raise ContractViolation(f"edge into {name!r} is not a selection")
                idx = idx[tm.indices]
            full = len(idx) == tree.dim and bool((idx == np.arange(tree.dim)).all())
            root_idx = None if full else idx
            ix = np.ix_(idx, idx) if root_idx is not None else ()
            self.items.append(_FlatLeaf(node.name, root_idx, ix, node.task_map, node.leaf))

    @staticmethod
    def supports(tree: "RMPTree") -> bool:
        return all(isinstance(n.task_map, SelectionMap)
                   for n in tree.nodes.values() if n.task_map is not None and n.leaf is None)

    def _leaf_states(self, q, qd):
        for it in self.items:
            xs = q if it.root_idx is None else q[it.root_idx]
            vs = qd if it.root_idx is None else qd[it.root_idx]
            yield it, xs, vs

    def natural(self, q, qd) -> NaturalRMP:
        n = self.tree.dim
        f = np.zeros(n)
        M = np.zeros((n, n))
        for it, xs, vs in self._leaf_states(q, qd):
            tm = it.task_map
            try:
                if isinstance(tm, IdentityMap):
                    lf, lM = _leaf_force_inertia(it.leaf, State._trusted(xs, vs))
                elif isinstance(tm, AffineMap):
                    lf, lM = _leaf_force_inertia(it.leaf, State._trusted(tm.value(xs), tm.A @ vs))
                    lf = tm.A.T @ lf
                    lM = tm.A.T @ lM @ tm.A
                else:
                    z, J, jdot = tm.evaluate(xs, vs)
                    lf, lM = _leaf_force_inertia(it.leaf, State._trusted(z, J @ vs))
                    lf = J.T @ (lf - lM @ jdot)
                    lM = J.T @ lM @ J
            except EvaluationError as err:
                raise err.with_path(self.tree.path(it.name)) from err
            if it.root_idx is None:
                f += lf
                M += lM
            else:
                f[it.root_idx] += lf
                M[it.ix] += lM
        if not _all_finite(f, M):
            # rerun the checked passes so the error names the offending leaf
            backward_pass(self.tree, forward_pass(self.tree, State(q, qd)))
            raise EvaluationError("non-finite root RMP", self.tree.root)
        return NaturalRMP(f, M)

    def energy(self, q, qd):
        """(sum of leaf kinetic terms zdot^T G zdot / 2, sum of leaf potentials)."""
        kin = 0.0
        pot = 0.0
        for it, xs, vs in self._leaf_states(q, qd):
            try:
                z = it.task_map.value(xs)
                zd = it.task_map.jacobian(xs) @ vs
                kin += 0.5 * float(zd @ np.asarray(it.leaf.metric(z, zd), dtype=float) @ zd)
                pot += float(it.leaf.potential(z))
            except EvaluationError as err:
                raise err.with_path(self.tree.path(it.name)) from err
        return kin, pot

    def potential_grad(self, q) -> np.ndarray:
        g = np.zeros(self.tree.dim)
        for it, xs, _ in self._leaf_states(q, q):
            z = it.task_map.value(xs)
            gl = it.task_map.jacobian(xs).T @ _vec(it.leaf.potential_grad(z))
            if it.root_idx is None:
                g += gl
            else:
                g[it.root_idx] += gl
        return g


def compiled(tree: "RMPTree") -> Optional[CompiledTree]:
    """Cached flat plan for ``tree``, or None when some inner edge is not a selection."""
    cached = getattr(tree, "_compiled", None)
    if cached is not None and cached[0] == len(tree.nodes):
        return cached[1]
    plan = CompiledTree(tree) if CompiledTree.supports(tree) else None
    tree._compiled = (len(tree.nodes), plan)
    return plan
