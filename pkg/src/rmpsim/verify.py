"""Reference implementations that the RMP machinery is checked against.

Nothing here goes through the RMP tree: the controllers are written straight
from their closed forms, and the curvature terms are rebuilt from finite
differences of the bare metric function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FD_STEP, ContractViolation, CoincidentRobotsError, GDSLeaf, State

NORMALIZATIONS = ("original", "degree-normalized")


@dataclass(frozen=True)
class PotentialGraph:
    """Interaction graph of a potential-field formation controller.

    ``edges`` are undirected pairs listed once; ``potential`` names E_ij:
    ``quadratic`` (s - d)^2 or ``quartic`` (s^2 - d^2)^2.
    """

    ids: tuple
    edges: tuple
    d: dict  # (i, j) -> desired distance
    eta: float
    potential: str = "quadratic"
    normalization: str = "degree-normalized"
    dim: int = 2
    degrees: dict = field(init=False)

    def __post_init__(self):
        ids = tuple(sorted(self.ids))
        edges = tuple(tuple(sorted(e)) for e in self.edges)
        if len(set(edges)) != len(edges):
            raise ContractViolation("duplicate edge")
        for i, j in edges:
            if i == j or i not in ids or j not in ids:
                raise ContractViolation(f"bad edge ({i}, {j})")
        if not self.eta > 0:
            raise ContractViolation("eta must be positive")
        if self.normalization not in NORMALIZATIONS:
            raise ContractViolation(f"normalization must be one of {NORMALIZATIONS}")
        if self.potential not in ("quadratic", "quartic"):
            raise ContractViolation(f"unknown potential {self.potential!r}")
        d = {tuple(sorted(k)): float(v) for k, v in self.d.items()}
        missing = [e for e in edges if e not in d]
        if missing:
            raise ContractViolation(f"no desired distance for edges {missing}")
        deg = {i: sum(i in e for e in edges) for i in ids}
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "degrees", deg)

    def with_normalization(self, normalization: str) -> "PotentialGraph":
        return PotentialGraph(self.ids, self.edges, self.d, self.eta, self.potential,
                              normalization, self.dim)


def _positions(graph, q):
    q = np.asarray(q, dtype=float).reshape(len(graph.ids), graph.dim)
    return {i: q[k] for k, i in enumerate(graph.ids)}


def _edge_dE(graph, s, d):
    """dE_ij/ds."""
    if graph.potential == "quadratic":
        return 2.0 * (s - d)
    return 4.0 * s * (s * s - d * d)


def total_potential(graph: PotentialGraph, q) -> float:
    """E = 1/2 sum over edges of E_ij."""
    x = _positions(graph, q)
    total = 0.0
    for i, j in graph.edges:
        s = float(np.linalg.norm(x[i] - x[j]))
        d = graph.d[(i, j)]
        total += (s - d) ** 2 if graph.potential == "quadratic" else (s * s - d * d) ** 2
    return 0.5 * total


def potential_gradient(graph: PotentialGraph, q) -> np.ndarray:
    """grad E on the joint coordinates, shaped (N, dim)."""
    x = _positions(graph, q)
    g = {i: np.zeros(graph.dim) for i in graph.ids}
    for i, j in graph.edges:
        diff = x[i] - x[j]
        s = float(np.linalg.norm(diff))
        if s == 0.0:
            raise CoincidentRobotsError(f"robots {i} and {j} coincide", f"edge({i},{j})")
        # the 1/2 in E cancels against each edge being listed once
        gi = 0.5 * _edge_dE(graph, s, graph.d[(i, j)]) * diff / s
        g[i] += gi
        g[j] -= gi
    return np.array([g[i] for i in graph.ids])


def potential_controller(graph: PotentialGraph, q, qdot) -> np.ndarray:
    """u = -grad E - eta qdot, or u = -Gamma (grad E + eta qdot) with Gamma_ii = 1/D_i."""
    qd = np.asarray(qdot, dtype=float).reshape(len(graph.ids), graph.dim)
    u = -(potential_gradient(graph, q) + graph.eta * qd)
    if graph.normalization == "degree-normalized":
        for k, i in enumerate(graph.ids):
            if graph.degrees[i] == 0:
                raise ContractViolation(f"robot {i} has no edges; degree normalization undefined")
            u[k] /= graph.degrees[i]
    return u


def edge_sum_controller(graph: PotentialGraph, q, qdot, printed_sign: bool = False):
    """Degree-normalized quadratic formation controller, one edge sum per robot.

    u_i = -(1/D_i) sum_j ((s_ij - d_ij)/s_ij (x_i - x_j) + eta xdot_i)

    With ``printed_sign=True`` the damping enters with the opposite sign, which
    pumps energy in rather than removing it.
    """
    x = _positions(graph, q)
    qd = np.asarray(qdot, dtype=float).reshape(len(graph.ids), graph.dim)
    v = {i: qd[k] for k, i in enumerate(graph.ids)}
    sign = -1.0 if printed_sign else 1.0
    u = np.zeros((len(graph.ids), graph.dim))
    for k, i in enumerate(graph.ids):
        acc = np.zeros(graph.dim)
        for a, b in graph.edges:
            if i not in (a, b):
                continue
            j = b if i == a else a
            diff = x[i] - x[j]
            s = float(np.linalg.norm(diff))
            if s == 0.0:
                raise CoincidentRobotsError(f"robots {i} and {j} coincide", f"edge({a},{b})")
            acc += (s - graph.d[(a, b)]) / s * diff + sign * graph.eta * v[i]
        u[k] = -acc / graph.degrees[i] if graph.degrees[i] else 0.0
    return u


def rmpb_formation_dynamics(graph: PotentialGraph, q, qdot, c: float = 1.0, alpha: float = 1.0):
    """xddot_i = -(alpha / (c D_i)) sum_j grad_i Phi_ij - (eta / c) xdot_i, Phi_ij = E_ij / 2."""
    x = _positions(graph, q)
    qd = np.asarray(qdot, dtype=float).reshape(len(graph.ids), graph.dim)
    u = np.zeros((len(graph.ids), graph.dim))
    for k, i in enumerate(graph.ids):
        acc = np.zeros(graph.dim)
        for a, b in graph.edges:
            if i not in (a, b):
                continue
            j = b if i == a else a
            diff = x[i] - x[j]
            s = float(np.linalg.norm(diff))
            acc += 0.5 * _edge_dE(graph, s, graph.d[(a, b)]) * diff / s
        D = graph.degrees[i]
        u[k] = (-alpha / (c * D)) * acc - (graph.eta / c) * qd[k] if D else 0.0
    return u


# ---------------------------------------------------------------------------
# finite differences


def _rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.abs(b).max(initial=0.0)), float(np.abs(a).max(initial=0.0)))
    diff = float(np.abs(a - b).max(initial=0.0))
    return diff / scale if scale > 0 else diff


def fd_derivative(function, point, h: float = FD_STEP) -> np.ndarray:
    """Central-difference derivative; output shape = function shape + (n,)."""
    x = np.asarray(point, dtype=float)
    cols = []
    for k in range(x.shape[0]):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(function(x + e), dtype=float)
                     - np.asarray(function(x - e), dtype=float)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def fd_check(function, point, order: int = 1, derivative=None, h: float = FD_STEP) -> float:
    """Max relative error between ``derivative`` and central differences of ``function``.

    ``order=1`` compares ``derivative(x)`` with the first difference of
    ``function``; ``order=2`` compares it with the second difference (a
    Hessian for scalar functions).
    """
    if derivative is None:
        raise ContractViolation("fd_check needs the derivative to compare against")
    x = np.asarray(point, dtype=float)
    if order == 1:
        fd = fd_derivative(function, x, h)
    elif order == 2:
        hh = math.sqrt(h) * 10.0  # nested differences need a wider step
        fd = fd_derivative(lambda y: fd_derivative(function, y, hh), x, hh)
    else:
        raise ContractViolation(f"order must be 1 or 2, got {order}")
    return _rel_err(derivative(x), fd)


def fd_curvature(metric, x, xdot, h: float = FD_STEP):
    """Xi and xi rebuilt from the bare metric function by central differences.

    Xi = 1/2 sum_i xdot_i d_xdot g_i, xi = Gdot_x xdot - 1/2 grad_x (xdot^T G xdot),
    where Gdot_x is the derivative of G along xdot in position.
    """
    x = np.asarray(x, dtype=float)
    xd = np.asarray(xdot, dtype=float)
    m = x.shape[0]
    Xi = np.zeros((m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = h
        dG = (np.asarray(metric(x, xd + e)) - np.asarray(metric(x, xd - e))) / (2 * h)
        # dG[:, i] = d g_i / d xdot_k; Xi[:, k] collects sum_i xdot_i dG[:, i]
        Xi[:, k] = 0.5 * dG @ xd
    Gdot = (np.asarray(metric(x + h * xd, xd)) - np.asarray(metric(x - h * xd, xd))) / (2 * h)
    grad = fd_derivative(lambda y: float(xd @ np.asarray(metric(y, xd)) @ xd), x, h)
    return Xi, Gdot @ xd - 0.5 * grad


def random_metric_leaf(rng: np.random.Generator, dim: int = 2, delta: float = 0.5) -> GDSLeaf:
    """A smooth velocity-dependent metric G = L L^T + delta I with analytic partials.

    L(x, xdot) = L0 + sum_k sin(x_k) A_k + sum_k tanh(xdot_k) C_k.
    """
    L0 = rng.normal(size=(dim, dim))
    A = rng.normal(size=(dim, dim, dim)) * 0.7
    C = rng.normal(size=(dim, dim, dim)) * 0.7

    def L(x, xd):
        return L0 + np.einsum("k,kij->ij", np.sin(x), A) + np.einsum("k,kij->ij", np.tanh(xd), C)

    def metric(x, xd):
        Lx = L(x, xd)
        return Lx @ Lx.T + delta * np.eye(dim)

    def _partials(x, xd, dL):
        Lx = L(x, xd)
        T = np.empty((dim, dim, dim))
        for k in range(dim):
            T[:, :, k] = dL[k] @ Lx.T + Lx @ dL[k].T
        return T

    def metric_dx(x, xd):
        return _partials(x, xd, np.cos(x)[:, None, None] * A)

    def metric_dxdot(x, xd):
        return _partials(x, xd, (1.0 - np.tanh(xd) ** 2)[:, None, None] * C)

    return GDSLeaf(dim, metric, lambda x, xd: np.zeros((dim, dim)), lambda x: 0.0,
                   lambda x: np.zeros(dim), metric_dx, metric_dxdot, label="random_metric")


# ---------------------------------------------------------------------------
# trajectories


def compare_trajectories(log_a, log_b) -> float:
    """Max over samples and robots of the Euclidean position deviation (m)."""
    ta, tb = np.asarray(log_a.t), np.asarray(log_b.t)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise ContractViolation("trajectories are not on the same sampling grid")
    qa, qb = np.asarray(log_a.q), np.asarray(log_b.q)
    if qa.shape != qb.shape:
        raise ContractViolation(f"trajectory shapes differ: {qa.shape} vs {qb.shape}")
    if qa.size == 0:
        return 0.0
    return float(np.sqrt(((qa - qb) ** 2).sum(-1)).max())


@dataclass
class PlainLog:
    """Minimal log (times and positions) for controllers outside the RMP tree."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray


def rollout(controller, q0, qd0, dt: float, n_steps: int, shape) -> PlainLog:
    """RK4 rollout of qddot = controller(q, qdot) on flat joint arrays."""
    from .sim import step  # local import keeps this module free of sim at import time

    s = State(np.asarray(q0, dtype=float).ravel(), np.asarray(qd0, dtype=float).ravel())
    pol = lambda q, v: np.asarray(controller(q, v), dtype=float).ravel()
    ts, qs, vs = [0.0], [s.x.reshape(shape)], [s.xdot.reshape(shape)]
    for k in range(n_steps):
        s = step(pol, s, dt, "rk4")
        ts.append((k + 1) * dt)
        qs.append(s.x.reshape(shape))
        vs.append(s.xdot.reshape(shape))
    return PlainLog(np.asarray(ts), np.asarray(qs), np.asarray(vs))
