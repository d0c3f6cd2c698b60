"""Vectorized evaluation of the shipped leaf families over a whole team.

The per-leaf machinery in ``core`` and ``decentralized`` defines the policies;
this module evaluates the same formulas for all leaves of one family at once,
which is what makes long rollouts affordable. Teams containing any other leaf
type fall back to the per-leaf path. The test suite holds the two together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BarrierDomainError, CoincidentRobotsError, PINV_RCOND, ContractViolation
from .leaves import (make_collision_avoidance, make_damper, make_distance_preservation_a,
                     make_distance_preservation_b, make_goal_attractor_a, make_goal_attractor_b)

_FAMILIES = {
    make_collision_avoidance: "collision",
    make_distance_preservation_a: "dist_a",
    make_distance_preservation_b: "product",
    make_goal_attractor_a: "attr_a",
    make_goal_attractor_b: "attr_b",
    make_damper: "damper",
}


@dataclass
class LeafRef:
    """What the batch plan needs to know about one subtask leaf."""

    name: str
    assignment: object  # SubtaskAssignment
    task_map: object
    leaf: object
    path: tuple


class _Group:
    def __init__(self, refs, index):
        self.refs = refs
        self.names = [r.name for r in refs]
        self.paths = [r.path for r in refs]
        parts = [r.assignment.participants for r in refs]
        self.a = np.array([index[p[0]] for p in parts], dtype=int)
        if len(parts[0]) == 2:
            self.b = np.array([index[p[1]] for p in parts], dtype=int)

    def param(self, name):
        return np.array([getattr(r.assignment.params, name) for r in self.refs], dtype=float)

    def fail(self, exc_type, k, message):
        raise exc_type(message, self.refs[k].leaf.label, self.paths[k])


def _pair_geometry(group, q, v, scale):
    d = q[group.a] - q[group.b]
    r = np.sqrt((d * d).sum(1))
    if not r.all():
        k = int(np.flatnonzero(r == 0)[0])
        group.fail(CoincidentRobotsError, k, "distance map undefined for coincident robots")
    u = d / r[:, None]
    dd = v[group.a] - v[group.b]
    rad = (u * dd).sum(1)
    # udot: rate of the unit direction under the full relative motion
    udot = (dd - u * rad[:, None]) / r[:, None]
    return d, r, u, dd, rad, udot


class PairDistanceGroup(_Group):
    """1-D leaves on z = |x_i - x_j| / s - o: collision avoidance and RMPa."""

    def __init__(self, refs, index, family):
        super().__init__(refs, index)
        self.family = family
        if family == "collision":
            self.s = self.param("d_S")
            self.o = np.ones(len(refs))
            self.alpha, self.eps, self.eta = self.param("alpha"), self.param("epsilon"), self.param("eta")
        else:
            self.s = np.ones(len(refs))
            self.o = self.param("d_ij")
            self.alpha, self.c, self.eta = self.param("alpha"), self.param("c"), self.param("eta")

    def _z(self, r):
        z = r / self.s - self.o
        if self.family == "collision" and not (z > 0).all():
            k = int(np.flatnonzero(~(z > 0))[0])
            i, j = self.refs[k].assignment.participants
            self.fail(BarrierDomainError, k,
                      f"robots {i} and {j} at or inside safety distance (z={z[k]:.3g})")
        return z

    def scalar(self, z, zd, rate):
        """(f, M, G) of the 1-D leaf at (z, zd); ``rate`` drives the position curvature."""
        if self.family == "collision":
            w = z ** -4
            dw = -4.0 * z ** -5
            neg = np.minimum(zd, 0.0)
            gate = self.eps + neg * zd
            G = w * gate
            M = G + 0.5 * zd * w * 2.0 * neg
            f = -self.alpha * w * dw - self.eta * G * zd - 0.5 * dw * gate * rate * zd
            return f, M, G
        G = self.c
        return -self.alpha * z - self.eta * zd, G, G

    def potential(self, z):
        if self.family == "collision":
            return 0.5 * self.alpha * z ** -8
        return 0.5 * self.alpha * z * z

    def potential_deriv(self, z):
        if self.family == "collision":
            return -4.0 * self.alpha * z ** -9
        return self.alpha * z

    # -- centralized ----------------------------------------------------

    def accumulate(self, q, v, F, M4):
        d, r, u, dd, rad, udot = _pair_geometry(self, q, v, self.s)
        z = self._z(r)
        zd = rad / self.s
        jdot = (udot * dd).sum(1) / self.s
        f, m, _ = self.scalar(z, zd, zd)
        g = u * ((f - m * jdot) / self.s)[:, None]
        np.add.at(F, self.a, g)
        np.add.at(F, self.b, -g)
        blk = (m / self.s ** 2)[:, None, None] * u[:, :, None] * u[:, None, :]
        np.add.at(M4, (self.a, self.a), blk)
        np.add.at(M4, (self.b, self.b), blk)
        np.add.at(M4, (self.a, self.b), -blk)
        np.add.at(M4, (self.b, self.a), -blk)

    def energy(self, q, v):
        d, r, u, dd, rad, udot = _pair_geometry(self, q, v, self.s)
        z = self._z(r)
        zd = rad / self.s
        _, _, G = self.scalar(z, zd, zd)
        return float((0.5 * G * zd * zd).sum()), float(self.potential(z).sum())

    def grad(self, q, out):
        d = q[self.a] - q[self.b]
        r = np.sqrt((d * d).sum(1))
        if not r.all():
            k = int(np.flatnonzero(r == 0)[0])
            self.fail(CoincidentRobotsError, k, "distance map undefined for coincident robots")
        z = self._z(r)
        g = (d / r[:, None]) * (self.potential_deriv(z) / self.s)[:, None]
        np.add.at(out, self.a, g)
        np.add.at(out, self.b, -g)

    # -- partial (one copy per participant) ------------------------------

    def accumulate_partial(self, q, v, F, M3, K=None):
        d, r, u, dd, rad, udot = _pair_geometry(self, q, v, self.s)
        z = self._z(r)
        zd = rad / self.s
        for idx, sign in ((self.a, 1.0), (self.b, -1.0)):
            Ji = sign * u / self.s[:, None]
            zdi = (Ji * v[idx]).sum(1)
            jdi = sign * (udot * v[idx]).sum(1) / self.s
            f, m, G = self.scalar(z, zdi, zd)
            if F is not None:
                np.add.at(F, idx, Ji * (f - m * jdi)[:, None])
                np.add.at(M3, idx, m[:, None, None] * Ji[:, :, None] * Ji[:, None, :])
            if K is not None:
                np.add.at(K, idx, 0.5 * G * zdi * zdi)


class ProductGroup(_Group):
    """Product-space pair leaves (RMPb): G = cI, Phi = alpha E(s) / 2, B = eta I."""

    def __init__(self, refs, index):
        super().__init__(refs, index)
        self.c, self.eta, self.alpha = self.param("c"), self.param("eta"), self.param("alpha")
        self.dij = self.param("d_ij")
        self.quartic = np.array([r.assignment.params.pair_potential == "quartic" for r in refs])

    def _grad_i(self, q):
        d = q[self.a] - q[self.b]
        s = np.sqrt((d * d).sum(1))
        bad = (s == 0) & ~self.quartic
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            self.fail(CoincidentRobotsError, k,
                      "quadratic pair potential has no gradient at s = 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(self.quartic, 4.0 * (s * s - self.dij ** 2),
                              2.0 * (s - self.dij) / np.where(s == 0, 1.0, s))
        return 0.5 * self.alpha[:, None] * radial[:, None] * d, s

    def accumulate(self, q, v, F, M4):
        g, _ = self._grad_i(q)
        np.add.at(F, self.a, -g - self.eta[:, None] * v[self.a])
        np.add.at(F, self.b, g - self.eta[:, None] * v[self.b])
        eye = self.c[:, None, None] * np.eye(q.shape[1])
        np.add.at(M4, (self.a, self.a), eye)
        np.add.at(M4, (self.b, self.b), eye)

    def accumulate_partial(self, q, v, F, M3, K=None):
        # partner blocks of the leaf velocity are zero and the metric is
        # block diagonal, so each copy reduces to its own robot's block
        g, _ = self._grad_i(q)
        eye = self.c[:, None, None] * np.eye(q.shape[1])
        for idx, sign in ((self.a, 1.0), (self.b, -1.0)):
            if F is not None:
                np.add.at(F, idx, -sign * g - self.eta[:, None] * v[idx])
                np.add.at(M3, idx, eye)
            if K is not None:
                np.add.at(K, idx, 0.5 * self.c * (v[idx] ** 2).sum(1))

    def energy(self, q, v):
        d = q[self.a] - q[self.b]
        s = np.sqrt((d * d).sum(1))
        E = np.where(self.quartic, (s * s - self.dij ** 2) ** 2, (s - self.dij) ** 2)
        kin = 0.5 * self.c * ((v[self.a] ** 2).sum(1) + (v[self.b] ** 2).sum(1))
        return float(kin.sum()), float((0.5 * self.alpha * E).sum())

    def grad(self, q, out):
        g, _ = self._grad_i(q)
        np.add.at(out, self.a, g)
        np.add.at(out, self.b, -g)


class UnaryGroup(_Group):
    """Goal attractors (RMPa, RMPb) and dampers on single robots."""

    def __init__(self, refs, index, family):
        super().__init__(refs, index)
        self.family = family
        if family == "attr_a":
            self.w_u, self.w_l = self.param("w_u"), self.param("w_l")
            self.sigma, self.alpha = self.param("sigma"), self.param("alpha")
            self.beta, self.eta = self.param("beta"), self.param("eta")
        elif family == "attr_b":
            self.c, self.alpha, self.eta = self.param("c"), self.param("alpha"), self.param("eta")
        else:
            self.c, self.eta = self.param("c"), self.param("eta")

    def _z(self, q):
        if self.family == "damper":
            return q[self.a]
        goals = np.array([r.task_map.goal for r in self.refs], dtype=float)
        return q[self.a] - goals

    def _weight(self, z):
        r2 = (z * z).sum(1)
        gamma = np.exp(-r2 / (2.0 * self.sigma ** 2))
        w = gamma * self.w_u + (1.0 - gamma) * self.w_l
        dw = (-(self.w_u - self.w_l) * gamma / self.sigma ** 2)[:, None] * z
        return w, dw, np.sqrt(r2)

    def _grad_phi(self, z):
        if self.family == "attr_a":
            w, _, r = self._weight(z)
            safe = np.where(r == 0, 1.0, r)
            return (self.beta * w * np.tanh(self.alpha * r) / safe)[:, None] * z
        if self.family == "attr_b":
            return self.alpha[:, None] * z
        return np.zeros_like(z)

    def leaf_rmp(self, q, zd, partial=False):
        z = self._z(q)
        if self.family == "attr_a":
            w, dw, _ = self._weight(z)
            if partial:
                # half-Gdot term; the leaf is local so its rate is zd itself
                xi = 0.5 * (dw * zd).sum(1)[:, None] * zd
            else:
                xi = (dw * zd).sum(1)[:, None] * zd - 0.5 * (zd * zd).sum(1)[:, None] * dw
            f = -self._grad_phi(z) - (self.eta * w)[:, None] * zd - xi
            return f, w
        return -self._grad_phi(z) - self.eta[:, None] * zd, self.c

    def accumulate(self, q, v, F, M4):
        f, m = self.leaf_rmp(q, v[self.a])
        np.add.at(F, self.a, f)
        np.add.at(M4, (self.a, self.a), m[:, None, None] * np.eye(q.shape[1]))

    def accumulate_partial(self, q, v, F, M3, K=None):
        if F is not None:
            f, m = self.leaf_rmp(q, v[self.a], partial=True)
            np.add.at(F, self.a, f)
            np.add.at(M3, self.a, m[:, None, None] * np.eye(q.shape[1]))
        if K is not None:
            np.add.at(K, self.a, 0.5 * self._metric_scale(q) * (v[self.a] ** 2).sum(1))

    def _metric_scale(self, q):
        if self.family == "attr_a":
            return self._weight(self._z(q))[0]
        return self.c

    def energy(self, q, v):
        kin = float((0.5 * self._metric_scale(q) * (v[self.a] ** 2).sum(1)).sum())
        z = self._z(q)
        if self.family == "attr_a":
            pot = sum(float(r.leaf.potential(zk)) for r, zk in zip(self.refs, z))
        elif self.family == "attr_b":
            pot = float((0.5 * self.alpha * (z * z).sum(1)).sum())
        else:
            pot = 0.0
        return kin, pot

    def grad(self, q, out):
        np.add.at(out, self.a, self._grad_phi(self._z(q)))


class BatchPlan:
    """All leaves of a team grouped by family, with joint-space evaluators.

    Positions and velocities are passed as (N, dim) arrays in team order.
    """

    def __init__(self, team, refs):
        self.team = team
        index = {rid: k for k, rid in enumerate(team.ids)}
        by_family = {}
        for ref in refs:
            fam = _FAMILIES.get(ref.assignment.constructor)
            if fam is None:
                raise ContractViolation(f"no batch evaluator for {ref.name!r}")
            by_family.setdefault(fam, []).append(ref)
        self.groups = []
        for fam, rs in by_family.items():
            if fam in ("collision", "dist_a"):
                self.groups.append(PairDistanceGroup(rs, index, fam))
            elif fam == "product":
                self.groups.append(ProductGroup(rs, index))
            else:
                self.groups.append(UnaryGroup(rs, index, fam))

    @staticmethod
    def supports(refs) -> bool:
        return all(r.assignment.constructor in _FAMILIES for r in refs)

    def _shape(self, q, v):
        n, m = self.team.size, self.team.dim
        return np.reshape(q, (n, m)), np.reshape(v, (n, m))

    # centralized --------------------------------------------------------

    def root_rmp(self, q, v):
        """(f, M) of the root of the team tree."""
        q, v = self._shape(q, v)
        n, m = q.shape
        F = np.zeros((n, m))
        M4 = np.zeros((n, n, m, m))
        for g in self.groups:
            g.accumulate(q, v, F, M4)
        return F.ravel(), M4.transpose(0, 2, 1, 3).reshape(n * m, n * m)

    def accel(self, q, v):
        f, M = self.root_rmp(q, v)
        if not (np.isfinite(f).all() and np.isfinite(M).all()):
            return None
        return np.linalg.pinv(M, rcond=PINV_RCOND) @ f

    def energy(self, q, v):
        q, v = self._shape(q, v)
        kin = pot = 0.0
        for g in self.groups:
            k, p = g.energy(q, v)
            kin += k
            pot += p
        return kin, pot

    def potential_grad(self, q):
        q, _ = self._shape(q, q)
        out = np.zeros_like(q)
        for g in self.groups:
            g.grad(q, out)
        return out

    # decentralized ------------------------------------------------------

    def robot_rmps(self, q, v):
        """Per-robot partial-RMPflow roots: F (N, dim), M (N, dim, dim)."""
        q, v = self._shape(q, v)
        n, m = q.shape
        F = np.zeros((n, m))
        M3 = np.zeros((n, m, m))
        for g in self.groups:
            g.accumulate_partial(q, v, F, M3)
        return F, M3

    def team_accel(self, q, v):
        F, M3 = self.robot_rmps(q, v)
        if not (np.isfinite(F).all() and np.isfinite(M3).all()):
            return None
        return np.einsum("kij,kj->ki", np.linalg.pinv(M3, rcond=PINV_RCOND), F)

    def kinetic_partial(self, q, v):
        q, v = self._shape(q, v)
        K = np.zeros(q.shape[0])
        for g in self.groups:
            g.accumulate_partial(q, v, None, None, K)
        return K


def plan_for_tree(tree):
    """Cached batch plan for a team tree, or None if some leaf has no batch form."""
    cached = getattr(tree, "_batch", None)
    if cached is not None and cached[0] == len(tree.nodes):
        return cached[1]
    refs = []
    for node in tree.leaves():
        st = node.meta.get("subtask")
        if st is None:
            refs = None
            break
        refs.append(LeafRef(node.name, st, node.task_map, node.leaf, tree.path(node.name)))
    team = getattr(tree, "team", None)
    plan = BatchPlan(team, refs) if team is not None and refs is not None \
        and BatchPlan.supports(refs) else None
    tree._batch = (len(tree.nodes), plan)
    return plan


def plan_for_forest(forest):
    cached = getattr(forest, "_batch", None)
    if cached is not None:
        return cached[0]
    refs = [LeafRef(s.name, s.assignment, s.task_map, s.leaf, ("forest", s.name))
            for s in forest.subtasks]
    ok = all(r.assignment is not None for r in refs) and BatchPlan.supports(refs)
    plan = BatchPlan(forest.team, refs) if ok else None
    forest._batch = (plan,)
    return plan


def disable_fast_paths(policy):
    """Force node-by-node evaluation on a tree or forest (for cross-checks)."""
    if hasattr(policy, "nodes"):
        n = len(policy.nodes)
        policy._batch = (n, None)
        policy._compiled = (n, None)
    else:
        policy._batch = (None,)
    return policy
