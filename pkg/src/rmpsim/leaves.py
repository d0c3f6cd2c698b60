"""Leaf RMPs for robot teams, each returned as a ``(TaskMap, GDSLeaf)`` pair.

Pairwise maps act on the stacked coordinates ``(x_i, x_j)`` of the two
robots; unary maps act on one robot's coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .core import (AffineMap, BarrierDomainError, CoincidentRobotsError, EvaluationError,
                   GDSLeaf, TaskMap, identity_map, zero_partials)


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be positive and finite, got {v}")


def _pair_label(kind, pair):
    return f"{kind}({pair[0]},{pair[1]})"


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class CollisionAvoidanceParams:
    d_S: float
    alpha: float
    epsilon: float
    eta: float

    def __post_init__(self):
        _positive(d_S=self.d_S, alpha=self.alpha, epsilon=self.epsilon, eta=self.eta)


@dataclass(frozen=True)
class DistancePreservationAParams:
    d_ij: float
    c: float
    alpha: float
    eta: float

    def __post_init__(self):
        _positive(d_ij=self.d_ij, c=self.c, alpha=self.alpha, eta=self.eta)


@dataclass(frozen=True)
class PairPotential:
    """Symmetric pair potential E(s) of the inter-robot distance s.

    ``radial(s)`` is E'(s)/s, so the gradient of E(|x_i - x_j|) with respect
    to x_i is ``radial(s) * (x_i - x_j)``. It raises where that is undefined.
    """

    name: str
    d: float
    value: Callable[[float], float]
    deriv: Callable[[float], float]
    radial: Callable[[float], float]

    @classmethod
    def quadratic(cls, d):
        def radial(s):
            if s == 0.0:
                raise CoincidentRobotsError("quadratic pair potential has no gradient at s = 0")
            return 2.0 * (s - d) / s
        return cls("quadratic", float(d), lambda s: (s - d) ** 2, lambda s: 2.0 * (s - d), radial)

    @classmethod
    def quartic(cls, d):
        return cls("quartic", float(d), lambda s: (s * s - d * d) ** 2,
                   lambda s: 4.0 * s * (s * s - d * d), lambda s: 4.0 * (s * s - d * d))

    @classmethod
    def named(cls, name, d):
        try:
            return {"quadratic": cls.quadratic, "quartic": cls.quartic}[name](d)
        except KeyError:
            raise ValueError(f"unknown pair potential {name!r}") from None


@dataclass(frozen=True)
class DistancePreservationBParams:
    d_ij: float
    c: float
    eta: float
    pair_potential: str = "quadratic"
    alpha: float = 1.0

    def __post_init__(self):
        _positive(c=self.c, eta=self.eta, alpha=self.alpha)
        PairPotential.named(self.pair_potential, self.d_ij)


@dataclass(frozen=True)
class GoalAttractorAParams:
    goal: tuple
    w_u: float
    w_l: float
    sigma: float
    alpha: float
    beta: float
    eta: float

    def __post_init__(self):
        if not (0 <= self.w_l <= self.w_u < math.inf):
            raise ValueError(f"need 0 <= w_l <= w_u < inf, got w_l={self.w_l}, w_u={self.w_u}")
        _positive(sigma=self.sigma, alpha=self.alpha, beta=self.beta, eta=self.eta)
        object.__setattr__(self, "goal", tuple(float(g) for g in self.goal))


@dataclass(frozen=True)
class GoalAttractorBParams:
    goal: tuple
    c: float
    alpha: float
    eta: float

    def __post_init__(self):
        _positive(c=self.c, alpha=self.alpha, eta=self.eta)
        object.__setattr__(self, "goal", tuple(float(g) for g in self.goal))


@dataclass(frozen=True)
class DamperParams:
    c: float
    eta: float

    def __post_init__(self):
        _positive(c=self.c, eta=self.eta)


# ---------------------------------------------------------------------------
# task maps


class PairDistanceMap(TaskMap):
    """z = |x_i - x_j| / scale - offset on the stacked pair coordinates."""

    def __init__(self, dim: int, scale: float = 1.0, offset: float = 0.0, label: str = ""):
        self.n = dim
        self.scale = float(scale)
        self.offset = float(offset)
        super().__init__(2 * dim, 1, None, None, None, label)

    def _diff(self, x):
        d = x[:self.n] - x[self.n:]
        r = math.sqrt(float(d @ d))
        if r == 0.0:
            raise CoincidentRobotsError("distance map undefined for coincident robots", self.name)
        return d, r

    def value(self, x):
        d = x[:self.n] - x[self.n:]
        return np.array([math.sqrt(float(d @ d)) / self.scale - self.offset])

    def jacobian(self, x):
        d, r = self._diff(x)
        u = d / (r * self.scale)
        return np.concatenate([u, -u])[None, :]

    def jac_rate_times_vel(self, x, xdot):
        d, r = self._diff(x)
        dd = xdot[:self.n] - xdot[self.n:]
        radial = float(d @ dd) / r
        return np.array([(float(dd @ dd) - radial * radial) / (r * self.scale)])

    def evaluate(self, x, xdot):
        d, r = self._diff(x)
        u = d / (r * self.scale)
        dd = xdot[:self.n] - xdot[self.n:]
        radial = float(d @ dd) / r
        return (np.array([r / self.scale - self.offset]), np.concatenate([u, -u])[None, :],
                np.array([(float(dd @ dd) - radial * radial) / (r * self.scale)]))


class GoalMap(AffineMap):
    """z = x - g. Reassign ``goal`` to move the target quasi-statically."""

    def __init__(self, goal, name: str = "goal"):
        goal = np.asarray(goal, dtype=float)
        super().__init__(np.eye(goal.shape[0]), -goal, name)

    @property
    def goal(self):
        return -self.offset

    @goal.setter
    def goal(self, g):
        self.offset = -np.asarray(g, dtype=float)


# ---------------------------------------------------------------------------
# collision avoidance


def collision_weight(z):
    """w(z) = 1/z^4."""
    return z ** -4


def velocity_gate(zd, epsilon):
    """u(zdot) = epsilon + min(0, zdot) zdot."""
    return epsilon + min(0.0, zd) * zd


def make_collision_avoidance(params: CollisionAvoidanceParams, robot_pair, dim: int = 2):
    label = _pair_label("collision", robot_pair)
    task_map = PairDistanceMap(dim, scale=params.d_S, offset=1.0, label=label)
    eps, alpha, eta = params.epsilon, params.alpha, params.eta

    def z_of(x):
        z = float(x[0])
        if z <= 0.0:
            raise BarrierDomainError(
                f"robots {robot_pair[0]} and {robot_pair[1]} at or inside safety distance (z={z:.3g})",
                label)
        return z

    def metric(x, xd):
        return np.array([[collision_weight(z_of(x)) * velocity_gate(float(xd[0]), eps)]])

    def metric_dx(x, xd):
        z = z_of(x)
        return np.array([[[-4.0 * z ** -5 * velocity_gate(float(xd[0]), eps)]]])

    def metric_dxdot(x, xd):
        # u'(0) = 0: both one-sided derivatives vanish
        return np.array([[[collision_weight(z_of(x)) * 2.0 * min(0.0, float(xd[0]))]]])

    def potential(x):
        return 0.5 * alpha * collision_weight(z_of(x)) ** 2

    def potential_grad(x):
        z = z_of(x)
        return np.array([alpha * collision_weight(z) * (-4.0 * z ** -5)])

    leaf = GDSLeaf(1, metric, lambda x, xd: eta * metric(x, xd), potential, potential_grad,
                   metric_dx, metric_dxdot, label=label,
                   info={"kind": "collision_avoidance", "participants": tuple(robot_pair)})
    return task_map, leaf


# ---------------------------------------------------------------------------
# distance preservation


def _constant_leaf(dim, c, eta, potential, potential_grad, label, info):
    G = c * np.eye(dim)
    B = eta * np.eye(dim)
    return GDSLeaf(dim, lambda x, xd: G, lambda x, xd: B, potential, potential_grad,
                   zero_partials, zero_partials, label=label, info=info)


def make_distance_preservation_a(params: DistancePreservationAParams, robot_pair, dim: int = 2):
    """1-D leaf on z = |x_i - x_j| - d_ij with G = c, Phi = alpha z^2 / 2, B = eta."""
    label = _pair_label("dist_pres_a", robot_pair)
    task_map = PairDistanceMap(dim, offset=params.d_ij, label=label)
    a = params.alpha
    leaf = _constant_leaf(1, params.c, params.eta,
                          lambda x: 0.5 * a * float(x[0]) ** 2, lambda x: a * x,
                          label, {"kind": "dist_pres_a", "participants": tuple(robot_pair),
                                  "d_ij": params.d_ij})
    return task_map, leaf


def _product_leaf(potential: PairPotential, robot_pair, c, eta, alpha, dim, label, kind):
    def potential_fn(x):
        d = x[:dim] - x[dim:]
        return 0.5 * alpha * potential.value(math.sqrt(float(d @ d)))

    def potential_grad(x):
        d = x[:dim] - x[dim:]
        s = math.sqrt(float(d @ d))
        try:
            g = 0.5 * alpha * potential.radial(s) * d
        except CoincidentRobotsError as err:
            raise CoincidentRobotsError(err.message, label) from None
        return np.concatenate([g, -g])

    return _constant_leaf(2 * dim, c, eta, potential_fn, potential_grad, label,
                          {"kind": kind, "participants": tuple(robot_pair), "d_ij": potential.d,
                           "potential": potential.name})


def make_distance_preservation_b(params: DistancePreservationBParams, robot_pair, dim: int = 2):
    """Product-space leaf: G = cI, Phi = alpha E(|x_i - x_j|) / 2, B = eta I."""
    label = _pair_label("dist_pres_b", robot_pair)
    potential = PairPotential.named(params.pair_potential, params.d_ij)
    leaf = _product_leaf(potential, robot_pair, params.c, params.eta, params.alpha, dim,
                         label, "dist_pres_b")
    return identity_map(2 * dim, label), leaf


def make_pairwise_potential(potential: PairPotential, robot_pair, c: float, eta: float,
                            space: str = "product", alpha: float = 1.0, dim: int = 2):
    """Wrap a symmetric pair potential as a leaf on the distance or product space.

    Both spaces use Phi = alpha E / 2, so the product-space wrapper of E is
    the distance-preservation RMPb of the same E.
    """
    _positive(c=c, eta=eta, alpha=alpha)
    label = _pair_label(f"pairwise_{space}", robot_pair)
    if space == "product":
        leaf = _product_leaf(potential, robot_pair, c, eta, alpha, dim, label, "pairwise_potential")
        return identity_map(2 * dim, label), leaf
    if space != "distance":
        raise ValueError(f"space must be 'distance' or 'product', got {space!r}")

    def s_of(x):
        s = float(x[0])
        if s < 0.0:
            raise EvaluationError(f"pair potential evaluated outside its domain (s={s})", label)
        return s

    leaf = _constant_leaf(1, c, eta, lambda x: 0.5 * alpha * potential.value(s_of(x)),
                          lambda x: np.array([0.5 * alpha * potential.deriv(s_of(x))]),
                          label, {"kind": "pairwise_potential", "participants": tuple(robot_pair),
                                  "d_ij": potential.d, "potential": potential.name})
    return PairDistanceMap(dim, label=label), leaf


# ---------------------------------------------------------------------------
# goal attractors and damper


def soft_norm(r, alpha):
    """s_alpha(r) = (1 - exp(-2 alpha r)) / (1 + exp(-2 alpha r)) = tanh(alpha r)."""
    return math.tanh(alpha * r)


class _AttractorA:
    def __init__(self, p: GoalAttractorAParams):
        self.p = p
        self._phi_cache = {}

    def weight(self, r2):
        p = self.p
        gamma = math.exp(-r2 / (2.0 * p.sigma ** 2))
        return gamma * p.w_u + (1.0 - gamma) * p.w_l, gamma

    def weight_grad(self, z):
        p = self.p
        _, gamma = self.weight(float(z @ z))
        return -(p.w_u - p.w_l) * gamma / p.sigma ** 2 * z

    def metric(self, z, zd):
        return self.weight(float(z @ z))[0] * np.eye(len(z))

    def damping(self, z, zd):
        return self.p.eta * self.metric(z, zd)

    def metric_dx(self, z, zd):
        m = len(z)
        T = np.zeros((m, m, m))
        dw = self.weight_grad(z)
        for i in range(m):
            T[i, i, :] = dw
        return T

    def potential_grad(self, z):
        r = math.sqrt(float(z @ z))
        if r == 0.0:
            return np.zeros(len(z))
        w = self.weight(r * r)[0]
        return self.p.beta * w * soft_norm(r, self.p.alpha) * (z / r)

    def potential(self, z):
        """Radial path integral of the gradient from the goal (Phi(0) = 0)."""
        p = self.p
        r = math.sqrt(float(z @ z))
        # w_l part integrates in closed form: int tanh(a s) ds = log cosh(a r) / a
        ar = p.alpha * r
        logcosh = ar + math.log1p(math.exp(-2.0 * ar)) - math.log(2.0)
        base = p.w_l * logcosh / p.alpha
        bump, _ = integrate.quad(
            lambda s: math.exp(-s * s / (2.0 * p.sigma ** 2)) * math.tanh(p.alpha * s),
            0.0, r, epsabs=1e-14, epsrel=1e-12, limit=200)
        return p.beta * (base + (p.w_u - p.w_l) * bump)


def make_goal_attractor_a(params: GoalAttractorAParams, robot, dim: int = 2):
    label = f"goal_attractor_a({robot})"
    if len(params.goal) != dim:
        raise ValueError(f"goal has dimension {len(params.goal)}, expected {dim}")
    impl = _AttractorA(params)
    leaf = GDSLeaf(dim, impl.metric, impl.damping, impl.potential, impl.potential_grad,
                   impl.metric_dx, zero_partials, label=label,
                   info={"kind": "goal_attractor_a", "participants": (robot,),
                         "weight": lambda z: impl.weight(float(np.dot(z, z)))[0]})
    return GoalMap(params.goal, label), leaf


def make_goal_attractor_b(params: GoalAttractorBParams, robot, dim: int = 2):
    """PD attractor: resolved alone, a = -(alpha/c) z - (eta/c) zdot."""
    label = f"goal_attractor_b({robot})"
    if len(params.goal) != dim:
        raise ValueError(f"goal has dimension {len(params.goal)}, expected {dim}")
    a = params.alpha
    leaf = _constant_leaf(dim, params.c, params.eta, lambda z: 0.5 * a * float(z @ z),
                          lambda z: a * z, label,
                          {"kind": "goal_attractor_b", "participants": (robot,),
                           "k_p": params.alpha / params.c, "k_d": params.eta / params.c})
    return GoalMap(params.goal, label), leaf


def make_damper(params: DamperParams, robot, dim: int = 2):
    label = f"damper({robot})"
    leaf = _constant_leaf(dim, params.c, params.eta, lambda z: 0.0, lambda z: np.zeros(dim),
                          label, {"kind": "damper", "participants": (robot,)})
    return identity_map(dim, label), leaf
