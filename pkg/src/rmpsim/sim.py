"""Closed-loop rollout of double-integrator teams, with diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .batch import plan_for_tree
from .centralized import RMPTree, compute_control
from .core import EvaluationError, State, compiled, forward_pass, node_metric, node_potential, \
    node_potential_grad
from .decentralized import RMPForest, forest_quantities, team_control

INTEGRATORS = ("rk4", "semi-implicit-euler")
MODES = ("centralized", "decentralized")
CONVERGENCE_TOL = 1e-3


class SimulationAborted(RuntimeError):
    """A policy evaluation failed mid-run; carries the step index."""

    def __init__(self, step: int, t: float, cause: Exception):
        super().__init__(f"step {step} (t={t:.6g}s): {cause}")
        self.step = step
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    t_final: float = 10.0
    integrator: str = "rk4"
    mode: str = "centralized"
    cadence: int = 1
    # evaluate V before and after every step (not only at logged samples)
    monitor_lyapunov: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ValueError(f"t_final ({self.t_final}) must be at least dt ({self.dt})")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.cadence) != self.cadence or self.cadence < 1:
            raise ValueError(f"cadence must be a positive integer, got {self.cadence}")

    @property
    def n_steps(self) -> int:
        # tolerate representation error in t_final / dt
        return int(math.floor(self.t_final / self.dt + 1e-9))


# ---------------------------------------------------------------------------
# integration


def step(policy: Callable, joint_state: State, dt: float, integrator: str = "rk4") -> State:
    """Advance (q, qdot) by one step with qddot = policy(q, qdot)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    q, v = joint_state.x, joint_state.xdot
    if integrator == "rk4":
        k1v = policy(q, v)
        k1q = v
        k2v = policy(q + 0.5 * dt * k1q, v + 0.5 * dt * k1v)
        k2q = v + 0.5 * dt * k1v
        k3v = policy(q + 0.5 * dt * k2q, v + 0.5 * dt * k2v)
        k3q = v + 0.5 * dt * k2v
        k4v = policy(q + dt * k3q, v + dt * k3v)
        k4q = v + dt * k3v
        q1 = q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        v1 = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    elif integrator == "semi-implicit-euler":
        v1 = v + dt * policy(q, v)
        q1 = q + dt * v1
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    return State(q1, v1)


# ---------------------------------------------------------------------------
# Lyapunov functions


def lyapunov_centralized(tree: RMPTree, joint_state: State) -> float:
    """V = 1/2 qdot^T G_root qdot + Phi_root.

    With G_root = sum J^T G J the kinetic term is the sum of the leaf terms
    zdot^T G zdot / 2, which is what the flattened plan evaluates.
    """
    plan = plan_for_tree(tree) or compiled(tree)
    if plan is not None:
        kin, pot = plan.energy(joint_state.x, joint_state.xdot)
        return kin + pot
    states = forward_pass(tree, joint_state)
    G = node_metric(tree, states)
    qd = joint_state.xdot
    return 0.5 * float(qd @ G @ qd) + node_potential(tree, states)


def lyapunov_decentralized(forest: RMPForest, joint_state: State) -> float:
    """V = sum_i K_i + Phi with per-tree kinetic terms."""
    kinetic, phi, _ = forest_quantities(forest, joint_state.x, joint_state.xdot)
    return float(kinetic.sum()) + phi


# ---------------------------------------------------------------------------
# closed loop


@dataclass
class GoalHandle:
    """A goal map whose target follows ``motion(t)``."""

    task_map: object
    motion: Callable


@dataclass
class ClosedLoop:
    """A built team policy plus what diagnostics need to know about it."""

    team: object
    mode: str
    policy_tree: object  # RMPTree (centralized) or RMPForest (decentralized)
    edges: list = field(default_factory=list)  # (i, j, d_ij) formation edges
    goals: list = field(default_factory=list)  # GoalHandle
    safety_distance: Optional[float] = None
    _step: int = 0

    def set_time(self, t: float, step_index: int = 0):
        for h in self.goals:
            h.task_map.goal = h.motion(t)
        self._step = step_index

    def accel(self, q, qd) -> np.ndarray:
        if self.mode == "centralized":
            return compute_control(self.policy_tree, State._trusted(q, qd)).ravel()
        return team_control(self.policy_tree, q, qd, self._step).ravel()

    def lyapunov(self, s: State) -> float:
        if self.mode == "centralized":
            return lyapunov_centralized(self.policy_tree, s)
        return lyapunov_decentralized(self.policy_tree, s)

    def potential_grad(self, s: State) -> np.ndarray:
        if self.mode == "centralized":
            plan = plan_for_tree(self.policy_tree) or compiled(self.policy_tree)
            if plan is not None:
                return np.ravel(plan.potential_grad(s.x))
            return node_potential_grad(self.policy_tree, forward_pass(self.policy_tree, s))
        return forest_quantities(self.policy_tree, s.x, s.xdot)[2].ravel()


def diagnostics(joint_state: State, team, edges=(), grad=None) -> dict:
    """Min pairwise distance, per-edge errors, max speed and |grad Phi|_inf."""
    n = team.dim
    q = joint_state.x.reshape(-1, n)
    qd = joint_state.xdot.reshape(-1, n)
    if len(q) > 1:
        diff = q[:, None, :] - q[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        iu = np.triu_indices(len(q), 1)
        dmin = float(dist[iu].min())
    else:
        dmin = math.inf
    errs = [abs(float(np.linalg.norm(q[team.index(i)] - q[team.index(j)])) - d)
            for i, j, d in edges]
    return {
        "min_distance": dmin,
        "edge_errors": errs,
        "max_speed": float(np.sqrt((qd ** 2).sum(-1)).max()),
        "grad_norm": math.nan if grad is None else float(np.abs(grad).max(initial=0.0)),
    }


@dataclass
class TrajectoryLog:
    t: np.ndarray
    q: np.ndarray      # (samples, N, dim)
    qdot: np.ndarray
    V: np.ndarray
    min_distance: np.ndarray
    edge_errors: np.ndarray  # (samples, edges)
    max_speed: np.ndarray
    grad_norm: np.ndarray
    robot_ids: tuple
    edges: list
    terminated: bool = False
    termination: str = ""
    termination_step: Optional[int] = None
    max_lyapunov_increase: float = -math.inf  # over every monitored step
    steps_completed: int = 0

    @property
    def samples(self) -> int:
        return len(self.t)

    def final(self) -> dict:
        qd = self.qdot[-1]
        return {
            "t": float(self.t[-1]),
            "V": float(self.V[-1]),
            "min_distance": float(self.min_distance[-1]),
            "max_edge_error": float(self.edge_errors[-1].max(initial=0.0)),
            "max_speed": float(self.max_speed[-1]),
            "qdot_inf": float(np.abs(qd).max(initial=0.0)),
            "grad_norm": float(self.grad_norm[-1]),
        }

    def converged(self, tol: float = CONVERGENCE_TOL) -> bool:
        f = self.final()
        return (not self.terminated) and f["qdot_inf"] < tol and f["grad_norm"] < tol


def simulate(loop: ClosedLoop, initial: State, config: SimConfig) -> TrajectoryLog:
    """Roll the closed loop forward, recording every ``cadence``-th step.

    Goals are re-sampled at the start of each step and held for its duration.
    Barrier-domain and other evaluation errors, and non-finite states, end the
    run early; the log keeps everything recorded up to that point.
    """
    team = loop.team
    dt = config.dt
    rec = {k: [] for k in ("t", "q", "qdot", "V", "dmin", "err", "speed", "grad")}

    def record(t, s, V, grad=None):
        grad = loop.potential_grad(s) if grad is None else grad
        d = diagnostics(s, team, loop.edges, grad)
        rec["t"].append(t)
        rec["q"].append(s.x.reshape(team.size, team.dim))
        rec["qdot"].append(s.xdot.reshape(team.size, team.dim))
        rec["V"].append(V)
        rec["dmin"].append(d["min_distance"])
        rec["err"].append(d["edge_errors"])
        rec["speed"].append(d["max_speed"])
        rec["grad"].append(d["grad_norm"])

    s = initial
    terminated, reason, term_step = False, "", None
    worst = -math.inf
    moving = bool(loop.goals)
    k = 0
    try:
        loop.set_time(0.0, 0)
        try:
            V = loop.lyapunov(s)
        except EvaluationError:
            # keep the initial sample so the log is never empty
            record(0.0, s, math.nan, np.full(s.x.shape, math.nan))
            raise
        record(0.0, s, V)
        for k in range(config.n_steps):
            t = k * dt
            loop.set_time(t, k)
            if config.monitor_lyapunov and moving and k > 0:
                V = loop.lyapunov(s)  # same state, goals frozen at this step
            try:
                s_next = step(loop.accel, s, dt, config.integrator)
            except EvaluationError as err:
                raise SimulationAborted(k, t, err) from err
            if not (np.isfinite(s_next.x).all() and np.isfinite(s_next.xdot).all()):
                terminated, reason, term_step = True, f"non-finite state at step {k}", k
                break
            s = s_next
            logged = (k + 1) % config.cadence == 0
            if config.monitor_lyapunov or logged:
                V_next = loop.lyapunov(s)
                if config.monitor_lyapunov:
                    worst = max(worst, V_next - V)
                V = V_next
            if logged:
                record((k + 1) * dt, s, V)
        else:
            k = config.n_steps
    except SimulationAborted as err:
        terminated, reason, term_step = True, str(err), err.step
    except EvaluationError as err:
        terminated, reason, term_step = True, str(err), k

    n_edges = len(loop.edges)
    return TrajectoryLog(
        t=np.asarray(rec["t"]),
        q=np.asarray(rec["q"]),
        qdot=np.asarray(rec["qdot"]),
        V=np.asarray(rec["V"]),
        min_distance=np.asarray(rec["dmin"]),
        edge_errors=np.asarray(rec["err"], dtype=float).reshape(len(rec["t"]), n_edges),
        max_speed=np.asarray(rec["speed"]),
        grad_norm=np.asarray(rec["grad"]),
        robot_ids=team.ids,
        edges=list(loop.edges),
        terminated=terminated,
        termination=reason,
        termination_step=term_step,
        max_lyapunov_increase=worst,
        steps_completed=term_step if terminated else config.n_steps,
    )


def run(scenario, config: Optional[SimConfig] = None) -> TrajectoryLog:
    """Build the scenario's closed loop for ``config.mode`` and simulate it."""
    config = scenario.sim_config() if config is None else config
    loop = scenario.closed_loop(config.mode)
    return simulate(loop, scenario.initial_state(), config)
