"""Scenario files (JSON), their validation, and the built-in experiments."""

from __future__ import annotations

import copy
import dataclasses
import json
import json.decoder
import json.scanner
import math
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from .centralized import ConfigurationError, RobotTeamSpec, SubtaskAssignment, build_rmp_tree
from .core import State
from .decentralized import build_forest
from .leaves import (CollisionAvoidanceParams, DamperParams, DistancePreservationAParams,
                     DistancePreservationBParams, GoalAttractorAParams, GoalAttractorBParams,
                     PairPotential, make_collision_avoidance, make_damper,
                     make_distance_preservation_a, make_distance_preservation_b,
                     make_goal_attractor_a, make_goal_attractor_b, make_pairwise_potential)
from .sim import ClosedLoop, GoalHandle, SimConfig


class ScenarioError(ConfigurationError):
    """Invalid scenario document; ``line`` points into the source when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "<scenario>"):
        self.line = line
        self.source = source
        self.reason = message
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class PairwisePotentialParams:
    potential: str
    d: float
    c: float
    eta: float
    space: str = "product"
    alpha: float = 1.0

    def __post_init__(self):
        PairPotential.named(self.potential, self.d)
        if self.space not in ("product", "distance"):
            raise ValueError(f"space must be 'product' or 'distance', got {self.space!r}")


def _pairwise(params: PairwisePotentialParams, robots, dim=2):
    return make_pairwise_potential(PairPotential.named(params.potential, params.d), robots,
                                   params.c, params.eta, params.space, params.alpha, dim)


# kind -> (constructor, params class, participant count)
KINDS = {
    "collision_avoidance": (make_collision_avoidance, CollisionAvoidanceParams, 2),
    "dist_pres_a": (make_distance_preservation_a, DistancePreservationAParams, 2),
    "dist_pres_b": (make_distance_preservation_b, DistancePreservationBParams, 2),
    "goal_attractor_a": (make_goal_attractor_a, GoalAttractorAParams, 1),
    "goal_attractor_b": (make_goal_attractor_b, GoalAttractorBParams, 1),
    "damper": (make_damper, DamperParams, 1),
    "pairwise_potential": (_pairwise, PairwisePotentialParams, 2),
}

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["robots"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "dim": {"type": "integer", "minimum": 1},
        "meta": {"type": "object"},
        "robots": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "position"],
                "additionalProperties": False,
                "properties": {"id": {"type": "integer"}, "position": _VEC, "velocity": _VEC},
            },
        },
        "subtasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "participants"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": sorted(KINDS)},
                    "participants": {"type": "array", "items": {"type": "integer"},
                                     "minItems": 1},
                    "params": {"type": "object"},
                    "motion": {
                        "type": "object",
                        "required": ["type", "center", "radius", "omega"],
                        "additionalProperties": False,
                        "properties": {"type": {"const": "circle"}, "center": _VEC,
                                       "radius": _NUM, "omega": _NUM, "phase": _NUM},
                    },
                },
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "integrator": {"enum": ["rk4", "semi-implicit-euler"]},
                "mode": {"enum": ["centralized", "decentralized"]},
                "cadence": {"type": "integer", "minimum": 1},
                "monitor_lyapunov": {"type": "boolean"},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": ["string", "null"]},
                "trajectory": {"type": "string"},
                "summary": {"type": "string"},
                "plot": {"type": "boolean"},
                "svg": {"type": "string"},
            },
        },
    },
}


@dataclass(frozen=True)
class CircleMotion:
    """Goal moving on a circle: center + radius (cos, sin)(phase + omega t)."""

    center: tuple
    radius: float
    omega: float
    phase: float = 0.0

    def __call__(self, t: float) -> np.ndarray:
        a = self.phase + self.omega * t
        return np.asarray(self.center, dtype=float) + self.radius * np.array([math.cos(a),
                                                                              math.sin(a)])

    def to_json(self) -> dict:
        return {"type": "circle", "center": list(self.center), "radius": self.radius,
                "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True)
class RobotSpec:
    id: int
    position: tuple
    velocity: tuple


@dataclass(frozen=True)
class SubtaskSpec:
    name: str
    kind: str
    participants: tuple
    params: object  # one of the leaf parameter dataclasses
    motion: Optional[CircleMotion] = None

    def assignment(self) -> SubtaskAssignment:
        return SubtaskAssignment(self.name, self.participants, KINDS[self.kind][0], self.params)


@dataclass(frozen=True)
class Outputs:
    dir: Optional[str] = None
    trajectory: str = "trajectory.csv"
    summary: str = "summary.json"
    plot: bool = False
    svg: str = "trajectory.svg"


@dataclass(frozen=True)
class Scenario:
    name: str
    robots: tuple
    subtasks: tuple = ()
    sim: SimConfig = field(default_factory=SimConfig)
    outputs: Outputs = field(default_factory=Outputs)
    meta: dict = field(default_factory=dict)
    dim: int = 2

    # -- views ------------------------------------------------------------

    @property
    def team(self) -> RobotTeamSpec:
        return RobotTeamSpec(tuple(r.id for r in self.robots), self.dim)

    def robot(self, rid: int) -> RobotSpec:
        for r in self.robots:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def sim_config(self) -> SimConfig:
        return self.sim

    def initial_state(self) -> State:
        ordered = sorted(self.robots, key=lambda r: r.id)
        return State(np.concatenate([np.asarray(r.position, dtype=float) for r in ordered]),
                     np.concatenate([np.asarray(r.velocity, dtype=float) for r in ordered]))

    def edges(self) -> list:
        """Formation edges (i, j, d_ij) from the distance-keeping subtasks."""
        out = []
        for st in self.subtasks:
            if st.kind in ("dist_pres_a", "dist_pres_b"):
                out.append((*st.participants, st.params.d_ij))
            elif st.kind == "pairwise_potential":
                out.append((*st.participants, st.params.d))
        return out

    def safety_distance(self) -> Optional[float]:
        ds = [st.params.d_S for st in self.subtasks if st.kind == "collision_avoidance"]
        return min(ds) if ds else None

    def goals(self) -> dict:
        """Robot id -> initial goal for every attractor subtask."""
        return {st.participants[0]: (np.asarray(st.motion(0.0)) if st.motion
                                     else np.asarray(st.params.goal))
                for st in self.subtasks if st.kind.startswith("goal_attractor")}

    def replace(self, **changes) -> "Scenario":
        """Copy with top-level fields or sim settings (dt, t_final, mode, ...) replaced."""
        sim_keys = {f.name for f in dataclasses.fields(SimConfig)}
        sim_changes = {k: v for k, v in changes.items() if k in sim_keys and v is not None}
        top = {k: v for k, v in changes.items() if k not in sim_keys}
        out = dataclasses.replace(self, **top)
        if sim_changes:
            out = dataclasses.replace(out, sim=dataclasses.replace(out.sim, **sim_changes))
        return out

    # -- building ---------------------------------------------------------

    def closed_loop(self, mode: Optional[str] = None) -> ClosedLoop:
        mode = self.sim.mode if mode is None else mode
        team = self.team
        assignments = [st.assignment() for st in self.subtasks]
        if mode == "centralized":
            policy = build_rmp_tree(team, assignments)
            maps = {st.name: policy.edge_map(st.name) for st in self.subtasks}
        elif mode == "decentralized":
            policy = build_forest(team, assignments)
            maps = {s.name: s.task_map for s in policy.subtasks}
        else:
            raise ConfigurationError(f"unknown mode {mode!r}")
        goals = [GoalHandle(maps[st.name], st.motion) for st in self.subtasks if st.motion]
        return ClosedLoop(team, mode, policy, self.edges(), goals, self.safety_distance())


# ---------------------------------------------------------------------------
# JSON: emit


def _params_json(params) -> dict:
    out = {}
    for f in dataclasses.fields(params):
        v = getattr(params, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "dim": s.dim,
        "meta": copy.deepcopy(s.meta),
        "robots": [{"id": r.id, "position": list(r.position), "velocity": list(r.velocity)}
                   for r in s.robots],
        "subtasks": [
            {"name": st.name, "kind": st.kind, "participants": list(st.participants),
             "params": _params_json(st.params),
             **({"motion": st.motion.to_json()} if st.motion else {})}
            for st in s.subtasks],
        "sim": dataclasses.asdict(s.sim),
        "outputs": dataclasses.asdict(s.outputs),
    }


def emit(s: Scenario) -> str:
    return json.dumps(to_dict(s), indent=2) + "\n"


# ---------------------------------------------------------------------------
# JSON: parse with source positions


class _LocatingDecoder(json.JSONDecoder):
    """Records the character offset at which every object and array starts."""

    def __init__(self):
        super().__init__()
        self.offsets = {}
        self._alive = []  # keep parsed containers alive so ids stay unique

        def parse_object(s_and_end, *args, **kwargs):
            obj, end = json.decoder.JSONObject(s_and_end, *args, **kwargs)
            self.offsets[id(obj)] = s_and_end[1] - 1
            self._alive.append(obj)
            return obj, end

        def parse_array(s_and_end, scan_once):
            arr, end = json.decoder.JSONArray(s_and_end, scan_once)
            self.offsets[id(arr)] = s_and_end[1] - 1
            self._alive.append(arr)
            return arr, end

        self.parse_object = parse_object
        self.parse_array = parse_array
        self.scan_once = json.scanner.py_make_scanner(self)


class _Locator:
    def __init__(self, text: str, root, offsets: dict):
        self.text = text
        self.root = root
        self.offsets = offsets

    def _line(self, offset: int) -> int:
        return self.text.count("\n", 0, offset) + 1

    def line(self, path) -> Optional[int]:
        """Line of the element at ``path`` (keys and indices), best effort."""
        node = self.root
        best = self.offsets.get(id(node))
        for key in path:
            try:
                child = node[key]
            except (KeyError, IndexError, TypeError):
                break
            if isinstance(node, dict) and id(node) in self.offsets:
                hit = self.text.find(json.dumps(key), self.offsets[id(node)])
                if hit >= 0:
                    best = hit
            if id(child) in self.offsets:
                best = self.offsets[id(child)]
            node = child
        return None if best is None else self._line(best)


def _path_str(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _build_params(kind: str, raw: dict):
    cls = KINDS[kind][1]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ValueError(f"unknown parameter(s) {unknown} for {kind}")
    required = [f.name for f in dataclasses.fields(cls)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    missing = [n for n in required if n not in raw]
    if missing:
        raise ValueError(f"missing parameter(s) {missing} for {kind}")
    try:
        return cls(**raw)
    except TypeError as err:
        raise ValueError(str(err)) from None


def from_dict(doc: dict, locate=None, source: str = "<scenario>") -> Scenario:
    locate = locate or (lambda path: None)

    def fail(path, message):
        raise ScenarioError(f"{_path_str(path)}: {message}", locate(path), source)

    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        fail(list(err.absolute_path), err.message)

    dim = doc.get("dim", 2)
    robots, seen = [], set()
    for k, r in enumerate(doc["robots"]):
        if r["id"] in seen:
            fail(["robots", k, "id"], f"duplicate robot id {r['id']}")
        seen.add(r["id"])
        pos = tuple(float(v) for v in r["position"])
        vel = tuple(float(v) for v in r.get("velocity", [0.0] * dim))
        for key, vec in (("position", pos), ("velocity", vel)):
            if len(vec) != dim:
                fail(["robots", k, key], f"expected {dim} components, got {len(vec)}")
            if not all(math.isfinite(v) for v in vec):
                fail(["robots", k, key], "components must be finite")
        robots.append(RobotSpec(int(r["id"]), pos, vel))

    subtasks, names = [], set()
    for k, st in enumerate(doc.get("subtasks", [])):
        kind = st["kind"]
        parts = tuple(sorted(st["participants"]))
        for p in parts:
            if p not in seen:
                fail(["subtasks", k, "participants"], f"robot {p} is not defined")
        if len(set(parts)) != len(parts):
            fail(["subtasks", k, "participants"], "participants repeat")
        need = KINDS[kind][2]
        if len(parts) != need:
            fail(["subtasks", k, "participants"], f"{kind} takes {need} participant(s)")
        name = st.get("name") or f"{kind}({','.join(map(str, parts))})"
        if name in names:
            fail(["subtasks", k, "name"], f"duplicate subtask name {name!r}")
        names.add(name)
        try:
            params = _build_params(kind, dict(st.get("params", {})))
        except ValueError as err:
            fail(["subtasks", k, "params"], str(err))
        if hasattr(params, "goal") and len(params.goal) != dim:
            fail(["subtasks", k, "params", "goal"], f"expected {dim} components")
        motion = None
        if "motion" in st:
            if not kind.startswith("goal_attractor"):
                fail(["subtasks", k, "motion"], "only goal attractors can have a moving goal")
            m = st["motion"]
            if dim != 2 or len(m["center"]) != 2:
                fail(["subtasks", k, "motion"], "circular motion needs planar robots")
            motion = CircleMotion(tuple(float(c) for c in m["center"]), float(m["radius"]),
                                  float(m["omega"]), float(m.get("phase", 0.0)))
        subtasks.append(SubtaskSpec(name, kind, parts, params, motion))

    try:
        sim = SimConfig(**doc.get("sim", {}))
    except (TypeError, ValueError) as err:
        fail(["sim"], str(err))
    outputs = Outputs(**doc.get("outputs", {}))
    return Scenario(doc.get("name", "scenario"), tuple(robots), tuple(subtasks), sim, outputs,
                    dict(doc.get("meta", {})), dim)


def parse(text: str, source: str = "<scenario>") -> Scenario:
    """Parse a scenario document; errors name the offending line."""
    decoder = _LocatingDecoder()
    try:
        doc, end = decoder.raw_decode(text, json.decoder.WHITESPACE.match(text, 0).end())
    except json.JSONDecodeError as err:
        raise ScenarioError(f"invalid JSON: {err.msg} (column {err.colno})", err.lineno,
                            source) from None
    if text[end:].strip():
        line = text.count("\n", 0, end) + 1
        raise ScenarioError("trailing content after the JSON document", line, source)
    if not isinstance(doc, dict):
        raise ScenarioError("top level must be an object", 1, source)
    return from_dict(doc, _Locator(text, doc, decoder.offsets).line, source)


def load(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario: {err.strerror}", None, str(path)) from None
    return parse(text, str(path))


# ---------------------------------------------------------------------------
# built-in scenarios


def pentagon(radius: float, center=(0.0, 0.0)) -> np.ndarray:
    """Vertices at 90 + 72k degrees, robot k+1 at vertex k."""
    ang = np.deg2rad(90.0 + 72.0 * np.arange(5))
    return np.asarray(center, dtype=float) + radius * np.c_[np.cos(ang), np.sin(ang)]


# the five sides plus two diagonals from robot 1: a minimally rigid graph,
# so matching its edge lengths pins the shape
PENTAGON_EDGES = ((1, 2), (2, 3), (3, 4), (4, 5), (1, 5), (1, 3), (1, 4))


def _pentagon_lengths(radius: float) -> dict:
    v = pentagon(radius)
    return {(i, j): float(np.linalg.norm(v[i - 1] - v[j - 1])) for i, j in PENTAGON_EDGES}


def _robots(positions, ids=None):
    ids = ids or range(1, len(positions) + 1)
    return tuple(RobotSpec(i, tuple(float(c) for c in p), (0.0, 0.0))
                 for i, p in zip(ids, positions))


def _st(kind, parts, params, name=None, motion=None):
    parts = tuple(sorted(parts))
    return SubtaskSpec(name or f"{kind}({','.join(map(str, parts))})", kind, parts, params, motion)


FIG3_RADIUS = 0.5
FIG3_GOAL_OFFSET = (0.35, 0.15)
FIG3_ATTRACTOR = dict(w_u=10.0, w_l=1.0, sigma=0.1, beta=0.1, alpha=10.0, eta=1.0)
DAMPER = DamperParams(c=0.01, eta=1.0)


def _fig3(edge_kind: str) -> Scenario:
    start = pentagon(FIG3_RADIUS)
    d = _pentagon_lengths(FIG3_RADIUS)
    goal = tuple(start[0] + np.asarray(FIG3_GOAL_OFFSET))
    subtasks = []
    for e in PENTAGON_EDGES:
        if edge_kind == "dist_pres_a":
            p = DistancePreservationAParams(d_ij=d[e], c=1.0, alpha=1.0, eta=2.0)
        else:
            p = DistancePreservationBParams(d_ij=d[e], c=1.0, eta=2.0)
        subtasks.append(_st(edge_kind, e, p))
    subtasks.append(_st("goal_attractor_a", (1,), GoalAttractorAParams(goal=goal, **FIG3_ATTRACTOR)))
    subtasks += [_st("damper", (i,), DAMPER) for i in range(1, 6)]
    tag = "fig3a" if edge_kind == "dist_pres_a" else "fig3b"
    return Scenario(tag, _robots(start), tuple(subtasks), SimConfig(0.01, 24.8),
                    meta={"description": f"pentagon formation preservation, leader attractor, "
                                         f"{edge_kind} edges",
                          "leader": 1, "formation_radius": FIG3_RADIUS})


def fig3a() -> Scenario:
    return _fig3("dist_pres_a")


def fig3b() -> Scenario:
    return _fig3("dist_pres_b")


def fig7() -> Scenario:
    d = _pentagon_lengths(0.4)
    subtasks = tuple(_st("dist_pres_b", e, DistancePreservationBParams(d_ij=d[e], c=1.0, eta=2.0,
                                                                      alpha=1.0))
                     for e in PENTAGON_EDGES)
    return Scenario("fig7", _robots(pentagon(1.0)), subtasks, SimConfig(0.01, 13.2),
                    meta={"description": "pentagon shrinking from radius 1 to 0.4",
                          "compare": "closed-form"})


FIG8_RADIUS = 1.5
FIG8_COLLISION = CollisionAvoidanceParams(d_S=0.1, alpha=1e-5, epsilon=1e-5, eta=0.2)
FIG8_ATTRACTOR = dict(w_u=10.0, w_l=0.01, sigma=0.1, beta=1.0, alpha=1.0, eta=1.0)


def _fig8(mode: str) -> Scenario:
    ang = np.deg2rad([90.0, 210.0, 330.0])
    start = FIG8_RADIUS * np.c_[np.cos(ang), np.sin(ang)]
    subtasks = [_st("collision_avoidance", p, FIG8_COLLISION) for p in ((1, 2), (1, 3), (2, 3))]
    subtasks += [_st("goal_attractor_a", (i + 1,),
                     GoalAttractorAParams(goal=tuple(-start[i]), **FIG8_ATTRACTOR))
                 for i in range(3)]
    return Scenario(f"fig8-{mode}", _robots(start), tuple(subtasks), SimConfig(0.01, 30.0, mode=mode),
                    meta={"description": "three robots swapping to antipodal goals",
                          "geometry": "figure-inspired"})


def fig8_centralized() -> Scenario:
    return _fig8("centralized")


def fig8_decentralized() -> Scenario:
    return _fig8("decentralized")


PURSUIT_OMEGA = 0.06
PURSUIT_ATTRACTOR = dict(w_u=10.0, w_l=0.01, sigma=0.1, beta=1.0, alpha=1.0, eta=1.0)
PASS_ATTRACTOR = dict(w_u=10.0, w_l=1.0, sigma=0.1, beta=1.0, alpha=10.0, eta=2.0)
PASS_EDGE = dict(c=10.0, alpha=1.0, eta=2.0)
PURSUIT_COLLISION = CollisionAvoidanceParams(d_S=0.18, alpha=1e-5, epsilon=1e-8, eta=1.0)
PASS_SIDE = 0.4
PASS_START = (-2.0, 0.0)
PASS_GOAL = (2.0, 0.0)


def cyclic_pursuit() -> Scenario:
    """Five robots circle the unit circle; a triangle of three crosses it."""
    phases = np.deg2rad(90.0 + 72.0 * np.arange(5))
    ring = np.c_[np.cos(phases), np.sin(phases)]
    h = PASS_SIDE * math.sqrt(3.0) / 2.0
    tri = np.asarray(PASS_START) + np.array([[0.0, 0.0], [-h, PASS_SIDE / 2], [-h, -PASS_SIDE / 2]])
    robots = _robots(np.vstack([ring, tri]))
    subtasks = []
    for i in range(5):
        motion = CircleMotion((0.0, 0.0), 1.0, PURSUIT_OMEGA, float(phases[i]))
        subtasks.append(_st("goal_attractor_a", (i + 1,),
                            GoalAttractorAParams(goal=tuple(motion(0.0)), **PURSUIT_ATTRACTOR),
                            motion=motion))
    for e in ((6, 7), (6, 8), (7, 8)):
        subtasks.append(_st("dist_pres_a", e, DistancePreservationAParams(d_ij=PASS_SIDE, **PASS_EDGE)))
    subtasks.append(_st("goal_attractor_a", (6,),
                        GoalAttractorAParams(goal=PASS_GOAL, **PASS_ATTRACTOR)))
    subtasks += [_st("damper", (i,), DAMPER) for i in (6, 7, 8)]
    subtasks += [_st("collision_avoidance", (i, j), PURSUIT_COLLISION)
                 for i in range(1, 9) for j in range(i + 1, 9)]
    return Scenario("cyclic-pursuit", robots, tuple(subtasks),
                    SimConfig(0.01, 20.0, mode="decentralized"),
                    meta={"description": "cyclic pursuit on the unit circle with a formation "
                                         "passing through",
                          "subteams": [[1, 2, 3, 4, 5], [6, 7, 8]]})


BUILTINS = {
    "fig3a": fig3a,
    "fig3b": fig3b,
    "fig7": fig7,
    "fig8-centralized": fig8_centralized,
    "fig8-decentralized": fig8_decentralized,
    "cyclic-pursuit": cyclic_pursuit,
}


def builtin(name: str) -> Scenario:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ScenarioError(f"unknown built-in {name!r}; choose from {sorted(BUILTINS)}") from None


def formation_graph(s: Scenario):
    """PotentialGraph of a scenario whose edges are all quadratic RMPb leaves."""
    from .verify import PotentialGraph

    edges = [st for st in s.subtasks if st.kind == "dist_pres_b"]
    if not edges or len(edges) != len(s.subtasks):
        raise ConfigurationError("comparison needs a scenario made only of dist_pres_b edges")
    etas = {st.params.eta / st.params.c for st in edges}
    if len(etas) != 1 or any(st.params.c != 1.0 or st.params.alpha != 1.0 or
                             st.params.pair_potential != "quadratic" for st in edges):
        raise ConfigurationError("comparison needs c = alpha = 1, one eta and quadratic E_ij")
    return PotentialGraph(s.team.ids, tuple(st.participants for st in edges),
                          {st.participants: st.params.d_ij for st in edges}, etas.pop(),
                          dim=s.dim)
