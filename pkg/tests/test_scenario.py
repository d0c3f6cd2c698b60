import json

import numpy as np
import pytest

from rmpsim.scenario import (BUILTINS, PENTAGON_EDGES, ScenarioError, builtin, emit, load, parse,
                             pentagon, to_dict)


@pytest.mark.parametrize("name", list(BUILTINS))
def test_round_trip(name):
    s = builtin(name)
    assert parse(emit(s)) == s
    assert emit(parse(emit(s))) == emit(s)


def kinds(s, kind):
    return [st for st in s.subtasks if st.kind == kind]


def one(s, kind):
    (st,) = kinds(s, kind)
    return st.params


# (scenario, subtask kind, field, expected)
TABLE = [
    *[(n, "goal_attractor_a", f, v) for n in ("fig3a", "fig3b")
      for f, v in dict(w_u=10.0, w_l=1.0, sigma=0.1, beta=0.1, alpha=10.0, eta=1.0).items()],
    *[(n, "damper", f, v) for n in ("fig3a", "fig3b") for f, v in dict(c=0.01, eta=1.0).items()],
    ("fig3a", "dist_pres_a", "c", 1.0), ("fig3a", "dist_pres_a", "eta", 2.0),
    ("fig3b", "dist_pres_b", "c", 1.0), ("fig3b", "dist_pres_b", "eta", 2.0),
    ("fig7", "dist_pres_b", "c", 1.0), ("fig7", "dist_pres_b", "alpha", 1.0),
    ("fig7", "dist_pres_b", "eta", 2.0),
    *[(n, "collision_avoidance", f, v) for n in ("fig8-centralized", "fig8-decentralized")
      for f, v in dict(alpha=1e-5, epsilon=1e-5, eta=0.2).items()],
    *[(n, "goal_attractor_a", f, v) for n in ("fig8-centralized", "fig8-decentralized")
      for f, v in dict(w_u=10.0, w_l=0.01, sigma=0.1, alpha=1.0, eta=1.0).items()],
]


@pytest.mark.parametrize("name,kind,field,value", TABLE)
def test_builtin_parameters(name, kind, field, value):
    sts = kinds(builtin(name), kind)
    assert sts
    for st in sts:
        assert getattr(st.params, field) == value


def test_fig3_geometry():
    for name in ("fig3a", "fig3b"):
        s = builtin(name)
        assert len(s.robots) == 5 and len(kinds(s, "damper")) == 5
        edge_kind = "dist_pres_a" if name == "fig3a" else "dist_pres_b"
        assert {st.participants for st in kinds(s, edge_kind)} == set(PENTAGON_EDGES)
        assert np.allclose(s.initial_state().x, pentagon(0.5).ravel())
        assert kinds(s, "goal_attractor_a")[0].participants == (1,)


def test_fig7_geometry():
    s = builtin("fig7")
    assert np.allclose(s.initial_state().x, pentagon(1.0).ravel())
    v = pentagon(0.4)
    for st in s.subtasks:
        i, j = st.participants
        assert st.params.d_ij == pytest.approx(np.linalg.norm(v[i - 1] - v[j - 1]))
    assert s.meta["compare"] == "closed-form"


def test_fig8_geometry():
    s = builtin("fig8-centralized")
    q = s.initial_state().x.reshape(3, 2)
    assert np.allclose(np.linalg.norm(q, axis=1), 1.5)
    for st in kinds(s, "goal_attractor_a"):
        assert np.allclose(st.params.goal, -q[st.participants[0] - 1])
    assert len(kinds(s, "collision_avoidance")) == 3
    assert s.meta["geometry"] == "figure-inspired"
    assert builtin("fig8-decentralized").sim.mode == "decentralized"


def test_cyclic_pursuit():
    s = builtin("cyclic-pursuit")
    ring = [st for st in kinds(s, "goal_attractor_a") if st.motion]
    assert len(ring) == 5 and all(st.motion.omega == 0.06 for st in ring)
    for st in ring:
        assert np.linalg.norm(st.motion(12.3)) == pytest.approx(1.0)
    assert len(kinds(s, "collision_avoidance")) == 28


def test_unknown_builtin():
    with pytest.raises(ScenarioError):
        builtin("fig9")


BAD = [
    ('{\n "robots": [\n  {"id": 1, "position": [0, 0]},\n  {"id": "x", "position": [0, 0]}\n ]\n}',
     4, "robots[1].id"),
    ('{\n"robots": [\n,]}', 3, "invalid JSON"),
    ('{"robots": [{"id": 1, "position": [0, 0]}],\n"subtasks": [\n'
     '{"kind": "damper", "participants": [2], "params": {"c": 1, "eta": 1}}]}', 3, "robot 2"),
    ('{"robots": [{"id": 1, "position": [0, 0]}],\n"subtasks": [\n'
     '{"kind": "damper", "participants": [1],\n"params": {"c": -1, "eta": 1}}]}', 4, "c must be"),
    ('{"robots": [{"id": 1, "position": [0, 0]}],\n"subtasks": [\n'
     '{"kind": "damper", "participants": [1],\n"params": {"c": 1}}]}', 4, "eta"),
    ('{"robots": [{"id": 1, "position": [0, 0]}],\n"sim": {"dt": -1}}', 2, "sim.dt"),
    ('{"robots": [{"id": 1, "position": [0, 0]}],\n"extra": 1}', None, "extra"),
]


@pytest.mark.parametrize("text,line,fragment", BAD)
def test_line_anchored_errors(text, line, fragment):
    with pytest.raises(ScenarioError) as info:
        parse(text)
    if line is not None:
        assert info.value.line == line
        assert f":{line}:" in str(info.value)
    assert fragment in str(info.value)


def test_load_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(to_dict(builtin("fig7")), indent=1))
    assert load(p) == builtin("fig7")
    with pytest.raises(ScenarioError):
        load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{\n"robots": 3}')
    with pytest.raises(ScenarioError) as info:
        load(bad)
    assert "bad.json" in str(info.value)


def test_empty_subtasks_and_defaults():
    s = parse('{"robots": [{"id": 1, "position": [1, 2]}]}')
    assert s.subtasks == () and np.allclose(s.initial_state().xdot, 0.0)
    assert s.sim.dt == 0.01 and s.sim.integrator == "rk4"
