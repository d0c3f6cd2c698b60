import re

import numpy as np
import pytest

from rmpsim.plot import emit_plot
from rmpsim.scenario import builtin, parse
from rmpsim.sim import SimConfig, run


def test_static_robot_is_one_dot():
    log = run(parse('{"robots": [{"id": 1, "position": [0, 0]}]}'), SimConfig(0.1, 1.0))
    svg = emit_plot(log)
    assert svg.count("<circle") == 1
    assert "<polyline" not in svg and "<polygon" not in svg


def test_deterministic_bytes():
    s = builtin("fig3a").replace(t_final=1.0)
    a, b = run(s), run(s)
    assert emit_plot(a, s.goals()) == emit_plot(b, s.goals())


def test_fig3a_content():
    s = builtin("fig3a").replace(t_final=3.0, cadence=10)
    svg = emit_plot(run(s), s.goals())
    assert svg.count('class="trajectory"') == 5
    frames = re.findall(r'<g class="formation" data-t="([0-9.]+)"', svg)
    assert len(set(frames)) >= 2
    assert svg.count("<line") == 7 * len(frames)
    assert svg.count('class="goal"') == 1 and svg.count('class="start"') == 5


def test_empty_log_rejected():
    log = run(builtin("fig7"), SimConfig(0.01, 0.01))
    log.q = np.zeros((0, 5, 2))
    with pytest.raises(ValueError):
        emit_plot(log)
