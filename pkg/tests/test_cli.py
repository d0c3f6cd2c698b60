import csv
import json
import subprocess
import sys

import pytest

from rmpsim.cli import main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_builtin_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", "--builtin", "fig3a", "--t-final", "1", "--out", str(out), "--plot"])
    assert code == 0
    rows = read_csv(out / "trajectory.csv")
    assert rows[0][:5] == ["t", "x1", "y1", "vx1", "vy1"]
    assert all(len(r) == 1 + 4 * 5 for r in rows)
    assert len(rows) - 1 == 101
    summary = json.loads((out / "summary.json").read_text())
    assert summary["flags"]["completed"] is True
    assert len(summary["series"]["V"]) == 101 == len(summary["series"]["min_distance"])
    assert summary["config"]["t_final"] == 1.0
    assert (out / "trajectory.svg").read_text().startswith("<svg")
    assert "fig3a" in capsys.readouterr().out


def test_row_count_follows_cadence(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--builtin", "fig7", "--t-final", "1", "--dt", "0.01", "--cadence", "10",
                 "--out", str(out)]) == 0
    assert len(read_csv(out / "trajectory.csv")) - 1 == 11
    assert not (out / "trajectory.svg").exists()


def test_fig7_summary_has_comparison(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--builtin", "fig7", "--t-final", "2", "--out", str(out)]) == 0
    cmp = json.loads((out / "summary.json").read_text())["closed_form_comparison"]
    assert cmp["max_deviation"] <= 1e-9


def test_empty_subtask_scenario(tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"robots": [{"id": 1, "position": [0.5, -1.0]}],
                              "sim": {"t_final": 0.5}}))
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(sc), "--out", str(out), "--plot"]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert {tuple(r[1:]) for r in rows[1:]} == {("0.5", "-1.0", "0.0", "0.0")}


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--builtin", "nope", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{\n"robots": [\n{"id": 1}]}')
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.json:3" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.json")]) == 1
    assert main(["run", "--builtin", "fig7", "--dt", "-1", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["run", "--builtin", "fig7", "--mode", "swarm"])
    assert info.value.code == 1


def test_early_termination_exit_code(tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({
        "robots": [{"id": 1, "position": [0, 0]}, {"id": 2, "position": [0.05, 0]}],
        "subtasks": [{"kind": "collision_avoidance", "participants": [1, 2],
                      "params": {"d_S": 0.1, "alpha": 1, "epsilon": 1e-8, "eta": 1}}],
        "sim": {"t_final": 0.5}}))
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(sc), "--out", str(out)]) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["termination"]["terminated"] is True
    assert summary["flags"]["completed"] is False


def test_output_dir_precedence(tmp_path, monkeypatch):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"robots": [{"id": 1, "position": [0, 0]}],
                              "sim": {"t_final": 0.1},
                              "outputs": {"dir": str(tmp_path / "from-file")}}))
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--scenario", str(sc)]) == 0
    assert (tmp_path / "from-file" / "summary.json").exists()
    monkeypatch.setenv("RMPSIM_OUT", str(tmp_path / "from-env"))
    assert main(["run", "--scenario", str(sc)]) == 0
    assert (tmp_path / "from-env" / "summary.json").exists()
    assert main(["run", "--scenario", str(sc), "--out", str(tmp_path / "from-flag")]) == 0
    assert (tmp_path / "from-flag" / "summary.json").exists()
    monkeypatch.delenv("RMPSIM_OUT")
    assert main(["run", "--builtin", "fig7", "--t-final", "0.1"]) == 0
    assert (tmp_path / "rmpsim-out" / "trajectory.csv").exists()


def test_verify_suites(capsys):
    assert main(["verify", "--suite", "curvature"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["criteria"][0]["criterion"] == 8
    assert report["criteria"][0]["value"] <= report["criteria"][0]["tolerance"]
    assert main(["verify", "--suite", "equivalence"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert [c["criterion"] for c in report["criteria"]] == [1, 5, 6, 9]
    assert main(["verify", "--suite", "nonsense"]) == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rmpsim", "run", "--builtin", "fig7",
                           "--t-final", "0.2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "trajectory.csv").exists()
