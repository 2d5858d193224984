import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hawkes_queue import cli, queue_moments as qm
from hawkes_queue.errors import ConfigError, NoConvergence
from hawkes_queue.hawkes_core import HawkesParams
from hawkes_queue.phase_type import new

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def write(tmp_path, d, name="run.json"):
    f = tmp_path / name
    f.write_text(json.dumps(d))
    return str(f)


BASE = {"arrivals": {"baseline": "1", "jump": "0.5", "decay": "0.75"},
        "service": {"type": "erlang", "n": 3, "mu": "1"},
        "times": {"start": "0", "stop": "10", "num": 11}}


def test_config_round_trip():
    text = json.dumps({**BASE, "arrivals": {"baseline": "0.1", "jump": 0.30000000000000004, "decay": "1"},
                       "seed": 3})
    cfg = cli.load_config(text)
    again = cli.load_config(json.dumps(cfg.to_dict()))
    assert again == cfg
    assert cfg.to_dict()["arrivals"]["baseline"] == "0.1"
    assert cfg.to_dict()["arrivals"]["jump"] == "0.30000000000000004"


@pytest.mark.parametrize("bad, field", [
    ({"times": []}, "times"),
    ({"times": {"start": "1", "stop": "0", "num": 3}}, "times"),
    ({"times": ["2", "1"]}, "times"),
    ({"arrivals": {"baseline": "-1", "jump": "0", "decay": "1"}}, "arrivals"),
    ({"service": {"type": "erlang", "n": 0, "mu": "1"}}, "service"),
    ({"service": {"type": "weibull"}}, "service"),
    ({"reps": 1}, "reps"),
    ({"colour": "red"}, "unknown"),
])
def test_config_errors_name_the_field(bad, field):
    with pytest.raises(ConfigError) as info:
        cli.RunConfig.from_dict({**BASE, **bad}).service_object()
    assert field in str(info.value)


def test_json_syntax_error_has_line():
    with pytest.raises(ConfigError) as info:
        cli.load_config('{\n "arrivals": ,\n}')
    assert "line 2" in str(info.value)


def test_moments_coxian_matches_ode(capsys):
    code, out, err = run(["moments", "--config", str(CONFIGS / "coxian.json")], capsys)
    assert code == 0
    rows = rows_of(out)
    assert len(rows) == 21
    S = np.array([[-4, 3, 0, 0, 0], [0, -2, 1, 0, 0], [0, 0, -3, 2, 0], [0, 0, 0, -5, 4], [0, 0, 0, 0, -1.0]])
    m = qm.QueueModel(HawkesParams(1, 0.75, 1), new(S, np.eye(5)[0]))
    for r in rows[1::5]:
        E = qm.ode_reference(m, float(r["t"]))[0]
        assert float(r["mean_total"]) == pytest.approx(E.sum(), rel=1e-8)
        assert float(r["mean_3"]) == pytest.approx(E[2], rel=1e-8, abs=1e-12)
    assert json.loads(err)["command"] == "moments"


def test_empty_grid_exit_code(tmp_path, capsys):
    code, out, err = run(["moments", "--config", write(tmp_path, {**BASE, "times": []})], capsys)
    assert code == cli.EXIT_CONFIG
    assert "times" in err and out == ""


def test_missing_config_file(capsys):
    assert run(["moments", "--config", "/nonexistent.json"], capsys)[0] == cli.EXIT_CONFIG


def test_compare_columns(tmp_path, capsys):
    code, out, _ = run(["moments", "--config", write(tmp_path, BASE), "--compare", "sim:4000",
                        "--seed", "7"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert {"sim_mean_total", "z_mean", "z_var"} <= set(rows[0])
    assert max(abs(float(r["z_mean"])) for r in rows) < 4.5
    code, _, err = run(["moments", "--config", write(tmp_path, BASE), "--compare", "bogus"], capsys)
    assert code == cli.EXIT_CONFIG


def test_autocov_rows(capsys):
    code, out, _ = run(["autocov", "--config", str(CONFIGS / "d_queue.json")], capsys)
    assert code == 0
    rows = rows_of(out)
    for r in rows:
        if float(r["tau"]) >= float(r["t"]):
            assert float(r["value"]) == 0.0


def test_simulate_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, {**BASE, "reps": 3000, "seed": 11, "n_jobs": 3})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["simulate", "--config", cfg, "-o", str(a)], capsys)[0] == 0
    assert run(["simulate", "--config", cfg, "-o", str(b), "--reps", "3000"], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    summary = json.loads((tmp_path / "a.csv.summary.json").read_text())
    assert summary["seed"] == 11


def test_cgf_rows(capsys):
    code, out, _ = run(["cgf", "--config", str(CONFIGS / "erlang.json")], capsys)
    assert code == 0
    rows = rows_of(out)
    assert rows[0]["delta"] == "0.1;0;0;0"
    assert any(r["blowup"] == "true" for r in rows)


def test_click_asymptote(capsys):
    code, out, _ = run(["click-impact", "--config", str(CONFIGS / "click.json")], capsys)
    assert code == 0
    rows = rows_of(out)
    assert float(rows[-1]["count_gap_limit"]) == 4.0
    assert float(rows[-1]["count_gap"]) == pytest.approx(4.0, rel=1e-4)
    assert float(rows[0]["count_gap"]) == pytest.approx(1.0)


def test_control_left(capsys):
    code, out, err = run(["control", "--config", str(CONFIGS / "club_left.json"), "--format", "json"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["summary"]["converged"] is True
    assert len(doc["rows"]) == 1001
    assert doc["rows"][-1]["gamma1"] == 0.0


def test_numeric_error_exit(tmp_path, capsys):
    d = {"arrivals": {"baseline": "1", "jump": "2", "decay": "1"}, "click": {"mu": "1", "m": "1"},
         "times": ["1"]}
    code, _, err = run(["click-impact", "--config", write(tmp_path, d)], capsys)
    assert code == cli.EXIT_NUMERIC
    assert "UnstableProcess" in err


def test_no_convergence_exit(monkeypatch, capsys):
    def boom(*a, **k):
        raise NoConvergence("cap")

    monkeypatch.setattr(cli.control, "solve", boom)
    assert run(["control", "--config", str(CONFIGS / "club_left.json")], capsys)[0] == cli.EXIT_NOCONV


def test_selftest_failure_exit(monkeypatch, capsys):
    from hawkes_queue import acceptance
    monkeypatch.setattr(acceptance, "run_all",
                        lambda reps=None, stream=None: [acceptance.Result(1, "x", False, "forced")])
    assert run(["selftest"], capsys)[0] == cli.EXIT_SELFTEST


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hawkes_queue", "click-impact", "--config",
                          str(CONFIGS / "click.json")], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("T,count_gap")
