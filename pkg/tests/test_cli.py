import pytest

from rsmfc import cli
from rsmfc.config import ConfigError, Polynomial, build_scenario, resolve_run, tomllib
from rsmfc.io import read_csv, read_json
from rsmfc.montecarlo import ViCell


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL = """
[scenario]
kind = "lq"
n_steps = 40

[run]
paths = 400
particles = 300
records = 2
dump_paths = 3
"""


def test_negative_horizon_is_a_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "[scenario]\nkind = \"lq\"\nT = -1.0\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "scenario.T" in capsys.readouterr().err


@pytest.mark.parametrize("text, key", [
    ("[scenario]\nkind = \"lq\"\nalpha = \"x\"\n", "scenario.alpha"),
    ("[scenario]\nkind = \"lq\"\ngamma = 1\n", "scenario.gamma"),
    ("[scenario]\nkind = \"nope\"\n", "scenario.kind"),
    ("[run]\npaths = 0\n", "run.paths"),
    ("[run]\nform = \"other\"\n", "run.form"),
    ("[other]\nx = 1\n", "other"),
    ("[scenario\n", "config"),
])
def test_invalid_values_are_named(tmp_path, capsys, text, key):
    cfg = write(tmp_path, text)
    assert cli.main(["cost", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert key in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["cost", "--config", str(tmp_path / "none.toml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_uncoupled_observation_gives_unit_density(tmp_path):
    cfg = write(tmp_path, "[scenario]\nkind = \"lq\"\nbeta = 0.0\nn_steps = 20\n[run]\npaths = 200\ndump_paths = 2\n")
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    s = read_json(out / "summary.json")
    assert s["rho_T"]["mean"] == 1.0 and s["rho_T"]["se"] == 0.0
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["path_id", "step", "t", "rho", "x", "xi", "m"]
    assert len(rows) == 2 * 21
    assert {r[3] for r in rows} == {"1.0"}


def test_stationary_riccati_is_flat(tmp_path):
    cfg = write(tmp_path, """
[scenario]
kind = "lq"
a = 0.0
b_gain = 0.0
alpha = 0.3
beta = 0.0
sigma = -0.3
theta = 2.0
n_steps = 25
""")
    out = tmp_path / "o"
    assert cli.main(["riccati", "--config", str(cfg), "--out", str(out)]) == 0
    _, rows = read_csv(out / "riccati.csv")
    assert len(rows) == 26 and all(float(r[2]) == 1.0 for r in rows)
    assert read_json(out / "summary.json")["residual"] == 0.0


def test_sweep_theta_table(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["sweep-theta", "--config", str(write(tmp_path, SMALL)), "--out", str(out)]) == 0
    header, rows = read_csv(out / "sweep_theta.csv")
    assert header == ["theta", "j_theta", "scaled_log_j", "residual"]
    assert [float(r[0]) for r in rows] == [0.05, 0.1, 0.2, 0.4]


def test_cost_and_filter_outputs(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "c"
    assert cli.main(["cost", "--config", str(cfg), "--out", str(out), "--case", "2"]) == 0
    header, rows = read_csv(out / "cost.csv")
    assert header[:2] == ["theta", "j_theta"] and float(rows[0][1]) > 0
    for source in ("particle", "closed-form"):
        out = tmp_path / source
        assert cli.main(["filter", "--config", str(cfg), "--out", str(out), "--source", source]) == 0
        header, rows = read_csv(out / "filter.csv")
        assert header == ["step", "t", "mean", "variance", "ess"] and len(rows) == 41
        assert float(rows[0][2]) == 1.0


def test_check_smp_passes(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["check-smp", "--config", str(write(tmp_path, SMALL)), "--out", str(out)]) == 0
    s = read_json(out / "summary.json")
    assert s["cells"] == 2 * 5 * 9 and s["violations"] == 0 and s["passed"]


def test_check_smp_reports_violations(tmp_path, capsys, monkeypatch):
    class Report:
        cells = [ViCell(0, 4, 0.1, 0.7, 0.2, 0.3, 0.01, -0.125, True, False)]
        violations = cells
        collapse_failures = cells

    monkeypatch.setattr(cli, "certify_smp", lambda *a, **k: Report())
    out = tmp_path / "o"
    assert cli.main(["check-smp", "--config", str(write(tmp_path, SMALL)), "--out", str(out)]) == 1
    err = capsys.readouterr().err
    assert "t=0.1" in err and "u=0.7" in err
    assert read_json(out / "summary.json")["passed"] is False


def test_riccati_blow_up_exits_one(tmp_path, capsys):
    cfg = write(tmp_path, "[scenario]\nkind = \"lq\"\ntheta = 40.0\nT = 5.0\n[run]\ncase = 2\n")
    assert cli.main(["riccati", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "riccati" in capsys.readouterr().err


CUSTOM = """
[scenario]
kind = "custom-table"
theta = 0.5
n_steps = 30

[scenario.coefficients]
drift_b = [[0.3, 1, 0, 0], [-0.1, 0, 1, 0]]
diff_sigma = [[0.4, 0, 0, 0]]
diff_alpha = [[0.2, 0, 0, 0]]
obs_beta = [[0.5, 1, 0, 0]]
run_cost_f = [[0.5, 2, 0, 0]]
term_cost_h = [[0.5, 2, 0, 0]]

[run]
paths = 300
particles = 200
dump_paths = 2
"""


def test_custom_table_scenario(tmp_path):
    cfg = write(tmp_path, CUSTOM)
    for cmd in ("simulate", "cost", "filter", "sweep-theta"):
        assert cli.main([cmd, "--config", str(cfg), "--out", str(tmp_path / cmd)]) == 0, cmd
    # LQ-only commands refuse it
    assert cli.main(["riccati", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2


def test_custom_table_rejects_forbidden_dependence():
    sc = tomllib.loads(CUSTOM)["scenario"]
    sc["coefficients"]["obs_beta"] = [[0.5, 0, 1, 0]]
    with pytest.raises(ConfigError, match="scenario.coefficients.obs_beta"):
        build_scenario(sc)


def test_polynomial_derivatives():
    p = Polynomial([[2.0, 3, 1, 0], [-1.5, 0, 0, 2], [0.7, 0, 0, 0]])
    x, m, u = 1.3, -0.4, 0.9
    assert p(x, m, u) == pytest.approx(2 * x**3 * m - 1.5 * u**2 + 0.7)
    assert p.derivative("x")(x, m, u) == pytest.approx(6 * x**2 * m)
    assert p.derivative("m")(x, m, u) == pytest.approx(2 * x**3)
    assert p.derivative("u")(x, m, u) == pytest.approx(-3 * u)
    assert p.derivative("u").derivative("m")(x, m, u) == 0.0


def test_custom_table_partials_pass_audit():
    from rsmfc.model import validate_model
    assert validate_model(build_scenario(tomllib.loads(CUSTOM)["scenario"]).model, n_probe=50, seed=0).ok


def test_overrides_beat_config():
    run = resolve_run({"seed": 3, "paths": 10}, {"seed": 7, "paths": None})
    assert run["seed"] == 7 and run["paths"] == 10


@pytest.mark.parametrize("command", ["simulate", "filter", "sweep-theta"])
def test_replay_is_bit_identical(tmp_path, monkeypatch, command):
    cfg = write(tmp_path, SMALL)
    first = tmp_path / "first"
    monkeypatch.setenv("RSMFC_THREADS", "1")
    assert cli.main([command, "--config", str(cfg), "--out", str(first), "--seed", "5"]) == 0
    monkeypatch.setenv("RSMFC_THREADS", "4")
    second = tmp_path / "second"
    assert cli.main(["replay", str(first / "manifest.json"), "--out", str(second)]) == 0
    csvs = sorted(p.name for p in first.glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert read_json(second / "manifest.json")["run"]["seed"] == 5


def test_replay_bad_manifest(tmp_path, capsys):
    bad = write(tmp_path, "{}", "manifest.json")
    assert cli.main(["replay", str(bad)]) == 2
    assert "manifest" in capsys.readouterr().err


def test_thread_count_must_be_positive(monkeypatch):
    from rsmfc._parallel import worker_count
    monkeypatch.setenv("RSMFC_THREADS", "0")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("RSMFC_THREADS", "3")
    assert worker_count() == 3
