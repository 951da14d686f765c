"""Configuration parsing/validation and the command-line exit codes."""
import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from awereel import cli
from awereel.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_empty_file_gives_defaults():
    assert parse_config("") == RunConfig()


def test_values_land_in_nested_bundles():
    cfg = parse_config("""
[env]
wind_speed = 9.5
[kite]
mass = 25   # kg
[sweep]
winds = 7, 8
relative = no
[design]
sigma = auto
mu = 1e-8
[output]
directory = results
""")
    assert cfg.plant.env.wind_speed == 9.5 and cfg.plant.kite.mass == 25.0
    assert cfg.sweep.winds == (7.0, 8.0) and cfg.sweep.relative is False
    assert cfg.design.sigma is None and cfg.design.mu == 1e-8
    assert cfg.output == "results"


@pytest.mark.parametrize("text, path", [
    ("[reel]\nv_retr = 1\n", "reel"),
    ("[kite]\narea = -3\n", "kite.area"),
    ("[kite]\nareaa = 3\n", "kite.areaa"),
    ("[kites]\narea = 3\n", "kites"),
    ("[env]\nwind_speed = fast\n", "env.wind_speed"),
    ("[env]\nwind_speed = nan\n", "env.wind_speed"),
    ("[design]\nmu = -1\n", "design.mu"),
    ("[sweep]\nrelative = maybe\n", "sweep.relative"),
    ("[compare]\nfast_recovery_speed = -30\n", "compare.fast_recovery_speed"),
])
def test_invalid_values_name_the_field(text, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.path.startswith(path)


def test_wrong_sign_reel_in_names_the_field():
    with pytest.raises(ConfigError, match=r"reel\.v_retr"):
        parse_config("[reel]\nv_retr = 1\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="file not found"):
        load_config(tmp_path / "nope.ini")


def test_dump_is_a_complete_loadable_config():
    cfg = parse_config("[env]\nwind_speed = 8.25\n[reel]\nmode = fixed\n")
    assert parse_config(dump_config(cfg)) == cfg


@given(st.floats(0.5, 25.0), st.floats(0.01, 0.2), st.integers(2, 30))
def test_round_trip_of_arbitrary_values(wind, step, cycles):
    cfg = parse_config(f"[env]\nwind_speed = {wind!r}\n[reel]\nstep = {step!r}\n"
                       f"[compare]\nonline_cycles = {cycles}\n")
    assert parse_config(dump_config(cfg)) == cfg


# -- command line ---------------------------------------------------------------------------

def test_missing_config_exits_1(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "none.ini")]) == 1
    assert "file not found" in capsys.readouterr().err


def test_wrong_sign_reel_in_exits_1(tmp_path, capsys):
    assert cli.main(["simulate", "--vretr", "1", "--out", str(tmp_path)]) == 1
    assert "--vretr" in capsys.readouterr().err
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[reel]\nv_retr = 1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "reel.v_retr" in capsys.readouterr().err


def test_missing_manifold_exits_1(tmp_path, capsys):
    assert cli.main(["online", "--manifold", str(tmp_path / "m.csv"), "--out", str(tmp_path)]) == 1
    assert "file not found" in capsys.readouterr().err


def test_bad_wind_step_exits_1(tmp_path, capsys):
    m = tmp_path / "m.csv"
    m.write_text("K_trac,K_retr\n6000,110\n")
    assert cli.main(["online", "--manifold", str(m), "--wind-step", "5-9", "--out", str(tmp_path)]) == 1
    assert "--wind-step" in capsys.readouterr().err


def test_grid_beyond_winch_limits_exits_3(tmp_path, capsys):
    cfg = tmp_path / "grid.ini"
    cfg.write_text("[sweep]\nwinds = 8, 9\ntrac_speeds = 20\nretr_speeds = -40, -50\nrelative = false\n")
    assert cli.main(["design", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 3
    assert "no feasible region" in capsys.readouterr().err


def test_simulate_writes_trace_and_metrics(tmp_path, capsys):
    assert cli.main(["simulate", "--wind", "9", "--vtrac", "2", "--vretr", "-4", "--out", str(tmp_path)]) == 0
    assert "feasible=1" in capsys.readouterr().out
    with open(tmp_path / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and float(rows[-1]["P_cycle_W"]) > 0
    with open(tmp_path / "trace.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert {"phase", "v_ref_mps", "F_star_N", "tether_force_N"} <= set(header)


def test_infeasible_simulation_exits_2(tmp_path):
    cfg = tmp_path / "tight.ini"
    cfg.write_text("[constraints]\nmax_force = 100\n")
    assert cli.main(["simulate", "--config", str(cfg), "--wind", "9", "--vtrac", "2", "--vretr", "-4",
                     "--cycles", "2", "--out", str(tmp_path)]) == 2


def test_online_with_wind_step_reports_every_cycle(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("K_trac,K_retr\n6435,111.8\n")
    assert cli.main(["online", "--manifold", str(m), "--wind", "7", "--wind-step", "2:9", "--cycles", "3",
                     "--out", str(tmp_path)]) == 0
    with open(tmp_path / "cycles.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["v_w"]) for r in rows] == [7.0, 7.0, 9.0]
    assert (tmp_path / "convergence.csv").stat().st_size > 0
