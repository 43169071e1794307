import numpy as np
import pytest

from lassodeepc.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, ConfigError, main, parse_config
from lassodeepc.closed_loop import compute_rmse, read_result_csv, read_sweep_csv
from lassodeepc.signal_data import read_partition_csv, read_trajectory_csv

SMALL = """
# small closed loop: fast enough for the unit tests
structure = block_hankel
T_d = 400
rho = 6
horizon = 10
lambda_g = 0.01
reference = 20:0.17, 20:1.57
T_sim = 40
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return str(path)


def _cfg(tmp_path, text):
    path = tmp_path / "c.cfg"
    path.write_text(text)
    return str(path)


def test_collect_two_operating_points(tmp_path, small_cfg):
    assert main(["collect", "--config", small_cfg, "--out", str(tmp_path)]) == EXIT_OK
    traj = read_trajectory_csv(tmp_path / "trajectory.csv")
    part = read_partition_csv(tmp_path / "partition.csv")
    assert traj.length == 400 and len(part.ranges) == 2


def test_collect_single_operating_point(tmp_path):
    cfg = _cfg(tmp_path, "structure = single_op\nop_angles = 0.17\nT_d = 300\n")
    assert main(["collect", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    part = read_partition_csv(tmp_path / "partition.csv")
    assert len(part.ranges) == 1 and part.ranges[0][2] == 1


def test_collect_seed_changes_data(tmp_path, small_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    main(["collect", "--config", small_cfg, "--out", str(a), "--seed", "1"])
    main(["collect", "--config", small_cfg, "--out", str(b), "--seed", "2"])
    ua = read_trajectory_csv(a / "trajectory.csv").u
    assert not np.array_equal(ua, read_trajectory_csv(b / "trajectory.csv").u)


def test_missing_output_directory(tmp_path, small_cfg):
    assert main(["collect", "--config", small_cfg, "--out", str(tmp_path / "nope")]) == EXIT_ERROR


@pytest.mark.parametrize("text", ["rho = -1\n", "no equals sign\n", "colour = red\n",
                                  "T_d = ten\n", "structure = spiral\n", "Q = 0\n"])
def test_malformed_config(tmp_path, text):
    assert main(["run", "--config", _cfg(tmp_path, text), "--out", str(tmp_path)]) == EXIT_ERROR


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "x.cfg"), "--out", str(tmp_path)]) == EXIT_ERROR


def test_parse_config_values():
    cfg = parse_config("reference = 10:0.5, 5:1.0\nu_max = none\nop_angles = 0.1, 0.2\n")
    assert cfg.reference == ((10, 0.5), (5, 1.0))
    assert cfg.u_max is None and cfg.op_angles == (0.1, 0.2)
    with pytest.raises(ConfigError):
        parse_config("reference = 10\n")


def test_empty_lambda_grid(tmp_path, small_cfg):
    assert main(["sweep", "--config", small_cfg, "--out", str(tmp_path),
                 "--lambda-grid", ""]) == EXIT_ERROR


def test_explain_step_out_of_range(tmp_path, small_cfg):
    assert main(["explain", "--config", small_cfg, "--out", str(tmp_path),
                 "--step", "40"]) == EXIT_ERROR


def test_usage_error_is_exit_one():
    assert main(["frobnicate"]) == EXIT_ERROR
    assert main(["explain"]) == EXIT_ERROR     # --step is required


def test_run_small_config(tmp_path, small_cfg, capsys):
    assert main(["run", "--config", small_cfg, "--out", str(tmp_path)]) == EXIT_OK
    cols = read_result_csv(tmp_path / "result.csv")
    assert len(cols["step"]) == 40
    ru, ry = compute_rmse(cols["u_applied"], cols["y_measured"], cols["u_ref"], cols["y_ref"])
    assert f"rmse_y={ry:.6g}" in capsys.readouterr().out


def test_run_with_infeasible_steps_exits_two(tmp_path):
    # fewer data columns (10) than window rows (12): generic windows are unreachable
    cfg = _cfg(tmp_path, "structure = single_op\nop_angles = 0.17\nT_d = 25\nrho = 6\n"
                         "horizon = 10\nreference = 5:1.57\nreference_groups = 1\nT_sim = 5\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_sweep_small_grid(tmp_path, small_cfg):
    assert main(["sweep", "--config", small_cfg, "--out", str(tmp_path),
                 "--lambda-grid", "0.01,1"]) == EXIT_OK
    rows = read_sweep_csv(tmp_path / "sweep.csv")
    assert [r["lambda_g"] for r in rows] == [0.01, 1.0]


def test_explain_with_explicit_region(tmp_path):
    cfg = _cfg(tmp_path, SMALL.replace("T_d = 400", "T_d = 60").replace("rho = 6", "rho = 2")
               .replace("horizon = 10", "horizon = 3"))
    assert main(["explain", "--config", cfg, "--out", str(tmp_path), "--step", "25"]) == EXIT_OK
    text = (tmp_path / "explain_step25.txt").read_text()
    assert "explainability_index=" in text
    assert (tmp_path / "selector_step25.csv").exists()
    assert "explicit_region=" in text and "explicit_region_contains_z_ini=True" in text
    residual = float(text.split("explicit_residual=")[1].split()[0])
    norm1 = float(text.split("norm1_g=")[1].split()[0])
    assert residual <= 1e-6 * max(1.0, norm1)


def test_explain_reports_degenerate_certificate(tmp_path):
    cfg = _cfg(tmp_path, SMALL.replace("T_d = 400", "T_d = 60").replace("rho = 6", "rho = 2")
               .replace("horizon = 10", "horizon = 3"))
    assert main(["explain", "--config", cfg, "--out", str(tmp_path), "--step", "5"]) == EXIT_OK
    assert "explicit_law=unavailable" in (tmp_path / "explain_step5.txt").read_text()
