import csv
import dataclasses
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from it2mpc import bench, sim


def copy_config(tmp_path, edit=None, plant_edit=None):
    src = bench.bundled_config().parent
    for name in ("cstr_plant.yaml", "cstr_controller.yaml"):
        shutil.copy(src / name, tmp_path / name)
    d = yaml.safe_load((src / "cstr.yaml").read_text())
    if edit:
        edit(d)
    (tmp_path / "cstr.yaml").write_text(yaml.safe_dump(d))
    if plant_edit:
        p = yaml.safe_load((src / "cstr_plant.yaml").read_text())
        plant_edit(p)
        (tmp_path / "cstr_plant.yaml").write_text(yaml.safe_dump(p))
    return tmp_path / "cstr.yaml"


def test_bundled_config(cstr):
    assert (cstr.plant.r, cstr.plant.n, cstr.plant.w, cstr.synth.h) == (3, 2, 1, 10)
    np.testing.assert_array_equal(cstr.synth.Q, np.diag([1e-6, 1e-9]))
    np.testing.assert_array_equal(cstr.synth.R, [[0.001]])
    np.testing.assert_array_equal(cstr.x0, [0.5, -0.5])
    assert cstr.synth.rho == 0.8 and cstr.synth.rho_d == 0.2 and cstr.synth.u_max[0] == 6.0
    np.testing.assert_allclose(cstr.plant.rules[2].Bd, 0.001 * cstr.plant.rules[2].B, rtol=1e-12)


def test_rho_sum_rejected(tmp_path):
    path = copy_config(tmp_path, lambda d: d["synth"].update(rho_d=0.3))
    with pytest.raises(bench.ConfigError, match="rho"):
        bench.load_config(path)


def test_bad_matrix_shape_rejected(tmp_path):
    path = copy_config(tmp_path, plant_edit=lambda p: p["rules"][0].update(A=[[1, 2, 3], [4, 5, 6]]))
    with pytest.raises(bench.ConfigError, match=r"rules\[0\]\.A.*\(2, 2\).*\(2, 3\)"):
        bench.load_config(path)


def test_parse_error_has_line(tmp_path):
    path = copy_config(tmp_path)
    path.write_text(path.read_text() + "\nsynth: [unclosed\n")
    with pytest.raises(bench.ConfigError, match=r"cstr.yaml:\d+:\d+"):
        bench.load_config(path)


def test_missing_file_and_case(tmp_path):
    path = copy_config(tmp_path, lambda d: d.update(plant="nope.yaml"))
    with pytest.raises(bench.ConfigError, match="not found"):
        bench.load_config(path)
    path = copy_config(tmp_path, lambda d: d["sim"].update(case="sideways"))
    with pytest.raises(bench.ConfigError, match="case"):
        bench.load_config(path)


def test_cli_config_error_exit(tmp_path, capsys):
    path = copy_config(tmp_path, lambda d: d["synth"].update(rho=0.9))
    assert bench.main(["run", "--config", str(path)]) == bench.EXIT_CONFIG
    assert "rho" in capsys.readouterr().err


def test_cli_step0_infeasible_exit(tmp_path):
    def edit(d):
        d["synth"]["u_max"] = [1.0e-9]
        d["sim"]["x0"] = [3.0, -3.0]
    path = copy_config(tmp_path, edit)
    code = bench.main(["run", "--config", str(path), "--case", "nodelay", "--steps", "2",
                       "--out", str(tmp_path / "o")])
    assert code == bench.EXIT_INFEASIBLE


def test_cli_uncontrolled_run_and_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(bench.OUT_ENV, str(tmp_path / "env_out"))
    code = bench.main(["run", "--case", "uncontrolled", "--steps", "30", "--seed", "2"])
    assert code == bench.EXIT_OK
    out = tmp_path / "env_out"
    assert (out / "uncontrolled_s2_trajectory.csv").exists()
    assert not (out / "uncontrolled_s2_synthesis.csv").exists()
    assert (out / "uncontrolled_s2_plot.py").exists()


def test_cli_controlled_run_artifacts(tmp_path):
    out = tmp_path / "o"
    code = bench.main(["run", "--case", "nodelay", "--steps", "3", "--out", str(out), "--dump-lmi"])
    assert code == bench.EXIT_OK
    with open(out / "nodelay_s1_trajectory.csv") as fh:
        assert next(csv.reader(fh)) == ["k", "t", "x_1", "x_2", "u_1", "d_x", "d_u", "zeta", "feasible"]
    with open(out / "nodelay_s1_synthesis.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == sim.SYNTH_LOG_HEADER and len(rows) == 4
    report = (out / "nodelay_s1_report.txt").read_text()
    assert "[lrf_decrease] PASS" in report and "[rpi_sampling] PASS" in report
    assert "decrease[mu,1,1]" in (out / "nodelay_s1_lmi_k0.txt").read_text()
    compile((out / "nodelay_s1_plot.py").read_text(), "plot", "exec")


def test_sweep_single_seed(cstr, tmp_path):
    cfg = dataclasses.replace(cstr, case="statedelay", steps=3)
    rows, summary = bench.sweep(cfg, [4], tmp_path, rpi_samples=50)
    assert len(rows) == 1 and rows[0]["infeasible_steps"] == 0
    with open(tmp_path / "statedelay_sweep.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == bench.SWEEP_HEADER and [r[0] for r in table[1:]] == ["4", "min", "median", "max"]
    assert "median" in bench.format_table(rows, summary)
    with pytest.raises(ValueError):
        bench.sweep(cfg, [], tmp_path)


def test_rerun_is_byte_identical(cstr, tmp_path):
    cfg = dataclasses.replace(cstr, case="bothdelay", steps=4)
    a = bench.run_case(cfg, tmp_path / "a", seed=3, rpi_samples=20)
    b = bench.run_case(cfg, tmp_path / "b", seed=3, rpi_samples=20)
    for key in ("trajectory", "synthesis"):
        assert Path(a.files[key]).read_bytes() == Path(b.files[key]).read_bytes()
