import json
import subprocess
import sys

import pytest

from aggbid.cli import main
from aggbid.io import data_path, read_dispatch_csv


def test_run_writes_reports_and_plot(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--mode", "terminal", "--out", str(out), "--plots"]) == 0
    assert "policy auto:relaxed" in capsys.readouterr().out
    assert len(read_dispatch_csv(out / "dispatch.csv")["hour"]) == 24
    png = (out / "dispatch.png").read_bytes()
    assert png.startswith(b"\x89PNG")


def test_sweep_with_plot(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--k-max", "4", "--out", str(out), "--plots"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 4
    assert (out / "sweep.png").stat().st_size > 0


def test_plots_are_byte_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["sweep", "--k-max", "3", "--out", str(tmp_path / d), "--plots"]) == 0
    assert (tmp_path / "a" / "sweep.png").read_bytes() == (tmp_path / "b" / "sweep.png").read_bytes()


def test_oracle_check_on_single_hour_case(capsys):
    assert main(["oracle-check", "--config", "derived_t1.cfg"]) == 0
    assert "agree" in capsys.readouterr().out


def test_oracle_check_too_large_is_usage_error():
    assert main(["oracle-check"]) == 1


def test_inspect_model(capsys):
    assert main(["inspect-model", "--mode", "terminal"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_vars"] == 96
    assert info["hessian_rank"] == 1
    assert info["hessian_min_eig"] >= -1e-9


def test_usage_errors():
    with pytest.raises(SystemExit) as err:
        main(["run", "--mode", "bogus"])
    assert err.value.code == 1
    assert main(["run", "--config", "does_not_exist.cfg"]) == 1
    assert main(["sweep", "--k-step", "0"]) == 1


def test_infeasible_exit_code(tmp_path):
    # 50 kW of charging cannot lift 180 kWh to the 300 kWh floor in one hour
    cfg = tmp_path / "bad.cfg"
    src = data_path("derived_t1.cfg").read_text()
    cfg.write_text(src.replace("cr_max = 600 kW", "cr_max = 50 kW").replace(
        "prices = derived_t1.csv", f"prices = {tmp_path / 'p.csv'}"))
    (tmp_path / "p.csv").write_text("hour,price_usd_per_mwh\n1,100\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aggbid", "inspect-model"], capture_output=True,
                          text=True, cwd=tmp_path)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["eq_rows"] == 48
