import json

import numpy as np
import pytest

from app.cli import build_parser, main
from app.services.trajectory_io import read_table, read_trajectory


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for var in ("QMME_OUTPUT_DIR", "QMME_RESULTS_DB", "QMME_LOG_LEVEL"):
        monkeypatch.delenv(var, raising=False)


def _config(tmp_path, *extra):
    lines = [
        "family=logistic", "n=60", "d=6", "m=8", "sigma=3", "lam=0.1",
        "lambda_max=1", "lambda_min=0.01", "n_lambdas=3", "max_iters=2000",
        f"output_dir={tmp_path / 'out'}",
        *extra,
    ]
    path = tmp_path / "exp.cfg"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_simulate(tmp_path, capsys):
    assert main(["simulate", "--config", _config(tmp_path)]) == 0
    out = _stdout_json(capsys)
    rows = read_table(out["dataset"])
    assert len(rows) == 60
    assert (tmp_path / "out" / "dataset.meta.json").is_file()


def test_fit_writes_trajectory(tmp_path, capsys):
    assert main(["fit", "--config", _config(tmp_path)]) == 0
    summary = _stdout_json(capsys)
    assert summary["solver"] == "qmme"
    trajectory = read_trajectory(tmp_path / "out" / "trajectory_qmme.csv")
    assert len(trajectory) == summary["iterations"]
    meta = json.loads((tmp_path / "out" / "trajectory_qmme.meta.json").read_text())
    assert meta["command"] == "fit"
    assert meta["config"]["n"] == 60


def test_fit_without_trajectory(tmp_path, capsys):
    assert main(["fit", "--config", _config(tmp_path, "log_trajectory=false", "solver=newton")]) == 0
    assert not (tmp_path / "out" / "trajectory_newton.csv").exists()


def test_output_dir_env_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("QMME_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert main(["fit", "--config", _config(tmp_path)]) == 0
    assert (tmp_path / "elsewhere" / "trajectory_qmme.csv").is_file()


def test_path_table(tmp_path, capsys):
    assert main(["path", "--config", _config(tmp_path)]) == 0
    out = _stdout_json(capsys)
    assert out["run_tag"].startswith("path-")
    rows = read_table(tmp_path / "out" / "path_qmme.csv")
    assert [float(r["lambda"]) for r in rows][0] == 1.0
    assert len(rows) == 3
    assert (tmp_path / "out" / "results.db").is_file()


def test_bench_m_sweep(tmp_path, capsys):
    cfg = _config(tmp_path, "m_values=4,8", "solvers=qmme,newton", "replicates=3", "workers=2")
    assert main(["bench", "--config", cfg]) == 0
    assert _stdout_json(capsys)["rows"] == 12
    rows = read_table(tmp_path / "out" / "bench_m_sweep.csv")
    assert len(rows) == 12
    assert sorted({r["m"] for r in rows}) == ["4", "8"]
    keys = [(r["family"], int(r["m"]), int(r["q"]), int(r["seed"]), r["solver"]) for r in rows]
    assert keys == sorted(keys)


def test_bench_speed(tmp_path, capsys):
    cfg = _config(tmp_path, "bench_preset=speed", "max_iters=50")
    assert main(["bench", "--config", cfg]) == 0
    rows = read_table(tmp_path / "out" / "bench_speed.csv")
    assert sorted(r["solver"] for r in rows) == ["adagd", "fista", "newton", "qmme"]
    assert (tmp_path / "out" / "speed_qmme.csv").is_file()


def test_q_sweep_needs_multinomial(tmp_path, capsys):
    assert main(["bench", "--config", _config(tmp_path, "bench_preset=q_sweep")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"


def test_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("bandwidth=3\n", encoding="utf-8")
    assert main(["fit", "--config", str(path)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"
    assert "bandwidth" in err["message"]


@pytest.mark.slow
def test_check_suite(capsys):
    assert main(["check", "--seed", "0"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert all(r["valid"] for r in reports)


def _desk_config(tmp_path, **values):
    values.setdefault("output_dir", tmp_path / "out")
    path = tmp_path / "desk.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")
    return str(path)


def _loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@pytest.mark.slow
@pytest.mark.parametrize("family", ["quantile", "logistic", "multinomial"])
def test_desk_scale_convergence_ordering(tmp_path, family):
    cfg = _desk_config(tmp_path, family=family, n=4096, m=512, lam=1e-4, grad_tol=1e-4,
                       max_iters=1000, bench_preset="speed")
    assert main(["bench", "--config", cfg]) == 0
    out = tmp_path / "out"

    def reached(solver):
        return read_trajectory(out / f"speed_{solver}.csv")[-1].grad_norm < 1e-4

    assert reached("qmme")
    assert reached("newton")
    assert not reached("fista")
    assert not reached("adagd")
    if family == "multinomial":
        times = {r["solver"]: float(r["total_time_s"]) for r in read_table(out / "bench_speed.csv")}
        assert times["qmme"] < times["newton"]


@pytest.mark.slow
def test_desk_scale_q_scaling(tmp_path):
    cfg = _desk_config(tmp_path, family="multinomial", n=4096, m=128, q_values="3,5,8",
                       n_lambdas=10, solvers="qmme,newton", bench_preset="q_sweep")
    assert main(["bench", "--config", cfg]) == 0
    rows = read_table(tmp_path / "out" / "bench_q_sweep.csv")
    assert all(r["total_time_s"] != "" for r in rows)
    slopes = {}
    for solver in ("qmme", "newton"):
        mine = sorted((int(r["q"]), float(r["total_time_s"])) for r in rows if r["solver"] == solver)
        slopes[solver] = _loglog_slope([q - 1 for q, _ in mine], [t for _, t in mine])
    assert slopes["newton"] >= 2.2
    assert slopes["qmme"] <= 1.5


@pytest.mark.slow
def test_desk_scale_m_scaling(tmp_path):
    cfg = _desk_config(tmp_path, family="multinomial", n=4096, m_values="32,128,512",
                       n_lambdas=10, solvers="qmme,newton", bench_preset="m_sweep")
    assert main(["bench", "--config", cfg]) == 0
    rows = read_table(tmp_path / "out" / "bench_m_sweep.csv")
    times = {(int(r["m"]), r["solver"]): float(r["total_time_s"]) for r in rows}
    ratios = [times[(m, "newton")] / times[(m, "qmme")] for m in (32, 128, 512)]
    assert ratios == sorted(ratios)
    assert ratios[-1] > 2.0
