# app/cli.py
"""
qmme command line.

    qmme simulate --config exp.cfg     write a simulated dataset
    qmme fit      --config exp.cfg     one (lambda, solver) solve + trajectory
    qmme path     --config exp.cfg     solution path table
    qmme bench    --config exp.cfg     m / q sweeps, codon, solver speed runs
    qmme check                         numerical invariant suite

Every command writes a JSON metadata sidecar next to its outputs. Library
errors exit with status 2 and a one-line JSON error on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from app.errors import ConfigError, QmmeError
from app.settings import log_level, output_dir, results_db_url

logger = logging.getLogger(__name__)


def _load_config(args: argparse.Namespace):
    from app.services.experiment_config import ExperimentConfig, parse_config

    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    out = output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _sidecar(out: Path, name: str, cfg, seeds: List[int], command: str) -> None:
    from app.services.trajectory_io import write_metadata

    write_metadata(out / f"{name}.meta.json", cfg.model_dump(mode="json"), seeds, command)


def _run_tag(command: str) -> str:
    return f"{command}-{uuid.uuid4().hex[:12]}"


def cmd_simulate(args: argparse.Namespace) -> int:
    from app.services.datagen import simulate, spawn_seeds
    from app.services.trajectory_io import write_dataset_csv

    cfg, out = _load_config(args)
    seed = spawn_seeds(cfg.seed, 3)[0]
    data = simulate(cfg.sim_spec(cfg.n, seed))
    path = write_dataset_csv(data, out / "dataset.csv")
    _sidecar(out, "dataset", cfg, [seed], "simulate")
    logger.info(f"wrote {cfg.n} rows to {path}")
    print(json.dumps({"dataset": str(path), "n": cfg.n, "d": cfg.d}))
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    from app.graph.build_graph import build_app
    from app.services.trajectory_io import emit_trajectory

    cfg, out = _load_config(args)
    state = build_app().invoke({"config": cfg, "command": "fit", "persist": False})
    res = state["solve_result"]
    name = f"trajectory_{state['summary']['solver']}"
    if res.trajectory:
        emit_trajectory(res.trajectory, out / f"{name}.csv")
    _sidecar(out, name, cfg, state["data_seeds"], "fit")
    print(json.dumps(state["summary"]))
    return 0


def cmd_path(args: argparse.Namespace) -> int:
    from app.graph.build_graph import build_app
    from app.services.trajectory_io import write_path_table

    cfg, out = _load_config(args)
    run_tag = _run_tag("path")
    state = build_app().invoke({
        "config": cfg, "command": "path", "persist": True,
        "run_tag": run_tag, "db_url": results_db_url(out),
    })
    name = f"path_{state['summary']['solver']}"
    write_path_table(state["path_result"], out / f"{name}.csv")
    _sidecar(out, name, cfg, state["data_seeds"], "path")
    print(json.dumps({**state["summary"], "run_tag": run_tag}))
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _graph_task(cfg, seed: int, solver, m: int, q: int) -> Dict[str, Any]:
    from app.graph.build_graph import build_app

    state = build_app().invoke({
        "config": cfg, "command": "path", "persist": False,
        "seed": seed, "solver": solver.value, "m": m, "q": q,
    })
    return state["summary"]


def _failed_row(cfg, solver, m: int, q: int, seed: int, err: Exception) -> Dict[str, Any]:
    logger.error(f"bench task {solver.value} m={m} q={q} seed={seed} failed: {err}")
    return {"family": cfg.family.value, "solver": solver.value, "m": m, "q": q, "seed": seed,
            "lambda_best": float("nan"), "total_time_s": float("nan"), "metric": float("nan"),
            "error": f"{type(err).__name__}: {err}"}


def _codon_task(cfg, ds, seed: int, solver) -> Dict[str, Any]:
    from app.services.codon import codon_workflow

    outcome = codon_workflow(ds, cfg.kernel_spec(), cfg.m, cfg.damping, seed, cfg.path_config(solver),
                             cfg.qmme_config(), cfg.baseline_config(), cfg.parameterization)
    return {"family": cfg.family.value, "solver": solver.value, "m": cfg.m, "q": ds.q, "seed": seed,
            "lambda_best": outcome.best_lambda, "total_time_s": outcome.path.total_time_s,
            "metric": outcome.test_accuracy, "error": outcome.error}


def _speed_runs(cfg, out: Path, seed: int) -> List[Dict[str, Any]]:
    from app.graph.build_graph import build_app
    from app.services.path import SolverName
    from app.services.trajectory_io import emit_trajectory

    app = build_app()
    rows = []
    for solver in SolverName:
        state = app.invoke({"config": cfg, "command": "fit", "persist": False,
                            "seed": seed, "solver": solver.value})
        res = state["solve_result"]
        if res.trajectory:
            emit_trajectory(res.trajectory, out / f"speed_{solver.value}.csv")
        rows.append(state["summary"])
    return rows


def cmd_bench(args: argparse.Namespace) -> int:
    from app.services.database import init_db
    from app.services.datagen import Family, spawn_seeds
    from app.services.experiment_config import BenchPreset
    from app.services.results_repo import fetch_bench_rows, record_bench_row
    from app.services.trajectory_io import write_bench_table

    cfg, out = _load_config(args)
    preset = cfg.bench_preset
    url = results_db_url(out)
    init_db(url)
    run_tag = _run_tag("bench")
    seeds = spawn_seeds(cfg.seed, cfg.replicates)

    def store(row: Dict[str, Any]) -> None:
        record_bench_row(url, run_tag, preset.value, row)

    if preset == BenchPreset.SPEED:
        for row in _speed_runs(cfg, out, seeds[0]):
            store(row)
    else:
        if preset == BenchPreset.CODON:
            from app.services.codon import load_codon_csv

            if not cfg.data_path:
                raise ConfigError("the codon preset needs data_path")
            ds = load_codon_csv(cfg.data_path)
            tasks = [(s, solver) for s in seeds for solver in cfg.solvers]

            def run(task):
                seed, solver = task
                try:
                    row = _codon_task(cfg, ds, seed, solver)
                except QmmeError as e:
                    row = _failed_row(cfg, solver, cfg.m, ds.q, seed, e)
                store(row)
        else:
            if preset == BenchPreset.Q_SWEEP and cfg.family != Family.MULTINOMIAL:
                raise ConfigError("the q_sweep preset needs family=multinomial")
            if preset == BenchPreset.M_SWEEP:
                grid = [(m, cfg.q) for m in cfg.m_values]
            else:
                grid = [(cfg.m, q) for q in cfg.q_values]
            tasks = [(s, solver, m, q) for s in seeds for (m, q) in grid for solver in cfg.solvers]

            def run(task):
                seed, solver, m, q = task
                try:
                    row = _graph_task(cfg, seed, solver, m, q)
                except QmmeError as e:
                    row = _failed_row(cfg, solver, m, q, seed, e)
                store(row)
                logger.info(f"bench {solver.value} m={m} q={q} seed={seed} done")

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            # re-raise the first unexpected failure after the others finish
            for fut in [pool.submit(run, t) for t in tasks]:
                fut.result()

    rows = fetch_bench_rows(url, run_tag)
    path = write_bench_table(rows, out / f"bench_{preset.value}.csv")
    _sidecar(out, f"bench_{preset.value}", cfg, seeds, "bench")
    print(json.dumps({"rows": len(rows), "table": str(path), "run_tag": run_tag}))
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    from app.services.invariants import run_invariant_suite

    reports = run_invariant_suite(seed=args.seed)
    print(json.dumps([{"name": r.name, "worst": r.worst, "threshold": r.threshold, "valid": r.valid}
                      for r in reports], indent=2))
    return 0 if all(r.valid for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmme", description="QMME kernel learning experiments")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_text in (
        ("simulate", cmd_simulate, "write a simulated dataset CSV"),
        ("fit", cmd_fit, "solve one instance and write its trajectory"),
        ("path", cmd_path, "compute a warm-started solution path"),
        ("bench", cmd_bench, "run a benchmark preset"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="key=value experiment file")
        p.set_defaults(func=fn)

    p = sub.add_parser("check", help="run the numerical invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=log_level(args.log_level),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        return args.func(args)
    except QmmeError as e:
        logger.error(f"{args.command} aborted: {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    except Exception:
        logger.exception(f"{args.command} failed")
        return 1


if __name__ == "__main__":
    sys.exit(main())
