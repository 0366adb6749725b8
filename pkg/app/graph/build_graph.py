# app/graph/build_graph.py
import logging

from langgraph.graph import END, START, StateGraph

from app.graph.state import ExperimentState

logger = logging.getLogger(__name__)


def prepare_data_node(state: ExperimentState) -> ExperimentState:
    from app.services.datagen import Family, simulate, spawn_seeds

    cfg = state["config"]
    seeds = spawn_seeds(state.get("seed", cfg.seed), 3)

    if cfg.data_path:
        from app.services.codon import load_codon_csv, split_indices

        ds = load_codon_csv(cfg.data_path)
        train, val, _ = split_indices(ds.n, seeds[0])
        return {
            "train_A": ds.features[train], "train_y": ds.labels[train],
            "val_A": ds.features[val], "val_truth": ds.labels[val],
            "q": ds.q, "data_seeds": seeds,
        }

    q = state.get("q", cfg.q)
    train = simulate(cfg.sim_spec(cfg.n, seeds[0], q))
    val = simulate(cfg.sim_spec(cfg.validation_size, seeds[1], q))
    if cfg.family == Family.QUANTILE:
        truth = val.signal
    elif cfg.family == Family.LOGISTIC:
        truth = val.responses.astype(int) + 1
    else:
        truth = val.responses
    return {
        "train_A": train.A, "train_y": train.responses,
        "val_A": val.A, "val_truth": truth,
        "q": q, "data_seeds": seeds,
    }


def build_sketch_node(state: ExperimentState) -> ExperimentState:
    from app.services.datagen import Family
    from app.services.kernel import (
        SketchSpec,
        SketchStrategy,
        assemble_blocks,
        assemble_blocks_from_data,
        cross_kernel,
        gram_matrix,
        make_sketch,
    )
    from app.services.losses import ProblemFactory
    from app.services.path import MetricKind, ValidationData

    cfg = state["config"]
    A, y = state["train_A"], state["train_y"]
    m = state.get("m", cfg.m)
    labels = y if cfg.sketch == SketchStrategy.STRATIFIED else None
    rows = make_sketch(A.shape[0], labels, SketchSpec(m=m, strategy=cfg.sketch, rng_seed=state["data_seeds"][2]))

    kernel = cfg.kernel_spec()
    if A.shape[0] <= cfg.gram_limit:
        blocks = assemble_blocks(gram_matrix(A, kernel, workers=cfg.workers), rows, cfg.damping)
    else:
        blocks = assemble_blocks_from_data(A, rows, kernel, cfg.damping, workers=cfg.workers)

    kind = MetricKind.MAD if cfg.family == Family.QUANTILE else MetricKind.LOGLIK
    val_data = ValidationData(K_new=cross_kernel(state["val_A"], A[rows], kernel),
                              truth=state["val_truth"], kind=kind)
    factory = ProblemFactory(blocks=blocks, loss=cfg.loss(state.get("q")), responses=y)
    return {"sketch_rows": rows, "factory": factory, "val_data": val_data}


def solve_node(state: ExperimentState) -> ExperimentState:
    from app.services.path import SolverName, run_path, run_solver, score

    cfg = state["config"]
    solver = SolverName(state.get("solver", cfg.solver))
    factory = state["factory"]
    summary = {
        "family": cfg.family.value, "solver": solver.value, "m": factory.blocks.m,
        "q": state.get("q", cfg.q), "seed": state.get("seed", cfg.seed),
    }

    if state["command"] == "fit":
        inst = factory(cfg.lam)
        res = run_solver(inst, inst.initial_point(), solver, cfg.qmme_config(), cfg.baseline_config())
        summary.update(lambda_best=cfg.lam, total_time_s=res.wall_time_s,
                       metric=score(inst, res.x, state["val_data"]),
                       iterations=res.iterations, reason=res.reason)
        return {"solve_result": res, "summary": summary}

    result = run_path(factory, state["val_data"], cfg.path_config(solver),
                      cfg.qmme_config(), cfg.baseline_config())
    best = result.best_entry
    summary.update(lambda_best=result.best_lambda, total_time_s=result.total_time_s,
                   metric=best.metric if best is not None else float("nan"))
    return {"path_result": result, "summary": summary}


def persist_node(state: ExperimentState) -> ExperimentState:
    from app.services.database import init_db
    from app.services.results_repo import record_path

    url = state["db_url"]
    init_db(url)
    ids = record_path(url, state["run_tag"], state["summary"]["family"], state["path_result"])
    logger.info(f"stored {len(ids)} path rows under run_tag={state['run_tag']}")
    return {"persisted_ids": ids}


def route_after_solve(state: ExperimentState) -> str:
    if state.get("persist") and state.get("db_url") and "path_result" in state:
        return "persist"
    return END


def build_app():
    g = StateGraph(ExperimentState)
    g.add_node("prepare_data", prepare_data_node)
    g.add_node("build_sketch", build_sketch_node)
    g.add_node("solve", solve_node)
    g.add_node("persist", persist_node)

    g.add_edge(START, "prepare_data")
    g.add_edge("prepare_data", "build_sketch")
    g.add_edge("build_sketch", "solve")
    g.add_conditional_edges("solve", route_after_solve, {"persist": "persist", END: END})
    g.add_edge("persist", END)

    # state carries numpy arrays and solver objects, so no checkpointer
    return g.compile()
