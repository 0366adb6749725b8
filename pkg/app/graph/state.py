# app/graph/state.py
from typing import Any, Dict, List, Optional, TypedDict

import numpy as np


class ExperimentState(TypedDict, total=False):
    # inputs
    config: Any             # ExperimentConfig
    command: str            # "fit" or "path"
    solver: str
    seed: int
    m: int
    q: int
    persist: bool
    run_tag: str
    db_url: Optional[str]

    # prepare_data
    train_A: np.ndarray
    train_y: np.ndarray
    val_A: np.ndarray
    val_truth: np.ndarray
    data_seeds: List[int]

    # build_sketch
    sketch_rows: np.ndarray
    factory: Any            # ProblemFactory
    val_data: Any           # ValidationData

    # solve
    solve_result: Any       # SolveResult
    path_result: Any        # PathResult
    summary: Dict[str, Any]

    # persist
    persisted_ids: List[int]
