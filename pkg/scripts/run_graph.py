# scripts/run_graph.py
import json
import logging
import sys
import uuid

from dotenv import load_dotenv

from app.graph.build_graph import build_app
from app.services.experiment_config import ExperimentConfig, parse_config
from app.settings import log_level, output_dir, results_db_url


def main(argv=None):
    load_dotenv()
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=log_level(), format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
                        datefmt="%H:%M:%S")
    cfg = parse_config(argv[0]) if argv else ExperimentConfig()
    command = argv[1] if len(argv) > 1 else "fit"

    # path rows go to the store created by scripts.init_db
    state = {"config": cfg, "command": command, "persist": command == "path"}
    if state["persist"]:
        state["db_url"] = results_db_url(output_dir(cfg.output_dir))
        state["run_tag"] = f"graph-{uuid.uuid4().hex[:12]}"

    out = build_app().invoke(state)
    summary = dict(out["summary"])
    if state["persist"]:
        summary["run_tag"] = state["run_tag"]
    print(json.dumps(summary, indent=2))
    return summary


if __name__ == "__main__":
    main()
