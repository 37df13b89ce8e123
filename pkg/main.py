import argparse
import csv
import logging
import os
import sys

# Ensure current directory is in python path
sys.path.append(os.getcwd())

from src.core.config import ConfigManager, load_experiment_config
from src.core.data_io import REGRESSION, load_csv, load_sparse_text
from src.core.errors import MkmtrlError
from src.features.experiment import run_experiment, validate
from src.mkl.model_store import load_model, predict_points


def cmd_run(args) -> int:
    return run_experiment(args.config, seed=args.seed, workers=args.workers, output_dir=args.output)


def cmd_validate(args) -> int:
    try:
        config = load_experiment_config(args.config).with_overrides(args.seed, args.workers, args.output)
        bundle = validate(config)
    except (FileNotFoundError, MkmtrlError) as e:
        logging.error(f"invalid experiment: {e}")
        return 2
    print(f"OK: {bundle.n_tasks} tasks, d={bundle.dim}, {bundle.kind}, "
          f"algorithms={','.join(config.algorithms)}")
    return 0


def cmd_predict(args) -> int:
    try:
        model = load_model(args.model)
        dim = model.train_features[0].shape[1] if model.train_features else None
        if dim is not None and model.add_bias:
            # 偏置列由 predict_points 追加
            dim -= 1
        # 预测时标签列可以是任意占位值
        if args.data.lower().endswith(".csv"):
            bundle = load_csv(args.data, args.label_col, args.task_col, header=args.header, kind=REGRESSION)
        else:
            bundle = load_sparse_text(args.data, kind=REGRESSION, dim=dim)
        scores = predict_points(model, bundle)
    except (FileNotFoundError, MkmtrlError) as e:
        logging.error(f"prediction failed: {e}")
        return 2

    handle = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["task", "index", "score"])
        for t, task_scores in enumerate(scores):
            for i, score in enumerate(task_scores):
                writer.writerow([t, i, repr(float(score))])
    finally:
        if handle is not sys.stdout:
            handle.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    config = ConfigManager.get_instance()
    parser = argparse.ArgumentParser(description="MK-MTRL - multitask multiple kernel relationship learning")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment file and write its reports")
    run.add_argument("config", help="Experiment file (KEY=value lines)")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("validate", help="Check an experiment file and its data without fitting")
    check.add_argument("config", help="Experiment file (KEY=value lines)")
    check.set_defaults(func=cmd_validate)

    for p in (run, check):
        p.add_argument("--seed", type=int, help="Master seed (overrides SEED)")
        p.add_argument("--workers", type=int, help=f"Parallel runs (default {config.workers})")
        p.add_argument("--output", help="Report directory (overrides OUTPUT_DIR)")

    pred = sub.add_parser("predict", help="Score new rows with a saved model")
    pred.add_argument("model", help="Model directory or model JSON file")
    pred.add_argument("data", help="Sparse text file / manifest, or a .csv file")
    pred.add_argument("--output", help="CSV destination (default stdout)")
    pred.add_argument("--label-col", type=int, default=-1, help="CSV label column")
    pred.add_argument("--task-col", type=int, default=0, help="CSV task column")
    pred.add_argument("--header", action="store_true", help="CSV has a header row")
    pred.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    config = ConfigManager.get_instance()
    logging.basicConfig(level=getattr(logging, config.log_level.upper(), logging.INFO),
                        format='%(levelname)s: %(message)s')
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
