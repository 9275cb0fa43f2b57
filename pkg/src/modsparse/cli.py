"""Command-line entry point.

Verbs: train, lottery, sweep, heatmap, eval. Output directories default to
$MODSPARSE_OUT (or ./runs). Failures exit nonzero after printing a one-line
JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiment

OUTPUT_ROOT_ENV = "MODSPARSE_OUT"


def _output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _unique_dir(root: str, name: str) -> str:
    """Create and return root/name, suffixing a counter on collision."""
    candidate = os.path.join(root, name)
    i = 1
    while True:
        try:
            os.makedirs(candidate)
            return candidate
        except FileExistsError:
            candidate = os.path.join(root, f"{name}_{i}")
            i += 1


def _run_dir_for(config, prefix: str, explicit: str | None) -> str:
    if explicit:
        os.makedirs(explicit, exist_ok=True)
        return explicit
    name = f"{prefix}_{config.task}_{config.regularizer.mode}_s{config.run.seed}"
    return _unique_dir(_output_root(), name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modsparse",
        description="Train, sparsify and probe geometry-regularized RNNs.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("config", help="experiment config JSON")
    p_train.add_argument("--out", default=None, help="output directory")

    p_lot = sub.add_parser("lottery",
                           help="reinitialize and retrain on frozen masks")
    p_lot.add_argument("config", help="experiment config JSON")
    p_lot.add_argument("--from", dest="from_dir", required=True,
                       help="run or checkpoint directory holding the masks")
    p_lot.add_argument("--seed", type=int, required=True,
                       help="reinitialization seed")
    p_lot.add_argument("--out", default=None)

    p_sweep = sub.add_parser("sweep", help="sweep the regularizing factor")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--lambdas", type=float, nargs="+", required=True)
    p_sweep.add_argument("--trials", type=int, default=1)
    p_sweep.add_argument("--out", default=None)

    p_heat = sub.add_parser("heatmap",
                            help="export |W_hh| of a layer as CSV and PNG")
    p_heat.add_argument("run_dir")
    p_heat.add_argument("--layer", type=int, default=0)
    p_heat.add_argument("--out", default=None, help="CSV path")
    p_heat.add_argument("--order-by-embedding", action="store_true",
                        help="sort rows/cols by the first embedding coordinate")
    p_heat.add_argument("--no-figure", action="store_true",
                        help="skip the PNG rendering")

    p_eval = sub.add_parser("eval", help="re-evaluate a finished run")
    p_eval.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "train":
            config = experiment.load_config(args.config)
            out = _run_dir_for(config, "train", args.out)
            result = experiment.run_training(config, out_dir=out)
            print(json.dumps({"out_dir": out,
                              "final_eval_metric": result.final_eval,
                              "final_sparsity_percent":
                                  result.metrics[-1].sparsity_percent}))
        elif args.verb == "lottery":
            config = experiment.load_config(args.config)
            out = _run_dir_for(config, f"lottery_s{args.seed}", args.out)
            result = experiment.run_lottery(config, args.from_dir, args.seed,
                                            out_dir=out)
            print(json.dumps({"out_dir": out,
                              "final_eval_metric": result.final_eval}))
        elif args.verb == "sweep":
            config = experiment.load_config(args.config)
            out = _run_dir_for(config, "sweep", args.out)
            rows = experiment.run_sweep(config, args.lambdas, args.trials,
                                        out_dir=out)
            print(json.dumps({"out_dir": out, "rows": rows}))
        elif args.verb == "heatmap":
            path = experiment.export_heatmap(
                args.run_dir, args.layer, out_path=args.out,
                order_by_embedding=args.order_by_embedding,
                render_figure=not args.no_figure)
            print(json.dumps({"csv": path}))
        elif args.verb == "eval":
            print(json.dumps(experiment.evaluate_run(args.run_dir)))
        return 0
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
