"""``amfvi-bench`` command line: generate, train, eval, plot, run."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import cmd_eval, cmd_generate, cmd_train
from .plots import cmd_plot

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run configuration file")
    common.add_argument("--datasets", type=_csv_list, help="comma-separated dataset names")
    common.add_argument("--models", type=_csv_list, help="comma-separated model names")
    common.add_argument("--seeds", type=lambda s: [int(x) for x in _csv_list(s)],
                        help="comma-separated integer seeds")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="amfvi-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write train/eval sample CSVs")
    sub.add_parser("train", parents=[common], help="Stage 1 experts + Stage 2 weights")
    sub.add_parser("eval", parents=[common], help="five metrics per cell and aggregate table")
    sub.add_parser("plot", parents=[common], help="sample scatter rows and weight bars")
    run = sub.add_parser("run", parents=[common], help="generate, train, eval and plot")
    run.add_argument("--all", action="store_true",
                     help="every dataset and model (the default unless narrowed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, datasets=args.datasets, models=args.models,
                          seeds=args.seeds, workers=args.workers, out=args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    partial = False
    if args.command in ("generate", "run"):
        manifest = cmd_generate(cfg)
        print(f"generated {len(manifest['files'])} sample files")
    if args.command in ("train", "run"):
        statuses = cmd_train(cfg)
        for s in statuses:
            if not s["ok"]:
                partial = True
                print(f"FAILED train {s['dataset']} seed {s['seed']}: {s['error']}",
                      file=sys.stderr)
        print(f"trained {sum(s['ok'] for s in statuses)}/{len(statuses)} units")
    if args.command in ("eval", "run"):
        bench = cmd_eval(cfg)
        for f in bench.failed:
            print(f"FAILED eval {f['dataset']}/{f['model']}/{f['seed']}: {f['error']}",
                  file=sys.stderr)
        partial = partial or not bench.ok
        print(f"evaluated {len(bench.reports)} cells, {len(bench.failed)} failed")
    if args.command in ("plot", "run"):
        info = cmd_plot(cfg)
        print(json.dumps({"panels": info["panels"], "files": info["files"]}))
    return EXIT_PARTIAL if partial else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
