"""Command-line interface.

One subcommand per pipeline stage (running the pipeline up to and
including that stage, reusing anything already cached), plus `run` for
the whole pipeline, `fit-scaling` for the data-scaling curve,
`report` for summarizing a run directory, and `make-toy` for
generating the bundled demonstration workspace.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import PipelineError, run_pipeline
from .report import format_funnel, write_report
from .scaling import fit_scaling_law, predict, read_points_csv
from .toydata import make_toy_workspace

# CLI name -> last pipeline stage it runs.  `filter-sentences` covers the
# three-step sentence funnel (rules, entropy, perplexity).
STAGE_COMMANDS = {
    "extract": "extract",
    "filter-images": "filter_images",
    "dedup-images": "dedup_images",
    "filter-sentences": "sentence_perplexity",
    "dedup-sentences": "dedup_sentences",
    "cluster-texts": "cluster_texts",
    "retrieve": "retrieve",
    "augment": "augment",
    "join": "join",
    "gate": "gate",
    "cluster-images": "cluster_images",
    "sample": "sample",
}


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the JSON config file")
    parser.add_argument(
        "--force", action="store_true", help="recompute stages even when cached"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsforge",
        description=(
            "Convert multimodal interleaved documents into a curated, "
            "semantically balanced image-text pair dataset."
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline")
    _add_config_arg(run)

    for command, stage in STAGE_COMMANDS.items():
        stage_parser = sub.add_parser(
            command, help=f"run the pipeline through the {stage} stage"
        )
        _add_config_arg(stage_parser)

    fit = sub.add_parser("fit-scaling", help="fit the data-scaling curve")
    fit.add_argument("--points", required=True, help="CSV file with columns x,y")
    fit.add_argument(
        "--at",
        type=float,
        default=None,
        help="also predict the fitted curve's value at this x",
    )

    report = sub.add_parser("report", help="summarize a run directory")
    report.add_argument("--run-dir", required=True, help="pipeline run directory")
    report.add_argument(
        "--out", default=None, help="output directory (default: <run-dir>/report)"
    )

    toy = sub.add_parser("make-toy", help="generate the bundled toy workspace")
    toy.add_argument("--dir", required=True, help="directory to create the workspace in")
    toy.add_argument("--seed", type=int, default=7)
    toy.add_argument("--docs", type=int, default=200)

    return parser


def _print_stage_counts(report) -> None:
    for stage in report.stages:
        counts = stage.counts
        rejected = sum(counts.get("rejected", {}).values())
        cached = " (cached)" if stage.cached else ""
        print(
            f"{stage.stage:<20} input={counts['input']:<7} kept={counts['kept']:<7} "
            f"rejected={rejected}{cached}"
        )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "run":
            report = run_pipeline(load_config(args.config), force=args.force)
            _print_stage_counts(report)
            print(f"final pairs: {report.final_pairs}")
            return 0

        if args.command in STAGE_COMMANDS:
            report = run_pipeline(
                load_config(args.config),
                upto=STAGE_COMMANDS[args.command],
                force=args.force,
            )
            _print_stage_counts(report)
            return 0

        if args.command == "fit-scaling":
            fit = fit_scaling_law(read_points_csv(args.points))
            blob = fit.to_json()
            if args.at is not None:
                blob["at"] = args.at
                blob["prediction"] = predict(fit, args.at)
            print(json.dumps(blob, indent=2, sort_keys=True))
            return 0

        if args.command == "report":
            summary = write_report(args.run_dir, args.out)
            print(format_funnel(summary), end="")
            for path in summary["files"]:
                print(f"wrote {path}")
            return 0

        if args.command == "make-toy":
            paths = make_toy_workspace(args.dir, seed=args.seed, n_docs=args.docs)
            print(f"toy workspace ready: {paths.root}")
            print(f"config: {paths.config}")
            return 0

        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
