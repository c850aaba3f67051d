"""Command-line entry point: `rsforge-export`."""

from __future__ import annotations

import argparse
import json
import sys

from .encoders import available_encoders
from .export import ExportError, ExportJob, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsforge-export",
        description=(
            "Encode a JSONL manifest of sentences ({'id','text'}) or image "
            "uris ({'id','uri'}) into an RSEB v1 embedding store."
        ),
    )
    parser.add_argument("--manifest", required=True, help="input manifest JSONL")
    parser.add_argument("--out", required=True, help="output .rseb path")
    parser.add_argument(
        "--encoder",
        default="fake-hash",
        help=f"encoder plug-in name (available: {', '.join(available_encoders())})",
    )
    parser.add_argument("--dim", type=int, default=64, help="embedding dimension")
    parser.add_argument("--batch", type=int, default=32, help="encode batch size")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = export_embeddings(
            ExportJob(
                manifest=args.manifest,
                output=args.out,
                encoder=args.encoder,
                dim=args.dim,
                batch_size=args.batch,
            )
        )
    except (ExportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result.to_json(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
