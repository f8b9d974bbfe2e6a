"""Command line front end: `hnav-extract extract` and `hnav-extract extract-cot`."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .extract import ExtractionJob, ExtractorError, extract, extract_cot
from .probes import ProbeFileError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("model_ref", help="checkpoint path or hub identifier")
    parser.add_argument("--probes", required=True, help="probe JSONL file")
    parser.add_argument("--out", required=True, help="output directory for dumps")
    parser.add_argument("--device", default="cpu", help="device hint (default cpu)")
    parser.add_argument("--batch-size", type=int, default=1)
    parser.add_argument(
        "--model-id", default=None, help="header model_id (default: checkpoint name)"
    )
    parser.add_argument(
        "--chat-template",
        action="store_true",
        help="wrap probe texts with the tokenizer chat template",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hnav-extract",
        description="Capture layer-wise final-token hidden states as HNAV dumps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser("extract", help="extract question/answer dumps")
    _add_common(p_extract)
    p_extract.add_argument(
        "--roles",
        default="question,answer",
        help="comma-separated roles (default question,answer)",
    )

    p_cot = sub.add_parser("extract-cot", help="extract one dump per reasoning step")
    _add_common(p_cot)
    p_cot.add_argument("--series", required=True, help="reasoning series JSONL file")

    return parser


def _job(args: argparse.Namespace, roles: tuple[str, ...]) -> ExtractionJob:
    return ExtractionJob(
        model_ref=args.model_ref,
        probe_file=args.probes,
        out_dir=args.out,
        roles=roles,
        device=args.device,
        batch_size=args.batch_size,
        model_id=args.model_id,
        chat_template=args.chat_template,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            roles = tuple(r.strip() for r in args.roles.split(",") if r.strip())
            written = extract(_job(args, roles))
        else:
            written = extract_cot(_job(args, ()), args.series)
    except (ExtractorError, ProbeFileError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
