"""CLI: extract embeddings from annotated audio, verify corpus counts."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .annotations import AnnotationError
from .extract import ExtractionError, ExtractionJob, extract
from .verify import verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechvec",
                                     description="Speech encoder hidden-state export")
    parser.add_argument("--version", action="version", version=f"speechvec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="encode annotated audio into a corpus directory")
    p.add_argument("--audio", type=Path, required=True, help="audio root directory")
    p.add_argument("--annotations", type=Path, required=True,
                   help="csv: clip_id,language,label,split[,audio_path]")
    p.add_argument("--model", required=True, choices=["whisper-large", "clsril-23"])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--backend", choices=["torch", "stub"], default="torch",
                   help="'stub' emits deterministic pseudo-embeddings for smoke tests")

    p = sub.add_parser("verify", help="compare corpus counts against an annotation file")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        if args.command == "extract":
            job = ExtractionJob(audio_root=args.audio, annotations=args.annotations,
                                model_id=args.model, out_dir=args.out,
                                batch_size=args.batch_size, backend=args.backend)
            out = extract(job)
            print(f"corpus written to {out}")
            return 0
        report = verify(args.corpus, args.annotations)
        print(report.summary())
        return 0
    except (AnnotationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExtractionError, OSError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
