"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 export
completed but skipped at least one video.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .encoder import DEFAULT_VARIANT, VARIANTS, VariantError
from .export import ExportError, ExportJob, run_export
from .manifest import ManifestError


class UsageError(ValueError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}".rstrip())


DATA_ERRORS = (ManifestError, ExportError, VariantError, OSError, json.JSONDecodeError)


def build_parser() -> Parser:
    parser = Parser(prog="encoder-export", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"]
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("export", help="featurize a corpus into FVCE files")
    p.add_argument("--corpus", required=True, help="corpus manifest JSON")
    p.add_argument("--variant", default=DEFAULT_VARIANT, choices=sorted(VARIANTS))
    p.add_argument("--fps", type=float, help="frames per second of clip time (default 1)")
    p.add_argument("--frames-per-clip", type=int, help="fixed frame count per clip instead of --fps")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="videos featurized in parallel")

    p = sub.add_parser("serve-encoder", help="serve /encode and /dims over HTTP")
    p.add_argument("--variant", default=DEFAULT_VARIANT, choices=sorted(VARIANTS))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8600)

    return parser


def cmd_export(args) -> int:
    job = ExportJob(
        manifest=args.corpus,
        out_dir=args.out,
        variant=args.variant,
        fps=args.fps,
        frames_per_clip=args.frames_per_clip,
    )
    result = run_export(job, threads=args.threads)
    summary = {
        "out": str(result.out_dir),
        "sentences": len(result.sentences),
        "skipped": result.skipped,
        "variant": result.variant.name,
        "videos": len(result.videos),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    if result.skipped:
        print(
            f"warning: skipped {len(result.skipped)} video(s): "
            f"{', '.join(result.skipped)}",
            file=sys.stderr,
        )
        return 3
    return 0


def cmd_serve_encoder(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.variant)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


COMMANDS = {
    "export": cmd_export,
    "serve-encoder": cmd_serve_encoder,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level.upper()))
        if args.command is None:
            raise UsageError(
                f"encoder-export: a command is required\n{parser.format_usage()}".rstrip()
            )
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
