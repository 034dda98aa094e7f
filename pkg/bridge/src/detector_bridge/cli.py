"""Command-line entry point for the bridge.

Prints a one-line JSON summary to stdout and diagnostics to stderr. Exit
codes: 0 success (a clip with zero detections is a success), 2 unreadable
video or data, 3 bad configuration (including usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from detector_bridge import __version__
from detector_bridge.config import load_config
from detector_bridge.errors import BridgeConfigError, BridgeError, VideoError
from detector_bridge.extract import extract_detections

logger = logging.getLogger("detector_bridge.cli")


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to the config exit code."""

    def error(self, message):
        raise BridgeConfigError(f"{self.prog}: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="detector-bridge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="bridge config JSON; flags below override its values")
    parser.add_argument("--video", help="input video path")
    parser.add_argument("--out", help="output detections JSONL path")
    parser.add_argument("--detector", help="detector seat name")
    parser.add_argument("--tracker", help="tracker seat name")
    parser.add_argument("--threshold", type=float, default=None,
                        help="detection score threshold in [0, 1]")
    parser.add_argument("--stride", type=int, default=None,
                        help="process every Nth frame (default: aim for 25 fps)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(
            args.config if args.config is not None else {},
            video=args.video,
            out=args.out,
            detector=args.detector,
            tracker=args.tracker,
            score_threshold=args.threshold,
            stride=args.stride,
        )
        summary = extract_detections(cfg)
    except BridgeConfigError as exc:
        logger.error("%s", exc)
        return 3
    except (VideoError, BridgeError) as exc:
        logger.error("%s", exc)
        return 2
    except SystemExit as exc:  # argparse --version/--help
        return int(exc.code or 0)
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
