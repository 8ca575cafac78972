"""Command line entry point: bind a port and serve a teacher preset."""

import argparse
import logging
import sys

from .oracle import PRESETS
from .server import ServerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teacher-server",
        description="Serve scripted teacher suggestions over the wire protocol")
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--preset", choices=sorted(PRESETS), default="oracle")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--host", default="127.0.0.1")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = ServerConfig(host=args.host, port=args.port,
                           preset=args.preset, seed=args.seed)
        serve(cfg)
    except (OSError, ValueError) as e:
        print(f"teacher-server: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
