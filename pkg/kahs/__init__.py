from __future__ import annotations

import logging
from typing import Optional, Sequence

__version__ = "0.1.0"


def main(argv: Optional[Sequence[str]] = None) -> int:
    import argparse
    import sys

    from kahs.commandline.commands import build_parser
    from kahs.utils import setup_logging

    parser = build_parser()
    try:
        command, args = parser.parse(argv)
    except argparse.ArgumentError as e:
        print(f"kahs: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    log = logging.getLogger("kahs")
    try:
        return command.run()
    except OSError as e:
        log.error("%s", e)
        return 3
    except ValueError as e:
        log.error("%s", e)
        return 2
