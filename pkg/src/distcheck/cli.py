"""Command-line entry point: ``distcheck run`` and ``distcheck replay``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .observe import LogFormatError
from .polling import (
    CHECK_NAMES, EXIT_INTERNAL, EXIT_INVALID, ScenarioError, load_scenario, replay, run_polling,
)
from .values import DecodeError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="include process output lines")
    common.add_argument("--log-level", default="WARNING")
    ap = argparse.ArgumentParser(prog="distcheck", description="Run and check the polling workload.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run the checked polling scenario")
    run.add_argument("--config", help="JSON scenario file; flags override its entries")
    run.add_argument("--pollees", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--question")
    run.add_argument("--replies", choices=["random", "Y", "N"])
    run.add_argument("--loss", type=float)
    run.add_argument("--dup", type=float)
    run.add_argument("--delay", help="seconds, or MIN:MAX for a uniform range")
    run.add_argument("--reorder", type=int, help="hold back one message per target for K later ones")
    run.add_argument("--corrupt", help="corruption transformer name")
    run.add_argument("--corrupt-prob", type=float)
    run.add_argument("--timeout-qr", type=float)
    run.add_argument("--timeout-qo", type=float)
    run.add_argument("--timeout-total", type=float)
    run.add_argument("--checks", help=f"comma-separated subset of {','.join(CHECK_NAMES)}")
    run.add_argument("--runs", type=int)
    run.add_argument("--mode", choices=["det", "conc"])
    run.add_argument("--channel-order", choices=["fifo", "arbitrary"])
    run.add_argument("--strict-question", action="store_true", default=None)
    run.add_argument("--no-clocks", dest="clocks", action="store_false", default=None)
    run.add_argument("--export-log", help="write each run's observation log here ({run} expands)")

    rep = sub.add_parser("replay", parents=[common], help="re-check an exported observation log")
    rep.add_argument("path")
    rep.add_argument("--checks", default=",".join(CHECK_NAMES))
    return ap


_FLAG_KEYS = {
    "pollees": "pollees", "seed": "seed", "question": "question", "replies": "replies", "loss": "loss",
    "dup": "dup", "delay": "delay", "reorder": "reorder", "corrupt": "corrupt",
    "corrupt_prob": "corrupt_prob", "timeout_qr": "timeout_qr", "timeout_qo": "timeout_qo",
    "timeout_total": "timeout_total", "checks": "checks", "runs": "runs", "mode": "mode",
    "channel_order": "channel_order", "strict_question": "strict_question", "clocks": "clocks",
    "export_log": "export_log",
}


def main(argv: Optional[List[str]] = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            overrides = {key: getattr(args, attr) for attr, key in _FLAG_KEYS.items()}
            scenario = load_scenario(args.config, overrides)
            report = run_polling(scenario)
        else:
            checks = [c.strip() for c in args.checks.split(",") if c.strip()]
            bad = [c for c in checks if c not in CHECK_NAMES]
            if bad:
                raise ScenarioError([f"checks: unknown {bad}; known {list(CHECK_NAMES)}"])
            report = replay(args.path, checks)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (LogFormatError, DecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything else is a bug or an environment failure
        logging.getLogger("distcheck").exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    sys.stdout.write(report.render(verbose=args.verbose))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
