"""Command line front end over the experiment harness."""

import argparse
import logging
import os
import sys

from .errors import ConfigError, NumericalAssumptionError
from .harness import load_config, render_checkpoints, render_csv, run, sweep

_METHOD_OF = {"solve": "oracle", "learn": "learner",
              "learn-priority": "priority"}


def _setup_logging():
    name = os.environ.get("ADP_SCHED_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _parser():
    p = argparse.ArgumentParser(
        prog="adp-sched",
        description="Seeded scheduling experiments driven by INI manifests; "
                    "results land as CSV on stdout or --out.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, blurb in (
            ("solve", "exact DP policy run"),
            ("learn", "online value learner run"),
            ("learn-priority", "prioritized multi-queue learner run"),
            ("baseline", "comparison scheduler run"),
            ("sweep", "one run per swept parameter value")):
        sp = sub.add_parser(name, help=blurb)
        sp.add_argument("--config", required=True, metavar="FILE")
        sp.add_argument("--out", metavar="CSV")
        sp.add_argument("--trace", metavar="CSV")
        sp.add_argument("--seed", type=int, metavar="U64")
        if name == "baseline":
            sp.add_argument("--method", choices=["stability", "qlearning"])
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    _setup_logging()
    log = logging.getLogger("adp_sched.cli")
    try:
        method = _METHOD_OF.get(args.command)
        if args.command == "baseline":
            method = getattr(args, "method", None)
        cfg = load_config(args.config, method=method, seed=args.seed)
        if args.command == "baseline" and cfg.method not in ("stability",
                                                             "qlearning"):
            raise ConfigError(
                "scheduler.method: baseline runs take stability or "
                "qlearning (set it in the config or pass --method)")

        if args.command == "sweep":
            if args.trace:
                log.warning("per-slot traces are not recorded during sweeps")
            records = sweep(cfg)
        else:
            trace_path = args.trace
            if cfg.trace and trace_path is None:
                if args.out:
                    trace_path = args.out + ".trace.csv"
                else:
                    raise ConfigError(
                        "run.trace: give --trace (or --out) so the trace "
                        "file has a name")
            records = [run(cfg, trace_path=trace_path)]

        text = render_csv(records)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
            ck = render_checkpoints(records)
            if ck:
                with open(args.out + ".checkpoints.csv", "w") as fh:
                    fh.write(ck)
        else:
            sys.stdout.write(text)
            ck = render_checkpoints(records)
            if ck:
                sys.stdout.write("\n" + ck)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericalAssumptionError as e:
        print(f"numerical assumption violated: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
