"""Command line: ``dreamchunk run`` and ``dreamchunk compare``.

Every flag can also be set through an environment variable named
``DDC_<FLAG>`` (for example ``DDC_CYCLES=3``); explicit flags win.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from .decompiler import CRITERIA
from .domains import DOMAINS
from .experiment import ConfigError, RunConfig, compare, run_experiment

ENV_PREFIX = "DDC_"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


def _seeds(text: str) -> tuple:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None


def _env(name: str, default):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _add_common(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    p.add_argument("--domain", choices=sorted(DOMAINS), default=_env("domain", d.domain))
    p.add_argument("--cycles", type=int, default=int(_env("cycles", d.cycles)))
    p.add_argument("--batch-size", type=int, default=int(_env("batch-size", d.batch_size)))
    p.add_argument("--wake-budget", type=int, default=int(_env("wake-budget", d.wake_budget)),
                   help="node expansions per task during wake")
    p.add_argument("--test-budget", type=int, default=int(_env("test-budget", d.test_budget)),
                   help="node expansions per test task")
    p.add_argument("--beam-cap", type=int, default=int(_env("beam-cap", d.beam_cap)))
    top_k = _env("top-k", None)
    p.add_argument("--top-k", type=int, default=None if top_k is None else int(top_k),
                   help="chunks installed per cycle (default: 2 for list, 1 for arith; 0 disables chunking)")
    p.add_argument("--frag-cap", type=int, default=int(_env("frag-cap", d.frag_cap)))
    p.add_argument("--fantasies", type=int, default=int(_env("fantasies", d.fantasies)))
    p.add_argument("--seeds", type=_seeds, default=_seeds(_env("seeds", "0")))
    p.add_argument("--train", type=int, default=int(_env("train", d.n_train)), help="number of train tasks")
    p.add_argument("--test", type=int, default=int(_env("test", d.n_test)), help="number of test tasks")
    p.add_argument("--out", default=_env("out", "runs"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dreamchunk", description="Wake-sleep library learning with chunk scoring.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one configuration over several seeds")
    _add_common(run)
    run.add_argument("--criterion", choices=CRITERIA, default=_env("criterion", "ddc-pc"))
    cmp_ = sub.add_parser("compare", help="run several criteria on the same seeds and compare them")
    _add_common(cmp_)
    cmp_.add_argument("--criteria", default=_env("criteria", "ddc-pc,compression"),
                      help="comma-separated criteria")
    return parser


def _config(args, criterion: str, out: Optional[str]) -> RunConfig:
    return RunConfig(domain=args.domain, criterion=criterion, cycles=args.cycles, batch_size=args.batch_size,
                     wake_budget=args.wake_budget, test_budget=args.test_budget, beam_cap=args.beam_cap,
                     top_k=args.top_k, frag_cap=args.frag_cap, fantasies=args.fantasies, seeds=args.seeds,
                     out=out, n_train=args.train, n_test=args.test)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            cfg = _config(args, args.criterion, args.out)
        else:
            criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
            bad = [c for c in criteria if c not in CRITERIA]
            if bad:
                raise ConfigError("criteria", f"unknown criterion {bad[0]!r}")
            cfgs = [_config(args, c, os.path.join(args.out, f"{i}-{c}")) for i, c in enumerate(criteria)]
            compare(cfgs, out=args.out)  # validates before running
    except ConfigError as err:
        print(f"dreamchunk: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as err:  # noqa: BLE001 - report any runtime failure with the runtime exit code
        print(f"dreamchunk: error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.command == "run":
        try:
            result = run_experiment(cfg)
        except Exception as err:  # noqa: BLE001
            print(f"dreamchunk: error: {err}", file=sys.stderr)
            return EXIT_RUNTIME
        last = result.summary["per_cycle"][-1]
        print(f"wrote {cfg.out}: final test solve {last['test_pct_mean']:.1f}% "
              f"(+/- {last['test_pct_std']:.1f}) over {len(cfg.seeds)} seed(s)")
    else:
        print(f"wrote comparison to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
