"""Command-line front end.

    gibbskit sample --target g2.json --kernel gs --steps 1000 --seed 7 --out chain.csv
    gibbskit verify t31 --dim 6 --trials 100 --seed 1

Exit codes: 0 success, 1 a verification check failed, 2 bad configuration,
3 numerical failure.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, GibbsKitError, NumericalError
from .rng import substream
from .samplers import KERNELS, run_chain, write_chain_csv
from .targets import GaussianTarget, load_target

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    target_path: str
    kernel: str
    ell: Optional[int]
    steps: int
    seed: int
    replicas: int = 1
    out: str = "-"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.steps < 1:
            raise ConfigError("--steps must be at least 1")
        if self.replicas < 1:
            raise ConfigError("--replicas must be at least 1")
        if self.kernel == "gs-ell" and self.ell is None:
            raise ConfigError("--kernel gs-ell needs --ell")
        if self.ell is not None and self.kernel not in ("gs-ell", "hr"):
            raise ConfigError(f"--ell has no meaning for kernel {self.kernel}")
        if self.ell is not None and self.ell < 1:
            raise ConfigError("--ell must be positive")
        if self.replicas > 1 and self.out == "-":
            raise ConfigError("several replicas need --out to name a file")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")


def replica_path(out: str, r: int) -> str:
    stem, ext = os.path.splitext(out)
    return f"{stem}_{r}{ext or '.csv'}"


def _start(target):
    if isinstance(target, GaussianTarget):
        return target.mean.copy()
    return target.mode()


def cmd_sample(cfg: RunConfig) -> int:
    target = load_target(cfg.target_path)
    x0 = _start(target)
    for r in range(cfg.replicas):
        rng = substream(cfg.seed, r)
        rec = run_chain(target, cfg.kernel, x0, cfg.steps, rng, ell=cfg.ell, stream=r)
        out = cfg.out if cfg.replicas == 1 else replica_path(cfg.out, r)
        write_chain_csv(rec, out)
    return EXIT_OK


def cmd_verify(suite: str, out: str = "-", **kwargs) -> int:
    from . import verify

    reports = verify.run_suite(suite, **kwargs)
    verify.write_reports(reports, out)
    summary = verify.summarize(reports)
    print(summary, file=sys.stderr if out == "-" else sys.stdout)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    p = argparse.ArgumentParser(prog="gibbskit", description="Random-scan Gibbs samplers and their checks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="run a chain and write it as CSV")
    s.add_argument("--target", required=True, help="target JSON file")
    s.add_argument("--kernel", default="gs", help=f"one of {', '.join(KERNELS)}")
    s.add_argument("--ell", type=int, default=None, help="blocks / frame size for gs-ell and hr")
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--out", default="-", help="output CSV ('-' for stdout)")

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", help=f"one of {', '.join(SUITES)}")
    v.add_argument("--dim", type=int, default=None)
    v.add_argument("--trials", type=int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--rho", type=float, default=None)
    v.add_argument("--samples", type=int, default=None, dest="n_samples",
                   help="sample size for the nonconvex suite")
    v.add_argument("--steps", type=int, default=None, dest="n_steps",
                   help="chain length for the nonconvex suite")
    v.add_argument("--replicas", type=int, default=None, help="update sequences for the mixing suite")
    v.add_argument("--family", default=None, choices=["pairs", "equicorrelated"],
                   help="target family for the mixing suite")
    v.add_argument("--out", default="-", help="report CSV ('-' for stdout)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "sample":
            cfg = RunConfig(args.target, args.kernel, args.ell, args.steps, args.seed,
                            args.replicas, args.out)
            return cmd_sample(cfg)
        extra = {k: getattr(args, k) for k in ("dim", "trials", "rho", "n_samples", "n_steps",
                                               "replicas", "family")}
        if args.dim is not None and args.dim < 1 or args.trials is not None and args.trials < 1:
            raise ConfigError("--dim and --trials must be positive")
        return cmd_verify(args.suite, out=args.out, seed=args.seed, **extra)
    except NumericalError as exc:
        print(f"gibbskit: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GibbsKitError, ValueError, OSError) as exc:
        print(f"gibbskit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
