"""Command line: ``stfe {simulate,ensemble,converge,selftest}``.

Exit status 0 on success/PASS, 1 on any FAIL or run failure, 2 on usage
errors (bad flags, unreadable or invalid config).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import load_config, reference_config
from .errors import ConfigError, StfeError
from .splitter import check_initial

log = logging.getLogger("stfe")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed {text} does not fit in 64 bits")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return v


def _n_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--N expects comma-separated integers, got {text!r}") from None
    if not vals or any(v < 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise argparse.ArgumentTypeError(f"--N must be increasing nonnegative integers, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration (default: reference configuration)")
    common.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="only print errors and verdicts")

    p = _Parser(prog="stfe", description="Splitting scheme for the stochastic thin-film equation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="one path with full diagnostics")
    e = sub.add_parser("ensemble", parents=[common], help="Monte Carlo run with martingale verdicts")
    e.add_argument("--paths", type=_positive, help="number of sample paths")
    c = sub.add_parser("converge", parents=[common], help="coupled self-convergence study")
    c.add_argument("--N", type=_n_list, default=[4, 8, 16], help="comma-separated refinement indices")
    c.add_argument("--paths", type=_positive, help="number of coupled paths")
    s = sub.add_parser("selftest", parents=[common], help="acceptance checks at desk scale")
    s.add_argument("--full", action="store_true", help="use the full acceptance path counts")
    return p


def _resolve(args):
    if args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            raise _Usage(str(exc)) from None
        except ConfigError as exc:
            raise _Usage(f"{args.config}: {exc}") from None
    else:
        cfg = reference_config()
    if args.seed is not None:
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, seed=args.seed))
    if getattr(args, "paths", None):
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, n_paths=args.paths))
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    try:
        check_initial(cfg.u0(), cfg.schedule.det)
    except ValueError as exc:
        raise _Usage(f"initial condition: {exc}") from None
    return cfg


def _run(args) -> int:
    from . import runner

    say = (lambda *a: None) if args.quiet else print
    if args.command == "selftest":
        from .acceptance import run_all

        results = run_all("full" if args.full else "desk", report=print)
        failed = [r.number for r in results if not r.passed]
        print("selftest:", "PASS" if not failed else f"FAIL (criteria {failed})")
        return EXIT_FAIL if failed else EXIT_OK

    cfg = _resolve(args)
    if args.command == "simulate":
        res = runner.simulate(cfg, cfg.out_dir)
        s = res.path.series
        say(f"simulated T={cfg.schedule.T} with N={cfg.schedule.N}; {len(s)} records -> {res.out_dir}")
        say(f"final mass {float(s.columns['mass'][-1])!r}, energy {s.columns['energy'][-1]:.6g}, min {s.columns['min_u'][-1]:.6g}")
        return EXIT_OK
    if args.command == "ensemble":
        res = runner.ensemble(cfg, cfg.out_dir)
        for v in res.stats.verdicts:
            print(f"{v.phi}: {'PASS' if v.passed else 'FAIL'} (worst z mean {v.worst_mean_z:.2f}, square {v.worst_square_z:.2f})")
        say(f"{res.stats.n_paths} paths -> {res.out_dir}")
        return EXIT_OK if res.passed else EXIT_FAIL
    # converge
    res = runner.converge(cfg, args.N, cfg.out_dir, n_paths=args.paths or cfg.ensemble.n_paths)
    t = res.table
    print(f"{'N':>5} {'delta':>12} {'substeps':>9} {'diff_to_next':>14}")
    mean = t.final_diff.mean(axis=1)
    for i, N in enumerate(t.N_list):
        d = f"{mean[i]:.6e}" if i < len(mean) else "-"
        print(f"{N:>5} {cfg.schedule.T / (N + 1):>12.6g} {res.substeps[N]:>9} {d:>14}")
    print("converge:", "PASS (non-increasing)" if res.passed else "FAIL (differences increase)")
    return EXIT_OK if res.passed else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as exc:
        print(f"stfe: usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return _run(args)
    except _Usage as exc:
        print(f"stfe: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StfeError as exc:
        print(f"stfe: run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"stfe: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
