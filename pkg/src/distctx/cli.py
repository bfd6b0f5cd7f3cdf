"""Command line entry point: ``distctx run | diagnose | factorize``."""

from __future__ import annotations

import argparse
import logging
import sys

from distctx.config import PROTOCOL_ALIASES, load_config
from distctx.errors import ConfigError, ContractError, DataError

log = logging.getLogger("distctx")

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distctx", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate and write the regret trace as CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="CSV path (default: stdout)")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--mode", choices=("hidden", "observed", "exact"))
    run.add_argument("--protocol", choices=("sync", "immediate", "none"))
    run.add_argument("--plot", help="also render the mean regret curve to this image file")

    diag = sub.add_parser("diagnose", help="run the statistical checks; exit 2 on failure")
    diag.add_argument("--config", required=True)

    fac = sub.add_parser("factorize", help="fit low-rank user/item factors to ml-1m ratings")
    fac.add_argument("--ratings", required=True)
    fac.add_argument("--rank", type=int, default=6)
    fac.add_argument("--iterations", type=int, default=25)
    fac.add_argument("--reg", type=float, default=0.1)
    fac.add_argument("--out", required=True)
    return parser


def _cmd_run(args) -> int:
    from distctx.experiment import emit_csv, format_csv, run_experiment

    overrides = {
        "seed": args.seed,
        "trials": args.trials,
        "mode": args.mode,
        "protocol": PROTOCOL_ALIASES[args.protocol] if args.protocol else None,
    }
    cfg = load_config(args.config, **overrides)
    trace = run_experiment(cfg)
    if args.out:
        emit_csv(trace, args.out)
    else:
        sys.stdout.write(format_csv(trace))
    if args.plot:
        from distctx.plotting import plot_regret, trace_label

        plot_regret({trace_label(trace): trace}, args.plot)
    log.info("mean R(T) = %.6g over %d trials", trace.final_regret().mean(), trace.trials)
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    from distctx.diagnostics import diagnostics_suite

    report = diagnostics_suite(load_config(args.config))
    print(report.render())
    return EXIT_OK if report.passed else EXIT_CHECK


def _cmd_factorize(args) -> int:
    from distctx.ratings import factorize, ingest_ratings, rmse, write_factors

    data = ingest_ratings(args.ratings)
    users, items = factorize(data, args.rank, args.iterations, args.reg)
    write_factors(args.out, users, items)
    print(f"users={data.n_users} items={data.n_items} ratings={len(data)} "
          f"rank={args.rank} train_rmse={rmse(data, users, items):.6f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "diagnose": _cmd_diagnose, "factorize": _cmd_factorize}[args.command]
    try:
        return handler(args)
    except (ConfigError, DataError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
