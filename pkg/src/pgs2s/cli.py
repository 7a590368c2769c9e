"""Command-line entry point (``pgs2s``).

Exit codes: 0 success, 1 user/config/data error, 2 numeric or training failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as X
from .data import mackey_glass, write_csv
from .errors import ConfigError, NumericError, UserError

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; usage errors are user errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _spec(args) -> X.ExperimentSpec:
    over = _overrides(args.set)
    if args.config:
        return X.ExperimentSpec.from_file(args.config, over)
    return X.ExperimentSpec.from_flat(over)


def _out_dir(args, spec, leaf: str) -> Path:
    if args.out:
        return Path(args.out)
    return X.run_root() / spec["run.name"] / leaf


def cmd_generate_mg(args) -> int:
    if args.n < 0:
        raise ConfigError("--n must be >= 0")
    if args.n == 0:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("t,y\n")
        return EXIT_OK
    series = mackey_glass(args.n, dt=args.dt, sample_every=args.sample_every, decay_sign=args.sign)
    write_csv(args.out, series)
    print(f"wrote {args.n} rows to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _spec(args)
    regime = (args.regime or spec.regimes[0]).upper()
    seed = spec.seeds[0] if args.seed is None else args.seed
    spec = spec.with_(**{"run.regimes": regime, "run.seeds": str(seed)})
    out = _out_dir(args, spec, f"{regime}-seed{seed}")
    task, pool, _ = X.build_task(spec)
    cell = X.run_cell(spec, task, regime, seed, out, pool)
    if not cell.ok:
        print(cell.error, file=sys.stderr)
        return EXIT_NUMERIC if cell.numeric else EXIT_USER
    print(json.dumps({"run_dir": str(out), **cell.report.to_dict()}, indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = X.evaluate_checkpoint(args.checkpoint, args.split)
    print(json.dumps({"split": args.split, **report.to_dict()}, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    spec = _spec(args)
    out = _out_dir(args, spec, "compare")

    def progress(cell):
        status = f"rmse={cell.report.rmse:.4E}" if cell.ok else f"FAILED {cell.error}"
        print(f"{cell.regime:>10} seed {cell.seed}: {status} ({cell.seconds:.1f}s)", file=sys.stderr)

    result = X.run_compare(spec, out, progress)
    print(result.table())
    print(f"results: {out / 'results.csv'}")
    if X.any_numeric_failure(result):
        return EXIT_NUMERIC
    return EXIT_OK if all(c.ok for c in result.cells) else EXIT_USER


def cmd_plot_selection(args) -> int:
    try:
        rounds = json.loads(Path(args.rounds).read_text())
    except FileNotFoundError:
        raise ConfigError(f"round log not found: {args.rounds}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.rounds}: invalid JSON ({exc})") from None
    prefix = args.out or str(Path(args.rounds).with_name("selection"))
    for p in X.plot_selection(rounds, prefix, args.step - 1):
        print(p)
    return EXIT_OK


def cmd_search(args) -> int:
    spec = _spec(args)
    out = _out_dir(args, spec, "search")
    best, res = X.run_search(spec, out)
    print(json.dumps({"best_val_rmse": res.best_score, "best": res.best, "out": str(out)}, indent=2, default=float))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pgs2s", description="Policy-gradient seq2seq forecasting toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-mg", help="write a Mackey-Glass series as CSV (header t,y)")
    g.add_argument("--n", type=int, default=7000)
    g.add_argument("--dt", type=float, default=0.1)
    g.add_argument("--sample-every", type=float, default=1.0)
    g.add_argument("--sign", type=int, choices=(-1, 1), default=-1, help="sign of the linear decay term")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_mg)

    def spec_args(sp):
        sp.add_argument("--config", help="flat dotted-key JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory (default: $PGS2S_RUN_ROOT/<run.name>/...)")

    t = sub.add_parser("train", help="train one regime for one seed")
    spec_args(t)
    t.add_argument("--regime")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a saved checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="run every regime x seed and tabulate")
    spec_args(c)
    c.set_defaults(func=cmd_compare)

    ps = sub.add_parser("plot-selection", help="selection-percentage CSV and PNG from rounds.json")
    ps.add_argument("rounds")
    ps.add_argument("--out", help="output prefix (default: next to the round log)")
    ps.add_argument("--step", type=int, default=1, help="decode step (1-based)")
    ps.set_defaults(func=cmd_plot_selection)

    s = sub.add_parser("search", help="random hyperparameter search")
    spec_args(s)
    s.set_defaults(func=cmd_search)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
