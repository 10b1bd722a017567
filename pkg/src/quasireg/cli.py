"""Command-line front end.

    quasireg run CONFIG [--workers N] [--out DIR] [--seed S]
    quasireg rlct --blocks 1,2
    quasireg laplace CONFIG [--seed S]
    quasireg sandwich MODEL [--seed S]
    quasireg list-models

Exit status: 0 success, 1 a check failed, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .exceptions import ConfigError, InvalidArgumentError, UnsupportedModelError
from .harness import ExperimentConfig, export_results, run_experiment
from .invariant_estimators import DEFAULT_T_GRID, format_symbolic, laplace_fit, rlct_symbolic
from .model_zoo import BlockStructure, check_sandwich, model_table, parse_model_spec


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _blocks(text: str) -> BlockStructure:
    try:
        return BlockStructure(tuple(int(p) for p in text.split(",")))
    except (ValueError, InvalidArgumentError) as exc:
        raise UsageError(f"malformed --blocks {text!r}: {exc}") from None


def _load(args) -> ExperimentConfig:
    path = args.config_path or args.config
    if not path:
        raise UsageError("a config file is required")
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = ExperimentConfig.load(path)
    except ConfigError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--workers", type=int, default=None, help="worker processes (default $QUASIREG_WORKERS or 1)")
    common.add_argument("--out", help="output directory (default: output_dir from config)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="quasireg", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="run an experiment and export results")
    p.add_argument("config_path", nargs="?")
    p = sub.add_parser("rlct", parents=[common], help="exact learning coefficient of a block partition")
    p.add_argument("--blocks", required=True, help="comma-separated block sizes, e.g. 1,2")
    p = sub.add_parser("laplace", parents=[common], help="Laplace-integral regression for lambda and m")
    p.add_argument("config_path", nargs="?")
    p = sub.add_parser("sandwich", parents=[common], help="empirical K / ||u||^2 bounds")
    p.add_argument("model", help="model spec, e.g. example1 or canonical(1,2)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--blocks", dest="force_blocks", help="override the model's blocks")
    sub.add_parser("list-models", parents=[common], help="list built-in models")
    return parser


def _cmd_run(args) -> int:
    cfg = _load(args)
    agg = run_experiment(cfg, workers=args.workers)
    out = args.out or cfg.output_dir
    export_results(agg, out)
    print(f"{agg.model_name}: n={cfg.n}, replicates={cfg.replicates}, results in {out}")
    for s in agg.per_beta:
        m = s.mean
        print(f"  beta={s.beta:g}: G={m['g_n']:.5f} T={m['t_n']:.5f} beta*V/2={s.beta * m['v_n'] / 2:.4f} "
              f"E_w[K_n]={m['ewkn']:.5f} ok={s.n_ok} failed={s.n_failed}")
    for c in agg.checks:
        print("  " + c.line())
    return 0 if agg.all_passed else 1


def _cmd_rlct(args) -> int:
    print(format_symbolic(rlct_symbolic(_blocks(args.blocks))))
    return 0


def _cmd_laplace(args) -> int:
    cfg = _load(args)
    model = cfg.build_model()
    t_grid = cfg.laplace.get("t_grid", DEFAULT_T_GRID)
    est = laplace_fit(model, t_grid, int(cfg.laplace.get("mc_per_t", 100_000)), seed=cfg.master_seed)
    print(f"{model.name}: lambda_hat = {est.lambda_hat:.4f} +/- {est.se['lambda']:.4f}, "
          f"m_hat = {est.m_hat:.3f} +/- {est.se['m']:.3f}")
    if model.known_lambda is not None:
        sym = rlct_symbolic(model.blocks)
        print(f"theory: {format_symbolic(sym)}")
    return 0


def _cmd_sandwich(args) -> int:
    try:
        model = parse_model_spec(args.model)
        blocks = _blocks(args.force_blocks) if args.force_blocks else None
        res = check_sandwich(model, args.trials, seed=args.seed or 0, blocks=blocks)
    except (InvalidArgumentError, UnsupportedModelError) as exc:
        raise UsageError(str(exc)) from None
    print(f"{model.name}: c1_hat = {res.c1_hat:.6g}, c2_hat = {res.c2_hat:.6g}, holds = {res.holds}")
    return 0 if res.holds else 1


def _cmd_list(args) -> int:
    print(f"{'name':<16}{'d':>3}{'g':>4}  {'lambda':>7}{'nu':>6}  note")
    for row in model_table():
        g = "-" if row["g"] is None else row["g"]
        lam = "?" if row["known_lambda"] is None else f"{row['known_lambda']:g}"
        nu = "?" if row["known_nu"] is None else f"{row['known_nu']:g}"
        print(f"{row['name']:<16}{row['d']:>3}{g:>4}  {lam:>7}{nu:>6}  {row['note']}")
    print("canonical(blocks) and regular(d) accept any partition / dimension.")
    return 0


COMMANDS = {
    "run": _cmd_run,
    "rlct": _cmd_rlct,
    "laplace": _cmd_laplace,
    "sandwich": _cmd_sandwich,
    "list-models": _cmd_list,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"quasireg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
