"""Command-line entry point ``lowhtr``.

Exit status: 0 on success, 1 on input errors (bad flags, missing or invalid
config, unwritable output directory), 2 on runtime failures.
"""
import argparse
import json
import sys

import numpy as np

from .config import ConfigError, figure1_config, load_config
from .env import gen_lower_bound_instance
from .lotus import LotusConfig, run_lotus
from .runner import ensure_writable, noise_from_spec, resolve_threads, run_experiment
from .validation import estimation_errors, quick_checks

__all__ = ["main", "build_parser"]


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--replications", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--threads", type=int, help="worker processes (default: LOWHTR_THREADS or 1)")
    p.add_argument("--format", choices=("csv", "json"))


def build_parser():
    parser = _Parser(prog="lowhtr", description="Low-rank bandits with heavy-tailed rewards.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="Huber fit error against sample size")
    _common(p)
    p.add_argument("--n", default="500,1000,2000,4000", help="comma-separated sample sizes")
    p.add_argument("--c-lambda", type=float, default=0.3, help="penalty constant (default 0.3)")

    p = sub.add_parser("simulate", help="one algorithm on one environment")
    _common(p)
    p.add_argument("--algo", help="algorithm name from the config (default: the first)")

    p = sub.add_parser("bench", help="paired comparison of every configured algorithm")
    _common(p)

    p = sub.add_parser("lower-bound", help="emit and check the hard instance")
    _common(p, config=False)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--run", choices=("none", "lotus"), default="none",
                   help="also run rank-agnostic LOTUS on the instance")

    p = sub.add_parser("validate", help="quick invariant suite")
    _common(p)
    return parser


def _experiment(args):
    if args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
    else:
        cfg = figure1_config()
    return cfg.with_run(base_seed=args.seed, replications=args.replications, horizon=args.horizon,
                        out_dir=args.out_dir, format=args.format)


def _prepare_output(cfg):
    try:
        ensure_writable(cfg.run.out_dir)
    except OSError as exc:
        raise InputError(f"output directory {cfg.run.out_dir!r} is not writable: {exc}") from None


def _print_summary(summary):
    for name, entry in summary["algorithms"].items():
        finals = ", ".join(f"{v:.1f}" for v in entry["final_regret"])
        print(f"{name}: median final regret {entry['median_final_regret']:.2f} [{finals}]")


def _cmd_estimate(args):
    cfg = _experiment(args) if args.config else None
    try:
        n_values = [int(v) for v in args.n.split(",")]
    except ValueError:
        raise InputError(f"--n must be comma-separated integers, got {args.n!r}") from None
    reps = args.replications or 5
    seed = args.seed or 0
    env_spec = cfg.environment if cfg else None
    noise = noise_from_spec(env_spec) if env_spec else None
    d = env_spec.d if env_spec else 10
    errs = estimation_errors(n_values, range(seed, seed + reps), noise=noise, d=d, c_lambda=args.c_lambda)
    rows = [(n, *np.percentile(e, [50, 25, 75])) for n, e in zip(n_values, errs)]
    if args.format == "json":
        print(json.dumps([{"n": n, "median_err": m, "q25": lo, "q75": hi} for n, m, lo, hi in rows]))
    else:
        print("n,median_err,q25,q75")
        for n, m, lo, hi in rows:
            print(f"{n},{m:.6g},{lo:.6g},{hi:.6g}")
    return 0


def _cmd_simulate(args):
    cfg = _experiment(args)
    name = args.algo or cfg.algorithms[0].name
    cfg = cfg.select([name])
    _prepare_output(cfg)
    _print_summary(run_experiment(cfg, threads=resolve_threads(args.threads)))
    return 0


def _cmd_bench(args):
    cfg = _experiment(args)
    _prepare_output(cfg)
    summary = run_experiment(cfg, threads=resolve_threads(args.threads))
    _print_summary(summary)
    print(f"aggregate written to {cfg.run.out_dir}/aggregate.csv")
    return 0


def _cmd_lower_bound(args):
    horizon = args.horizon or 1000
    inst = gen_lower_bound_instance(args.d, args.r, args.delta, horizon, seed=args.seed or 0)
    checks = inst.validate()
    print(f"K={inst.K}")
    print(f"gamma={inst.gamma:.12g} starred_arm={inst.starred_arm} payoff={inst.payoff:.12g}")
    for a, m in enumerate(inst.means()):
        mark = " *" if a == inst.starred_arm else ""
        print(f"arm {a}: <X,Theta>={m:.15g}{mark}")
    for name, ok in checks.items():
        print(f"{name}: {'ok' if ok else 'FAILED'}")
    if args.run == "lotus":
        env = inst.to_environment(args.seed or 0)
        cfg = LotusConfig(delta=args.delta, c_moment=env.noise.c_bound, T0=min(100, horizon))
        trace, _ = run_lotus(env, cfg, horizon, np.random.default_rng(args.seed or 0))
        print(f"lotus final regret {trace.final_regret():.4f} over {horizon} rounds")
    return 0 if all(checks.values()) else 2


def _cmd_validate(args):
    failed = 0
    for name, ok, detail in quick_checks(args.seed or 0):
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if failed == 0 else 2


COMMANDS = {
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "bench": _cmd_bench,
    "lower-bound": _cmd_lower_bound,
    "validate": _cmd_validate,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None:
            resolve_threads(args.threads)
        return COMMANDS[args.command](args)
    except (InputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # invalid parameter values reach the library as ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
