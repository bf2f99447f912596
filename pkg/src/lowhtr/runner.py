"""Replicated simulations and their persisted artifacts.

Replication ``j`` uses seed ``base_seed + j`` for the environment (arm set
and noise stream) and an algorithm stream derived from the same seed, so
results do not depend on how replications are scheduled over workers.
Nothing time-dependent is written: equal configs give equal bytes.
"""
import csv
import dataclasses
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINE_NAME, BaselineConfig, run_baseline_subgaussian
from .config import ExperimentConfig
from .env import (
    gaussian,
    gen_lower_bound_instance,
    gen_scenario1,
    gen_scenario2,
    laplace,
    pareto_centered,
    student_t,
)
from .lotus import LotusConfig, run_lotus
from .trace import fmt_float

__all__ = [
    "AGGREGATE_COLUMNS",
    "noise_from_spec",
    "build_environment",
    "build_algorithm",
    "run_replication",
    "run_experiment",
    "aggregate_traces",
    "compute_oracle_regret",
    "resolve_threads",
    "ensure_writable",
]

AGGREGATE_COLUMNS = ("round", "algo", "median_cumreg", "q25", "q75")
ALGO_STREAM = 7

_NOISE_PRESETS = {
    "student_t": student_t,
    "pareto": pareto_centered,
    "laplace": laplace,
    "gaussian": gaussian,
}


def noise_from_spec(spec):
    base = _NOISE_PRESETS[spec.noise]()
    changes = {k: v for k, v in (("param", spec.noise_param), ("delta", spec.noise_delta),
                                 ("c_bound", spec.noise_c)) if v is not None}
    return dataclasses.replace(base, **changes) if changes else base


def build_environment(spec, seed, horizon):
    """Instantiate the environment described by ``spec`` for one replication."""
    if spec.scenario == "scenario1":
        return gen_scenario1(seed, noise=noise_from_spec(spec), n_arms=spec.n_arms, d=spec.d)
    if spec.scenario == "scenario2":
        return gen_scenario2(seed, noise=noise_from_spec(spec), m=spec.m, d=spec.d)
    inst = gen_lower_bound_instance(spec.d, spec.r, spec.delta, horizon, seed=seed)
    return inst.to_environment(seed)


def build_algorithm(algo, env):
    """Resolve an :class:`AlgorithmSpec` against ``env`` into a concrete config.

    Unset moment constants come from the environment's noise law; unset
    rank and ``D_rr`` come from the true parameter where a mode needs them.
    """
    params = dict(algo.params)
    rank = params.get("rank", env.rank)
    d_rr = float(env.singular_values[rank - 1]) if rank >= 1 else None
    if algo.kind == "lotus":
        params.setdefault("delta", env.noise.delta)
        params.setdefault("c_moment", env.noise.c_bound)
        if params.get("mode", LotusConfig.mode) != "rank-agnostic":
            params.setdefault("rank", rank)
            params.setdefault("D_rr", d_rr)
        return LotusConfig(**params)
    params.setdefault("rank", rank)
    params.setdefault("D_rr", d_rr)
    params.setdefault("variance", env.noise.c_bound)
    return BaselineConfig(**params)


def run_replication(config, algo_index, rep):
    """Run one algorithm on one replication.

    Returns
    -------
    trace : RegretTrace
    records : list of dict
        Batch records (empty for the baseline).
    """
    algo = config.algorithms[algo_index]
    seed = config.run.base_seed + rep
    horizon = config.run.horizon
    env = build_environment(config.environment, seed, horizon)
    algo_cfg = build_algorithm(algo, env)
    rng = np.random.default_rng(np.random.SeedSequence([seed, ALGO_STREAM]))
    if algo.kind == BASELINE_NAME:
        trace, records = run_baseline_subgaussian(env, algo_cfg, horizon, rng), []
    else:
        trace, batches = run_lotus(env, algo_cfg, horizon, rng)
        records = [b.to_dict() for b in batches]
    trace.metadata.update({"algorithm": algo.name, "kind": algo.kind, "seed": seed,
                           "replication": rep, "config_hash": config.digest()})
    return trace, records


def _job(args):
    config_dict, algo_index, rep = args
    return run_replication(ExperimentConfig.from_dict(config_dict), algo_index, rep)


def resolve_threads(threads=None):
    """``threads`` if given, else ``LOWHTR_THREADS``, else 1."""
    if threads is None:
        raw = os.environ.get("LOWHTR_THREADS")
        if raw is None or raw == "":
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"LOWHTR_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ValueError(f"thread count must be at least 1, got {threads}")
    return threads


def ensure_writable(out_dir):
    """Create ``out_dir`` if needed and prove a file can be written there.

    Raises
    ------
    OSError
        The directory cannot be created or written.
    """
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path, prefix=".probe-"):
        pass
    return path


def aggregate_traces(cum_by_algo):
    """Median and quartiles of cumulative regret per round.

    ``cum_by_algo`` maps an algorithm name to a ``(replications, T)`` array.
    Returns rows ``(round, algo, median, q25, q75)`` ordered by algorithm
    then round.
    """
    rows = []
    for name, cum in cum_by_algo.items():
        cum = np.atleast_2d(np.asarray(cum, dtype=float))
        med = np.median(cum, axis=0)
        q25, q75 = np.percentile(cum, [25, 75], axis=0)
        rows.extend((t + 1, name, med[t], q25[t], q75[t]) for t in range(cum.shape[1]))
    return rows


def _write_aggregate(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for r, name, med, lo, hi in rows:
            w.writerow((r, name, fmt_float(med), fmt_float(lo), fmt_float(hi)))


def run_experiment(config, threads=None, out_dir=None):
    """Run every (algorithm, replication) pair and persist the results.

    Writes ``traces/<algo>_rep<j>.<format>``, ``aggregate.csv`` and
    ``summary.json`` under the output directory; returns the summary dict.
    The output directory is checked for writability before any simulation.
    """
    out = ensure_writable(out_dir if out_dir is not None else config.run.out_dir)
    n_threads = resolve_threads(threads)
    jobs = [(config.to_dict(), a, j)
            for a in range(len(config.algorithms)) for j in range(config.run.replications)]
    if n_threads == 1 or len(jobs) == 1:
        results = [_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(n_threads, len(jobs))) as pool:
            results = list(pool.map(_job, jobs))

    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    cum_by_algo = {}
    summary_algos = {}
    for (_, a, j), (trace, records) in zip(jobs, results):
        name = config.algorithms[a].name
        stem = trace_dir / f"{name}_rep{j:03d}"
        if config.run.format == "csv":
            trace.write_csv(stem.with_suffix(".csv"))
        else:
            trace.write_json(stem.with_suffix(".json"))
        cum_by_algo.setdefault(name, []).append(trace.cum_regret)
        entry = summary_algos.setdefault(name, {"kind": config.algorithms[a].kind, "seeds": [],
                                                "final_regret": [], "batches": []})
        entry["seeds"].append(trace.metadata["seed"])
        entry["final_regret"].append(trace.final_regret())
        entry["batches"].append(records)
    for entry in summary_algos.values():
        entry["median_final_regret"] = float(np.median(entry["final_regret"]))

    _write_aggregate(out / "aggregate.csv", aggregate_traces(cum_by_algo))
    summary = {
        "version": __version__,
        "schema_version": config.schema_version,
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "algorithms": summary_algos,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def compute_oracle_regret(env, chosen, start_round=1):
    """Per-round regret of a sequence of choices against the best arm.

    ``chosen[s]`` is the arm played at round ``start_round + s``: an index
    into that round's arm set or an arm matrix. Maximization is exact over
    the round's finite arm set.
    """
    out = np.empty(len(chosen))
    for s, c in enumerate(chosen):
        t = start_round + s
        best = env.best_value(t)
        if np.ndim(c) == 0:
            out[s] = best - env.mean_rewards(t)[int(c)]
        else:
            out[s] = best - env.mean_reward(c)
    return out
