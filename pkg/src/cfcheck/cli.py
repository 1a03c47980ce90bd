"""Command line entry point ``cfcheck``.

Exit codes: 0 verdict True or a quantitative query answered, 1 verdict False,
2 usage or input error (including unknown policy names), 3 Undecided,
4 formula syntax error, 5 trace inconsistent with the model.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from typing import IO, Iterator, Sequence

import numpy as np

from . import io as fio
from .checker import CheckParams, Checker, UnknownPolicyError, required_horizon
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .gumbel import InconsistentTraceError, ScmConfig, abduct_path
from .logic.parser import FormulaSyntaxError, parse_formula
from .mdp import ModelError, Path, simulate_indices
from .stats import Truth

EXIT_TRUE, EXIT_FALSE, EXIT_USAGE, EXIT_UNDECIDED, EXIT_PARSE, EXIT_TRACE = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CFCHECK_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"CFCHECK_SEED must be an integer, got {env!r}") from None


@contextlib.contextmanager
def _output(path: str | None) -> Iterator[IO]:
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _policy(loaded: fio.LoadedModel, name: str):
    if name not in loaded.policies:
        raise UnknownPolicyError(f"unknown policy {name!r}; registered: {', '.join(sorted(loaded.policies)) or 'none'}")
    return loaded.policies[name]


def _trace(args, loaded) -> tuple[Path, str]:
    if args.trace is None:
        raise UsageError("--trace is required")
    traces = fio.load_traces(args.trace)
    if not 0 <= args.index < len(traces):
        raise UsageError(f"trace file holds {len(traces)} traces, index {args.index} requested")
    return traces[args.index]


def cmd_simulate(args) -> int:
    loaded = fio.load_model(args.model)
    pol = _policy(loaded, args.policy)
    if args.length < 1 or args.count < 0:
        raise UsageError("--length must be positive and --count non-negative")
    mdp = loaded.mdp
    rng = np.random.default_rng(_seed(args))
    arr = pol.to_array(mdp)
    starts = rng.choice(mdp.n_states, size=args.count, p=mdp.init)
    idx = simulate_indices(mdp, arr, starts, args.length, rng) if args.count else np.empty((0, args.length), int)
    traces = [(Path.from_indices(mdp, row, arr), args.policy) for row in idx]
    with _output(args.out) as fh:
        fio.dump_traces(traces, fh)
    return EXIT_TRUE


def _params(args) -> CheckParams:
    try:
        return CheckParams(
            n=args.n,
            m=args.m,
            alpha=args.alpha,
            seed=_seed(args),
            jobs=args.jobs,
            method=args.method,
            interval=args.interval,
            delta_mode=args.delta_mode,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_check(args) -> int:
    if args.formula is None:
        raise UsageError("--formula is required")
    node = parse_formula(args.formula)
    loaded = fio.load_model(args.model)
    path, pname = _trace(args, loaded)
    params = _params(args)
    cfg = ScmConfig(loaded.mdp, _policy(loaded, pname), required_horizon(node))
    verdict = Checker(loaded.mdp, loaded.policies, params).check(cfg, path, node)
    doc = fio.verdict_to_dict(args.formula, verdict, params.seed)
    with _output(args.out) as fh:
        json.dump(doc, fh)
        fh.write("\n")
    return {None: EXIT_TRUE, Truth.TRUE: EXIT_TRUE, Truth.FALSE: EXIT_FALSE, Truth.UNDECIDED: EXIT_UNDECIDED}[verdict.value]


def cmd_abduct(args) -> int:
    loaded = fio.load_model(args.model)
    path, pname = _trace(args, loaded)
    if args.n < 1:
        raise UsageError("--n must be positive")
    cfg = ScmConfig(loaded.mdp, _policy(loaded, pname), len(path))
    contexts = abduct_path(cfg, path, args.n, args.method, np.random.default_rng(_seed(args)))
    arr = np.stack([c.values for c in contexts]) if contexts[0].values.size else np.empty((args.n, 0, loaded.mdp.n_states))
    with _output(args.out) as fh:
        fio.write_abduct_csv(arr, loaded.mdp.states, fh)
    return EXIT_TRUE


def cmd_experiment(args) -> int:
    loaded = fio.load_model(args.model)
    for name in ("rand", "opt"):
        _policy(loaded, name)
    try:
        cfg = ExperimentConfig(
            args.name,
            reps=args.reps,
            paths=args.paths,
            contexts=args.contexts,
            horizon=args.horizon,
            seed=_seed(args),
            jobs=args.jobs,
            method=args.method,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    report = run_experiment(loaded.mdp, loaded.policies, cfg)
    with _output(args.out) as fh:
        fio.write_experiment_csv(report.values, fh)
    if args.histogram:
        with _output(args.histogram) as fh:
            fio.write_histogram_csv(report.histograms, fh)
    summary = report.summary()
    if args.summary:
        with _output(args.summary) as fh:
            json.dump(summary, fh, indent=1)
    if args.out not in (None, "-"):
        json.dump({k: summary[k] for k in ("experiment", "means", "std_errors", "ks_statistic", "ks_pvalue")}, sys.stdout)
        sys.stdout.write("\n")
    return EXIT_TRUE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON (default: built-in 4x4 grid world)")
    common.add_argument("--seed", type=int, help="RNG seed (fallback: $CFCHECK_SEED, then 0)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--method", choices=("exact", "rejection"), default="exact", help="posterior sampler")
    common.add_argument("--out", help="output file (default: stdout)")

    p = argparse.ArgumentParser(prog="cfcheck", description="Counterfactual temporal-logic checking of MDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write traces of a named policy")
    s.add_argument("--policy", required=True)
    s.add_argument("--length", type=int, default=10, help="states per trace")
    s.add_argument("--count", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", parents=[common], help="check a state formula on a trace")
    c.add_argument("--trace")
    c.add_argument("--index", type=int, default=0, help="which trace in a multi-trace file")
    c.add_argument("--formula")
    c.add_argument("--n", type=int, default=1000, help="rollouts per estimate")
    c.add_argument("--m", type=int, default=20, help="posterior contexts per observed path")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--interval", choices=("clopper_pearson", "wald"), default="clopper_pearson")
    c.add_argument("--delta-mode", choices=("paired", "unpaired"), default="paired")
    c.set_defaults(func=cmd_check)

    a = sub.add_parser("abduct", parents=[common], help="posterior Gumbel contexts for a trace as CSV")
    a.add_argument("--trace")
    a.add_argument("--index", type=int, default=0)
    a.add_argument("--n", type=int, default=20)
    a.set_defaults(func=cmd_abduct)

    e = sub.add_parser("experiment", parents=[common], help="run a scripted grid-world experiment")
    e.add_argument("name", choices=EXPERIMENTS)
    e.add_argument("--reps", type=int, default=1000)
    e.add_argument("--paths", type=int, default=100)
    e.add_argument("--contexts", type=int, default=20)
    e.add_argument("--horizon", type=int, default=10, help="bound T of the reach-avoid formula")
    e.add_argument("--summary", help="write the JSON summary here")
    e.add_argument("--histogram", help="write 20-bin histogram counts here as CSV")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormulaSyntaxError as e:
        print(f"cfcheck: syntax error at offset {e.offset}: {e}", file=sys.stderr)
        return EXIT_PARSE
    except InconsistentTraceError as e:
        print(f"cfcheck: inconsistent trace at position {e.position}: {e}", file=sys.stderr)
        return EXIT_TRACE
    except (UsageError, ModelError, ValueError, OSError) as e:
        print(f"cfcheck: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
