"""Command-line front end.

Subcommands: ``bench`` (episode suite -> summary JSON), ``ablation``
(loss-term grid), ``trace`` (single-episode convergence CSV), ``synth``
(emit a synthetic embedding file), ``convert`` (CSV <-> binary).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence. Seed resolution: ``--seed`` flag, else ``FSI_SEED`` env var,
else 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from fsi.bench import (
    BenchConfig,
    ConfigError,
    METHODS,
    export_summary,
    export_trace,
    run_ablation,
    run_benchmark,
    sample_episode,
    solve_episode,
    _resolve,
)
from fsi.episodes import (
    BasePoolNegatives,
    DirichletImbalance,
    SamplingError,
    TaskConfig,
    UniformSphereNegatives,
)
from fsi.features import (
    DegenerateInputError,
    EmbeddingIOError,
    SyntheticConfig,
    generate_synthetic,
    load_csv,
    load_embeddings,
    save_csv,
    save_embeddings,
)
from fsi.losses import PoodleWeights, TimWeights
from fsi.optim import NumericDivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _parse_synthetic(text, seed):
    parts = text.split(",")
    if len(parts) != 4:
        raise ConfigError("--synthetic expects D,C,N,sigma")
    try:
        dim, classes, per_class = int(parts[0]), int(parts[1]), int(parts[2])
        spread = float(parts[3])
    except ValueError as exc:
        raise ConfigError(f"bad --synthetic value: {exc}") from exc
    return SyntheticConfig(
        dim=dim, num_classes=classes, per_class=per_class, spread=spread, seed=seed
    )


def _parse_negatives(text):
    if text is None or text == "none":
        return None
    kind, _, count = text.partition(":")
    try:
        n = int(count)
    except ValueError as exc:
        raise ConfigError(f"bad --negatives count in {text!r}") from exc
    if kind == "base":
        return BasePoolNegatives(count=n)
    if kind == "uniform":
        return UniformSphereNegatives(count=n)
    raise ConfigError(f"--negatives must be none, base:N or uniform:N, got {text!r}")


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("FSI_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"FSI_SEED must be an integer, got {env!r}") from exc
    return 0


def _task_from_args(args, seed):
    imbalance = None
    if args.kappa is not None:
        total = args.total_queries
        if total is None:
            total = args.ways * args.queries
        imbalance = DirichletImbalance(concentration=args.kappa, total_queries=total)
    return TaskConfig(
        ways=args.ways,
        shots=args.shots,
        queries_per_class=args.queries,
        imbalance=imbalance,
        negatives=_parse_negatives(args.negatives),
        seed=seed,
    )


def _bench_config_from_args(args, seed):
    if (args.features is None) == (args.synthetic is None):
        raise ConfigError("exactly one of --features or --synthetic is required")
    source = (
        args.features
        if args.features is not None
        else _parse_synthetic(args.synthetic, seed)
    )
    # --alpha is the conditional-entropy weight for the information solvers
    # (default 0.1) and the pull weight for the margin solver (default 1.0),
    # so the default is resolved per method.
    if args.method == "poodle":
        alpha = 1.0 if args.alpha is None else args.alpha
        tim = TimWeights(lambda_ce=args.lam)
        poodle = PoodleWeights(alpha_pull=alpha, beta_push=args.beta)
    else:
        alpha = 0.1 if args.alpha is None else args.alpha
        tim = TimWeights(lambda_ce=args.lam, alpha_cond=alpha)
        poodle = PoodleWeights(beta_push=args.beta)
    return BenchConfig(
        method=args.method,
        task=_task_from_args(args, seed),
        source=source,
        base_source=args.base_features,
        num_episodes=args.episodes,
        iters=args.iters,
        lr=args.lr,
        tau=args.tau,
        gamma=args.gamma,
        tim_weights=tim,
        poodle_weights=poodle,
        poodle_mode=args.poodle_mode,
        jobs=args.jobs,
        measure_time=not args.no_timing,
    )


def _add_task_flags(p):
    p.add_argument("--features", help="embedding file for episode sampling")
    p.add_argument("--synthetic", metavar="D,C,N,SIGMA", help="generate features instead")
    p.add_argument("--base-features", help="embedding file for the negative pool")
    p.add_argument("--method", choices=METHODS, default="tim-gd")
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--kappa", type=float, default=None,
                   help="Dirichlet concentration for imbalanced query counts")
    p.add_argument("--total-queries", type=int, default=None)
    p.add_argument("--negatives", default="none", metavar="{none,base:N,uniform:N}")
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=15.0)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--poodle-mode", choices=("inductive", "transductive"),
                   default="transductive")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-timing", action="store_true",
                   help="report 0 for timings so identical runs serialize identically")
    p.add_argument("--out", help="write summary JSON here (default: stdout)")
    p.add_argument("--trace", help="write per-iteration CSV for episode 0 here")


def build_parser():
    parser = argparse.ArgumentParser(prog="fsi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run an episode suite and report accuracy")
    _add_task_flags(p)

    p = sub.add_parser("ablation", help="loss-term grid over solver methods")
    _add_task_flags(p)
    p.add_argument("--methods", default="tim-gd,tim-adm",
                   help="comma-separated solver list")

    p = sub.add_parser("trace", help="per-iteration convergence CSV for one episode")
    _add_task_flags(p)
    p.add_argument("--episode-index", type=int, default=0)

    p = sub.add_parser("synth", help="write a synthetic embedding file")
    p.add_argument("--synthetic", metavar="D,C,N,SIGMA", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("convert", help="convert between CSV and binary embeddings")
    p.add_argument("input")
    p.add_argument("--out", required=True)

    return parser


def _emit_summary(summary, out):
    if out:
        export_summary(summary, out)
    else:
        json.dump(summary.to_json_dict(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _cmd_bench(args):
    cfg = _bench_config_from_args(args, _resolve_seed(args))
    summary = run_benchmark(cfg)
    _emit_summary(summary, args.out)
    if args.trace:
        episode = sample_episode(
            _resolve(cfg.source), _resolve(cfg.base_source), cfg.task, 0
        )
        _, _, trace = solve_episode(episode, cfg, record_trace=True)
        export_trace(trace, args.trace)
    return EXIT_OK


def _cmd_ablation(args):
    cfg = _bench_config_from_args(args, _resolve_seed(args))
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in ("tim-gd", "tim-adm"):
            raise ConfigError(f"ablation supports tim-gd and tim-adm, got {m!r}")
    grid = run_ablation(cfg, methods)
    payload = {
        f"{method}/{label}": summary.to_json_dict()
        for (method, label), summary in grid.items()
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_trace(args):
    cfg = _bench_config_from_args(args, _resolve_seed(args))
    if cfg.method == "inductive":
        raise ConfigError("the inductive baseline has no iterations to trace")
    episode = sample_episode(
        _resolve(cfg.source), _resolve(cfg.base_source), cfg.task, args.episode_index
    )
    _, _, trace = solve_episode(episode, cfg, record_trace=True)
    out = args.trace or args.out
    if out:
        export_trace(trace, out)
    else:
        import csv as _csv

        writer = _csv.writer(sys.stdout)
        writer.writerow(
            ("iteration", "wall_seconds", "loss", "accuracy", "mutual_information")
        )
        for i in range(len(trace)):
            writer.writerow(
                [i, repr(trace.wall_seconds[i]), repr(trace.loss[i]),
                 repr(trace.accuracy[i]), repr(trace.mutual_information[i])]
            )
    return EXIT_OK


def _cmd_synth(args):
    cfg = _parse_synthetic(args.synthetic, _resolve_seed(args))
    save_embeddings(generate_synthetic(cfg), args.out)
    return EXIT_OK


def _cmd_convert(args):
    if args.input.endswith(".csv"):
        eset = load_csv(args.input)
    else:
        eset = load_embeddings(args.input)
    if args.out.endswith(".csv"):
        save_csv(eset, args.out)
    else:
        save_embeddings(eset, args.out)
    return EXIT_OK


_COMMANDS = {
    "bench": _cmd_bench,
    "ablation": _cmd_ablation,
    "trace": _cmd_trace,
    "synth": _cmd_synth,
    "convert": _cmd_convert,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (EmbeddingIOError, DegenerateInputError, SamplingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
