"""Benchmark harness: run episode suites, aggregate accuracy with confidence
intervals, emit ablation grids, convergence traces, and runtime tables.

Episodes are indexed 0..n-1 and solved independently; results are reduced
in index order, so a run is deterministic for any parallelism degree.
Timing covers the solver only, never sampling or I/O.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from fsi.classifier import accuracy, init_prototypes, posterior, predict
from fsi.episodes import BasePoolNegatives, TaskConfig, sample_episode
from fsi.features import EmbeddingSet, SyntheticConfig, generate_synthetic, load_embeddings
from fsi.losses import PoodleWeights, TimWeights
from fsi.optim import SolverTrace, run_entmin, run_poodle, run_tim_gd
from fsi.tim_adm import run_tim_adm

METHODS = ("inductive", "tim-gd", "tim-adm", "poodle", "entmin")
DEFAULT_ITERS = {"inductive": 0, "tim-gd": 1000, "tim-adm": 150, "poodle": 250, "entmin": 1000}


class ConfigError(ValueError):
    """Invalid or inconsistent benchmark configuration."""


@dataclass(frozen=True)
class BenchConfig:
    method: str
    task: TaskConfig
    source: Union[SyntheticConfig, str]
    base_source: Union[SyntheticConfig, str, None] = None
    num_episodes: int = 10_000
    iters: Optional[int] = None  # None = method default
    lr: float = 1e-3
    tau: float = 15.0
    gamma: float = 10.0
    tim_weights: TimWeights = field(default_factory=TimWeights)
    poodle_weights: PoodleWeights = field(default_factory=PoodleWeights)
    poodle_mode: str = "transductive"
    learn_gamma: bool = False
    jobs: int = 1
    measure_time: bool = True
    keep_episode_records: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.num_episodes < 1:
            raise ConfigError("num_episodes must be >= 1")
        if isinstance(self.task.negatives, BasePoolNegatives) and self.base_source is None:
            raise ConfigError("base-pool negatives require a base feature source")

    @property
    def effective_iters(self):
        return DEFAULT_ITERS[self.method] if self.iters is None else self.iters


@dataclass
class Summary:
    method: str
    ways: int
    shots: int
    episodes: int
    mean_accuracy: float  # percent
    ci95: float  # percentage points, half-width
    mean_task_seconds: float
    config: dict
    per_episode: Optional[list] = None

    def to_json_dict(self):
        return {
            "method": self.method,
            "ways": self.ways,
            "shots": self.shots,
            "episodes": self.episodes,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "mean_task_seconds": self.mean_task_seconds,
            "config": self.config,
        }


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            "__type__": type(obj).__name__,
            **{k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()},
        }
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _resolve(source):
    if source is None:
        return None
    if isinstance(source, SyntheticConfig):
        return generate_synthetic(source)
    return load_embeddings(source)


def solve_episode(episode, cfg: BenchConfig, record_trace=False):
    """Solve one episode; returns (accuracy, solver_seconds, trace_or_None)."""
    method = cfg.method
    iters = cfg.effective_iters
    t0 = time.perf_counter()
    if method == "inductive" or iters == 0:
        proto = init_prototypes(episode, gamma=cfg.gamma, tau=cfg.tau)
        trace = None
        scale = "gamma" if method == "poodle" else "tau"
    elif method == "tim-gd":
        proto, trace = run_tim_gd(episode, cfg.tim_weights, iters=iters, lr=cfg.lr,
                                  tau=cfg.tau, record_trace=record_trace)
        scale = "tau"
    elif method == "tim-adm":
        proto, trace = run_tim_adm(episode, cfg.tim_weights, iters=iters, tau=cfg.tau,
                                   record_trace=record_trace)
        scale = "tau"
    elif method == "entmin":
        proto, trace = run_entmin(episode, iters=iters, lr=cfg.lr, tau=cfg.tau,
                                  record_trace=record_trace)
        scale = "tau"
    else:  # poodle
        proto, trace = run_poodle(
            episode,
            cfg.poodle_weights,
            mode=cfg.poodle_mode,
            iters=iters,
            lr=cfg.lr,
            gamma=cfg.gamma,
            learn_gamma=cfg.learn_gamma,
            record_trace=record_trace,
        )
        scale = "gamma"
    seconds = time.perf_counter() - t0
    if len(episode.query_y) == 0:
        return np.nan, seconds, trace
    P = posterior(proto, episode.query_x, scale)
    return accuracy(predict(P), episode.query_y), seconds, trace


_WORKER: dict = {}


def _init_worker(cfg, eset, base):
    _WORKER["cfg"] = cfg
    _WORKER["eset"] = eset
    _WORKER["base"] = base


def _solve_index(index):
    cfg, eset, base = _WORKER["cfg"], _WORKER["eset"], _WORKER["base"]
    episode = sample_episode(eset, base, cfg.task, index)
    acc, seconds, _ = solve_episode(episode, cfg)
    return acc, seconds


def _summarize(cfg: BenchConfig, accs, secs) -> Summary:
    accs = np.asarray(accs, dtype=np.float64)
    valid = accs[~np.isnan(accs)]
    n = valid.size
    mean = float(valid.mean() * 100.0) if n else float("nan")
    sd = float(valid.std(ddof=1)) if n > 1 else 0.0
    ci95 = 1.96 * sd * 100.0 / np.sqrt(n) if n > 1 else 0.0
    mean_secs = float(np.mean(secs)) if cfg.measure_time else 0.0
    return Summary(
        method=cfg.method,
        ways=cfg.task.ways,
        shots=cfg.task.shots,
        episodes=cfg.num_episodes,
        mean_accuracy=mean,
        ci95=float(ci95),
        mean_task_seconds=mean_secs,
        config=_jsonable(cfg),
        per_episode=list(accs) if cfg.keep_episode_records else None,
    )


def run_benchmark(cfg: BenchConfig) -> Summary:
    """Solve cfg.num_episodes independent episodes and aggregate."""
    eset = _resolve(cfg.source)
    base = _resolve(cfg.base_source)
    if eset.num_classes < cfg.task.ways:
        raise ConfigError(
            f"dataset has {eset.num_classes} classes, task needs {cfg.task.ways}"
        )
    indices = range(cfg.num_episodes)
    if cfg.jobs <= 1:
        _init_worker(cfg, eset, base)
        results = [_solve_index(i) for i in indices]
    else:
        with ProcessPoolExecutor(
            max_workers=cfg.jobs, initializer=_init_worker, initargs=(cfg, eset, base)
        ) as pool:
            results = list(pool.map(_solve_index, indices, chunksize=64))
    accs = [r[0] for r in results]
    secs = [r[1] for r in results]
    return _summarize(cfg, accs, secs)


ABLATION_CONFIGS = (
    ("ce", TimWeights(use_ce=True, use_conditional=False, use_marginal=False)),
    ("ce+cond", TimWeights(use_ce=True, use_conditional=True, use_marginal=False)),
    ("ce-marg", TimWeights(use_ce=True, use_conditional=False, use_marginal=True)),
    ("full", TimWeights(use_ce=True, use_conditional=True, use_marginal=True)),
)

def run_ablation(cfg: BenchConfig, methods=("tim-gd", "tim-adm")):
    """Grid of summaries over the four loss configurations x methods."""
    grid = {}
    for method in methods:
        for label, weights in ABLATION_CONFIGS:
            sub = replace(cfg, method=method, tim_weights=weights, iters=None)
            grid[(method, label)] = run_benchmark(sub)
    return grid


TRACE_COLUMNS = ("iteration", "wall_seconds", "loss", "accuracy", "mutual_information")


def export_trace(trace: Optional[SolverTrace], path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        if trace is None:
            return
        for i in range(len(trace)):
            writer.writerow(
                [
                    i,
                    repr(trace.wall_seconds[i]),
                    repr(trace.loss[i]),
                    repr(trace.accuracy[i]),
                    repr(trace.mutual_information[i]),
                ]
            )


def export_summary(summary: Summary, path):
    with open(path, "w") as f:
        json.dump(summary.to_json_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def time_per_task(cfg: BenchConfig, methods=METHODS, repeats=5):
    """Mean and sd of solver wall-clock per episode, by method.

    Episodes are sampled outside the timed region; only the solver runs
    are measured. Each measurement is repeated ``repeats`` times.
    """
    eset = _resolve(cfg.source)
    base = _resolve(cfg.base_source)
    episodes = [
        sample_episode(eset, base, cfg.task, i) for i in range(cfg.num_episodes)
    ]
    table = {}
    for method in methods:
        sub = replace(cfg, method=method)
        means = []
        for _ in range(repeats):
            secs = [solve_episode(ep, sub)[1] for ep in episodes]
            means.append(float(np.mean(secs)))
        table[method] = {
            "mean": float(np.mean(means)),
            "sd": float(np.std(means, ddof=1)) if repeats > 1 else 0.0,
        }
    return table
