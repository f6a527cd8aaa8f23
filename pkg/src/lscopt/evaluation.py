"""Metrics, trajectory statistics and desk-scale experiment drivers."""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agent import Counter, Episode, TrainConfig, Trainer, run_episode
from .baselines import (
    SearchResult, farthest_insertion, greedy_local_search, reference_value, reporting_value,
)
from .env import Problem, ProtocolError, init_solution, is_local_minimum, make_state, tour_length
from .graphs import Graph, InstanceSampler
from .networks import ModelParams, reserve_count

GRID_POINTS = 100
RESULT_COLUMNS = ["instance_id", "method", "objective", "approx_ratio", "steps", "wall_ms",
                  "reference", "reference_kind"]


def approx_ratio(achieved: float, reference: float, direction: str = "larger") -> float:
    """achieved / reference; ``direction`` says which side of 1 is better.

    ``"larger"`` (cut values, ratio <= 1) or ``"smaller"`` (tour lengths,
    ratio >= 1).
    """
    if direction not in ("larger", "smaller"):
        raise ValueError(f"direction must be 'larger' or 'smaller', got {direction!r}")
    if reference == 0:
        if achieved == 0:
            return 1.0
        raise ZeroDivisionError("reference value is zero")
    return achieved / reference


def direction_of(problem: Problem) -> str:
    return "larger" if problem.kind == "kcut" else "smaller"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LSCOPT_THREADS", "1")))
    except ValueError:
        return 1


def fan_out(fn: Callable, items: Sequence) -> list:
    """Map ``fn`` over ``items`` on up to LSCOPT_THREADS threads; order preserved."""
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# -- trajectory statistics -----------------------------------------------------------

@dataclass
class Trace:
    """Per-step view of one episode: ratio after each step, whether the step
    was a greedy move, and whether the state it reached is a local minimum."""

    ratios: np.ndarray
    greedy: np.ndarray
    local_min: np.ndarray

    def __len__(self):
        return len(self.ratios)


def trace_from_episode(ep: Episode, g: Graph, problem: Problem, reference: float,
                       truncate_at_best: bool = True) -> Trace:
    recs = ep.records[:ep.best_step] if truncate_at_best else ep.records
    ratios = np.array([reporting_value(g, problem, r.objective) / reference for r in recs])
    return Trace(ratios, np.array([r.greedy for r in recs]), np.array([r.local_min for r in recs]))


def trace_from_search(res: SearchResult, g: Graph, problem: Problem, reference: float) -> Trace:
    """Greedy and 2-opt trajectories: every step is a greedy move by construction."""
    ratios, local = [], []
    state = make_state(g, problem, res.solution)
    for k, (_, _, obj) in enumerate(res.trajectory):
        ratios.append(reporting_value(g, problem, obj) / reference)
        local.append(k == len(res.trajectory) - 1 and is_local_minimum(state))
    n = len(res.trajectory)
    return Trace(np.array(ratios), np.ones(n, dtype=bool), np.array(local, dtype=bool))


def trajectory_stats(traces: Sequence[Trace], points: int = GRID_POINTS) -> dict:
    """Average traces on a normalised time grid.

    Step t of a T-step episode sits at time t/T; each grid point takes the
    nearest step (never before step 1). Zero-step episodes are skipped.
    """
    traces = [t for t in traces if len(t) > 0]
    if not traces:
        raise ProtocolError("trajectory_stats needs at least one non-empty episode")
    grid = np.linspace(0.0, 1.0, points)
    ratio = np.zeros(points)
    greedy = np.zeros(points)
    local = np.zeros(points)
    for tr in traces:
        T = len(tr)
        idx = np.clip(np.floor(grid * T + 0.5).astype(int), 1, T) - 1
        ratio += tr.ratios[idx]
        greedy += tr.greedy[idx]
        local += tr.local_min[idx]
    m = len(traces)
    return {"time": grid, "approx_ratio": ratio / m, "greedy_frequency": greedy / m,
            "local_min_frequency": local / m, "episodes": m}


# -- experiments --------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    problem: str = "maxcut"
    k: int = 2
    m: int = 5                      # nodes per cluster for k-clustered instances
    sizes: tuple | None = None
    n: int = 10                     # training size
    n_test: int = 20
    test_sizes: tuple = (20, 30)
    epochs: int = 2000
    batch: int = 64
    d: int = 16
    T: int = 3
    nstep: int = 2
    gamma: float = 0.9
    lr: float = 1e-3
    reserve: float = 1.0
    eps_list: tuple = (1.0, 0.5, 0.1, 0.05, 0.01)
    restarts: int = 20
    seed: int = 0
    timing: bool = False

    @property
    def problem_obj(self) -> Problem:
        return self.problem_for(None)

    def problem_for(self, n: int | None) -> Problem:
        """Problem at instance size ``n`` (k-Cut sizes scale with it)."""
        if self.problem == "tsp":
            return Problem.tsp()
        if self.problem == "maxcut":
            return Problem.maxcut()
        if n is None and self.sizes is not None:
            return Problem("kcut", self.k, tuple(self.sizes))
        m = self.m if n is None else max(1, n // self.k)
        return Problem("kcut", self.k, (m,) * self.k)

    def sampler(self, n: int | None = None) -> InstanceSampler:
        if self.problem == "kcut":
            m = self.m if n is None else max(1, n // self.k)
            return InstanceSampler(kind="kclustered", k=self.k, m=m)
        return InstanceSampler(kind="uniform", n=self.n if n is None else n)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch=self.batch, d=self.d, T=self.T,
                           nstep=self.nstep, gamma=self.gamma, lr=self.lr,
                           reserve=self.reserve, seed=self.seed,
                           eval_every=100 if self.problem == "tsp" else 200)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("sizes", "test_sizes", "eps_list"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


def _streams(seed: int, tag: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence([seed, tag]).spawn(count)]


def held_out_instances(cfg: ExperimentConfig, n: int, count: int, tag: int = 7) -> list[Graph]:
    return cfg.sampler(n).batch(count, int(np.random.SeedSequence([cfg.seed, tag, n])
                                           .generate_state(1)[0]))


def train_model(cfg: ExperimentConfig) -> tuple[ModelParams, list[dict]]:
    problem = cfg.problem_obj
    sampler = cfg.sampler()
    validation = held_out_instances(cfg, sampler.size, 20, tag=3)
    res = Trainer(problem, cfg.train_config()).fit(sampler.sample, validation)
    return res.params, res.log


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - t0) * 1000.0


def _row(iid, method, value, ref, kind, steps, ms, direction, timing):
    return {"instance_id": iid, "method": method, "objective": value,
            "approx_ratio": approx_ratio(value, ref, direction), "steps": steps,
            "wall_ms": ms if timing else None, "reference": ref, "reference_kind": kind}


def evaluate_instance(params: ModelParams | None, g: Graph, problem: Problem, iid: int,
                      rng: np.random.Generator, cfg: ExperimentConfig,
                      methods: Sequence[str]) -> list[dict]:
    """All requested methods on one instance, sharing one random start solution."""
    ref, kind = reference_value(g, problem, cfg.restarts, seed=int(rng.integers(2**62)))
    direction = direction_of(problem)
    sol0 = init_solution(g, problem, rng)
    ep_rng = np.random.default_rng(rng.integers(2**62))
    rows = []
    for method in methods:
        if method == "lsdqn":
            ep, ms = _timed(lambda: run_episode(params, g, problem, ep_rng, sol0=sol0,
                                                reserve=cfg.reserve))
            value, steps = reporting_value(g, problem, ep.best_objective), ep.length
        elif method in ("greedy", "two-opt"):
            res, ms = _timed(lambda: greedy_local_search(g, sol0, problem))
            value, steps = reporting_value(g, problem, res.objective), res.steps
        elif method == "farthest":
            tour, ms = _timed(lambda: farthest_insertion(g))
            value, steps = tour_length(g.distances, tour.perm), 0
        elif method == "random":
            ms = 0.0
            value = reporting_value(g, problem, make_state(g, problem, sol0).objective)
            steps = 0
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.append(_row(iid, method, value, ref, kind, steps, ms, direction, cfg.timing))
    return rows


def default_methods(problem: Problem) -> list[str]:
    if problem.kind == "tsp":
        return ["lsdqn", "two-opt", "farthest", "random"]
    return ["lsdqn", "greedy", "random"]


def _evaluate_set(params, graphs, problem, cfg, tag, methods) -> list[dict]:
    rngs = _streams(cfg.seed, tag, len(graphs))
    jobs = list(enumerate(zip(graphs, rngs)))
    per = fan_out(lambda job: evaluate_instance(params, job[1][0], problem, job[0], job[1][1],
                                                cfg, methods), jobs)
    rows = [r for block in per for r in block]
    return sorted(rows, key=lambda r: (r["instance_id"], methods.index(r["method"])))


def run_quality_experiment(cfg: ExperimentConfig, params: ModelParams | None = None) -> list[dict]:
    """Train (unless ``params`` is given) and compare against baselines at the training size."""
    problem = cfg.problem_obj
    if params is None:
        params, _ = train_model(cfg)
    graphs = held_out_instances(cfg, cfg.sampler().size, cfg.n_test)
    return _evaluate_set(params, graphs, problem, cfg, 11, default_methods(problem))


def run_generalization(cfg: ExperimentConfig, params: ModelParams | None = None) -> list[dict]:
    """Apply a model trained at ``cfg.n`` to each size in ``cfg.test_sizes``."""
    if params is None:
        params, _ = train_model(cfg)
    rows = []
    for size in cfg.test_sizes:
        graphs = held_out_instances(cfg, size, cfg.n_test, tag=13)
        problem = cfg.problem_for(graphs[0].n)
        for r in _evaluate_set(params, graphs, problem, cfg, 17 + size, ["lsdqn"]):
            rows.append({"test_size": graphs[0].n, **r})
    return rows


def run_tradeoff(cfg: ExperimentConfig, eps_list: Sequence[float] | None = None,
                 params: ModelParams | None = None, n: int | None = None) -> list[dict]:
    """Ratio, time and Q-evaluation counts for several action reserve ratios.

    The same model and the same start solutions are used for every ratio;
    values are also reported relative to the first entry of ``eps_list``.
    """
    problem = cfg.problem_obj
    eps_list = list(cfg.eps_list if eps_list is None else eps_list)
    if params is None:
        params, _ = train_model(cfg)
    size = cfg.sampler(n).size
    graphs = held_out_instances(cfg, size, cfg.n_test, tag=19)
    refs = [reference_value(g, problem, cfg.restarts, seed=i)[0] for i, g in enumerate(graphs)]
    direction = direction_of(problem)
    rows = []
    for eps in eps_list:
        counter = Counter()
        ratios = []
        t0 = time.perf_counter()
        for i, (g, ref) in enumerate(zip(graphs, refs)):
            rng = _streams(cfg.seed, 23, len(graphs))[i]
            sol0 = init_solution(g, problem, rng)
            ep = run_episode(params, g, problem, rng, sol0=sol0, reserve=eps, counter=counter)
            ratios.append(approx_ratio(reporting_value(g, problem, ep.best_objective), ref,
                                       direction))
        elapsed = (time.perf_counter() - t0) * 1000.0
        per_decision = counter.q_evaluations / max(counter.decisions, 1)
        rows.append({"epsilon": eps, "mean_approx_ratio": float(np.mean(ratios)),
                     "decisions": counter.decisions, "q_evaluations": counter.q_evaluations,
                     "q_evals_per_decision": per_decision,
                     "wall_ms": elapsed if cfg.timing else None})
    base = rows[0]
    for r in rows:
        r["relative_ratio"] = r["mean_approx_ratio"] / base["mean_approx_ratio"]
        r["relative_forward"] = r["q_evals_per_decision"] / base["q_evals_per_decision"]
        r["relative_time"] = (r["wall_ms"] / base["wall_ms"]) if cfg.timing else None
    return rows


def expected_reserve_fraction(eps: float, n_legal: int) -> float:
    return reserve_count(eps, n_legal) / n_legal


def run_trajectory_experiment(cfg: ExperimentConfig, params: ModelParams | None = None) -> dict:
    """Normalised-time traces for the learned policy and for greedy search.

    Methods whose episodes all have zero steps are left out.
    """
    problem = cfg.problem_obj
    if params is None:
        params, _ = train_model(cfg)
    graphs = held_out_instances(cfg, cfg.sampler().size, cfg.n_test, tag=29)
    rngs = _streams(cfg.seed, 31, len(graphs))
    agent, greedy = [], []
    for g, rng in zip(graphs, rngs):
        ref = reference_value(g, problem, cfg.restarts, seed=0)[0]
        sol0 = init_solution(g, problem, rng)
        ep = run_episode(params, g, problem, rng, sol0=sol0, reserve=cfg.reserve, record=True)
        agent.append(trace_from_episode(ep, g, problem, ref))
        greedy.append(trace_from_search(greedy_local_search(g, sol0, problem), g, problem, ref))
    # a method whose episodes all stop at once has no trace to average
    return {name: trajectory_stats(traces)
            for name, traces in (("lsdqn", agent), ("greedy", greedy))
            if any(len(t) for t in traces)}


# -- output ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def stats_rows(stats: dict) -> list[dict]:
    rows = []
    for method, s in stats.items():
        for i, t in enumerate(s["time"]):
            rows.append({"method": method, "time": float(t),
                         "approx_ratio": float(s["approx_ratio"][i]),
                         "greedy_frequency": float(s["greedy_frequency"][i]),
                         "local_min_frequency": float(s["local_min_frequency"][i])})
    return rows
