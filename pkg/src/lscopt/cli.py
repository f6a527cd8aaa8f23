"""``lscopt`` command line: generate, train, solve, baseline, eval.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics are a
single line on stderr. Settings resolve as flags > ``--config`` file
(flat ``key=value`` lines) > defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .agent import ConfigError, TrainConfig, Trainer, run_episode
from .baselines import (
    brute_force_kcut, brute_force_tsp, farthest_insertion, greedy_local_search, reference_value,
    reporting_value,
)
from .env import (
    Problem, check_solution, init_solution, make_state, objective, solution_to_dict,
    trajectory_record,
)
from .evaluation import (
    RESULT_COLUMNS, ExperimentConfig, _row, direction_of, held_out_instances,
    run_generalization, run_quality_experiment, run_tradeoff, run_trajectory_experiment,
    stats_rows, to_csv, train_model,
)
from .graphs import GenSpec, generate, load_graph, sample_sigmas, save_graph
from .networks import ModelParams

METHODS = ("lsdqn", "greedy", "two-opt", "farthest", "random", "exact")

DEFAULTS = {
    "problem": None, "k": 2, "sizes": None, "n": 10, "m": 5, "kind": "uniform", "h": 2,
    "knn": 50, "count": 1, "epochs": 2000, "gamma": 0.9, "nstep": 2, "gnn_rounds": 3,
    "embed_dim": 16, "reserve_ratio": 1.0, "batch": 64, "lr": 1e-3, "out": None,
    "instance": None, "checkpoint": None, "method": None, "n_test": 20, "test_sizes": "20,30",
    "eps_list": "1.0,0.5,0.1,0.05,0.01", "restarts": 20, "timing": False,
    "quality": False, "generalization": False, "tradeoff": False, "trajectory": False,
}

# types for values read from a --config file
_TYPES = {
    "k": int, "n": int, "m": int, "h": int, "knn": int, "count": int, "epochs": int,
    "gamma": float, "nstep": int, "gnn_rounds": int, "embed_dim": int, "reserve_ratio": float,
    "batch": int, "lr": float, "seed": int, "n_test": int, "restarts": int,
}
_BOOLS = {"timing", "quality", "generalization", "tradeoff", "trajectory"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise UsageError("empty integer list")
    return vals


def _float_list(text) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, required=True)
    common.add_argument("--config")
    common.add_argument("--out")
    common.add_argument("--problem", choices=["maxcut", "kcut", "tsp"])
    common.add_argument("--k", type=int)
    common.add_argument("--sizes")
    common.add_argument("--n", type=int)
    common.add_argument("--m", type=int)

    model = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    model.add_argument("--epochs", type=int)
    model.add_argument("--gamma", type=float)
    model.add_argument("--nstep", type=int)
    model.add_argument("--gnn-rounds", type=int)
    model.add_argument("--embed-dim", type=int)
    model.add_argument("--reserve-ratio", type=float)
    model.add_argument("--batch", type=int)
    model.add_argument("--lr", type=float)
    model.add_argument("--checkpoint")

    parser = _Parser(prog="lscopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], argument_default=argparse.SUPPRESS,
                         help="write synthetic instances")
    gen.add_argument("--kind", choices=["uniform", "kclustered"])
    gen.add_argument("--h", type=int)
    gen.add_argument("--knn", type=int)
    gen.add_argument("--count", type=int)

    sub.add_parser("train", parents=[common, model], argument_default=argparse.SUPPRESS,
                   help="train a model; writes checkpoint.json and metrics.csv")

    solve = sub.add_parser("solve", parents=[common, model], argument_default=argparse.SUPPRESS,
                           help="solve one instance; writes solution and trajectory")
    solve.add_argument("--instance")
    solve.add_argument("--method", choices=METHODS)

    base = sub.add_parser("baseline", parents=[common], argument_default=argparse.SUPPRESS,
                          help="run baselines on instances; writes results.csv")
    base.add_argument("--instance", action="append")
    base.add_argument("--method", action="append", choices=METHODS)
    base.add_argument("--restarts", type=int)
    base.add_argument("--timing", action="store_true")

    ev = sub.add_parser("eval", parents=[common, model], argument_default=argparse.SUPPRESS,
                        help="run experiments; writes one CSV per experiment")
    for name in ("quality", "generalization", "tradeoff", "trajectory"):
        ev.add_argument(f"--{name}", action="store_true")
    ev.add_argument("--n-test", type=int)
    ev.add_argument("--test-sizes")
    ev.add_argument("--eps-list")
    ev.add_argument("--restarts", type=int)
    ev.add_argument("--timing", action="store_true")
    return parser


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment, keys may use dashes."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            if key not in DEFAULTS and key != "seed":
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                if key in _BOOLS:
                    out[key] = value.lower() in ("1", "true", "yes", "on")
                else:
                    out[key] = _TYPES.get(key, str)(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve(argv) -> dict:
    ns = vars(build_parser().parse_args(argv))
    opts = dict(DEFAULTS)
    if ns.get("config"):
        if not os.path.exists(ns["config"]):
            raise FileNotFoundError(f"config file not found: {ns['config']}")
        opts.update(read_config(ns["config"]))
    opts.update({k: v for k, v in ns.items() if k != "config"})
    if opts["problem"] is None:
        # TSP-only methods imply the problem
        tsp_only = {"two-opt", "farthest"}
        method = opts.get("method")
        picked = set(method) if isinstance(method, list) else {method}
        opts["problem"] = "tsp" if picked & tsp_only else "maxcut"
    return opts


# -- helpers ------------------------------------------------------------------------

def _problem(o) -> Problem:
    if o["problem"] == "kcut":
        sizes = _int_list(o["sizes"]) if o["sizes"] else (o["m"],) * o["k"]
        return Problem("kcut", o["k"], sizes)
    return Problem.parse(o["problem"], o["k"])


def _experiment(o) -> ExperimentConfig:
    sizes = _int_list(o["sizes"]) if o["sizes"] else None
    m = o["m"]
    if o["problem"] == "kcut" and sizes is not None:
        m = sizes[0]
    return ExperimentConfig(
        problem=o["problem"], k=o["k"], m=m, sizes=sizes, n=o["n"], n_test=o["n_test"],
        test_sizes=_int_list(o["test_sizes"]), epochs=o["epochs"], batch=o["batch"],
        d=o["embed_dim"], T=o["gnn_rounds"], nstep=o["nstep"], gamma=o["gamma"], lr=o["lr"],
        reserve=o["reserve_ratio"], eps_list=_float_list(o["eps_list"]),
        restarts=o["restarts"], seed=o["seed"], timing=o["timing"],
    )


def _outdir(o) -> str | None:
    out = o.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _write(out, name, text) -> None:
    with open(os.path.join(out, name), "w", newline="\n") as f:
        f.write(text)


def _manifest(out, command, o, extra=None) -> None:
    body = {"command": command, "version": __version__,
            "settings": {k: o[k] for k in sorted(o) if k != "out"}}
    if extra:
        body.update(extra)
    _write(out, "manifest.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


def _load_params(path) -> ModelParams:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return ModelParams.load(path)


def _load_instance(path):
    if not path:
        raise UsageError("--instance is required")
    if not os.path.exists(path):
        raise FileNotFoundError(f"instance not found: {path}")
    return load_graph(path)


def _problem_for_graph(o, g) -> Problem:
    p = _problem(o)
    if p.kind == "kcut" and p.sizes is not None and sum(p.sizes) != g.n and not o["sizes"]:
        # default sizes follow the instance: as equal as possible
        base, extra = divmod(g.n, p.k)
        p = Problem("kcut", p.k, tuple(base + (i < extra) for i in range(p.k)))
    return p


# -- commands -----------------------------------------------------------------------

def cmd_generate(o) -> int:
    out = _outdir(o)
    if out is None:
        raise UsageError("--out is required")
    seeds = np.random.SeedSequence(o["seed"]).spawn(o["count"])
    for i, ss in enumerate(seeds):
        seed = int(ss.generate_state(1, np.uint64)[0] >> np.uint64(2))
        sigmas = (sample_sigmas(o["k"], np.random.default_rng([seed, 1]))
                  if o["kind"] == "kclustered" else None)
        spec = GenSpec(o["kind"], o["n"], o["k"], o["m"], o["h"], o["knn"], sigmas, seed)
        save_graph(generate(spec), os.path.join(out, f"instance_{i:04d}.json"))
    _manifest(out, "generate", o)
    return 0


def cmd_train(o) -> int:
    out = _outdir(o)
    if out is None:
        raise UsageError("--out is required")
    cfg = _experiment(o)
    problem = cfg.problem_obj
    tc = cfg.train_config()
    sampler = cfg.sampler()
    params = _load_params(o["checkpoint"]) if o.get("checkpoint") else None
    validation = held_out_instances(cfg, sampler.size, 20, tag=3)
    res = Trainer(problem, tc, params=params).fit(sampler.sample, validation)
    res.params.save(os.path.join(out, "checkpoint.json"))
    _write(out, "metrics.csv", to_csv(res.log))
    _manifest(out, "train", o, {"train_config": tc.to_dict(), "problem": problem.to_dict(),
                                "updates": res.updates})
    return 0


def _solve_one(method, g, problem, params, rng, o):
    """Returns (solution, objective, [(action, reward, objective)])."""
    sol0 = init_solution(g, problem, rng)
    if method == "lsdqn":
        if params is None:
            raise UsageError("--method lsdqn needs --checkpoint")
        if params.problem.kind != problem.kind:
            raise ValueError(f"checkpoint is for {params.problem.kind}, not {problem.kind}")
        ep = run_episode(params, g, problem, rng, sol0=sol0, reserve=o["reserve_ratio"],
                         record=True)
        traj = [(r.action, r.reward, r.objective) for r in ep.records]
        return ep.final.solution, ep.final.objective, traj
    if method in ("greedy", "two-opt"):
        if method == "two-opt" and problem.kind != "tsp":
            raise UsageError("two-opt applies to --problem tsp")
        res = greedy_local_search(g, sol0, problem)
        return res.solution, res.objective, res.trajectory
    if method == "farthest":
        if problem.kind != "tsp":
            raise UsageError("farthest applies to --problem tsp")
        tour = farthest_insertion(g)
        return tour, objective(g, problem, tour), []
    if method == "random":
        return sol0, make_state(g, problem, sol0).objective, []
    if method == "exact":
        sol = brute_force_tsp(g)[1] if problem.kind == "tsp" else brute_force_kcut(g, problem)[1]
        return sol, objective(g, problem, sol), []
    raise UsageError(f"unknown method {method!r}")


def cmd_solve(o) -> int:
    g = _load_instance(o.get("instance"))
    problem = _problem_for_graph(o, g)
    method = o.get("method") or ("lsdqn" if o.get("checkpoint") else "greedy")
    params = _load_params(o["checkpoint"]) if o.get("checkpoint") else None
    rng = np.random.default_rng(o["seed"])
    sol, obj, traj = _solve_one(method, g, problem, params, rng, o)
    check_solution(g, problem, sol)
    solution = {**solution_to_dict(problem, sol, obj), "method": method,
                "value": reporting_value(g, problem, obj)}
    lines = [trajectory_record(t, a, r, v) for t, (a, r, v) in enumerate(traj, 1)]
    out = _outdir(o)
    if out is None:
        doc = {"solution": solution, "trajectory": [json.loads(s) for s in lines]}
        sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
        return 0
    _write(out, "solution.json", json.dumps(solution, sort_keys=True) + "\n")
    _write(out, "trajectory.jsonl", "".join(s + "\n" for s in lines))
    _manifest(out, "solve", o)
    return 0


def cmd_baseline(o) -> int:
    paths = o.get("instance") or []
    if not paths:
        raise UsageError("--instance is required (repeatable)")
    methods = o.get("method") or None
    seeds = np.random.SeedSequence(o["seed"]).spawn(len(paths))
    rows = []
    for iid, (path, ss) in enumerate(zip(paths, seeds)):
        g = _load_instance(path)
        problem = _problem_for_graph(o, g)
        todo = methods or (["two-opt", "farthest", "random"] if problem.kind == "tsp"
                           else ["greedy", "random"])
        rng = np.random.default_rng(ss)
        ref, kind = reference_value(g, problem, o["restarts"], seed=int(rng.integers(2**62)))
        for method in todo:
            if method == "lsdqn":
                raise UsageError("baseline does not run lsdqn; use solve or eval")
            method_rng = np.random.default_rng(rng.integers(2**62))
            t0 = time.perf_counter()
            sol, obj, traj = _solve_one(method, g, problem, None, method_rng, o)
            ms = (time.perf_counter() - t0) * 1000.0
            rows.append(_row(iid, method, reporting_value(g, problem, obj), ref, kind,
                             len(traj), ms, direction_of(problem), o["timing"]))
    text = to_csv(rows, RESULT_COLUMNS)
    out = _outdir(o)
    if out is None:
        sys.stdout.write(text)
        return 0
    _write(out, "results.csv", text)
    _manifest(out, "baseline", o)
    return 0


def cmd_eval(o) -> int:
    out = _outdir(o)
    if out is None:
        raise UsageError("--out is required")
    chosen = [e for e in ("quality", "generalization", "tradeoff", "trajectory") if o[e]]
    if not chosen:
        raise UsageError("choose at least one of --quality --generalization --tradeoff "
                         "--trajectory")
    cfg = _experiment(o)
    extra = {"experiment": cfg.to_dict()}
    if o.get("checkpoint"):
        params = _load_params(o["checkpoint"])
    else:
        params, log = train_model(cfg)
        params.save(os.path.join(out, "checkpoint.json"))
        _write(out, "metrics.csv", to_csv(log))
    if "quality" in chosen:
        rows = run_quality_experiment(cfg, params)
        _write(out, "quality.csv", to_csv(rows, RESULT_COLUMNS))
        summary = {}
        for r in rows:
            summary.setdefault(r["method"], []).append(r["approx_ratio"])
        extra["quality_mean_ratio"] = {m: float(np.mean(v)) for m, v in summary.items()}
    if "generalization" in chosen:
        rows = run_generalization(cfg, params)
        _write(out, "generalization.csv", to_csv(rows, ["test_size", *RESULT_COLUMNS]))
    if "tradeoff" in chosen:
        _write(out, "tradeoff.csv", to_csv(run_tradeoff(cfg, params=params)))
    if "trajectory" in chosen:
        _write(out, "trajectory.csv", to_csv(stats_rows(run_trajectory_experiment(cfg, params))))
    _manifest(out, "eval", o, extra)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "solve": cmd_solve,
            "baseline": cmd_baseline, "eval": cmd_eval}


def _line(exc) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    try:
        o = resolve(sys.argv[1:] if argv is None else argv)
        return COMMANDS[o["command"]](o)
    except UsageError as exc:
        print(f"lscopt: usage error: {_line(exc)}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"lscopt: usage error: {_line(exc)}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"lscopt: error: {_line(exc)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
