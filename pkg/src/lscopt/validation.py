"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .env import Problem
from .graphs import Graph, InstanceSampler


def check_graph(g) -> Graph:
    """Accept a Graph, a square weight matrix or a serialized instance dict."""
    if isinstance(g, Graph):
        return g
    if isinstance(g, dict):
        return Graph.from_dict(g)
    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a Graph or square weight matrix, got shape {arr.shape}")
    return Graph(arr)


def check_graphs(X) -> list[Graph]:
    if isinstance(X, (Graph, dict)):
        return [check_graph(X)]
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [check_graph(X)]
    graphs = [check_graph(g) for g in X]
    if not graphs:
        raise ValueError("no instances given")
    return graphs


def check_instance_source(X):
    """Training input: an InstanceSampler, or a non-empty collection of graphs."""
    if isinstance(X, InstanceSampler):
        return X
    return check_graphs(X)


def check_problem(problem, k: int | None = None, sizes=None) -> Problem:
    if isinstance(problem, Problem):
        return problem
    return Problem.parse(str(problem), k, None if sizes is None else tuple(sizes))


def check_problem_fits(g: Graph, problem: Problem) -> None:
    if problem.kind == "tsp" and g.coords is None:
        raise ValueError("TSP instances need node coordinates")
    if problem.sizes is not None and sum(problem.sizes) != g.n:
        raise ValueError(f"cut sizes {problem.sizes} do not sum to n={g.n}")


def check_rng(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
