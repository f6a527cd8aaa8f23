"""Classical comparators and exact reference values."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .env import (
    EnvState, KCutLabels, Problem, Solution, TspTour, action_array, action_from_pair,
    action_rewards, cut_value, init_solution, make_state, step, tour_length,
)
from .graphs import Graph

KCUT_ORACLE_MAX_N = 14
TSP_ORACLE_MAX_N = 10
IMPROVEMENT_TOL = 1e-9


class OracleSizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass
class SearchResult:
    solution: Solution
    objective: float
    trajectory: list      # (action, reward, objective after the move)
    initial_objective: float

    @property
    def steps(self) -> int:
        return len(self.trajectory)


def greedy_local_search(g: Graph, sol0: Solution, problem: Problem,
                        moves: str | None = None, max_steps: int | None = None) -> SearchResult:
    """Take the best strictly improving move until none is left.

    Ties go to the lowest action index. ``moves`` overrides the problem's
    default move set (e.g. swaps on an unconstrained cut).
    """
    if moves is not None and moves != problem.moves:
        problem = Problem(problem.kind, problem.k, problem.sizes, moves)
    limit = 10**12 if max_steps is None else max_steps
    state = make_state(g, problem, sol0, max_steps=limit)
    start = state.objective
    traj = []
    while state.steps_taken < limit:
        acts = action_array(state)
        if acts.shape[0] == 0:
            break
        rewards = action_rewards(state, acts)
        best = int(np.argmax(rewards))
        if rewards[best] <= IMPROVEMENT_TOL:
            break
        a = action_from_pair(problem.moves, acts[best])
        state, r, _ = step(state, a)
        traj.append((a, r, state.objective))
    return SearchResult(state.solution, state.objective, traj, start)


def two_opt(g: Graph, tour0) -> SearchResult:
    """Best-improvement 2-opt from ``tour0``; returns a 2-opt-optimal tour."""
    if not isinstance(tour0, TspTour):
        tour0 = TspTour(tour0)
    return greedy_local_search(g, tour0, Problem.tsp())


def farthest_insertion(g: Graph) -> TspTour:
    """Farthest insertion on the complete distance matrix.

    Starts from the farthest pair, then repeatedly inserts the city whose
    nearest tour city is farthest away, at the cheapest position.
    """
    dist = g.distances
    n = g.n
    if n <= 2:
        return TspTour(np.arange(n))
    flat = int(np.argmax(np.triu(dist, 1)))
    i, j = divmod(flat, n)
    tour = [i, j]
    in_tour = np.zeros(n, dtype=bool)
    in_tour[[i, j]] = True
    nearest = np.minimum(dist[i], dist[j])
    while len(tour) < n:
        cand = np.where(in_tour, -np.inf, nearest)
        c = int(np.argmax(cand))
        t = np.array(tour)
        nxt = np.roll(t, -1)
        cost = dist[t, c] + dist[c, nxt] - dist[t, nxt]
        pos = int(np.argmin(cost))
        tour.insert(pos + 1, c)
        in_tour[c] = True
        nearest = np.minimum(nearest, dist[c])
    return TspTour(np.array(tour))


# -- exact oracles -----------------------------------------------------------------

def _label_blocks(n: int, k: int, chunk: int = 1 << 16):
    """All label vectors with node 0 fixed to label 0, in chunks."""
    if n == 0:
        yield np.zeros((1, 0), dtype=np.int8)
        return
    total = k ** (n - 1)
    powers = k ** np.arange(n - 2, -1, -1) if n > 1 else np.zeros(0, dtype=np.int64)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk))
        rest = (codes[:, None] // powers[None, :]) % k if n > 1 else np.zeros((len(codes), 0))
        yield np.concatenate([np.zeros((len(codes), 1)), rest], axis=1).astype(np.int8)


def _multiset_permutations(counts: list[int]):
    n = sum(counts)
    out = []
    cur = [0] * n

    def rec(pos):
        if pos == n:
            out.append(cur.copy())
            return
        for c, left in enumerate(counts):
            if left:
                counts[c] -= 1
                cur[pos] = c
                rec(pos + 1)
                counts[c] += 1

    rec(0)
    return np.array(out, dtype=np.int8).reshape(len(out), n)


def _within_weights(w: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    total = np.zeros(labels.shape[0])
    for c in range(k):
        m = (labels == c).astype(np.float64)
        total += ((m @ w) * m).sum(1)
    return total / 2.0


def brute_force_kcut(g: Graph, problem: Problem) -> tuple[float, KCutLabels]:
    """Maximum cut value and a maximiser, by enumeration."""
    n, k = g.n, problem.k
    if n > KCUT_ORACLE_MAX_N:
        raise OracleSizeError(f"k-Cut oracle handles n <= {KCUT_ORACLE_MAX_N}, got {n}")
    total = g.total_weight()
    if problem.sizes is not None:
        if sum(problem.sizes) != n:
            raise ValueError("sizes do not sum to n")
        blocks = [_multiset_permutations(list(problem.sizes))]
    else:
        blocks = _label_blocks(n, k)
    best_val, best_lab = -np.inf, None
    for lab in blocks:
        cuts = total - _within_weights(g.w, lab, k)
        i = int(np.argmax(cuts))
        if cuts[i] > best_val:
            best_val, best_lab = float(cuts[i]), lab[i].astype(np.int64)
    return best_val, KCutLabels(best_lab)


def brute_force_tsp(g: Graph) -> tuple[float, TspTour]:
    n = g.n
    if n > TSP_ORACLE_MAX_N:
        raise OracleSizeError(f"TSP oracle handles n <= {TSP_ORACLE_MAX_N}, got {n}")
    dist = g.distances
    if n <= 3:
        perm = np.arange(n)
        return tour_length(dist, perm), TspTour(perm)
    rest = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    lengths = dist[0, rest[:, 0]] + dist[rest[:, -1], 0]
    lengths = lengths + dist[rest[:, :-1], rest[:, 1:]].sum(1)
    i = int(np.argmin(lengths))
    return float(lengths[i]), TspTour(np.concatenate([[0], rest[i]]))


def brute_force_optimum(g: Graph, problem: Problem) -> float:
    """Best cut value (k-Cut, maximised) or shortest tour length (TSP)."""
    if problem.kind == "tsp":
        return brute_force_tsp(g)[0]
    return brute_force_kcut(g, problem)[0]


def best_of_greedy(g: Graph, problem: Problem, restarts: int = 20, seed=0) -> float:
    """Best cut value (or tour length) over greedy runs from random starts."""
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = greedy_local_search(g, init_solution(g, problem, rng), problem)
        val = reporting_value(g, problem, res.objective)
        if best is None or better(problem, val, best):
            best = val
    return best


def reporting_value(g: Graph, problem: Problem, objective: float) -> float:
    """Value used for ratios: cut weight for k-Cut, tour length for TSP."""
    return g.total_weight() - objective if problem.kind == "kcut" else objective


def better(problem: Problem, a: float, b: float) -> bool:
    return a > b if problem.kind == "kcut" else a < b


def reference_value(g: Graph, problem: Problem, restarts: int = 20, seed=0) -> tuple[float, str]:
    """Exact optimum within oracle bounds, otherwise the best-of-greedy proxy."""
    limit = KCUT_ORACLE_MAX_N if problem.kind == "kcut" else TSP_ORACLE_MAX_N
    if g.n <= limit:
        return brute_force_optimum(g, problem), "exact"
    val = best_of_greedy(g, problem, restarts, seed)
    if problem.kind == "tsp":
        val = min(val, tour_length(g.distances, farthest_insertion(g).perm))
    return val, "best_of_greedy"


def random_solution_value(g: Graph, problem: Problem, rng) -> float:
    sol = init_solution(g, problem, rng)
    if problem.kind == "kcut":
        return cut_value(g, sol)
    return tour_length(g.distances, sol.perm)
