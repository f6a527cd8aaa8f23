"""Reversible local-search environments for Max-k-Cut and TSP.

Everything is zero-based: k-Cut labels are in ``0..k-1``, tour positions
and node ids in ``0..n-1``. A state holds a complete solution; every action
perturbs it into another valid solution, and the reward is the decrease of
the minimised objective.

Action sets are enumerated in a fixed order (flips by node then label,
swaps and sequential swaps lexicographically) with :data:`DUMMY` last; the
position in that order is the "action index" used for tie-breaking.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .graphs import Graph

AUDIT_PERIOD = 1000
_DEBUG = bool(os.environ.get("LSCOPT_DEBUG"))


class InvalidSolutionError(ValueError):
    pass


class ConstraintViolation(ValueError):
    """An action would leave the feasible set; ``constraint`` names it."""

    def __init__(self, constraint: str, message: str):
        self.constraint = constraint
        super().__init__(f"{constraint}: {message}")


class ProtocolError(RuntimeError):
    pass


# -- problems ------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """Which COP to solve and which move set to search with.

    ``kind`` is ``"kcut"`` or ``"tsp"``. For k-Cut, ``sizes`` fixes the
    number of nodes per label and forces label swaps; otherwise flips are
    used unless ``moves="swap"`` is requested.
    """

    kind: str = "kcut"
    k: int = 2
    sizes: tuple | None = None
    moves: str | None = None

    def __post_init__(self):
        if self.kind not in ("kcut", "tsp"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "kcut":
            if self.k < 1:
                raise ValueError("k must be >= 1")
            if self.sizes is not None:
                sizes = tuple(int(s) for s in self.sizes)
                if len(sizes) != self.k or min(sizes) < 0:
                    raise ValueError(f"sizes {self.sizes} do not match k={self.k}")
                object.__setattr__(self, "sizes", sizes)
        moves = self.moves or self.default_moves()
        allowed = {"kcut": ("flip", "swap"), "tsp": ("seqswap",)}[self.kind]
        if moves not in allowed:
            raise ValueError(f"moves {moves!r} not valid for {self.kind}")
        if self.sizes is not None and moves == "flip":
            raise ValueError("size-constrained k-Cut cannot use flips")
        object.__setattr__(self, "moves", moves)

    def default_moves(self) -> str:
        if self.kind == "tsp":
            return "seqswap"
        return "swap" if self.sizes is not None else "flip"

    @classmethod
    def maxcut(cls) -> "Problem":
        return cls("kcut", 2)

    @classmethod
    def tsp(cls) -> "Problem":
        return cls("tsp", 0)

    @classmethod
    def parse(cls, name: str, k: int | None = None, sizes=None) -> "Problem":
        if name == "maxcut":
            return cls("kcut", 2, sizes)
        if name == "kcut":
            if k is None and sizes is not None:
                k = len(sizes)
            return cls("kcut", k or 2, sizes)
        if name == "tsp":
            return cls.tsp()
        raise ValueError(f"unknown problem {name!r}")

    @property
    def feature_dim(self) -> int:
        return self.k if self.kind == "kcut" else 2

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k,
                "sizes": None if self.sizes is None else list(self.sizes),
                "moves": self.moves}

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        sizes = d.get("sizes")
        return cls(d["kind"], int(d["k"]), None if sizes is None else tuple(sizes),
                   d.get("moves"))


# -- solutions -----------------------------------------------------------------

def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KCutLabels:
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(self.labels))

    def __eq__(self, other):
        return isinstance(other, KCutLabels) and np.array_equal(self.labels, other.labels)

    __hash__ = object.__hash__

    def to_dict(self) -> dict:
        return {"labels": self.labels.tolist()}


@dataclass(frozen=True, eq=False)
class TspTour:
    perm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "perm", _frozen(self.perm))

    def __eq__(self, other):
        return isinstance(other, TspTour) and np.array_equal(self.perm, other.perm)

    __hash__ = object.__hash__

    def to_dict(self) -> dict:
        return {"perm": self.perm.tolist()}


Solution = Union[KCutLabels, TspTour]


def check_solution(g: Graph, problem: Problem, sol: Solution) -> None:
    if problem.kind == "kcut":
        if not isinstance(sol, KCutLabels):
            raise InvalidSolutionError("k-Cut needs a KCutLabels solution")
        lab = sol.labels
        if lab.shape != (g.n,):
            raise InvalidSolutionError(f"expected {g.n} labels, got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() >= problem.k):
            raise InvalidSolutionError(f"labels must lie in [0, {problem.k})")
        if problem.sizes is not None:
            counts = np.bincount(lab, minlength=problem.k)
            if tuple(counts) != problem.sizes:
                raise InvalidSolutionError(
                    f"label counts {tuple(counts)} differ from sizes {problem.sizes}")
    else:
        if not isinstance(sol, TspTour):
            raise InvalidSolutionError("TSP needs a TspTour solution")
        if sorted(sol.perm.tolist()) != list(range(g.n)):
            raise InvalidSolutionError("tour is not a permutation of the nodes")


# -- actions -------------------------------------------------------------------

@dataclass(frozen=True)
class Flip:
    node: int
    label: int


@dataclass(frozen=True)
class Swap:
    u: int
    v: int


@dataclass(frozen=True)
class SeqSwap:
    i: int
    j: int


@dataclass(frozen=True)
class _Dummy:
    def __repr__(self):
        return "DUMMY"


DUMMY = _Dummy()
Action = Union[Flip, Swap, SeqSwap, _Dummy]


def action_to_dict(a: Action) -> dict:
    if isinstance(a, Flip):
        return {"type": "flip", "node": a.node, "label": a.label}
    if isinstance(a, Swap):
        return {"type": "swap", "u": a.u, "v": a.v}
    if isinstance(a, SeqSwap):
        return {"type": "seqswap", "i": a.i, "j": a.j}
    return {"type": "dummy"}


def action_from_pair(moves: str, pair) -> Action:
    x, y = int(pair[0]), int(pair[1])
    if moves == "flip":
        return Flip(x, y)
    if moves == "swap":
        return Swap(x, y)
    return SeqSwap(x, y)


def action_pair(a: Action) -> tuple[int, int]:
    if isinstance(a, Flip):
        return a.node, a.label
    if isinstance(a, Swap):
        return a.u, a.v
    if isinstance(a, SeqSwap):
        return a.i, a.j
    raise ValueError("dummy action has no pair encoding")


# -- objectives ----------------------------------------------------------------

def objective_kcut(g: Graph, labels) -> float:
    """Total weight of edges whose endpoints share a label (minimised)."""
    lab = labels.labels if isinstance(labels, KCutLabels) else np.asarray(labels)
    if lab.shape != (g.n,) or (lab.size and lab.min() < 0):
        raise InvalidSolutionError("invalid label vector")
    same = lab[:, None] == lab[None, :]
    return float(np.triu(g.w * same, 1).sum())


def cut_value(g: Graph, labels) -> float:
    """Weight crossing between different labels (maximised when reporting)."""
    return g.total_weight() - objective_kcut(g, labels)


def tour_length(dist: np.ndarray, perm) -> float:
    perm = np.asarray(perm)
    if perm.size < 2:
        return 0.0
    return float(dist[perm, np.roll(perm, -1)].sum())


def objective_tsp(g: Graph, tour) -> float:
    perm = tour.perm if isinstance(tour, TspTour) else np.asarray(tour)
    if sorted(perm.tolist()) != list(range(g.n)):
        raise InvalidSolutionError("tour is not a permutation of the nodes")
    return tour_length(g.distances, perm)


def objective(g: Graph, problem: Problem, sol: Solution) -> float:
    if problem.kind == "kcut":
        check_solution(g, problem, sol)
        return objective_kcut(g, sol)
    return objective_tsp(g, sol)


# -- state ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnvState:
    """Immutable (graph, solution) pair with the cached objective.

    ``cluster_w[u, c]`` caches the weight from node ``u`` to label ``c``
    (k-Cut only); it makes flip and swap rewards O(1) each.
    """

    graph: Graph
    problem: Problem
    solution: Solution
    objective: float
    steps_taken: int = 0
    max_steps: int = 0
    done: bool = False
    cluster_w: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def labels(self) -> np.ndarray:
        return self.solution.labels

    @property
    def perm(self) -> np.ndarray:
        return self.solution.perm


def _cluster_weights(g: Graph, labels: np.ndarray, k: int) -> np.ndarray:
    onehot = np.zeros((g.n, k))
    onehot[np.arange(g.n), labels] = 1.0
    cw = g.w @ onehot
    cw.setflags(write=False)
    return cw


def make_state(g: Graph, problem: Problem, sol: Solution, max_steps: int | None = None) -> EnvState:
    """Validate ``sol`` and wrap it; ``max_steps`` defaults to 2n."""
    check_solution(g, problem, sol)
    cw = _cluster_weights(g, sol.labels, problem.k) if problem.kind == "kcut" else None
    return EnvState(g, problem, sol, objective(g, problem, sol), 0,
                    2 * g.n if max_steps is None else max_steps, False, cw)


def init_solution(g: Graph, problem: Problem, rng: np.random.Generator | int) -> Solution:
    """Uniformly random feasible solution."""
    rng = np.random.default_rng(rng)
    if problem.kind == "tsp":
        return TspTour(rng.permutation(g.n))
    if problem.sizes is not None:
        if sum(problem.sizes) != g.n:
            raise InvalidSolutionError(f"sizes {problem.sizes} do not sum to n={g.n}")
        pool = np.repeat(np.arange(problem.k), problem.sizes)
        return KCutLabels(rng.permutation(pool))
    return KCutLabels(rng.integers(problem.k, size=g.n))


def reset(g: Graph, problem: Problem, rng, max_steps: int | None = None) -> EnvState:
    return make_state(g, problem, init_solution(g, problem, rng), max_steps)


# -- action enumeration and vectorised rewards ------------------------------------

def action_array(s: EnvState) -> np.ndarray:
    """All legal non-dummy actions as an ``(A, 2)`` int array, in index order."""
    n, p = s.n, s.problem
    if p.moves == "flip":
        if p.k < 2:
            return np.zeros((0, 2), dtype=np.int64)
        nodes = np.repeat(np.arange(n), p.k - 1)
        offs = np.tile(np.arange(1, p.k), n)
        cur = s.labels[nodes]
        # labels other than the current one, ascending
        new = np.where(offs <= cur, offs - 1, offs)
        return np.stack([nodes, new], axis=1).astype(np.int64)
    iu, ju = np.triu_indices(n, 1)
    if p.moves == "swap":
        lab = s.labels
        keep = lab[iu] != lab[ju]
        iu, ju = iu[keep], ju[keep]
    return np.stack([iu, ju], axis=1).astype(np.int64)


def legal_actions(s: EnvState) -> list:
    moves = s.problem.moves
    return [action_from_pair(moves, pair) for pair in action_array(s)] + [DUMMY]


def action_rewards(s: EnvState, acts: np.ndarray) -> np.ndarray:
    """Reward of each row of ``acts`` (see :func:`action_array`) from state ``s``."""
    acts = np.asarray(acts, dtype=np.int64).reshape(-1, 2)
    x, y = acts[:, 0], acts[:, 1]
    moves = s.problem.moves
    if moves == "flip":
        cw, lab = s.cluster_w, s.labels
        return cw[x, lab[x]] - cw[x, y]
    if moves == "swap":
        cw, lab, w = s.cluster_w, s.labels, s.graph.w
        a, b = lab[x], lab[y]
        return cw[x, a] - cw[x, b] + cw[y, b] - cw[y, a] + 2.0 * w[x, y]
    return seqswap_rewards(s.graph.distances, s.perm, x, y)


def seqswap_rewards(dist: np.ndarray, perm: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Length decrease from reversing tour positions i..j (inclusive, i < j).

    Only the two boundary edges change; reversing the whole tour changes
    nothing.
    """
    n = len(perm)
    a, b = perm[(i - 1) % n], perm[i]
    c, d = perm[j], perm[(j + 1) % n]
    delta = dist[a, b] + dist[c, d] - dist[a, c] - dist[b, d]
    return np.where((i == 0) & (j == n - 1), 0.0, delta)


def _check_legal(s: EnvState, a: Action) -> None:
    n, p = s.n, s.problem
    if isinstance(a, _Dummy):
        return
    expected = {"flip": Flip, "swap": Swap, "seqswap": SeqSwap}[p.moves]
    if not isinstance(a, expected):
        raise ConstraintViolation(
            "move-type", f"{type(a).__name__} is not legal for {p.moves} search")
    if isinstance(a, Flip):
        if not (0 <= a.node < n and 0 <= a.label < p.k):
            raise ConstraintViolation("label-range", f"{a} out of range")
        if s.labels[a.node] == a.label:
            raise ConstraintViolation("label-change", f"{a} keeps the current label")
    elif isinstance(a, Swap):
        if not (0 <= a.u < n and 0 <= a.v < n) or a.u == a.v:
            raise ConstraintViolation("node-range", f"{a} needs two distinct nodes")
        if s.labels[a.u] == s.labels[a.v]:
            raise ConstraintViolation("label-change", f"{a} swaps equal labels")
    else:
        if not 0 <= a.i < a.j < n:
            raise ConstraintViolation("segment", f"{a} needs 0 <= i < j < n")


def apply_action(s: EnvState, a: Action) -> Solution:
    """Solution reached by taking ``a``; ``s`` is left untouched."""
    if isinstance(a, Flip) and s.problem.sizes is not None:
        raise ConstraintViolation("cut-sizes", f"flip would break sizes {s.problem.sizes}")
    _check_legal(s, a)
    if isinstance(a, _Dummy):
        return s.solution
    if isinstance(a, Flip):
        lab = s.labels.copy()
        lab[a.node] = a.label
        return KCutLabels(lab)
    if isinstance(a, Swap):
        lab = s.labels.copy()
        lab[a.u], lab[a.v] = lab[a.v], lab[a.u]
        return KCutLabels(lab)
    perm = s.perm.copy()
    perm[a.i:a.j + 1] = perm[a.i:a.j + 1][::-1].copy()
    return TspTour(perm)


def reward(s: EnvState, a: Action) -> float:
    if isinstance(a, _Dummy):
        return 0.0
    _check_legal(s, a)
    return float(action_rewards(s, np.array([action_pair(a)]))[0])


def step(s: EnvState, a: Action) -> tuple[EnvState, float, bool]:
    """Take ``a``; returns the new state, the reward and the done flag."""
    if s.done:
        raise ProtocolError("step() called on a finished episode")
    if s.steps_taken >= s.max_steps:
        raise ProtocolError("episode already used its step budget")
    sol = apply_action(s, a)
    r = reward(s, a)
    cw = s.cluster_w
    if isinstance(a, Flip):
        cw = cw.copy()
        col = s.graph.w[:, a.node]
        cw[:, s.labels[a.node]] -= col
        cw[:, a.label] += col
        cw.setflags(write=False)
    elif isinstance(a, Swap):
        cw = cw.copy()
        lu, lv = s.labels[a.u], s.labels[a.v]
        du = s.graph.w[:, a.u] - s.graph.w[:, a.v]
        cw[:, lu] -= du
        cw[:, lv] += du
        cw.setflags(write=False)
    steps = s.steps_taken + 1
    done = isinstance(a, _Dummy) or steps >= s.max_steps
    nxt = replace(s, solution=sol, objective=s.objective - r, steps_taken=steps,
                  done=done, cluster_w=cw)
    if _DEBUG and steps % AUDIT_PERIOD == 0:
        audit(nxt)
    return nxt, r, done


def audit(s: EnvState, tol: float = 1e-9) -> None:
    """Compare cached quantities against a full recomputation."""
    full = objective(s.graph, s.problem, s.solution)
    if abs(full - s.objective) > tol:
        raise AssertionError(f"cached objective {s.objective} != recomputed {full}")
    if s.cluster_w is not None:
        ref = _cluster_weights(s.graph, s.labels, s.problem.k)
        if not np.allclose(ref, s.cluster_w, atol=tol):
            raise AssertionError("cached cluster weights drifted")


def is_local_minimum(s: EnvState, tol: float = 1e-9) -> bool:
    """True when no single move has positive reward."""
    acts = action_array(s)
    return acts.shape[0] == 0 or bool(action_rewards(s, acts).max() <= tol)


# -- serialization --------------------------------------------------------------

def solution_to_dict(problem: Problem, sol: Solution, obj: float) -> dict:
    name = "tsp" if problem.kind == "tsp" else ("maxcut" if problem.k == 2 else "kcut")
    return {"problem": name, **sol.to_dict(), "objective": obj}


def solution_from_dict(d: dict) -> Solution:
    if "perm" in d:
        return TspTour(d["perm"])
    return KCutLabels(d["labels"])


def trajectory_record(t: int, a: Action, r: float, obj: float) -> str:
    return json.dumps({"t": t, "action": action_to_dict(a), "reward": r, "objective": obj})
