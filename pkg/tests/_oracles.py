"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the package's vectorised code paths: objectives are
recomputed from scratch with plain loops.
"""

import itertools
import math

import numpy as np


def within_weight(w, labels):
    n = len(labels)
    return sum(w[i][j] for i in range(n) for j in range(i + 1, n) if labels[i] == labels[j])


def cut_weight(w, labels):
    n = len(labels)
    return sum(w[i][j] for i in range(n) for j in range(i + 1, n) if labels[i] != labels[j])


def euclid(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def tour_len(coords, perm):
    n = len(perm)
    return sum(euclid(coords[perm[t]], coords[perm[(t + 1) % n]]) for t in range(n))


def knn_graph(w, K):
    """Keep edge (u, v) if v is among u's K nearest (lowest positive weight,
    lower index first on ties) or vice versa."""
    n = len(w)
    keep = [[False] * n for _ in range(n)]
    for u in range(n):
        cands = sorted((w[u][v], v) for v in range(n) if v != u and w[u][v] > 0)
        for _, v in cands[:K]:
            keep[u][v] = keep[v][u] = True
    return np.array([[w[u][v] if keep[u][v] else 0.0 for v in range(n)] for u in range(n)])


def canonical_cycle(perm):
    """Rotation/direction-free form of a tour: start at node 0, smaller neighbour next."""
    perm = list(perm)
    i = perm.index(0)
    fwd = perm[i:] + perm[:i]
    bwd = [fwd[0]] + fwd[1:][::-1]
    return min(fwd, bwd)


def greedy_kcut(w, labels, k, tol=1e-9):
    """Best-improvement flips; candidates scanned node-major, labels ascending."""
    labels = list(labels)
    n = len(labels)
    while True:
        base = within_weight(w, labels)
        best, best_gain = None, tol
        for u in range(n):
            for c in range(k):
                if c == labels[u]:
                    continue
                trial = labels.copy()
                trial[u] = c
                gain = base - within_weight(w, trial)
                if gain > best_gain:
                    best, best_gain = trial, gain
        if best is None:
            return labels, within_weight(w, labels)
        labels = best


def greedy_two_opt(coords, perm, tol=1e-9):
    """Best-improvement segment reversals over all i < j (full tour recompute)."""
    perm = list(perm)
    n = len(perm)
    while True:
        base = tour_len(coords, perm)
        best, best_gain = None, tol
        for i in range(n):
            for j in range(i + 1, n):
                trial = perm[:i] + perm[i:j + 1][::-1] + perm[j + 1:]
                gain = base - tour_len(coords, trial)
                if gain > best_gain:
                    best, best_gain = trial, gain
        if best is None:
            return perm, tour_len(coords, perm)
        perm = best


def max_cut(w, k):
    n = len(w)
    return max(cut_weight(w, lab) for lab in itertools.product(range(k), repeat=n))


def min_tour(coords):
    n = len(coords)
    best = math.inf
    for rest in itertools.permutations(range(1, n)):
        best = min(best, tour_len(coords, (0,) + rest))
    return best


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar f() w.r.t. every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def grads_close(analytic, numeric, rtol=1e-4, atol=1e-6):
    return np.all(np.abs(analytic - numeric) <= atol + rtol * np.abs(numeric))
