"""Problem instances: weighted graphs, synthetic generators and TSPLIB input.

Random streams come from numpy's PCG64 via ``np.random.default_rng``. A
generator call seeded with ``seed`` consumes the stream
``SeedSequence(seed)`` and nothing else, so each call is reproducible in
isolation. Batches of instances use ``SeedSequence(seed).spawn(count)``,
one child stream per instance.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class InvalidSpecError(ValueError):
    """Raised for generator specs that cannot produce a graph."""


class TSPLIBParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph; ``w[i, j] == 0`` means no edge.

    ``coords`` is optional. When present, :attr:`distances` gives the
    complete Euclidean matrix regardless of sparsification.
    """

    w: np.ndarray
    coords: np.ndarray | None = None
    neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if not np.array_equal(w, w.T):
            raise ValueError("weight matrix must be symmetric")
        if np.any(np.diag(w) != 0):
            raise ValueError("weight matrix must have a zero diagonal")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if self.coords is not None:
            c = np.array(self.coords, dtype=np.float64)
            if c.ndim != 2 or c.shape[0] != w.shape[0]:
                raise ValueError("coords must be an n x h matrix")
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)
        nbrs = tuple(tuple(int(j) for j in np.flatnonzero(row > 0)) for row in w)
        object.__setattr__(self, "neighbors", nbrs)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def h(self) -> int:
        return 0 if self.coords is None else self.coords.shape[1]

    @property
    def distances(self) -> np.ndarray:
        """Complete distance matrix (coordinate-derived when coords exist)."""
        cached = self.__dict__.get("_dist")
        if cached is None:
            cached = self.w if self.coords is None else pairwise_distances(self.coords)
            cached.setflags(write=False)
            object.__setattr__(self, "_dist", cached)
        return cached

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors])

    def total_weight(self) -> float:
        return float(np.triu(self.w, 1).sum())

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if (self.coords is None) != (other.coords is None):
            return False
        same_coords = self.coords is None or np.array_equal(self.coords, other.coords)
        return same_coords and np.array_equal(self.w, other.w)

    __hash__ = object.__hash__

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "h": self.h,
            "coords": None if self.coords is None else self.coords.tolist(),
            "w": self.w.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        n = int(d["n"])
        w = np.asarray(d["w"], dtype=np.float64)
        if w.size != n * n:
            raise ValueError(f"w has {w.size} entries, expected {n * n}")
        coords = d.get("coords")
        return cls(w.reshape(n, n), None if coords is None else np.asarray(coords))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GenSpec:
    """Parameters for a synthetic instance.

    ``kind`` is ``"uniform"`` (uses ``n``) or ``"kclustered"`` (uses ``k``,
    ``m`` and ``sigmas``).
    """

    kind: str = "uniform"
    n: int = 20
    k: int = 2
    m: int = 10
    h: int = 2
    K: int = 50
    sigmas: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "kclustered"):
            raise InvalidSpecError(f"unknown kind {self.kind!r}")
        if self.K < 1:
            raise InvalidSpecError("K must be >= 1")
        if self.h < 1:
            raise InvalidSpecError("h must be >= 1")
        if self.kind == "kclustered":
            if self.k < 1 or self.m < 1:
                raise InvalidSpecError("k and m must be >= 1")
            if not self.sigmas:
                raise InvalidSpecError("kclustered spec needs per-cluster sigmas")
            if len(self.sigmas) != self.k:
                raise InvalidSpecError(
                    f"{len(self.sigmas)} sigmas given for {self.k} clusters"
                )

    @property
    def size(self) -> int:
        return self.n if self.kind == "uniform" else self.k * self.m

    def with_seed(self, seed: int) -> "GenSpec":
        return GenSpec(self.kind, self.n, self.k, self.m, self.h, self.K, self.sigmas, seed)


def knn_sparsify(w: np.ndarray, K: int, coords: np.ndarray | None = None) -> Graph:
    """Keep edge (i, j) iff j is among i's K nearest neighbours or vice versa.

    Non-edges never count as neighbours. Ties go to the lower node index.
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if K >= n - 1:
        return Graph(w, coords)
    keep = np.zeros((n, n), dtype=bool)
    for i in range(n):
        row = np.where(w[i] > 0, w[i], np.inf)
        row[i] = np.inf
        order = np.argsort(row, kind="stable")[:K]
        order = order[np.isfinite(row[order])]
        keep[i, order] = True
    keep |= keep.T
    return Graph(np.where(keep, w, 0.0), coords)


def gen_uniform(spec: GenSpec, coords: np.ndarray | None = None) -> Graph:
    """Nodes uniform on the unit hypercube, Euclidean weights, KNN-sparsified.

    ``coords`` overrides the sampled positions (test hook).
    """
    if spec.kind != "uniform":
        raise InvalidSpecError("gen_uniform needs kind='uniform'")
    if spec.n < 1:
        raise InvalidSpecError("n must be >= 1")
    if coords is None:
        rng = np.random.default_rng(spec.seed)
        coords = rng.random((spec.n, spec.h))
    coords = np.asarray(coords, dtype=np.float64)
    return knn_sparsify(pairwise_distances(coords), min(spec.K, spec.n - 1), coords)


def gen_k_clustered(spec: GenSpec) -> Graph:
    """k Gaussian clusters of m nodes each around uniform centroids.

    Nodes are ordered cluster-major: node ``i*m + j`` belongs to cluster i.
    """
    if spec.kind != "kclustered":
        raise InvalidSpecError("gen_k_clustered needs kind='kclustered'")
    rng = np.random.default_rng(spec.seed)
    centroids = rng.random((spec.k, spec.h))
    sig = np.asarray(spec.sigmas, dtype=np.float64)
    noise = rng.standard_normal((spec.k, spec.m, spec.h))
    coords = (centroids[:, None, :] + sig[:, None, None] * noise).reshape(-1, spec.h)
    n = spec.k * spec.m
    return knn_sparsify(pairwise_distances(coords), min(spec.K, n - 1), coords)


def generate(spec: GenSpec) -> Graph:
    if spec.kind == "uniform":
        return gen_uniform(spec)
    return gen_k_clustered(spec)


def sample_sigmas(k: int, rng: np.random.Generator, low=0.1, high=0.2) -> tuple:
    return tuple(float(s) for s in rng.uniform(low, high, size=k))


class InstanceSampler:
    """Draws a fresh synthetic instance per call.

    ``sample(rng)`` derives the instance seed from ``rng``; for
    ``kclustered`` specs without fixed sigmas, each instance draws its own
    sigmas from U(0.1, 0.2).
    """

    def __init__(self, spec: GenSpec | None = None, *, kind="uniform", n=20, k=2, m=10,
                 h=2, K=50, sigmas=None):
        if spec is None:
            self.kind, self.n, self.k, self.m, self.h, self.K = kind, n, k, m, h, K
            self.sigmas = sigmas
        else:
            self.kind, self.n, self.k, self.m = spec.kind, spec.n, spec.k, spec.m
            self.h, self.K, self.sigmas = spec.h, spec.K, spec.sigmas

    @property
    def size(self) -> int:
        return self.n if self.kind == "uniform" else self.k * self.m

    def spec_for(self, seed: int) -> GenSpec:
        sigmas = self.sigmas
        if self.kind == "kclustered" and sigmas is None:
            sigmas = sample_sigmas(self.k, np.random.default_rng([seed, 1]))
        return GenSpec(self.kind, self.n, self.k, self.m, self.h, self.K, sigmas, seed)

    def sample(self, rng: np.random.Generator) -> Graph:
        return generate(self.spec_for(int(rng.integers(2**62))))

    def batch(self, count: int, seed: int) -> list[Graph]:
        seeds = [int(s.generate_state(1, np.uint64)[0] >> np.uint64(2))
                 for s in np.random.SeedSequence(seed).spawn(count)]
        return [generate(self.spec_for(s)) for s in seeds]


def as_instance_source(X) -> Callable[[np.random.Generator], Graph]:
    """Wrap a sampler or a non-empty graph collection as ``rng -> Graph``."""
    if isinstance(X, InstanceSampler):
        return X.sample
    if isinstance(X, Graph):
        X = [X]
    graphs = list(X) if X is not None else []
    if not graphs:
        raise ValueError("empty instance source")

    def draw(rng):
        return graphs[int(rng.integers(len(graphs)))]

    return draw


# -- TSPLIB -------------------------------------------------------------------

_HEADER = re.compile(r"^\s*([A-Z_]+)\s*:?\s*(.*?)\s*$")


def parse_tsplib(text: str | Iterable[str], K: int = 50) -> Graph:
    """Parse a symmetric EUC_2D TSPLIB instance.

    Coordinates are rescaled into [0, 1]^2 with one shared offset and scale
    for both axes (aspect ratio preserved), then KNN-sparsified with
    ``min(K, n-1)`` neighbours.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    headers: dict[str, str] = {}
    coords: list[tuple[float, float]] = []
    ids: list[int] = []
    in_coords = False
    saw_section = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "EOF":
            break
        if in_coords:
            parts = line.split()
            if parts[0].isalpha() or parts[0].endswith("_SECTION"):
                in_coords = False
            else:
                if len(parts) != 3:
                    raise TSPLIBParseError(f"expected 'id x y', got {line!r}", lineno)
                try:
                    ids.append(int(parts[0]))
                    coords.append((float(parts[1]), float(parts[2])))
                except ValueError:
                    raise TSPLIBParseError(f"malformed coordinate line {line!r}", lineno)
                continue
        if line.startswith("NODE_COORD_SECTION"):
            in_coords = saw_section = True
            continue
        if line.endswith("_SECTION"):
            raise TSPLIBParseError(f"unsupported section {line!r}", lineno)
        m = _HEADER.match(line)
        if m is None or ":" not in line:
            raise TSPLIBParseError(f"malformed header line {line!r}", lineno)
        key, value = m.group(1), m.group(2)
        headers[key] = value
        if key == "EDGE_WEIGHT_TYPE" and value != "EUC_2D":
            raise TSPLIBParseError(f"unsupported EDGE_WEIGHT_TYPE {value!r}", lineno)
        if key == "TYPE" and value not in ("TSP",):
            raise TSPLIBParseError(f"unsupported TYPE {value!r}", lineno)
    if not saw_section:
        raise TSPLIBParseError("missing NODE_COORD_SECTION")
    if headers.get("EDGE_WEIGHT_TYPE") != "EUC_2D":
        raise TSPLIBParseError("EDGE_WEIGHT_TYPE must be EUC_2D")
    if "DIMENSION" in headers:
        try:
            dim = int(headers["DIMENSION"])
        except ValueError:
            raise TSPLIBParseError(f"bad DIMENSION {headers['DIMENSION']!r}")
        if dim != len(coords):
            raise TSPLIBParseError(f"DIMENSION {dim} but {len(coords)} coordinates")
    if not coords:
        raise TSPLIBParseError("no coordinates")
    order = np.argsort(ids, kind="stable")
    xy = scale_unit_square(np.asarray(coords, dtype=np.float64)[order])
    return knn_sparsify(pairwise_distances(xy), min(K, len(xy) - 1), xy)


def scale_unit_square(xy: np.ndarray) -> np.ndarray:
    """Map coordinates into [0, 1]^2 using one min/max taken over both axes."""
    lo, hi = float(xy.min()), float(xy.max())
    if hi == lo:
        return np.zeros_like(xy)
    return (xy - lo) / (hi - lo)


def load_graph(path) -> Graph:
    """Load a native JSON instance or a ``.tsp`` TSPLIB file."""
    with open(path) as f:
        text = f.read()
    if str(path).endswith(".tsp"):
        return parse_tsplib(text)
    return Graph.from_json(text)


def save_graph(graph: Graph, path) -> None:
    with open(path, "w") as f:
        f.write(graph.to_json())
        f.write("\n")


def graphs_by_size(graphs: Sequence[Graph]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, g in enumerate(graphs):
        groups.setdefault(g.n, []).append(i)
    return groups
