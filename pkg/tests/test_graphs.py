import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import knn_graph
from lscopt.graphs import (
    GenSpec, Graph, InstanceSampler, InvalidSpecError, TSPLIBParseError, as_instance_source,
    gen_k_clustered, gen_uniform, generate, graphs_by_size, knn_sparsify, load_graph,
    pairwise_distances, parse_tsplib, save_graph,
)


def test_two_node_unit_distance():
    g = gen_uniform(GenSpec(n=2, h=2, seed=0), coords=np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert g.w[0, 1] == 1.0 and g.w[1, 0] == 1.0


def test_single_node_has_no_edges():
    g = generate(GenSpec(n=1, seed=3))
    assert g.n == 1 and g.neighbors == ((),) and g.total_weight() == 0


def test_knn_each_node_keeps_two_nearest():
    g = generate(GenSpec(n=5, h=2, K=2, seed=7))
    full = pairwise_distances(g.coords)
    assert np.array_equal(g.w, knn_graph(full.tolist(), 2))
    for u in range(5):
        nearest = np.argsort(np.where(np.eye(5, dtype=bool)[u], np.inf, full[u]))[:2]
        assert all(g.w[u, v] > 0 for v in nearest)


@given(st.integers(2, 12), st.integers(1, 12), st.integers(0, 10**6))
def test_knn_matches_bruteforce(n, K, seed):
    rng = np.random.default_rng(seed)
    w = pairwise_distances(rng.random((n, 2)))
    g = knn_sparsify(w, K)
    assert np.array_equal(g.w, knn_graph(w.tolist(), K))
    assert np.array_equal(g.w, g.w.T) and np.all(np.diag(g.w) == 0)


def test_knn_keep_all():
    w = pairwise_distances(np.random.default_rng(1).random((6, 2)))
    assert np.array_equal(knn_sparsify(w, 5).w, w)


def test_knn_line_drops_long_edge():
    w = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], dtype=float)
    g = knn_sparsify(w, 1)
    assert g.w[0, 2] == 0 and g.w[0, 1] == 1 and g.w[1, 2] == 1


def test_knn_ignores_non_edges():
    w = np.array([[0, 0, 3], [0, 0, 1], [3, 1, 0]], dtype=float)
    g = knn_sparsify(w, 1)
    assert g.w[0, 1] == 0 and g.w[0, 2] == 3


def test_clustered_zero_variance_collapses():
    g = gen_k_clustered(GenSpec("kclustered", k=1, m=3, sigmas=(0.0,), seed=1))
    assert np.allclose(g.coords, g.coords[0]) and g.total_weight() == 0


def test_clustered_two_singletons():
    spec = GenSpec("kclustered", k=2, m=1, sigmas=(0.0, 0.0), seed=5)
    g = gen_k_clustered(spec)
    cent = np.random.default_rng(5).random((2, 2))
    assert g.w[0, 1] == pytest.approx(math.dist(cent[0], cent[1]))


def test_clustered_intra_smaller_than_inter():
    rng = np.random.default_rng(3)
    spec = GenSpec("kclustered", k=2, m=10, sigmas=tuple(rng.uniform(0.1, 0.2, 2)), seed=3)
    d = pairwise_distances(gen_k_clustered(spec).coords)
    lab = np.repeat([0, 1], 10)
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(20, dtype=bool)
    assert d[same & off].mean() < d[~same].mean()


@pytest.mark.parametrize("kwargs", [
    {"kind": "ring"}, {"K": 0}, {"h": 0},
    {"kind": "kclustered", "sigmas": None}, {"kind": "kclustered", "k": 3, "sigmas": (0.1,)},
])
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidSpecError):
        GenSpec(**kwargs)


def test_generate_is_deterministic():
    a, b = generate(GenSpec(n=12, seed=4)), generate(GenSpec(n=12, seed=4))
    assert a == b and a != generate(GenSpec(n=12, seed=5))


@pytest.mark.parametrize("bad", [
    np.array([[0, 1], [2, 0]]), np.array([[1, 0], [0, 0]]), np.array([[0, -1], [-1, 0]]),
    np.zeros((2, 3)),
])
def test_graph_rejects_bad_weights(bad):
    with pytest.raises(ValueError):
        Graph(bad)


def test_graph_is_read_only():
    g = generate(GenSpec(n=4, seed=0))
    with pytest.raises(ValueError):
        g.w[0, 1] = 5


def test_json_round_trip(tmp_path):
    g = generate(GenSpec(n=7, seed=2))
    assert Graph.from_json(g.to_json()) == g
    save_graph(g, tmp_path / "g.json")
    assert load_graph(tmp_path / "g.json") == g


def test_distances_are_complete():
    g = generate(GenSpec(n=8, K=2, seed=0))
    assert np.count_nonzero(g.w) < 56
    assert np.count_nonzero(g.distances) == 56


def test_sampler_batch_reproducible():
    s = InstanceSampler(kind="kclustered", k=2, m=4)
    a, b = s.batch(3, 9), s.batch(3, 9)
    assert all(x == y for x, y in zip(a, b)) and s.size == 8
    assert graphs_by_size(a) == {8: [0, 1, 2]}


def test_instance_source():
    g = generate(GenSpec(n=3, seed=0))
    draw = as_instance_source([g])
    assert draw(np.random.default_rng(0)) is g
    with pytest.raises(ValueError):
        as_instance_source([])


TOY = """NAME : toy
TYPE : TSP
DIMENSION : {dim}
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
{body}
EOF
"""


def _tsp(coords, dim=None):
    body = "\n".join(f"{i + 1} {x} {y}" for i, (x, y) in enumerate(coords))
    return TOY.format(dim=len(coords) if dim is None else dim, body=body)


def test_tsplib_scaling():
    g = parse_tsplib(_tsp([(0, 0), (10, 0), (10, 10)]))
    assert np.allclose(g.coords, [[0, 0], [1, 0], [1, 1]])


def test_tsplib_toy_distances():
    pts = [(2, 3), (8, 3), (5, 7), (2, 9)]
    g = parse_tsplib(_tsp(pts))
    scaled = [((x - 2) / 7, (y - 2) / 7) for x, y in pts]
    for i in range(4):
        for j in range(4):
            assert abs(g.w[i, j] - math.dist(scaled[i], scaled[j])) < 1e-9


def test_tsplib_keeps_aspect_ratio():
    g = parse_tsplib(_tsp([(0, 0), (4, 0), (4, 2)]))
    assert np.allclose(g.coords, [[0, 0], [1, 0], [1, 0.5]])


def test_tsplib_dimension_mismatch():
    with pytest.raises(TSPLIBParseError):
        parse_tsplib(_tsp([(0, 0), (1, 1)], dim=3))


@pytest.mark.parametrize("text", [
    TOY.format(dim=2, body="1 0 0\n2 1 1").replace("EUC_2D", "GEO"),
    "NAME : x\nTYPE : TSP\nEDGE_WEIGHT_TYPE : EUC_2D\nEOF\n",
    TOY.format(dim=2, body="1 0 0\n2 one 1"),
    TOY.format(dim=2, body="1 0 0\n2 1 1").replace("TYPE : TSP", "TYPE : ATSP"),
])
def test_tsplib_errors(text):
    with pytest.raises(TSPLIBParseError):
        parse_tsplib(text)


def test_tsplib_error_has_line_number():
    with pytest.raises(TSPLIBParseError) as info:
        parse_tsplib(TOY.format(dim=2, body="1 0 0\n2 x 1"))
    assert info.value.line == 7


def test_load_tsp_file(tmp_path):
    p = tmp_path / "toy.tsp"
    p.write_text(_tsp([(0, 0), (3, 0), (0, 4)]))
    assert load_graph(p).n == 3
