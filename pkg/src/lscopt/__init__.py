"""Reversible-action deep Q-learning local search for Max-(k-)Cut and TSP."""

__version__ = "0.1.0"

from .env import DUMMY, Flip, KCutLabels, Problem, SeqSwap, Swap, TspTour  # noqa: E402
from .estimator import LSDQN, FarthestInsertion, GreedySearch, TwoOpt  # noqa: E402
from .graphs import GenSpec, Graph, InstanceSampler, generate, load_graph, parse_tsplib  # noqa: E402

__all__ = [
    "DUMMY", "Flip", "KCutLabels", "Problem", "SeqSwap", "Swap", "TspTour",
    "LSDQN", "FarthestInsertion", "GreedySearch", "TwoOpt",
    "GenSpec", "Graph", "InstanceSampler", "generate", "load_graph", "parse_tsplib",
]
