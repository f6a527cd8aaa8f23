"""scikit-learn style front end.

``X`` is a sequence of :class:`~lscopt.graphs.Graph` instances (or weight
matrices); ``fit`` additionally accepts an
:class:`~lscopt.graphs.InstanceSampler` that draws a fresh graph per epoch.
``predict`` returns one solution per instance and ``score`` the mean
approximation ratio, oriented so that larger is better for both problems.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agent import TrainConfig, Trainer, run_episode
from .baselines import farthest_insertion, greedy_local_search, reference_value, reporting_value
from .env import TspTour, init_solution, objective
from .graphs import InstanceSampler, as_instance_source
from .networks import ModelParams
from .validation import (
    check_graphs, check_instance_source, check_problem, check_problem_fits, check_rng,
)


class _SolverMixin:
    def _problem(self):
        return check_problem(self.problem, getattr(self, "k", None), getattr(self, "sizes", None))

    def score(self, X, y=None) -> float:
        """Mean of cut/optimum (k-Cut) or optimum/length (TSP) over ``X``.

        ``y`` may hold reference values; otherwise they are computed (exact
        within oracle limits, best-of-greedy beyond).
        """
        graphs = check_graphs(X)
        problem = self._problem()
        sols = self.predict(graphs)
        refs = y if y is not None else [reference_value(g, problem)[0] for g in graphs]
        ratios = []
        for g, sol, ref in zip(graphs, sols, refs):
            val = reporting_value(g, problem, objective(g, problem, sol))
            ratios.append(val / ref if problem.kind == "kcut" else ref / val)
        return float(np.mean(ratios))


class LSDQN(_SolverMixin, BaseEstimator):
    """Local-search deep Q-network solver for Max-(k-)Cut and TSP."""

    def __init__(self, problem="maxcut", k=2, sizes=None, embed_dim=16, gnn_rounds=3,
                 nstep=2, gamma=0.9, batch_size=64, learning_rate=1e-3, target_sync=5,
                 reserve_ratio=1.0, epochs=2000, max_steps=None, buffer_size=5000,
                 entropy_weight=0.01, eval_every=200, random_state=0):
        self.problem = problem
        self.k = k
        self.sizes = sizes
        self.embed_dim = embed_dim
        self.gnn_rounds = gnn_rounds
        self.nstep = nstep
        self.gamma = gamma
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.target_sync = target_sync
        self.reserve_ratio = reserve_ratio
        self.epochs = epochs
        self.max_steps = max_steps
        self.buffer_size = buffer_size
        self.entropy_weight = entropy_weight
        self.eval_every = eval_every
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, max_steps=self.max_steps, nstep=self.nstep, gamma=self.gamma,
            batch=self.batch_size, lr=self.learning_rate, target_sync=self.target_sync,
            reserve=self.reserve_ratio, d=self.embed_dim, T=self.gnn_rounds,
            lam=self.entropy_weight, buffer_size=self.buffer_size, eval_every=self.eval_every,
            seed=self.random_state,
        )

    def fit(self, X, y=None, validation=None):
        """Train on graphs drawn from ``X``; ``validation`` graphs feed the metrics log."""
        source = check_instance_source(X)
        problem = self._problem()
        if not isinstance(source, InstanceSampler):
            for g in source:
                check_problem_fits(g, problem)
        val = None if validation is None else check_graphs(validation)
        trainer = Trainer(problem, self._config())
        result = trainer.fit(as_instance_source(source), val)
        self.params_ = result.params
        self.problem_ = problem
        self.log_ = result.log
        self.n_updates_ = result.updates
        return self

    def solve(self, graph, sol0=None, random_state=None, record=False):
        """One greedy rollout; returns the :class:`~lscopt.agent.Episode`."""
        check_is_fitted(self, "params_")
        g = check_graphs(graph)[0]
        check_problem_fits(g, self.problem_)
        rng = check_rng(self.random_state if random_state is None else random_state)
        return run_episode(self.params_, g, self.problem_, rng, reserve=self.reserve_ratio,
                           max_steps=self.max_steps, sol0=sol0, record=record)

    def predict(self, X):
        check_is_fitted(self, "params_")
        graphs = check_graphs(X)
        seeds = np.random.SeedSequence(self.random_state).spawn(len(graphs))
        return [self.solve(g, random_state=np.random.default_rng(s)).best_solution
                for g, s in zip(graphs, seeds)]

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        self.params_.save(path)

    @classmethod
    def from_checkpoint(cls, path, **kwargs) -> "LSDQN":
        params = ModelParams.load(path)
        p = params.problem
        name = "tsp" if p.kind == "tsp" else ("kcut" if p.sizes is not None or p.k != 2 else "maxcut")
        est = cls(problem=name, k=p.k, sizes=p.sizes, embed_dim=params.d,
                  gnn_rounds=params.T, **kwargs)
        est.params_ = params
        est.problem_ = p
        est.log_ = []
        return est


class GreedySearch(_SolverMixin, BaseEstimator):
    """Best-improvement local search from a random start (2-opt for TSP)."""

    def __init__(self, problem="maxcut", k=2, sizes=None, moves=None, random_state=0):
        self.problem = problem
        self.k = k
        self.sizes = sizes
        self.moves = moves
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.problem_ = self._problem()
        return self

    def solve(self, graph, sol0=None, random_state=None):
        check_is_fitted(self, "problem_")
        g = check_graphs(graph)[0]
        check_problem_fits(g, self.problem_)
        if sol0 is None:
            sol0 = init_solution(g, self.problem_, check_rng(
                self.random_state if random_state is None else random_state))
        return greedy_local_search(g, sol0, self.problem_, self.moves)

    def predict(self, X):
        check_is_fitted(self, "problem_")
        graphs = check_graphs(X)
        seeds = np.random.SeedSequence(self.random_state).spawn(len(graphs))
        return [self.solve(g, random_state=np.random.default_rng(s)).solution
                for g, s in zip(graphs, seeds)]


class TwoOpt(GreedySearch):
    def __init__(self, random_state=0):
        super().__init__("tsp", 0, None, None, random_state)


class FarthestInsertion(_SolverMixin, BaseEstimator):
    problem = "tsp"

    def fit(self, X=None, y=None):
        self.problem_ = self._problem()
        return self

    def predict(self, X) -> list[TspTour]:
        return [farthest_insertion(g) for g in check_graphs(X)]
