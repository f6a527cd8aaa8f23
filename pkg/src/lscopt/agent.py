"""N-step deep Q-learning over reversible local-search moves."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Adam, Tensor, no_grad
from .baselines import reference_value, reporting_value
from .env import (
    DUMMY, EnvState, Problem, Solution, _Dummy, action_array, action_from_pair,
    action_pair, action_rewards, init_solution, is_local_minimum, make_state, step,
)
from .graphs import Graph
from .networks import (
    ModelParams, ap_loss, ap_propose, ap_state_embedding, eliminate_actions, encode,
    make_batch, q_from_encoding, q_values, reserve_count,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Training hyper-parameters. The batch size is reduced for single-core runs."""

    epochs: int = 2000
    max_steps: int | None = None      # None -> 2n
    nstep: int = 2
    gamma: float = 0.9
    batch: int = 64
    lr: float = 1e-3
    target_sync: int = 5
    eps_start: float = 0.5
    eps_mid: float = 0.1
    eps_end: float = 0.0
    reserve: float = 1.0
    d: int = 16
    T: int = 3
    lam: float = 0.01
    buffer_size: int = 5000
    eval_every: int = 200
    n_eval: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.nstep < 1:
            raise ConfigError("nstep must be >= 1")
        if not 0 < self.reserve <= 1:
            raise ConfigError("reserve ratio must lie in (0, 1]")
        if self.batch < 1 or self.buffer_size < 1 or self.target_sync < 1:
            raise ConfigError("batch, buffer_size and target_sync must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def epsilon_schedule(epoch: float, E: float, start=0.5, mid=0.1, end=0.0) -> float:
    """Linear start->mid over the first 90% of epochs, then mid->end."""
    knee = 0.9 * E
    if epoch <= knee:
        return start + (mid - start) * (epoch / knee if knee > 0 else 1.0)
    return mid + (end - mid) * min(1.0, (epoch - knee) / (E - knee))


# -- replay ------------------------------------------------------------------------

@dataclass
class Transition:
    s0: EnvState
    a0: object
    rewards: np.ndarray       # length N, zero-padded when the episode ended early
    sN: EnvState
    terminal: bool


class ReplayBuffer:
    def __init__(self, capacity: int = 5000, rng=None):
        self.capacity = capacity
        self.items: list[Transition] = []
        self.pos = 0
        self.rng = np.random.default_rng(rng)

    def __len__(self):
        return len(self.items)

    def push(self, tr: Transition) -> None:
        if len(self.items) < self.capacity:
            self.items.append(tr)
        else:
            self.items[self.pos] = tr
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, size: int) -> list[Transition]:
        idx = self.rng.choice(len(self.items), size=min(size, len(self.items)), replace=False)
        return [self.items[i] for i in idx]


# -- acting ------------------------------------------------------------------------

@dataclass
class Counter:
    q_evaluations: int = 0
    decisions: int = 0


def _candidates(params: ModelParams, state: EnvState, reserve: float, rng, enc=None, batch=None):
    acts = action_array(state)
    if acts.shape[0] == 0:
        return acts, None, None
    batch = batch or make_batch([state])
    enc = enc or encode(params, batch)
    if reserve < 1:
        logp = ap_propose(params, ap_state_embedding(params, enc), enc.mu, acts[None], batch.perm)
        keep = eliminate_actions(np.exp(logp.data[0]), reserve, rng)
        acts = acts[keep]
    return acts, enc, batch


def greedy_action(params: ModelParams, state: EnvState, reserve: float = 1.0, rng=None,
                  counter: Counter | None = None):
    """Best action by Q over the proposed subset plus the dummy (Q fixed at 0).

    Returns ``(action, q)``; ties go to the lowest action index, so a real
    action with Q == 0 beats the dummy.
    """
    with no_grad():
        acts, enc, batch = _candidates(params, state, reserve, rng)
        if acts.shape[0] == 0:
            return DUMMY, 0.0
        q = q_from_encoding(params, enc, batch, acts[None]).data[0]
    if counter is not None:
        counter.q_evaluations += len(acts)
        counter.decisions += 1
    best = int(np.argmax(q))
    if q[best] < 0:
        return DUMMY, 0.0
    return action_from_pair(params.problem.moves, acts[best]), float(q[best])


def select_action(state: EnvState, params: ModelParams, eps_explore: float,
                  reserve: float, rng: np.random.Generator, counter: Counter | None = None):
    """Epsilon-greedy: uniform over real actions, else :func:`greedy_action`."""
    if rng.random() < eps_explore:
        acts = action_array(state)
        if acts.shape[0] == 0:
            return DUMMY
        return action_from_pair(params.problem.moves, acts[rng.integers(acts.shape[0])])
    return greedy_action(params, state, reserve, rng, counter)[0]


def sync_target(online: ModelParams, target: ModelParams) -> None:
    target.load_from(online)


# -- targets and losses ---------------------------------------------------------------

def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    return float(sum(gamma ** j * r for j, r in enumerate(rewards)))


def _max_next_q(params: ModelParams, states: list[EnvState], reserve: float, rng) -> np.ndarray:
    """max(0, max Q) over each state's proposed action subset, batched by shape."""
    out = np.zeros(len(states))
    groups: dict[tuple, list[int]] = {}
    all_acts = [action_array(s) for s in states]
    for i, s in enumerate(states):
        groups.setdefault((s.n, all_acts[i].shape[0]), []).append(i)
    with no_grad():
        for (n, A), idx in groups.items():
            if A == 0:
                continue
            batch = make_batch([states[i] for i in idx])
            enc = encode(params, batch)
            acts = np.stack([all_acts[i] for i in idx])
            if reserve < 1:
                logp = ap_propose(params, ap_state_embedding(params, enc), enc.mu, acts, batch.perm)
                probs = np.exp(logp.data)
                acts = np.stack([acts[b][eliminate_actions(probs[b], reserve, rng)]
                                 for b in range(len(idx))])
            q = q_from_encoding(params, enc, batch, acts).data
            out[idx] = np.maximum(q.max(axis=1), 0.0)
    return out


def n_step_targets(transitions: Sequence[Transition], target: ModelParams, gamma: float,
                   reserve: float = 1.0, rng=None) -> np.ndarray:
    """y = sum_j gamma^j r_j + gamma^N max_a Q_target(s_N, a); no bootstrap at terminals."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    y = np.array([discounted_return(tr.rewards, gamma) for tr in transitions])
    live = [i for i, tr in enumerate(transitions) if not tr.terminal]
    if live:
        N = len(transitions[0].rewards)
        boot = _max_next_q(target, [transitions[i].sN for i in live], reserve, rng)
        y[live] += gamma ** N * boot
    return y


def n_step_target(tr: Transition, target: ModelParams, gamma: float,
                  reserve: float = 1.0, rng=None) -> float:
    return float(n_step_targets([tr], target, gamma, reserve, rng)[0])


def _grouped(states: Sequence[EnvState]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(states):
        groups.setdefault(s.n, []).append(i)
    return groups


def q_selected(params: ModelParams, states: Sequence[EnvState], actions: Sequence) -> list[tuple[list[int], Tensor]]:
    """Q(s_i, a_i) with gradients, grouped by graph size."""
    out = []
    for _, idx in _grouped(states).items():
        batch = make_batch([states[i] for i in idx])
        acts = np.array([[action_pair(actions[i])] for i in idx], dtype=np.int64)
        out.append((idx, q_values(params, batch, acts).reshape(len(idx))))
    return out


def q_loss(params: ModelParams, transitions: Sequence[Transition], targets: np.ndarray) -> Tensor:
    """Sum of squared TD errors; targets are constants."""
    total = None
    for idx, q in q_selected(params, [t.s0 for t in transitions], [t.a0 for t in transitions]):
        err = Tensor(targets[idx]) - q
        part = (err * err).sum()
        total = part if total is None else total + part
    return total


def ap_step_loss(params: ModelParams, target: ModelParams, states: Sequence[EnvState],
                 reserve: float, lam: float, rng) -> Tensor | None:
    """Proposal loss on ``states``; a* is the target-Q argmax over the proposed set.

    Encoder outputs are detached, so only the proposal weights get gradients.
    """
    total, count = None, 0
    for _, idx in _grouped(states).items():
        group = [states[i] for i in idx]
        acts_list = [action_array(s) for s in group]
        if any(a.shape[0] == 0 for a in acts_list) or len({a.shape[0] for a in acts_list}) != 1:
            continue
        acts = np.stack(acts_list)
        batch = make_batch(group)
        with no_grad():
            enc = encode(params, batch)
            H_s = ap_state_embedding(params, enc)
            logp_fixed = ap_propose(params, H_s, enc.mu, acts, batch.perm).data
            keep = np.stack([eliminate_actions(np.exp(row), reserve, rng) for row in logp_fixed])
            sub = np.take_along_axis(acts, keep[..., None], axis=1)
            q = q_from_encoding(target, encode(target, batch), batch, sub).data
            chosen = keep[np.arange(len(group)), np.argmax(q, axis=1)]
        logp = ap_propose(params, H_s.detach(), enc.mu.detach(), acts, batch.perm)
        loss = ap_loss(logp, chosen, lam) * len(group)
        total = loss if total is None else total + loss
        count += len(group)
    return None if total is None else total * (1.0 / count)


# -- episodes ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    action: object
    reward: float
    objective: float
    greedy: bool          # action had the maximal immediate reward
    local_min: bool       # resulting state has no improving move


@dataclass
class Episode:
    initial: EnvState
    final: EnvState
    best_solution: Solution
    best_objective: float
    best_step: int
    records: list[StepRecord] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.records)


def _record(state: EnvState, a, r: float, nxt: EnvState) -> StepRecord:
    acts = action_array(state)
    best = float(action_rewards(state, acts).max()) if acts.shape[0] else 0.0
    return StepRecord(a, r, nxt.objective, bool(r >= best - 1e-12), is_local_minimum(nxt))


def run_episode(params: ModelParams, g: Graph, problem: Problem, rng, *, reserve: float = 1.0,
                max_steps: int | None = None, sol0: Solution | None = None,
                counter: Counter | None = None, record: bool = False) -> Episode:
    """Greedy rollout from a random (or given) solution; keeps the best state seen.

    The terminating dummy action is not part of ``records``.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if sol0 is None:
        sol0 = init_solution(g, problem, rng)
    state = make_state(g, problem, sol0, max_steps)
    start = state
    best_sol, best_obj, best_step = state.solution, state.objective, 0
    records = []
    while not state.done and state.steps_taken < state.max_steps:
        a = greedy_action(params, state, reserve, rng, counter)[0]
        if isinstance(a, _Dummy):
            break
        nxt, r, _ = step(state, a)
        if record:
            records.append(_record(state, a, r, nxt))
        state = nxt
        if state.objective < best_obj - 1e-12:
            best_sol, best_obj, best_step = state.solution, state.objective, state.steps_taken
    return Episode(start, state, best_sol, best_obj, best_step, records)


# -- training -----------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    updates: int
    best_ratio: float | None


class Trainer:
    """Runs the epoch loop; ``log`` rows are written every ``eval_every`` epochs."""

    def __init__(self, problem: Problem, config: TrainConfig, feature_dim: int | None = None,
                 params: ModelParams | None = None):
        self.problem = problem
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(6)
        self.params = params or ModelParams(problem, config.d, config.T, seed=seeds[0],
                                            feature_dim=feature_dim)
        self.target = self.params.copy()
        self.graph_rng = np.random.default_rng(seeds[1])
        self.episode_rng = np.random.default_rng(seeds[2])
        self.elim_rng = np.random.default_rng(seeds[3])
        self.buffer = ReplayBuffer(config.buffer_size, seeds[4])
        self.eval_seed = seeds[5]
        self.q_opt = Adam([self.params[k] for k in self.params.q_names], lr=config.lr)
        self.ap_opt = Adam([self.params[k] for k in self.params.ap_names], lr=config.lr)
        self.updates = 0
        self.log: list[dict] = []

    def collect(self, g: Graph, eps: float) -> int:
        """One exploration episode; pushes N-step transitions, returns its length."""
        cfg, N = self.config, self.config.nstep
        state = make_state(g, self.problem, init_solution(g, self.problem, self.episode_rng),
                           cfg.max_steps)
        hist: list[tuple[EnvState, object, float]] = []
        while not state.done:
            a = select_action(state, self.params, eps, cfg.reserve, self.episode_rng)
            nxt, r, done = step(state, a)
            hist.append((state, a, r))
            state = nxt
            if len(hist) >= N:
                self._push(hist, len(hist) - N, state, done)
        for j in range(max(0, len(hist) - N + 1), len(hist)):
            self._push(hist, j, state, True)
        return len(hist)

    def _push(self, hist, j, end_state, terminal):
        s0, a0, _ = hist[j]
        if isinstance(a0, _Dummy):
            return
        rewards = np.zeros(self.config.nstep)
        tail = [r for _, _, r in hist[j:j + self.config.nstep]]
        rewards[:len(tail)] = tail
        self.buffer.push(Transition(s0, a0, rewards, end_state, terminal))

    def update(self) -> tuple[float, float]:
        cfg = self.config
        batch = self.buffer.sample(cfg.batch)
        y = n_step_targets(batch, self.target, cfg.gamma, cfg.reserve, self.elim_rng)
        self.params.zero_grad()
        loss = q_loss(self.params, batch, y)
        loss.backward()
        self.q_opt.step()
        self.params.zero_grad()
        aloss = ap_step_loss(self.params, self.target, [t.s0 for t in batch], cfg.reserve,
                             cfg.lam, self.elim_rng)
        ap_val = float("nan")
        if aloss is not None:
            aloss.backward()
            self.ap_opt.step()
            ap_val = aloss.item()
        self.params.zero_grad()
        self.updates += 1
        if self.updates % cfg.target_sync == 0:
            sync_target(self.params, self.target)
        return loss.item(), ap_val

    def fit(self, source: Callable[[np.random.Generator], Graph],
            validation: Sequence[Graph] | None = None,
            references: Sequence[float] | None = None) -> TrainResult:
        cfg = self.config
        if references is None and validation:
            references = [reference_value(g, self.problem)[0] for g in validation]
        window = {"len": [], "q": [], "ap": []}
        best_ratio = None
        for epoch in range(cfg.epochs):
            eps = epsilon_schedule(epoch, cfg.epochs, cfg.eps_start, cfg.eps_mid, cfg.eps_end)
            g = source(self.graph_rng)
            window["len"].append(self.collect(g, eps))
            if len(self.buffer) >= cfg.batch:
                ql, al = self.update()
                window["q"].append(ql)
                window["ap"].append(al)
            last = epoch + 1 == cfg.epochs
            if (epoch + 1) % cfg.eval_every == 0 or last:
                ratio = None
                if validation:
                    ratio = evaluate_ratio(self.params, validation, references, self.problem,
                                           self.eval_seed, cfg.reserve, cfg.max_steps)
                    if best_ratio is None or _ratio_better(self.problem, ratio, best_ratio):
                        best_ratio = ratio
                row = {
                    "epoch": epoch + 1,
                    "mean_approx_ratio": ratio,
                    "mean_episode_len": float(np.mean(window["len"])),
                    "q_loss": float(np.mean(window["q"])) if window["q"] else None,
                    "ap_loss": float(np.nanmean(window["ap"])) if window["ap"] else None,
                    "epsilon": eps,
                }
                self.log.append(row)
                log.info("epoch %d ratio=%s q_loss=%s", row["epoch"], ratio, row["q_loss"])
                window = {"len": [], "q": [], "ap": []}
        return TrainResult(self.params, self.log, self.updates, best_ratio)


def _ratio_better(problem: Problem, a: float, b: float) -> bool:
    return a > b if problem.kind == "kcut" else a < b


def evaluate_ratio(params: ModelParams, graphs: Sequence[Graph], references: Sequence[float],
                   problem: Problem, seed, reserve: float = 1.0, max_steps=None) -> float:
    """Mean approximation ratio of greedy rollouts; the seed fixes the start solutions."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(len(graphs))]
    ratios = []
    for g, ref, rng in zip(graphs, references, rngs):
        ep = run_episode(params, g, problem, rng, reserve=reserve, max_steps=max_steps)
        ratios.append(reporting_value(g, problem, ep.best_objective) / ref)
    return float(np.mean(ratios))


def train(config: TrainConfig, source, problem: Problem, validation=None) -> TrainResult:
    """Train from an instance source (callable ``rng -> Graph``)."""
    if source is None:
        raise ConfigError("empty instance source")
    return Trainer(problem, config).fit(source, validation)
