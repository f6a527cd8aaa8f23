"""Graph encoder, state/action readouts, Q head and action-proposal network.

All functions work on batches: a :class:`StateBatch` stacks ``B`` states of
the same graph size, candidate actions arrive as a ``(B, A, 2)`` int array
and Q-values come back as a ``(B, A)`` tensor.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .autograd import Tensor, concat, no_grad
from .env import EnvState, Problem

CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    pass


class ModelParams:
    """Named trainable tensors for one problem configuration.

    ``q_names`` are the Q-network weights (encoder, readout and head);
    ``ap_names`` belong to the action-proposal network, including the
    scalar ``prop_scalar`` that couples two node scores.
    """

    def __init__(self, problem: Problem, d: int = 16, T: int = 3, seed=0,
                 feature_dim: int | None = None):
        self.problem = problem
        self.d = int(d)
        self.T = int(T)
        self.p = int(feature_dim or problem.feature_dim)
        self.tensors: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        for name, (shape, fan_in) in self.shapes().items():
            bound = 1.0 / math.sqrt(fan_in)
            self.tensors[name] = Tensor(rng.uniform(-bound, bound, size=shape),
                                        requires_grad=True)

    @property
    def action_dim(self) -> int:
        return 2 * self.d if self.problem.moves == "flip" else 4 * self.d

    def shapes(self) -> dict[str, tuple[tuple, int]]:
        """name -> (shape, fan_in); fixes the creation order as well."""
        d, p, da = self.d, self.p, self.action_dim
        s = {
            "theta0": ((d, p), p),
            "theta1": ((d, d), d),
            "theta2": ((d, p), p),
            "theta3": ((p,), 1),
        }
        if self.problem.kind == "kcut":
            s["W_a"] = ((d, da), da)
        else:
            s["rnn_U"] = ((d, d), d)
            s["rnn_V"] = ((d, d), d)
            s["rnn_b"] = ((d,), d)
        s.update({
            "W0": ((1, 2 * d), 2 * d),
            "W1": ((d, d), d),
            "W2": ((d, da), da),
            "ap_W1": ((d, d), d),
            "ap_b1": ((d,), d),
            "ap_W2": ((d, d), d),
            "ap_b2": ((d,), d),
            "prop_scalar": ((), 1),
        })
        return s

    @property
    def ap_names(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("ap_") or k == "prop_scalar"]

    @property
    def q_names(self) -> list[str]:
        ap = set(self.ap_names)
        return [k for k in self.tensors if k not in ap]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def load_from(self, other: "ModelParams") -> None:
        for name, t in other.tensors.items():
            self.tensors[name].data = t.data.copy()

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    # -- checkpoints -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": {"d": self.d, "p": self.p, "T": self.T,
                       "problem": self.problem.to_dict()},
            "tensors": {name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                        for name, t in self.tensors.items()},
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelParams":
        if blob.get("version") != CHECKPOINT_VERSION:
            raise DimensionError(f"unsupported checkpoint version {blob.get('version')!r}")
        cfg = blob["config"]
        params = cls(Problem.from_dict(cfg["problem"]), cfg["d"], cfg["T"],
                     feature_dim=cfg["p"])
        stored = blob["tensors"]
        expected = params.shapes()
        if set(stored) != set(expected):
            raise DimensionError(
                f"checkpoint tensors {sorted(stored)} != expected {sorted(expected)}")
        for name, (shape, _) in expected.items():
            entry = stored[name]
            if tuple(entry["shape"]) != tuple(shape):
                raise DimensionError(f"{name}: shape {entry['shape']} != {list(shape)}")
            data = np.asarray(entry["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise DimensionError(f"{name}: {data.size} values for shape {shape}")
            params.tensors[name].data = data.reshape(shape)
        return params

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path) as f:
            return cls.from_dict(json.load(f))


# -- batching --------------------------------------------------------------------

@dataclass
class StateBatch:
    w: np.ndarray           # (B, n, n) sparsified weights
    x: np.ndarray           # (B, n, p) static node features
    inv_deg: np.ndarray     # (B, n, 1), zero for isolated nodes
    labels: np.ndarray | None = None   # (B, n)
    onehot: np.ndarray | None = None   # (B, n, k)
    perm: np.ndarray | None = None     # (B, n)

    @property
    def size(self) -> int:
        return self.w.shape[0]

    @property
    def n(self) -> int:
        return self.w.shape[1]


def node_features(state: EnvState) -> np.ndarray:
    """One-hot current label (k-Cut) or node coordinates (TSP)."""
    g, p = state.graph, state.problem
    if p.kind == "kcut":
        x = np.zeros((g.n, p.k))
        x[np.arange(g.n), state.labels] = 1.0
        return x
    if g.coords is None:
        raise DimensionError("TSP features need node coordinates")
    return np.asarray(g.coords)


def make_batch(states: Sequence[EnvState]) -> StateBatch:
    n = states[0].n
    if any(s.n != n for s in states):
        raise DimensionError("all states in a batch need the same graph size")
    w = np.stack([s.graph.w for s in states])
    deg = (w > 0).sum(-1, keepdims=True)
    inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    x = np.stack([node_features(s) for s in states])
    problem = states[0].problem
    if problem.kind == "kcut":
        return StateBatch(w, x, inv_deg, labels=np.stack([s.labels for s in states]), onehot=x)
    return StateBatch(w, x, inv_deg, perm=np.stack([s.perm for s in states]))


def _gather(t: Tensor, idx: np.ndarray) -> Tensor:
    """Rows ``t[b, idx[b, a]]`` for a (B, m, d) tensor and (B, A) indices."""
    bidx = np.arange(t.shape[0])[:, None]
    return t[bidx, idx]


# -- encoder and readouts ---------------------------------------------------------

def mpnn_forward(params: ModelParams, w: np.ndarray, x: np.ndarray,
                 T: int | None = None, inv_deg: np.ndarray | None = None) -> Tensor:
    """Message passing node embeddings after ``T`` rounds, starting from zero.

    Accepts a single graph (``w`` of shape (n, n)) or a batch (B, n, n);
    the output has the matching leading shape.
    """
    T = params.T if T is None else T
    single = w.ndim == 2
    if single:
        w, x = w[None], x[None]
    if x.shape[-1] != params.p or x.shape[:2] != w.shape[:2]:
        raise DimensionError(f"features {x.shape} do not fit weights {w.shape} / p={params.p}")
    if inv_deg is None:
        deg = (w > 0).sum(-1, keepdims=True)
        inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    th0, th1, th2, th3 = (params[k] for k in ("theta0", "theta1", "theta2", "theta3"))
    B, n = w.shape[:2]
    if T <= 0:
        mu = Tensor(np.zeros((B, n, params.d)))
        return mu[0] if single else mu
    edge = (Tensor(w[..., None]) * th3).relu().sum(axis=2) * inv_deg    # (B, n, p)
    static = Tensor(x) @ th0.T + edge @ th2.T
    mu = static.relu()
    wt = Tensor(w * inv_deg)
    for _ in range(T - 1):
        mu = (static + (wt @ mu) @ th1.T).relu()
    return mu[0] if single else mu


class Encoding(NamedTuple):
    mu: Tensor                     # (B, n, d)
    clusters: Tensor | None        # (B, k, d) k-Cut cluster means
    cluster_mask: np.ndarray | None  # (B, k) non-empty clusters
    state: Tensor | None           # (B, d) TSP recurrent state


def cluster_embed(mu: Tensor, onehot: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean embedding per label; empty labels get a zero row and mask False."""
    counts = onehot.sum(1)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)[..., None]
    return (Tensor(np.swapaxes(onehot, 1, 2)) @ mu) * inv, counts > 0


def kcut_action_embed(enc: Encoding, labels: np.ndarray, acts: np.ndarray, moves: str) -> Tensor:
    """Flip (u -> j): [mu_u; H_c(j)].  Swap (u, v): [mu_u; mu_v; H_c(l_u); H_c(l_v)]."""
    u, v = acts[..., 0], acts[..., 1]
    if moves == "flip":
        return concat([_gather(enc.mu, u), _gather(enc.clusters, v)], axis=-1)
    bidx = np.arange(labels.shape[0])[:, None]
    lu, lv = labels[bidx, u], labels[bidx, v]
    return concat([_gather(enc.mu, u), _gather(enc.mu, v),
                   _gather(enc.clusters, lu), _gather(enc.clusters, lv)], axis=-1)


def kcut_state_embed(enc: Encoding, H_a: Tensor, W_a: Tensor) -> tuple[Tensor, Tensor]:
    """Attention over cluster embeddings with the action embedding as query.

    Returns ``(H_s, weights)`` with shapes (B, A, d) and (B, A, k).
    """
    logits = (H_a @ W_a.T) @ enc.clusters.swapaxes(1, 2)
    logits = logits + np.where(enc.cluster_mask, 0.0, -1e30)[:, None, :]
    att = logits.softmax(-1)
    return att @ enc.clusters, att


def tsp_state_embed(mu: Tensor, perm: np.ndarray, params: ModelParams) -> Tensor:
    """Final hidden state of h_t = tanh(U x_t + V h_{t-1} + b) along the tour."""
    U, V, b = params["rnn_U"], params["rnn_V"], params["rnn_b"]
    seq = _gather(mu, perm)
    h = None
    for t in range(perm.shape[1]):
        pre = seq[:, t] @ U.T + b
        if h is not None:
            pre = pre + h @ V.T
        h = pre.tanh()
    return h


def tsp_action_embed(mu: Tensor, perm: np.ndarray, acts: np.ndarray) -> Tensor:
    """[mu at position i; position j; position i-1; position j+1], cyclic."""
    n = perm.shape[1]
    i, j = acts[..., 0], acts[..., 1]
    bidx = np.arange(perm.shape[0])[:, None]
    blocks = [perm[bidx, i], perm[bidx, j], perm[bidx, (i - 1) % n], perm[bidx, (j + 1) % n]]
    return concat([_gather(mu, nodes) for nodes in blocks], axis=-1)


def q_value(H_s: Tensor, H_a: Tensor, params: ModelParams) -> Tensor:
    """W0 . relu([W1 H_s; W2 H_a]) over the trailing axis.

    ``H_s`` may have a singleton action axis and is broadcast against ``H_a``.
    """
    d = params.d
    W0 = params["W0"]
    hs = (H_s @ params["W1"].T).relu() @ W0[:, :d].T
    ha = (H_a @ params["W2"].T).relu() @ W0[:, d:].T
    q = hs + ha
    return q.reshape(*q.shape[:-1])


def encode(params: ModelParams, batch: StateBatch) -> Encoding:
    mu = mpnn_forward(params, batch.w, batch.x, inv_deg=batch.inv_deg)
    if params.problem.kind == "kcut":
        clusters, mask = cluster_embed(mu, batch.onehot)
        return Encoding(mu, clusters, mask, None)
    return Encoding(mu, None, None, tsp_state_embed(mu, batch.perm, params))


def q_from_encoding(params: ModelParams, enc: Encoding, batch: StateBatch,
                    acts: np.ndarray) -> Tensor:
    problem = params.problem
    if problem.kind == "kcut":
        H_a = kcut_action_embed(enc, batch.labels, acts, problem.moves)
        H_s, _ = kcut_state_embed(enc, H_a, params["W_a"])
        return q_value(H_s, H_a, params)
    H_a = tsp_action_embed(enc.mu, batch.perm, acts)
    return q_value(enc.state.reshape(enc.state.shape[0], 1, params.d), H_a, params)


def q_values(params: ModelParams, batch: StateBatch, acts: np.ndarray) -> Tensor:
    """Q(s_b, a_{b,i}) for (B, A, 2) actions; the dummy action is not included."""
    return q_from_encoding(params, encode(params, batch), batch, acts)


# -- action proposal ---------------------------------------------------------------

def ap_state_embedding(params: ModelParams, enc: Encoding) -> Tensor:
    """Action-free state embedding fed to the proposal network.

    TSP uses the recurrent state. The k-Cut readout is action-conditioned, so
    the proposal network sees the plain mean over non-empty clusters instead
    (the attention readout with a zero query).
    """
    if params.problem.kind == "tsp":
        return enc.state
    mask = enc.cluster_mask.astype(np.float64)
    weights = mask / mask.sum(-1, keepdims=True)
    return (Tensor(weights[:, None, :]) @ enc.clusters).reshape(mask.shape[0], params.d)


def ap_pseudo_action(params: ModelParams, H_s: Tensor) -> Tensor:
    hidden = (H_s @ params["ap_W1"].T + params["ap_b1"]).relu()
    return hidden @ params["ap_W2"].T + params["ap_b2"]


def ap_propose(params: ModelParams, H_s: Tensor, mu: Tensor, acts: np.ndarray,
               perm: np.ndarray | None = None) -> Tensor:
    """Log-probabilities (B, A) of the proposal distribution over ``acts``.

    Node scores are s(v) = <pseudo action, mu_v>. Pairs (swap, sequential
    swap) get s(u) + s(v) + c * s(u) * s(v); a flip of node u gets s(u).
    """
    if acts.shape[1] == 0:
        from .env import ProtocolError
        raise ProtocolError("no legal actions to propose from")
    a_tilde = ap_pseudo_action(params, H_s)
    B, n = mu.shape[0], mu.shape[1]
    scores = (mu @ a_tilde.reshape(B, params.d, 1)).reshape(B, n)
    moves = params.problem.moves
    u, v = acts[..., 0], acts[..., 1]
    if moves == "flip":
        logits = _gather(scores.reshape(B, n, 1), u).reshape(B, acts.shape[1])
    else:
        if moves == "seqswap":
            bidx = np.arange(B)[:, None]
            u, v = perm[bidx, u], perm[bidx, v]
        su = _gather(scores.reshape(B, n, 1), u).reshape(B, acts.shape[1])
        sv = _gather(scores.reshape(B, n, 1), v).reshape(B, acts.shape[1])
        logits = su + sv + params["prop_scalar"] * su * sv
    return logits.log_softmax(-1)


def reserve_count(eps: float, n_legal: int) -> int:
    """ceil(eps * n_legal), robust to float noise such as 0.1 * 50."""
    if not 0 < eps <= 1:
        raise ValueError("reserve ratio must lie in (0, 1]")
    return min(n_legal, math.ceil(round(eps * n_legal, 9)))


def eliminate_actions(probs: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of ceil(eps * A) actions drawn without replacement from ``probs``.

    Returned in ascending order so index-based tie-breaking is preserved.
    With ``eps == 1`` every index is returned and ``rng`` is untouched.
    """
    A = len(probs)
    count = reserve_count(eps, A)
    if count >= A:
        return np.arange(A)
    p = np.asarray(probs, dtype=np.float64)
    p = p / p.sum()
    return np.sort(rng.choice(A, size=count, replace=False, p=p))


def ap_loss(log_probs: Tensor, chosen: np.ndarray, lam: float = 0.01) -> Tensor:
    """Mean over the batch of -log pi(a*) - lam * entropy(pi)."""
    if log_probs.ndim == 1:
        log_probs = log_probs.reshape(1, -1)
    chosen = np.asarray(chosen).reshape(-1)
    B = log_probs.shape[0]
    nll = -log_probs[np.arange(B), chosen]
    neg_entropy = (log_probs.exp() * log_probs).sum(-1)
    return (nll + neg_entropy * lam).mean()


def proposal_distribution(params: ModelParams, state: EnvState, acts: np.ndarray) -> np.ndarray:
    with no_grad():
        batch = make_batch([state])
        enc = encode(params, batch)
        logp = ap_propose(params, ap_state_embedding(params, enc), enc.mu, acts[None], batch.perm)
    return np.exp(logp.data[0])
