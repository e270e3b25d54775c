"""Per-agent pipeline with shared parameters.

Each round an agent encodes its augmented history (observation, previous
action, previous aggregated message, previous scheduler weight, one-hot id)
with an LSTM, scores the utility of its message, emits a length-``p``
message, and acts on the concatenation of its hidden state and the average
of the messages it reconstructed from the other agents.

All functions work on stacked agents: leading axes are batch dims and the
second-to-last axis indexes agents.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import codec, scheduler, wire
from .errors import ProtocolError
from .nn import ParameterStore, Tensor, add_lstm, add_mlp, as_tensor, concat, lstm_step, mlp, tanh

DSMS, NO_COMM, FULL_COMM, FIXED_EQUAL = "dsms", "no_comm", "full_comm", "fixed_equal"
MODES = (DSMS, NO_COMM, FULL_COMM, FIXED_EQUAL)
ACTION_DIM = 2


@dataclass(frozen=True)
class NetworkConfig:
    obs_dim: int
    n_agents: int
    message_size: int = codec.DEFAULT_MESSAGE_SIZE
    hidden: int = 64
    head_hidden: int = 64
    state_dim: int = 0  # size of the global state vector the critic also reads (0: none)

    @property
    def input_dim(self) -> int:
        return self.obs_dim + ACTION_DIM + self.message_size + 1 + self.n_agents

    @property
    def critic_input_dim(self) -> int:
        n = self.n_agents
        return self.state_dim + n * self.hidden + n * ACTION_DIM + n + n


def init_actor(cfg: NetworkConfig, rng: np.random.Generator) -> ParameterStore:
    store = ParameterStore()
    H, hh = cfg.hidden, cfg.head_hidden
    add_lstm(store, "lstm", cfg.input_dim, H, rng)
    add_mlp(store, "util", [H, hh, 1], rng)
    add_mlp(store, "msg", [H, hh, cfg.message_size], rng)
    add_mlp(store, "pi", [H + cfg.message_size, hh, ACTION_DIM], rng)
    return store


def init_critic(cfg: NetworkConfig, rng: np.random.Generator) -> ParameterStore:
    store = ParameterStore()
    add_mlp(store, "q", [cfg.critic_input_dim, cfg.head_hidden, cfg.head_hidden, 1], rng)
    assert store["q.W0"].shape[0] == cfg.critic_input_dim
    return store


def one_hot_ids(n: int) -> np.ndarray:
    return np.eye(n)


def history_input(obs, prev_action, prev_message, prev_weight, n_agents: int) -> Tensor:
    obs = as_tensor(obs)
    batch = obs.shape[:-2]
    ids = np.broadcast_to(one_hot_ids(n_agents), batch + (n_agents, n_agents))
    w = as_tensor(prev_weight)
    return concat([obs, as_tensor(prev_action), as_tensor(prev_message), w.reshape(w.shape + (1,)), Tensor(ids)], axis=-1)


def encode_history(prev_hidden, prev_cell, x, P: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
    return lstm_step(x, prev_hidden, prev_cell, P, "lstm")


def utility_head(h, P) -> Tensor:
    u = mlp(h, P, "util", 2)
    return u.reshape(u.shape[:-1])


def message_head(h, P) -> Tensor:
    return mlp(h, P, "msg", 2, out="tanh")


def policy_logits(h, m, P) -> Tensor:
    """Pre-activation of the policy; the action is its tanh."""
    return mlp(concat([as_tensor(h), as_tensor(m)], axis=-1), P, "pi", 2)


def policy_head(h, m, P) -> Tensor:
    return tanh(policy_logits(h, m, P))


def aggregate(reconstructed: Sequence, n: int | None = None, p: int | None = None) -> np.ndarray:
    """Mean of the messages reconstructed from the other agents."""
    msgs = [m.values if isinstance(m, codec.RealMessage) else np.asarray(m, dtype=np.float64) for m in reconstructed]
    if not msgs:
        if n == 1:
            return np.zeros(p if p is not None else codec.DEFAULT_MESSAGE_SIZE)
        raise ProtocolError("no incoming messages to aggregate")
    if n is not None and len(msgs) != n - 1:
        raise ProtocolError(f"expected {n - 1} incoming messages, got {len(msgs)}")
    return np.mean(msgs, axis=0)


def aggregate_tensor(mr: Tensor) -> Tensor:
    """Leave-one-out mean over the agent axis of a (..., n, p) tensor."""
    n = mr.shape[-2]
    if n == 1:
        return Tensor(np.zeros(mr.shape))
    return (mr.sum(axis=-2, keepdims=True) - mr) / (n - 1)


@dataclass(frozen=True)
class CommSpec:
    """How a round's bandwidth is shared: the ablation mode plus its parameters."""

    mode: str
    bandwidth: int
    n_agents: int
    message_size: int = codec.DEFAULT_MESSAGE_SIZE
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == DSMS:
            scheduler.check_bandwidth(self.bandwidth, self.n_agents)
        if self.mode == FIXED_EQUAL:
            scheduler.fixed_equal_budgets(self.bandwidth, self.n_agents)

    @property
    def full(self) -> int:
        return codec.full_budget(self.message_size)

    def weights(self, u, noise=None):
        """Scheduler weights; the non-DSMS modes use a constant uniform split."""
        if self.mode == DSMS:
            return scheduler.gumbel_softmax(u, self.temperature, noise)
        uniform = np.full(np.shape(u.value if isinstance(u, Tensor) else u), 1.0 / self.n_agents)
        return Tensor(uniform) if isinstance(u, Tensor) else uniform

    def budgets(self, w: np.ndarray) -> np.ndarray:
        """Allocated units per agent (same shape as ``w``)."""
        w = np.asarray(w)
        if self.mode == DSMS:
            b = scheduler.allocate(w, self.bandwidth, self.n_agents)
            scheduler.check_allocation(b, self.bandwidth)
            return b
        if self.mode == FULL_COMM:
            return np.full(w.shape, self.full, dtype=np.int64)
        if self.mode == FIXED_EQUAL:
            b = scheduler.fixed_equal_budgets(self.bandwidth, self.n_agents, cap=self.full)
            return np.broadcast_to(b, w.shape).copy()
        return np.zeros(w.shape, dtype=np.int64)

    def sent(self, budgets: np.ndarray) -> np.ndarray:
        """Units actually used: a message cannot carry more than its full spectrum."""
        return np.minimum(budgets, self.full)


def exchange_tensor(mo: Tensor, budgets: np.ndarray, comm: CommSpec) -> Tensor:
    """Differentiable compress -> reconstruct -> aggregate for stacked messages."""
    if comm.mode == NO_COMM:
        return Tensor(np.zeros(mo.shape))
    mask = codec.keep_mask(budgets, comm.message_size)
    re, im = codec.compress_tensor(mo, mask)
    return aggregate_tensor(codec.reconstruct_tensor(re, im, comm.message_size))


@dataclass
class RoundRecord:
    frame: bytes
    sent: np.ndarray
    reconstruction_mse: np.ndarray
    aggregated: np.ndarray


def exchange_wire(mo: np.ndarray, budgets: np.ndarray, comm: CommSpec) -> RoundRecord:
    """One round over the shared medium for a single (n, p) set of raw messages."""
    n, p = mo.shape
    if comm.mode == NO_COMM:
        frame = wire.encode_frame([], [])
        return RoundRecord(frame, np.zeros(n, dtype=np.int64), np.zeros(n), np.zeros((n, p)))
    sent = comm.sent(budgets)
    clipped = [codec.compress(mo[i], int(sent[i])) for i in range(n)]
    frame = wire.encode_frame(sent, clipped)
    ids, received = wire.parse_frame(frame)
    recon = np.stack([codec.reconstruct(c).values for c in received])
    mse = np.array([codec.reconstruction_mse(mo[i], int(sent[i])) for i in range(n)])
    agg = np.stack([aggregate([recon[j] for j in ids if j != i], n=n, p=p) for i in range(n)])
    return RoundRecord(frame, sent, mse, agg)
