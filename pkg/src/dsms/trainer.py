"""Centralized-critic, decentralized-actor training of the full pipeline.

Episodes are stored whole; updates sample ``unroll + 1``-step segments and
replay the recurrent pipeline from the hidden state recorded at the segment
head (truncated back-propagation through time). The critic scores the joint
encoded histories, joint actions and the scheduler weights ``w``; the actor
objective back-propagates through policy, message aggregation, the linear
spectral codec, the Gumbel-softmax and the utility head.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from . import env as envlib
from .agent import (
    DSMS,
    MODES,
    CommSpec,
    NetworkConfig,
    encode_history,
    exchange_tensor,
    exchange_wire,
    history_input,
    init_actor,
    init_critic,
    message_head,
    policy_head,
    policy_logits,
    utility_head,
)
from .errors import ConfigError
from .nn import (
    ParameterStore,
    Tensor,
    Trace,
    adam_update,
    backward,
    clip_grad_norm,
    concat,
    constants,
    dense,
    matmul,
    mean,
    relu,
    square,
    tanh,
)
from .scheduler import sample_gumbel

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    mode: str = DSMS
    bandwidth: int = 64
    episodes: int = 2000
    gamma: float = 0.95
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    tau: float = 0.01
    batch_size: int = 32
    unroll: int = 8
    buffer_capacity: int = 100_000
    sigma: float = 0.1
    sigma_final: float = 0.0
    gumbel_temperature: float = 1.0
    warmup_episodes: int = 20
    update_every: int = 5
    eval_every: int = 100
    eval_episodes: int = 10
    final_eval_episodes: int = 200
    message_size: int = 32
    hidden: int = 64
    head_hidden: int = 64
    critic_state: bool = True
    # neither scenario has terminal states: the episode end is a time limit, so bootstrap through it
    bootstrap_time_limit: bool = True
    action_reg: float = 1e-3
    grad_clip: float = 0.5

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("lr_actor", "lr_critic", "tau", "gumbel_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("batch_size", "unroll", "buffer_capacity", "update_every", "eval_every", "message_size", "hidden", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.action_reg < 0 or self.grad_clip < 0:
            raise ConfigError("action_reg and grad_clip must be >= 0 (0 disables)")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")

    @classmethod
    def field_types(cls) -> dict[str, str]:
        return {f.name: f.type for f in fields(cls)}


# ---------------------------------------------------------------------------
# storage


@dataclass
class Transition:
    observation: np.ndarray
    hidden: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    weight: np.ndarray
    message: np.ndarray
    next_observation: np.ndarray
    done: bool


@dataclass
class Episode:
    """Arrays indexed by step. ``*_in`` entries at t are the recurrent inputs entering step t (length T+1)."""

    obs: np.ndarray  # (T+1, n, d)
    actions: np.ndarray  # (T, n, 2)
    rewards: np.ndarray  # (T, n)
    dones: np.ndarray  # (T,)
    noise: np.ndarray  # (T+1, n) Gumbel noise used at each step
    h_in: np.ndarray  # (T+1, n, H)
    c_in: np.ndarray  # (T+1, n, H)
    action_in: np.ndarray  # (T+1, n, 2)
    message_in: np.ndarray  # (T+1, n, p)
    weight_in: np.ndarray  # (T+1, n)
    states: np.ndarray  # (T+1, G) global environment state, read by the critic only

    def __len__(self) -> int:
        return self.actions.shape[0]

    def transitions(self) -> Iterator[Transition]:
        for t in range(len(self)):
            yield Transition(
                self.obs[t], self.h_in[t + 1], self.actions[t], self.rewards[t],
                self.weight_in[t + 1], self.message_in[t + 1], self.obs[t + 1], bool(self.dones[t]),
            )


@dataclass
class Batch:
    obs: np.ndarray  # (S, L+1, n, d)
    states: np.ndarray  # (S, L+1, G)
    action_in: np.ndarray  # (S, L+1, n, 2)
    noise: np.ndarray  # (S, L+1, n)
    actions: np.ndarray  # (S, L, n, 2)
    weights: np.ndarray  # (S, L, n) weights used when acting
    rewards: np.ndarray  # (S, L, n)
    dones: np.ndarray  # (S, L)
    h0: np.ndarray
    c0: np.ndarray
    message0: np.ndarray
    weight0: np.ndarray

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def length(self) -> int:
        return self.actions.shape[1]


class ReplayBuffer:
    """FIFO store of whole episodes, bounded by total transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.episodes: deque[Episode] = deque()
        self.transitions = 0

    def __len__(self) -> int:
        return self.transitions

    def add(self, ep: Episode) -> None:
        self.episodes.append(ep)
        self.transitions += len(ep)
        while self.transitions > self.capacity and len(self.episodes) > 1:
            self.transitions -= len(self.episodes.popleft())

    def sample(self, rng: np.random.Generator, batch_size: int, length: int) -> Batch:
        eligible = [ep for ep in self.episodes if len(ep) >= length]
        if not eligible:
            raise ValueError("buffer holds no episode long enough for the requested unroll")
        picks = rng.integers(len(eligible), size=batch_size)
        segs = []
        for k in picks:
            ep = eligible[k]
            s = int(rng.integers(len(ep) - length + 1))
            segs.append((ep, s))

        def stack(getter):
            return np.stack([getter(ep, s) for ep, s in segs])

        L = length
        return Batch(
            obs=stack(lambda e, s: e.obs[s : s + L + 1]),
            states=stack(lambda e, s: e.states[s : s + L + 1]),
            action_in=stack(lambda e, s: e.action_in[s : s + L + 1]),
            noise=stack(lambda e, s: e.noise[s : s + L + 1]),
            actions=stack(lambda e, s: e.actions[s : s + L]),
            weights=stack(lambda e, s: e.weight_in[s + 1 : s + L + 1]),
            rewards=stack(lambda e, s: e.rewards[s : s + L]),
            dones=stack(lambda e, s: e.dones[s : s + L]).astype(np.float64),
            h0=stack(lambda e, s: e.h_in[s]),
            c0=stack(lambda e, s: e.c_in[s]),
            message0=stack(lambda e, s: e.message_in[s]),
            weight0=stack(lambda e, s: e.weight_in[s]),
        )


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeMetrics:
    total_return: float
    captures: float = 0.0
    avg_dist: float = 0.0
    collision_rate: float = 0.0
    mean_budget: list[float] = field(default_factory=list)


def _episode_return(scenario: str, rewards: np.ndarray) -> float:
    # predator-prey agents share one reward: report the global return, not n copies of it
    if scenario == envlib.PREDATOR_PREY:
        return float(rewards[:, 0].sum())
    return float(rewards.sum())


def collect_episode(
    scenario: envlib.ScenarioConfig,
    actor: ParameterStore,
    net: NetworkConfig,
    comm: CommSpec,
    mode: str,
    seed: int,
    sigma: float = 0.0,
    record: bool = False,
    episode_index: int = 0,
) -> tuple[Episode, EpisodeMetrics, list[dict]]:
    """Run one episode through the full communication round at every step.

    ``mode`` is ``"train"`` (Gumbel noise + Gaussian action noise) or
    ``"eval"`` (both disabled). With ``record`` each step yields a dump row.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    rng = np.random.default_rng([seed, 7])
    state = envlib.reset(scenario, seed)
    P = constants(actor)
    n, T, p, H = scenario.n_agents, scenario.episode_length, net.message_size, net.hidden

    obs = np.zeros((T + 1, n, net.obs_dim))
    states = np.zeros((T + 1, envlib.global_state_size(scenario)))
    actions = np.zeros((T, n, 2))
    rewards = np.zeros((T, n))
    dones = np.zeros(T)
    noise = np.zeros((T + 1, n))
    h_in = np.zeros((T + 1, n, H))
    c_in = np.zeros((T + 1, n, H))
    action_in = np.zeros((T + 1, n, 2))
    message_in = np.zeros((T + 1, n, p))
    weight_in = np.zeros((T + 1, n))
    weight_in[0] = 1.0 / n

    caps = 0
    collision_steps = 0
    dist_sum = 0.0
    budget_sum = np.zeros(n)
    rows = []
    h, c = Tensor(h_in[0]), Tensor(c_in[0])
    for t in range(T):
        obs[t] = envlib.observe_all(state)
        states[t] = envlib.global_state(state)
        if train and comm.mode == DSMS:
            noise[t] = sample_gumbel(rng, n)
        x = history_input(obs[t], action_in[t], message_in[t], weight_in[t], n)
        h, c = encode_history(h, c, x, P)
        u = utility_head(h, P).value
        w = comm.weights(u, noise[t] if train else None)
        b = comm.budgets(w)
        mo = message_head(h, P).value
        rnd = exchange_wire(mo, b, comm)
        a = policy_head(h, rnd.aggregated, P).value
        if train and sigma > 0:
            a = np.clip(a + sigma * rng.standard_normal(a.shape), -1.0, 1.0)
        state, r, done = envlib.step(state, a)

        actions[t], rewards[t], dones[t] = a, r, float(done)
        h_in[t + 1], c_in[t + 1] = h.value, c.value
        action_in[t + 1], message_in[t + 1], weight_in[t + 1] = a, rnd.aggregated, w
        budget_sum += b
        if scenario.name == envlib.PREDATOR_PREY:
            caps += envlib.captures(state)
        else:
            dist_sum += envlib.landmark_agent_distances(state).min(axis=1).mean()
            collision_steps += bool(envlib.agent_collisions(state).any())
        if record:
            row = {
                "episode": episode_index,
                "step": t + 1,
                "utilities": u.tolist(),
                "weights": w.tolist(),
                "budgets": b.tolist(),
                "sent": rnd.sent.tolist(),
                "frame_octets": len(rnd.frame),
                "recon_mse": rnd.reconstruction_mse.tolist(),
                "rewards": r.tolist(),
            }
            if scenario.name == envlib.PREDATOR_PREY:
                row["prey_distances"] = envlib.prey_distances(state).tolist()
            rows.append(row)
    obs[T] = envlib.observe_all(state)
    states[T] = envlib.global_state(state)
    if train and comm.mode == DSMS:
        noise[T] = sample_gumbel(rng, n)

    ep = Episode(obs, actions, rewards, dones, noise, h_in, c_in, action_in, message_in, weight_in, states)
    metrics = EpisodeMetrics(
        total_return=_episode_return(scenario.name, rewards),
        captures=float(caps),
        avg_dist=dist_sum / T if scenario.name == envlib.COOP_NAV else 0.0,
        collision_rate=100.0 * collision_steps / T if scenario.name == envlib.COOP_NAV else 0.0,
        mean_budget=(budget_sum / T).tolist(),
    )
    return ep, metrics, rows


# ---------------------------------------------------------------------------
# differentiable replay


@dataclass
class StepOutputs:
    h: Tensor
    w: Tensor
    a: Tensor
    z: Tensor  # policy pre-activation


def unroll(P, net: NetworkConfig, comm: CommSpec, batch: Batch, steps: int | None = None) -> list[StepOutputs]:
    """Replay the round pipeline over a batch of segments with the stored Gumbel noise."""
    n = net.n_agents
    steps = batch.obs.shape[1] if steps is None else steps
    h, c = Tensor(batch.h0), Tensor(batch.c0)
    m_prev, w_prev = Tensor(batch.message0), Tensor(batch.weight0)
    outs = []
    for t in range(steps):
        x = history_input(batch.obs[:, t], batch.action_in[:, t], m_prev, w_prev, n)
        h, c = encode_history(h, c, x, P)
        u = utility_head(h, P)
        w = comm.weights(u, batch.noise[:, t])
        b = comm.budgets(w.value)
        m = exchange_tensor(message_head(h, P), b, comm)
        z = policy_logits(h, m, P)
        a = tanh(z)
        outs.append(StepOutputs(h, w, a, z))
        m_prev, w_prev = m, w
    return outs


def critic_q(P, h, a, w, n: int, state=None) -> Tensor:
    """Per-agent action values Q_i(s, h_1..h_n, a_1..a_n, w, id_i) over arbitrary leading dims.

    ``state`` is the optional global environment state (training only).
    """
    h, a, w = (x if isinstance(x, Tensor) else Tensor(x) for x in (h, a, w))
    lead = w.shape[:-1]
    parts = [h.reshape(lead + (-1,)), a.reshape(lead + (-1,)), w]
    if state is not None:
        parts.insert(0, state if isinstance(state, Tensor) else Tensor(state))
    joint = concat(parts, axis=-1)
    D = joint.shape[-1]
    W0 = P["q.W0"]
    if W0.shape[0] != D + n:
        raise ValueError(f"critic expects {W0.shape[0] - n} joint inputs, got {D}")
    shared = matmul(joint, W0[:D])
    per_agent = matmul(np.eye(n), W0[D:])
    z = relu(shared.reshape(lead + (1, shared.shape[-1])) + per_agent + P["q.b0"])
    z = dense(z, P["q.W1"], P["q.b1"], "relu")
    q = dense(z, P["q.W2"], P["q.b2"], "linear")
    return q.reshape(q.shape[:-1])


def _stack(tensors: list[Tensor], axis: int = 1) -> Tensor:
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def soft_update(target: ParameterStore, online: ParameterStore, rate: float) -> ParameterStore:
    for name, value in online.params.items():
        tgt = target.params[name]
        if tgt.shape != value.shape:
            raise ValueError(f"layout mismatch for {name}")
        tgt *= 1.0 - rate
        tgt += rate * value
    return target


def episode_seed(run_seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([run_seed, *path]).generate_state(1)[0])


class Trainer:
    def __init__(self, scenario: envlib.ScenarioConfig, config: TrainerConfig, seed: int):
        config.validate()
        self.scenario = scenario
        self.config = config
        self.seed = seed
        n = scenario.n_agents
        self.net = NetworkConfig(
            envlib.observation_size(scenario), n, config.message_size, config.hidden, config.head_hidden,
            envlib.global_state_size(scenario) if config.critic_state else 0,
        )
        self.comm = CommSpec(config.mode, config.bandwidth, n, config.message_size, config.gumbel_temperature)
        rng = np.random.default_rng([seed, 0])
        self.actor = init_actor(self.net, rng)
        self.critic = init_critic(self.net, rng)
        assert self.critic["q.W0"].shape[0] == self.net.critic_input_dim
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.episode = 0
        self.updates = 0
        self._updates_due = 0.0

    # -- collection -------------------------------------------------------

    def sigma_at(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.config.episodes))
        return (1.0 - frac) * self.config.sigma + frac * self.config.sigma_final

    def collect(self, mode: str, seed: int, record: bool = False, episode_index: int = 0, sigma: float = 0.0):
        return collect_episode(self.scenario, self.actor, self.net, self.comm, mode, seed, sigma, record, episode_index)

    def evaluate(self, seeds, record: bool = False) -> tuple[list[EpisodeMetrics], list[dict]]:
        metrics, rows = [], []
        for k, s in enumerate(seeds):
            _, m, r = self.collect("eval", s, record=record, episode_index=k)
            metrics.append(m)
            rows.extend(r)
        return metrics, rows

    def train_episode(self) -> EpisodeMetrics:
        e = self.episode
        ep, metrics, _ = self.collect("train", episode_seed(self.seed, 1, e), sigma=self.sigma_at(e))
        self.buffer.add(ep)
        self.episode += 1
        if self.episode > self.config.warmup_episodes and len(ep) >= self.config.unroll:
            self._updates_due += len(ep) / self.config.update_every
            rng = np.random.default_rng([self.seed, 2, e])
            while self._updates_due >= 1.0:
                self._updates_due -= 1.0
                self.update(self.buffer.sample(rng, self.config.batch_size, self.config.unroll))
        return metrics

    # -- learning ---------------------------------------------------------

    def td_targets(self, batch: Batch) -> np.ndarray:
        cfg, n = self.config, self.net.n_agents
        tgt = unroll(constants(self.target_actor), self.net, self.comm, batch)[1:]
        h = np.stack([o.h.value for o in tgt], axis=1)
        a = np.stack([o.a.value for o in tgt], axis=1)
        w = np.stack([o.w.value for o in tgt], axis=1)
        q_next = critic_q(constants(self.target_critic), h, a, w, n, self._state(batch, 1, None)).value
        cont = 1.0 if cfg.bootstrap_time_limit else (1.0 - batch.dones)[..., None]
        return batch.rewards + cfg.gamma * cont * q_next

    def critic_loss(self, P, batch: Batch, online: list[StepOutputs] | None = None) -> Tensor:
        """Mean squared TD error of the critic parameters ``P`` on a batch."""
        if batch.size == 0:
            raise ValueError("empty batch")
        n, L = self.net.n_agents, batch.length
        if online is None:
            online = unroll(constants(self.actor), self.net, self.comm, batch, steps=L)
        h = np.stack([o.h.value for o in online[:L]], axis=1)
        q = critic_q(P, h, batch.actions, batch.weights, n, self._state(batch, 0, L))
        return square(q - self.td_targets(batch)).mean()

    def critic_update(self, batch: Batch, online: list[StepOutputs] | None = None) -> float:
        tr = Trace()
        loss = self.critic_loss(tr.bind(self.critic), batch, online)
        adam_update(self.critic, self._clip(backward(tr, loss)), self.config.lr_critic)
        return float(loss.value)

    def actor_objective(self, P, batch: Batch, critic: ParameterStore | None = None, online=None) -> Tensor:
        """Mean critic value of the actions the actor parameters ``P`` would take on the batch."""
        if batch.size == 0:
            raise ValueError("empty batch")
        n, L = self.net.n_agents, batch.length
        if online is None:
            online = unroll(P, self.net, self.comm, batch, steps=L)
        h = np.stack([o.h.value for o in online[:L]], axis=1)
        a = _stack([o.a for o in online[:L]])
        w = _stack([o.w for o in online[:L]])
        return critic_q(constants(critic or self.critic), h, a, w, n, self._state(batch, 0, L)).mean()

    def _state(self, batch: Batch, start: int, stop: int | None):
        return batch.states[:, start:stop] if self.net.state_dim else None

    def actor_update(self, batch: Batch) -> float:
        if batch.size == 0:
            raise ValueError("empty batch")
        tr = Trace()
        P = tr.bind(self.actor)
        online = unroll(P, self.net, self.comm, batch, steps=batch.length)
        objective = self.actor_objective(P, batch, online=online)
        adam_update(self.actor, self._clip(backward(tr, self.actor_loss(objective, online))), self.config.lr_actor)
        return float(objective.value)

    def actor_loss(self, objective: Tensor, online: list[StepOutputs]) -> Tensor:
        """Negated objective plus a small penalty on the policy pre-activations (keeps tanh out of saturation)."""
        loss = -objective
        if self.config.action_reg > 0:
            loss = loss + self.config.action_reg * mean(square(_stack([o.z for o in online])))
        return loss

    def _clip(self, grads):
        return clip_grad_norm(grads, self.config.grad_clip) if self.config.grad_clip > 0 else grads

    def update(self, batch: Batch) -> tuple[float, float]:
        tr = Trace()
        P = tr.bind(self.actor)
        online = unroll(P, self.net, self.comm, batch, steps=batch.length)
        closs = self.critic_update(batch, online)
        objective = self.actor_objective(P, batch, online=online)
        adam_update(self.actor, self._clip(backward(tr, self.actor_loss(objective, online))), self.config.lr_actor)
        soft_update(self.target_actor, self.actor, self.config.tau)
        soft_update(self.target_critic, self.critic, self.config.tau)
        self.updates += 1
        return closs, float(objective.value)

    # -- persistence ------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.actor.state("actor"))
        out.update(self.critic.state("critic"))
        out.update(self.target_actor.state("target_actor"))
        out.update(self.target_critic.state("target_critic"))
        out["trainer/episode"] = np.array([float(self.episode)])
        out["trainer/updates"] = np.array([float(self.updates)])
        out["trainer/updates_due"] = np.array([self._updates_due])
        return out

    def load_state(self, tensors) -> None:
        self.actor.load_state(tensors, "actor")
        self.critic.load_state(tensors, "critic")
        self.target_actor.load_state(tensors, "target_actor")
        self.target_critic.load_state(tensors, "target_critic")
        self.episode = int(tensors["trainer/episode"][0])
        self.updates = int(tensors["trainer/updates"][0])
        self._updates_due = float(tensors["trainer/updates_due"][0])


def config_dict(cfg: TrainerConfig) -> dict:
    return asdict(cfg)
