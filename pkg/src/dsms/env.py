"""Partially observable 2-D particle worlds: Predator-Prey and Cooperative Navigation.

The world is the square [-1, 1]^2. Mobile entities follow a damped double
integrator and are clamped to the bounds. Agents see other entities only
inside an axis-aligned square window centred on themselves (closed: an entity
on the edge is visible). In Predator-Prey, entities inside a forest disc are
hidden from observers outside that forest; the prey is scripted and sees the
true state.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidActionError

PREDATOR_PREY = "predator_prey"
COOP_NAV = "coop_nav"
SCENARIOS = (PREDATOR_PREY, COOP_NAV)

AGENT, PREY, LANDMARK, FOREST = "agent", "prey", "landmark", "forest"
MOVING = (AGENT, PREY)

CAPTURE_BONUS = 5.0
COLLISION_PENALTY = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n_agents: int
    episode_length: int
    world_half: float = 1.0
    agent_radius: float = 0.05
    prey_radius: float = 0.05
    landmark_radius: float = 0.05
    obstacle_radius: float = 0.2
    forest_radius: float = 0.3
    n_landmarks: int = 0
    n_forests: int = 0
    window_side: float = 1.0
    leader_window_side: float = 1.0
    dt: float = 0.1
    damping: float = 0.25
    accel_scale: float = 5.0

    def window_for(self, agent_id: int) -> float:
        if self.name == COOP_NAV and agent_id == 0:
            return self.leader_window_side
        return self.window_side


def default_config(scenario: str) -> ScenarioConfig:
    if scenario == PREDATOR_PREY:
        return ScenarioConfig(PREDATOR_PREY, n_agents=4, episode_length=50, n_landmarks=1, n_forests=2)
    if scenario == COOP_NAV:
        return ScenarioConfig(COOP_NAV, n_agents=3, episode_length=20, n_landmarks=3, leader_window_side=math.sqrt(2.0))
    raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def load_scenario_config(path, scenario: str | None = None) -> ScenarioConfig:
    """Read a ``[scenario]`` section of key = value pairs over the scenario defaults."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read scenario config {path}")
    if "scenario" not in parser:
        raise ConfigError(f"{path}: missing [scenario] section")
    section = parser["scenario"]
    name = scenario or section.get("name")
    if name is None:
        raise ConfigError(f"{path}: scenario name not given")
    cfg = default_config(name)
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    updates = {}
    for key, raw in section.items():
        if key == "name":
            continue
        if key not in types:
            raise ConfigError(f"{path}: unknown scenario key {key!r}")
        updates[key] = int(raw) if types[key] == "int" else float(raw)
    return replace(cfg, **updates)


def save_scenario_config(cfg: ScenarioConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["scenario"] = {f.name: repr(getattr(cfg, f.name)) if f.type == "float" else str(getattr(cfg, f.name)) for f in fields(cfg)}
    with open(path, "w") as fh:
        parser.write(fh)


@dataclass(frozen=True, eq=False)
class WorldState:
    config: ScenarioConfig
    positions: np.ndarray
    velocities: np.ndarray
    kinds: tuple[str, ...]
    radii: np.ndarray
    step: int = 0

    @property
    def n_agents(self) -> int:
        return self.config.n_agents

    def indices(self, kind: str) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == kind], dtype=np.int64)

    @property
    def done(self) -> bool:
        return self.step >= self.config.episode_length

    def same_as(self, other: "WorldState") -> bool:
        return (
            self.kinds == other.kinds
            and self.step == other.step
            and self.positions.tobytes() == other.positions.tobytes()
            and self.velocities.tobytes() == other.velocities.tobytes()
        )

    def to_record(self) -> dict:
        return {
            "step": self.step,
            "kinds": list(self.kinds),
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
        }


@dataclass(frozen=True, eq=False)
class AgentObservation:
    own_position: np.ndarray
    own_velocity: np.ndarray
    relative_positions: np.ndarray
    velocities: np.ndarray
    visible: np.ndarray
    moving: np.ndarray = field(repr=False)

    def vector(self) -> np.ndarray:
        """Flat encoder input: masked entries are 0 and paired with a 0 visibility bit."""
        parts = [self.own_position, self.own_velocity]
        for j in range(len(self.visible)):
            vis = float(self.visible[j])
            parts.append(self.relative_positions[j] * vis)
            if self.moving[j]:
                parts.append(self.velocities[j] * vis)
            parts.append([vis])
        return np.concatenate(parts)


def observation_size(cfg: ScenarioConfig) -> int:
    kinds = _kinds(cfg)
    others = kinds[1:]
    return 4 + sum(5 if k in MOVING else 3 for k in others)


def _kinds(cfg: ScenarioConfig) -> tuple[str, ...]:
    if cfg.name == PREDATOR_PREY:
        return (AGENT,) * cfg.n_agents + (PREY,) + (LANDMARK,) * cfg.n_landmarks + (FOREST,) * cfg.n_forests
    return (AGENT,) * cfg.n_agents + (LANDMARK,) * cfg.n_landmarks


def _radii(cfg: ScenarioConfig, kinds) -> np.ndarray:
    table = {
        AGENT: cfg.agent_radius,
        PREY: cfg.prey_radius,
        LANDMARK: cfg.obstacle_radius if cfg.name == PREDATOR_PREY else cfg.landmark_radius,
        FOREST: cfg.forest_radius,
    }
    return np.array([table[k] for k in kinds])


def reset(scenario, seed: int) -> WorldState:
    cfg = scenario if isinstance(scenario, ScenarioConfig) else default_config(scenario)
    rng = np.random.default_rng(seed)
    kinds = _kinds(cfg)
    h = cfg.world_half
    positions = rng.uniform(-h, h, size=(len(kinds), 2))
    return WorldState(cfg, positions, np.zeros_like(positions), kinds, _radii(cfg, kinds), 0)


def _integrate(cfg: ScenarioConfig, pos, vel, accel):
    v = (1.0 - cfg.damping) * vel + accel * cfg.dt * cfg.accel_scale
    x = np.clip(pos + v * cfg.dt, -cfg.world_half, cfg.world_half)
    return x, v


def step(state: WorldState, actions) -> tuple[WorldState, np.ndarray, bool]:
    cfg = state.config
    if state.done:
        raise RuntimeError("step() called on a terminal state")
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != (cfg.n_agents, 2):
        raise InvalidActionError(f"expected actions of shape {(cfg.n_agents, 2)}, got {actions.shape}")
    if not np.isfinite(actions).all():
        raise InvalidActionError("non-finite action")
    accel = np.zeros_like(state.positions)
    accel[: cfg.n_agents] = np.clip(actions, -1.0, 1.0)
    if cfg.name == PREDATOR_PREY:
        accel[state.indices(PREY)[0]] = prey_policy(state)
    moving = np.array([k in MOVING for k in state.kinds])
    pos, vel = state.positions.copy(), state.velocities.copy()
    pos[moving], vel[moving] = _integrate(cfg, pos[moving], vel[moving], accel[moving])
    nxt = replace(state, positions=pos, velocities=vel, step=state.step + 1)
    rewards = predator_prey_rewards(nxt) if cfg.name == PREDATOR_PREY else coop_nav_rewards(nxt)
    return nxt, rewards, nxt.done


def captures(state: WorldState) -> int:
    prey = state.indices(PREY)[0]
    n = state.n_agents
    d = np.linalg.norm(state.positions[:n] - state.positions[prey], axis=1)
    return int(np.sum(d < state.radii[:n] + state.radii[prey]))


def prey_distances(state: WorldState) -> np.ndarray:
    prey = state.indices(PREY)[0]
    return np.linalg.norm(state.positions[: state.n_agents] - state.positions[prey], axis=1)


def predator_prey_rewards(state: WorldState) -> np.ndarray:
    shared = CAPTURE_BONUS * captures(state) - prey_distances(state).sum()
    return np.full(state.n_agents, shared)


def agent_collisions(state: WorldState) -> np.ndarray:
    """Boolean (n, n) matrix of overlapping agent pairs (diagonal False)."""
    n = state.n_agents
    p = state.positions[:n]
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    r = state.radii[:n]
    hit = d < r[:, None] + r[None, :]
    np.fill_diagonal(hit, False)
    return hit


def landmark_agent_distances(state: WorldState) -> np.ndarray:
    """(n_landmarks, n_agents) distance matrix."""
    lm = state.positions[state.indices(LANDMARK)]
    ag = state.positions[: state.n_agents]
    return np.linalg.norm(lm[:, None, :] - ag[None, :, :], axis=-1)


def coop_nav_rewards(state: WorldState) -> np.ndarray:
    d = landmark_agent_distances(state)
    coverage = d.min(axis=1).sum()
    own = d.min(axis=0)
    hits = agent_collisions(state).sum(axis=1)
    return -own - coverage - COLLISION_PENALTY * hits


def observe(state: WorldState, agent_id: int) -> AgentObservation:
    cfg = state.config
    if not 0 <= agent_id < cfg.n_agents:
        raise IndexError(f"agent {agent_id} out of range")
    others = [j for j in range(len(state.kinds)) if j != agent_id]
    me = state.positions[agent_id]
    rel = state.positions[others] - me
    half = cfg.window_for(agent_id) / 2.0
    visible = (np.abs(rel) <= half).all(axis=1)
    if cfg.n_forests:
        forests = state.indices(FOREST)
        fpos = state.positions[forests]
        frad = state.radii[forests]
        observer_in = np.linalg.norm(fpos - me, axis=1) < frad
        for slot, j in enumerate(others):
            if state.kinds[j] == FOREST:
                continue
            inside = np.linalg.norm(fpos - state.positions[j], axis=1) < frad
            if (inside & ~observer_in).any():
                visible[slot] = False
    moving = np.array([state.kinds[j] in MOVING for j in others])
    return AgentObservation(
        own_position=me.copy(),
        own_velocity=state.velocities[agent_id].copy(),
        relative_positions=rel,
        velocities=state.velocities[others],
        visible=visible,
        moving=moving,
    )


def global_state_size(cfg: ScenarioConfig) -> int:
    return 4 * len(_kinds(cfg))


def global_state(state: WorldState) -> np.ndarray:
    """Positions then velocities of every entity, flattened (full information, for centralized training)."""
    return np.concatenate([state.positions.ravel(), state.velocities.ravel()])


def observe_all(state: WorldState) -> np.ndarray:
    return np.stack([observe(state, i).vector() for i in range(state.n_agents)])


def prey_policy(state: WorldState) -> np.ndarray:
    """Flee the nearest predator at unit magnitude, deflecting around the obstacle."""
    preds = state.positions[: state.n_agents]
    if len(preds) == 0:
        return np.zeros(2)
    prey = state.positions[state.indices(PREY)[0]]
    away = prey - preds
    d = np.linalg.norm(away, axis=1)
    nearest = np.flatnonzero(d <= d.min() * (1 + 1e-12) + 1e-15)
    safe = np.where(d[nearest, None] > 0, away[nearest] / np.maximum(d[nearest, None], 1e-300), 0.0)
    direction = safe.sum(axis=0)
    norm = np.linalg.norm(direction)
    if norm < 1e-9:
        # tied threats cancel: move perpendicular, toward the side with more room
        ref = safe[0] if np.linalg.norm(safe[0]) > 0 else np.array([0.0, 1.0])
        perp = np.array([ref[1], -ref[0]])
        h = state.config.world_half
        room = []
        for s in (1.0, -1.0):
            v = s * perp
            t = [((h if c > 0 else -h) - x) / c for c, x in zip(v, prey) if abs(c) > 1e-12]
            room.append(min(t) if t else math.inf)
        direction = perp if room[0] >= room[1] else -perp
        norm = np.linalg.norm(direction)
    action = direction / norm
    for j in state.indices(LANDMARK):
        to_obs = state.positions[j] - prey
        dist = np.linalg.norm(to_obs)
        margin = state.radii[j] + state.radii[state.indices(PREY)[0]] + 0.1
        if 0 < dist < margin:
            nrm = to_obs / dist
            into = action @ nrm
            if into > 0:
                action = action - 2.0 * into * nrm
    return action / max(np.linalg.norm(action), 1e-12)


def write_trajectory(states, path, rewards=None) -> None:
    """Line-delimited JSON, one record per state."""
    with open(path, "w") as fh:
        for t, s in enumerate(states):
            rec = s.to_record()
            if rewards is not None and t > 0:
                rec["rewards"] = np.asarray(rewards[t - 1]).tolist()
            fh.write(json.dumps(rec) + "\n")


def read_trajectory(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
