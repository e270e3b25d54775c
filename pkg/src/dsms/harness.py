"""Experiment runner: resumable multi-seed training, evaluation, dumps, analysis and sweeps.

Output layout of a run directory::

    run.ini                       resolved configuration
    seed_<s>/checkpoint.ckpt      named-tensor checkpoint (latest window)
    seed_<s>/metrics.csv          one MetricsRecord per evaluation window + final
    seed_<s>/final_dump.jsonl     per-step records of the final evaluation
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import codec
from . import env as envlib
from .agent import DSMS, FULL_COMM, MODES, NO_COMM, CommSpec
from .errors import ConfigError
from .nn import load_checkpoint, save_checkpoint
from .trainer import EpisodeMetrics, Trainer, TrainerConfig, episode_seed

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PP_ABLATION_BANDWIDTHS = (24, 40, 72, 104)
CN_ABLATION_BANDWIDTHS = (22, 38, 68)
PP_BLOCKS = ((1, 4), (5, 15), (16, 20), (21, 24), (25, 35), (36, 46), (47, 50))
CN_BLOCKS = ((1, 5), (6, 10), (11, 15), (16, 20))


@dataclass
class RunConfig:
    scenario: str
    mode: str
    bandwidth: int
    seeds: list[int]
    episodes: int
    out: Path
    trainer: dict = field(default_factory=dict)
    scenario_overrides: dict = field(default_factory=dict)

    def scenario_config(self) -> envlib.ScenarioConfig:
        cfg = envlib.default_config(self.scenario)
        return replace(cfg, **self.scenario_overrides) if self.scenario_overrides else cfg

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(mode=self.mode, bandwidth=self.bandwidth, episodes=self.episodes, **self.trainer)

    def normalized(self) -> "RunConfig":
        """Enforce the mode/bandwidth coupling and validate everything."""
        if self.scenario not in envlib.SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {envlib.SCENARIOS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        bad = (set(self.trainer) - set(TrainerConfig.field_types())) | ({"mode", "bandwidth", "episodes"} & set(self.trainer))
        if bad:
            raise ConfigError(f"invalid trainer overrides: {sorted(bad)}")
        n = self.scenario_config().n_agents
        p = self.trainer.get("message_size", codec.DEFAULT_MESSAGE_SIZE)
        bandwidth = self.bandwidth
        if self.mode == NO_COMM:
            bandwidth = 0
        elif self.mode == FULL_COMM:
            bandwidth = n * codec.full_budget(p)
        if bandwidth != self.bandwidth:
            log.info("mode %s forces bandwidth %d (was %s)", self.mode, bandwidth, self.bandwidth)
        cfg = replace(self, bandwidth=bandwidth, out=Path(self.out), seeds=[int(s) for s in self.seeds])
        try:
            cfg.trainer_config().validate()
            CommSpec(cfg.mode, cfg.bandwidth, n, p)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg


def _coerce(value: str, type_name: str):
    try:
        return _convert(value, type_name)
    except ValueError as exc:
        raise ConfigError(f"bad {type_name} value {value!r}") from exc


def _convert(value: str, type_name: str):
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    if type_name == "bool":
        if isinstance(value, bool):
            return value
        key = str(value).lower()
        if key not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError(f"not a boolean: {value!r}")
        return configparser.ConfigParser.BOOLEAN_STATES[key]
    return value


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Read ``[run]``, ``[trainer]`` and ``[scenario]`` sections; ``overrides`` (CLI flags) win."""
    parser = configparser.ConfigParser()
    if path is not None and not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    run = dict(parser["run"]) if "run" in parser else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            run[key] = value
    missing = [k for k in ("scenario", "mode", "bandwidth", "seeds", "episodes", "out") if k not in run]
    if missing:
        raise ConfigError(f"missing required settings: {', '.join(missing)}")
    seeds = run["seeds"]
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.replace(",", " ").split()]
    tt = TrainerConfig.field_types()
    trainer = {}
    if "trainer" in parser:
        for key, value in parser["trainer"].items():
            if key not in tt:
                raise ConfigError(f"unknown trainer key {key!r}")
            trainer[key] = _coerce(value, tt[key])
    scen = {}
    if "scenario" in parser:
        st = {f.name: f.type for f in fields(envlib.ScenarioConfig)}
        for key, value in parser["scenario"].items():
            if key not in st or key == "name":
                raise ConfigError(f"unknown scenario key {key!r}")
            scen[key] = _coerce(value, st[key])
    return RunConfig(
        scenario=str(run["scenario"]),
        mode=str(run["mode"]),
        bandwidth=int(run["bandwidth"]),
        seeds=list(seeds),
        episodes=int(run["episodes"]),
        out=Path(run["out"]),
        trainer=trainer,
        scenario_overrides=scen,
    ).normalized()


def save_run_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["run"] = {
        "scenario": cfg.scenario,
        "mode": cfg.mode,
        "bandwidth": str(cfg.bandwidth),
        "seeds": " ".join(map(str, cfg.seeds)),
        "episodes": str(cfg.episodes),
        "out": str(cfg.out),
    }
    parser["trainer"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in cfg.trainer.items()}
    parser["scenario"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in cfg.scenario_overrides.items()}
    with open(path, "w") as fh:
        parser.write(fh)


# ---------------------------------------------------------------------------
# metrics CSV


@dataclass
class MetricsRecord:
    seed: int
    episode: int
    kind: str  # "window" or "final"
    episodes_evaluated: int
    mean_return: float
    return_std: float
    captures: float
    avg_dist: float
    collision_rate: float
    mean_budget: list[float]
    updates: int
    schema_version: int = SCHEMA_VERSION


CSV_FIELDS = [f.name for f in fields(MetricsRecord)]


def summarize(seed: int, episode: int, kind: str, metrics: Sequence[EpisodeMetrics], updates: int) -> MetricsRecord:
    returns = np.array([m.total_return for m in metrics])
    return MetricsRecord(
        seed=seed,
        episode=episode,
        kind=kind,
        episodes_evaluated=len(metrics),
        mean_return=float(returns.mean()),
        return_std=float(returns.std(ddof=1)) if len(returns) > 1 else 0.0,
        captures=float(np.mean([m.captures for m in metrics])),
        avg_dist=float(np.mean([m.avg_dist for m in metrics])),
        collision_rate=float(np.mean([m.collision_rate for m in metrics])),
        mean_budget=np.mean([m.mean_budget for m in metrics], axis=0).tolist(),
        updates=updates,
    )


def _format(value) -> str:
    if isinstance(value, list):
        return ";".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(path, records: Iterable[MetricsRecord], append: bool = False) -> None:
    path = Path(path)
    new = not append or not path.exists()
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(CSV_FIELDS)
        for rec in records:
            writer.writerow([_format(getattr(rec, name)) for name in CSV_FIELDS])


def read_metrics(path) -> list[MetricsRecord]:
    types = {f.name: f.type for f in fields(MetricsRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for name, raw in row.items():
                t = types[name]
                if t == "int":
                    kw[name] = int(raw)
                elif t == "float":
                    kw[name] = float(raw)
                elif t == "list[float]":
                    kw[name] = [float(v) for v in raw.split(";")] if raw else []
                else:
                    kw[name] = raw
            if kw["schema_version"] != SCHEMA_VERSION:
                raise ConfigError(f"{path}: unsupported metrics schema {kw['schema_version']}")
            out.append(MetricsRecord(**kw))
    return out


def write_dump(path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_dump(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# running


def window_eval_seeds(seed: int, count: int) -> list[int]:
    return [episode_seed(seed, 3, k) for k in range(count)]


def final_eval_seeds(seed: int, count: int) -> list[int]:
    return [episode_seed(seed, 4, k) for k in range(count)]


def seed_dir(out: Path, seed: int) -> Path:
    return Path(out) / f"seed_{seed}"


def _is_finished(metrics_path: Path) -> bool:
    return metrics_path.exists() and any(r.kind == "final" for r in read_metrics(metrics_path))


def train_seed(cfg: RunConfig, seed: int, on_window: Callable[[MetricsRecord], None] | None = None) -> list[MetricsRecord]:
    """Train one seed, resuming from the last checkpoint in its directory if present."""
    d = seed_dir(cfg.out, seed)
    d.mkdir(parents=True, exist_ok=True)
    ckpt, metrics_path = d / "checkpoint.ckpt", d / "metrics.csv"
    tcfg = cfg.trainer_config()
    trainer = Trainer(cfg.scenario_config(), tcfg, seed)
    if _is_finished(metrics_path):
        log.info("seed %d already finished", seed)
        return read_metrics(metrics_path)
    if ckpt.exists():
        trainer.load_state(load_checkpoint(ckpt))
        kept = [r for r in read_metrics(metrics_path) if r.kind == "window" and r.episode <= trainer.episode] if metrics_path.exists() else []
        write_metrics(metrics_path, kept)
        log.info("seed %d resumed at episode %d", seed, trainer.episode)
    else:
        write_metrics(metrics_path, [])
    eval_seeds = window_eval_seeds(seed, tcfg.eval_episodes)
    while trainer.episode < tcfg.episodes:
        trainer.train_episode()
        if trainer.episode % tcfg.eval_every == 0 or trainer.episode == tcfg.episodes:
            ms, _ = trainer.evaluate(eval_seeds)
            rec = summarize(seed, trainer.episode, "window", ms, trainer.updates)
            write_metrics(metrics_path, [rec], append=True)
            save_checkpoint(ckpt, trainer.state_tensors())
            log.info("seed %d episode %d return %.3f", seed, trainer.episode, rec.mean_return)
            if on_window is not None:
                on_window(rec)
    ms, rows = trainer.evaluate(final_eval_seeds(seed, tcfg.final_eval_episodes), record=True)
    for r in rows:
        r["seed"] = seed
    write_dump(d / "final_dump.jsonl", rows)
    write_metrics(metrics_path, [summarize(seed, trainer.episode, "final", ms, trainer.updates)], append=True)
    _write_final_returns(d / "final_returns.csv", ms)
    return read_metrics(metrics_path)


def _write_final_returns(path, metrics: Sequence[EpisodeMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "total_return", "captures", "avg_dist", "collision_rate"])
        for k, m in enumerate(metrics):
            w.writerow([k, repr(m.total_return), repr(m.captures), repr(float(m.avg_dist)), repr(float(m.collision_rate))])


def read_final_returns(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(r["total_return"]) for r in csv.DictReader(fh)])


def run(cfg: RunConfig) -> int:
    cfg = cfg.normalized()
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, cfg.out / "run.ini")
    for seed in cfg.seeds:
        train_seed(cfg, seed)
    return 0


def evaluate_checkpoint(run_dir, seed: int, episodes: int) -> tuple[MetricsRecord, list[dict]]:
    cfg = load_run_config(Path(run_dir) / "run.ini", {"out": str(run_dir)})
    trainer = Trainer(cfg.scenario_config(), cfg.trainer_config(), seed)
    trainer.load_state(load_checkpoint(seed_dir(cfg.out, seed) / "checkpoint.ckpt"))
    ms, rows = trainer.evaluate(final_eval_seeds(seed, episodes), record=True)
    for r in rows:
        r["seed"] = seed
    return summarize(seed, trainer.episode, "final", ms, trainer.updates), rows


# ---------------------------------------------------------------------------
# analysis


@dataclass
class Analysis:
    steps: np.ndarray  # (S,) 1-indexed step numbers
    budget_mean: np.ndarray  # (S, n)
    distance_mean: np.ndarray | None  # (S, n) predator-prey distances, if present
    blocks: list[tuple[int, int]]
    block_budget: np.ndarray  # (len(blocks), n)
    block_distance: np.ndarray | None


def analyze(rows: Sequence[dict], blocks: Sequence[tuple[int, int]] | None = None) -> Analysis:
    if not rows:
        raise ValueError("no dump records to analyze")
    steps = sorted({r["step"] for r in rows})
    n = len(rows[0]["budgets"])
    has_dist = "prey_distances" in rows[0]
    budget = {s: [] for s in steps}
    dist = {s: [] for s in steps}
    for r in rows:
        budget[r["step"]].append(r["budgets"])
        if has_dist:
            dist[r["step"]].append(r["prey_distances"])
    budget_mean = np.array([np.mean(budget[s], axis=0) for s in steps]).reshape(len(steps), n)
    distance_mean = np.array([np.mean(dist[s], axis=0) for s in steps]) if has_dist else None
    if blocks is None:
        blocks = PP_BLOCKS if has_dist else CN_BLOCKS
    step_arr = np.array(steps)
    bb, bd = [], []
    for lo, hi in blocks:
        sel = (step_arr >= lo) & (step_arr <= hi)
        bb.append(budget_mean[sel].mean(axis=0) if sel.any() else np.full(n, np.nan))
        if has_dist:
            bd.append(distance_mean[sel].mean(axis=0) if sel.any() else np.full(n, np.nan))
    return Analysis(step_arr, budget_mean, distance_mean, list(blocks), np.array(bb), np.array(bd) if has_dist else None)


def write_analysis(a: Analysis, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = a.budget_mean.shape[1]
    per_step, per_block = out_dir / "per_step.csv", out_dir / "blocks.csv"
    head = [f"budget_{i}" for i in range(n)] + ([f"distance_{i}" for i in range(n)] if a.distance_mean is not None else [])
    with open(per_step, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + head)
        for k, s in enumerate(a.steps):
            vals = list(a.budget_mean[k]) + (list(a.distance_mean[k]) if a.distance_mean is not None else [])
            w.writerow([int(s)] + [repr(float(v)) for v in vals])
    with open(per_block, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block"] + head)
        for k, (lo, hi) in enumerate(a.blocks):
            vals = list(a.block_budget[k]) + (list(a.block_distance[k]) if a.block_distance is not None else [])
            w.writerow([f"{lo}-{hi}"] + [repr(float(v)) for v in vals])
    return [per_step, per_block]


def parse_blocks(text: str) -> list[tuple[int, int]]:
    blocks = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        blocks.append((int(lo), int(hi or lo)))
    return blocks


def budget_distance_correlation(rows: Sequence[dict]) -> tuple[float, int]:
    """Mean per-step Spearman correlation between negated prey distance and allocated budget.

    Steps where either vector is constant are skipped. Returns (mean, steps used).
    """
    rhos = []
    for r in rows:
        b = np.asarray(r["budgets"], dtype=float)
        d = -np.asarray(r["prey_distances"], dtype=float)
        if np.ptp(b) == 0 or np.ptp(d) == 0:
            continue
        rhos.append(stats.spearmanr(d, b).statistic)
    return (float(np.mean(rhos)) if rhos else math.nan), len(rhos)


# ---------------------------------------------------------------------------
# sweeps


def sweep_configs(scenario: str, bandwidths: Sequence[int] | None = None, modes: Sequence[str] | None = None) -> list[tuple[str, int]]:
    if bandwidths is None:
        bandwidths = PP_ABLATION_BANDWIDTHS if scenario == envlib.PREDATOR_PREY else CN_ABLATION_BANDWIDTHS
    modes = modes or (NO_COMM, DSMS, FULL_COMM)
    out = []
    for m in modes:
        if m in (DSMS, "fixed_equal"):
            out.extend((m, int(b)) for b in bandwidths)
        else:
            out.append((m, 0))
    return out


def config_label(mode: str, bandwidth: int) -> str:
    return mode if mode in (NO_COMM, FULL_COMM) else f"{mode}_B{bandwidth}"


def sweep(scenario: str, seeds: Sequence[int], episodes: int, out, configs: Sequence[tuple[str, int]], trainer: dict | None = None) -> Path:
    out = Path(out)
    for mode, bw in configs:
        run(RunConfig(scenario, mode, bw, list(seeds), episodes, out / config_label(mode, bw), dict(trainer or {})))
    return write_sweep_summary(out, configs, seeds)


@dataclass
class ConfigSummary:
    label: str
    mean_return: float
    pooled_se: float
    seed_means: list[float]
    episodes: int


def summarize_config(run_dir, seeds: Sequence[int]) -> ConfigSummary:
    per_seed = [read_final_returns(seed_dir(run_dir, s) / "final_returns.csv") for s in seeds]
    pooled = np.concatenate(per_seed)
    return ConfigSummary(
        label=Path(run_dir).name,
        mean_return=float(pooled.mean()),
        pooled_se=float(pooled.std(ddof=1) / math.sqrt(len(pooled))),
        seed_means=[float(x.mean()) for x in per_seed],
        episodes=len(pooled),
    )


def write_sweep_summary(out, configs, seeds) -> Path:
    out = Path(out)
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "mean_return", "pooled_se", "episodes"] + [f"seed_{s}" for s in seeds])
        for mode, bw in configs:
            s = summarize_config(out / config_label(mode, bw), seeds)
            w.writerow([s.label, repr(s.mean_return), repr(s.pooled_se), s.episodes] + [repr(v) for v in s.seed_means])
    return path
