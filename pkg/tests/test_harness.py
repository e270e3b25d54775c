import csv
import json

import numpy as np
import pytest

from dsms import cli, harness, wire
from dsms.errors import ConfigError
from dsms.harness import MetricsRecord, RunConfig

TINY = dict(hidden=8, head_hidden=8, message_size=8, batch_size=4, unroll=4, warmup_episodes=1,
            eval_every=2, eval_episodes=2, final_eval_episodes=3)


def tiny_run(tmp_path, mode="dsms", bandwidth=22, scenario="coop_nav", seeds=(0,), episodes=4, name="run"):
    return RunConfig(scenario, mode, bandwidth, list(seeds), episodes, tmp_path / name, dict(TINY)).normalized()


def test_mode_forces_bandwidth():
    assert RunConfig("coop_nav", "no_comm", 38, [0], 1, "x").normalized().bandwidth == 0
    assert RunConfig("coop_nav", "full_comm", 38, [0], 1, "x").normalized().bandwidth == 3 * 34
    assert RunConfig("predator_prey", "full_comm", 0, [0], 1, "x").normalized().bandwidth == 4 * 34
    assert RunConfig("coop_nav", "full_comm", 0, [0], 1, "x", {"message_size": 8}).normalized().bandwidth == 3 * 10
    assert RunConfig("coop_nav", "dsms", 38, [0], 1, "x").normalized().bandwidth == 38


@pytest.mark.parametrize(
    "kw",
    [
        dict(scenario="tag"),
        dict(mode="shout"),
        dict(bandwidth=6),
        dict(bandwidth=37),
        dict(seeds=[]),
        dict(episodes=0),
        dict(trainer={"gamma": 1.5}),
        dict(trainer={"nope": 1}),
        dict(trainer={"mode": "dsms"}),
    ],
)
def test_invalid_configs(kw):
    base = dict(scenario="coop_nav", mode="dsms", bandwidth=38, seeds=[0], episodes=10, out="x")
    with pytest.raises(ConfigError):
        RunConfig(**{**base, **kw}).normalized()


def test_ablation_bandwidths_accepted():
    for b in harness.PP_ABLATION_BANDWIDTHS:
        RunConfig("predator_prey", "dsms", b, [0], 1, "x").normalized()
    for b in harness.CN_ABLATION_BANDWIDTHS:
        RunConfig("coop_nav", "dsms", b, [0], 1, "x").normalized()
    assert harness.PP_ABLATION_BANDWIDTHS == (24, 40, 72, 104)
    assert harness.CN_ABLATION_BANDWIDTHS == (22, 38, 68)
    labels = [harness.config_label(*c) for c in harness.sweep_configs("coop_nav")]
    assert labels == ["no_comm", "dsms_B22", "dsms_B38", "dsms_B68", "full_comm"]


def test_ini_config_with_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[run]\nscenario = coop_nav\nmode = dsms\nbandwidth = 38\nseeds = 1 2\nepisodes = 50\nout = a\n"
        "[trainer]\ngamma = 0.9\nbatch_size = 8\n[scenario]\nforest_radius = 0.25\n"
    )
    cfg = harness.load_run_config(path, {"bandwidth": 22, "seeds": [7], "out": str(tmp_path / "b")})
    assert cfg.bandwidth == 22 and cfg.seeds == [7] and cfg.episodes == 50
    assert cfg.trainer == {"gamma": 0.9, "batch_size": 8}
    assert cfg.scenario_config().forest_radius == 0.25
    harness.save_run_config(cfg, tmp_path / "again.ini")
    again = harness.load_run_config(tmp_path / "again.ini")
    assert again == cfg


def test_missing_required_settings(tmp_path):
    with pytest.raises(ConfigError, match="mode"):
        harness.load_run_config(None, {"scenario": "coop_nav", "bandwidth": 38, "seeds": [0], "episodes": 1, "out": "x"})
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nscenario = coop_nav\n[trainer]\nwarp = 9\n")
    with pytest.raises(ConfigError):
        harness.load_run_config(path, {"mode": "dsms", "bandwidth": 38, "seeds": [0], "episodes": 1, "out": "x"})


def test_metrics_csv_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    recs = [
        MetricsRecord(seed=3, episode=100 * k, kind="window", episodes_evaluated=10, mean_return=float(rng.normal() * 1e3),
                      return_std=float(rng.random()) / 3, captures=1 / 3, avg_dist=float(np.pi), collision_rate=0.1 + 0.2,
                      mean_budget=[float(x) for x in rng.random(4) * 30], updates=k)
        for k in range(5)
    ]
    harness.write_metrics(tmp_path / "m.csv", recs[:2])
    harness.write_metrics(tmp_path / "m.csv", recs[2:], append=True)
    assert harness.read_metrics(tmp_path / "m.csv") == recs


def test_metrics_schema_version_checked(tmp_path):
    rec = MetricsRecord(0, 0, "window", 1, 0.0, 0.0, 0.0, 0.0, 0.0, [2.0], 0, schema_version=99)
    harness.write_metrics(tmp_path / "m.csv", [rec])
    with pytest.raises(ConfigError):
        harness.read_metrics(tmp_path / "m.csv")


def test_run_writes_all_artifacts(tmp_path):
    cfg = tiny_run(tmp_path, seeds=(0, 1))
    assert harness.run(cfg) == 0
    assert (cfg.out / "run.ini").exists()
    for s in (0, 1):
        d = harness.seed_dir(cfg.out, s)
        recs = harness.read_metrics(d / "metrics.csv")
        assert [r.kind for r in recs] == ["window", "window", "final"]
        assert [r.episode for r in recs] == [2, 4, 4]
        assert recs[-1].episodes_evaluated == 3
        rows = harness.read_dump(d / "final_dump.jsonl")
        assert len(rows) == 3 * 20 and {r["seed"] for r in rows} == {s}
        assert len(harness.read_final_returns(d / "final_returns.csv")) == 3
        assert (d / "checkpoint.ckpt").exists()


def test_no_comm_dump_has_zero_budgets(tmp_path):
    cfg = tiny_run(tmp_path, mode="no_comm", episodes=2)
    harness.run(cfg)
    rows = harness.read_dump(harness.seed_dir(cfg.out, 0) / "final_dump.jsonl")
    assert all(r["budgets"] == [0, 0, 0] and r["sent"] == [0, 0, 0] for r in rows)


def test_full_comm_dump_has_zero_reconstruction_error(tmp_path):
    cfg = tiny_run(tmp_path, mode="full_comm", episodes=2)
    harness.run(cfg)
    rows = harness.read_dump(harness.seed_dir(cfg.out, 0) / "final_dump.jsonl")
    assert all(r["recon_mse"] == [0.0, 0.0, 0.0] for r in rows)


class Interrupt(Exception):
    pass


def test_interrupted_run_resumes_to_the_same_records(tmp_path):
    full = tiny_run(tmp_path, episodes=6, name="full")
    harness.run(full)
    reference = harness.read_metrics(harness.seed_dir(full.out, 0) / "metrics.csv")

    cut = tiny_run(tmp_path, episodes=6, name="cut")
    cut.out.mkdir(parents=True)
    seen = []

    def stop_after_two(rec):
        seen.append(rec)
        if len(seen) == 2:
            raise Interrupt

    with pytest.raises(Interrupt):
        harness.train_seed(cut, 0, on_window=stop_after_two)
    partial = harness.read_metrics(harness.seed_dir(cut.out, 0) / "metrics.csv")
    assert [r.episode for r in partial] == [2, 4]
    harness.run(cut)
    resumed = harness.read_metrics(harness.seed_dir(cut.out, 0) / "metrics.csv")
    assert [(r.kind, r.episode) for r in resumed] == [(r.kind, r.episode) for r in reference]
    # the windows before the interruption are untouched
    assert resumed[:2] == reference[:2]
    # a finished run is left alone
    harness.run(cut)
    assert harness.read_metrics(harness.seed_dir(cut.out, 0) / "metrics.csv") == resumed


def test_records_beyond_checkpoint_are_dropped_on_resume(tmp_path):
    cfg = tiny_run(tmp_path, episodes=6)
    cfg.out.mkdir(parents=True)

    def stop(rec):
        raise Interrupt

    with pytest.raises(Interrupt):
        harness.train_seed(cfg, 0, on_window=stop)
    # simulate a crash between appending a metrics row and saving the checkpoint
    path = harness.seed_dir(cfg.out, 0) / "metrics.csv"
    ghost = harness.read_metrics(path)[0]
    ghost.episode = 4
    harness.write_metrics(path, [ghost], append=True)
    harness.run(cfg)
    assert [r.episode for r in harness.read_metrics(path)] == [2, 4, 6, 6]


def synthetic_rows(weights, n_steps=50, episodes=2, B=64, dist=True):
    from dsms import scheduler

    rows = []
    for e in range(episodes):
        for t in range(1, n_steps + 1):
            w = np.asarray(weights, dtype=float)
            b = scheduler.allocate(w, B, len(w))
            row = {"episode": e, "step": t, "weights": w.tolist(), "budgets": b.tolist()}
            if dist:
                row["prey_distances"] = list(np.linspace(0.1, 0.4, len(w)) + 0.01 * t)
            rows.append(row)
    return rows


def test_analyze_uniform_weights_gives_equal_budgets():
    a = harness.analyze(synthetic_rows([0.25] * 4))
    assert np.all(a.budget_mean == 14)
    assert np.all(a.block_budget == 14)
    assert a.blocks == list(harness.PP_BLOCKS)
    assert len(a.steps) == 50 and a.distance_mean.shape == (50, 4)


def test_analyze_dominant_agent_gets_most_bandwidth():
    a = harness.analyze(synthetic_rows([0.97, 0.01, 0.01, 0.01]))
    means = a.budget_mean.mean(axis=0)
    assert means[0] > means[1:].max()


def test_analyze_blocks_and_csv(tmp_path):
    rows = synthetic_rows([0.25] * 4)
    a = harness.analyze(rows, harness.parse_blocks("1-4,5-15,16"))
    assert a.blocks == [(1, 4), (5, 15), (16, 16)]
    expected = np.mean([0.1 + 0.01 * t for t in range(5, 16)])
    assert a.block_distance[1, 0] == pytest.approx(expected)
    per_step, blocks = harness.write_analysis(a, tmp_path)
    with open(blocks) as fh:
        table = list(csv.DictReader(fh))
    assert [r["block"] for r in table] == ["1-4", "5-15", "16-16"]
    assert float(table[1]["distance_0"]) == a.block_distance[1, 0]
    with open(per_step) as fh:
        assert len(list(csv.DictReader(fh))) == 50


def test_analyze_requires_records():
    with pytest.raises(ValueError):
        harness.analyze([])


def test_analyze_without_distances_uses_coop_nav_blocks():
    a = harness.analyze(synthetic_rows([0.5, 0.3, 0.2], n_steps=20, B=38, dist=False))
    assert a.distance_mean is None and a.blocks == list(harness.CN_BLOCKS)


def test_budget_distance_correlation():
    rows = [{"budgets": [8, 6, 4, 2], "prey_distances": [0.1, 0.2, 0.3, 0.4]},
            {"budgets": [2, 4, 6, 8], "prey_distances": [0.1, 0.2, 0.3, 0.4]},
            {"budgets": [14, 14, 14, 14], "prey_distances": [0.1, 0.2, 0.3, 0.4]}]
    rho, used = harness.budget_distance_correlation(rows[:1])
    assert rho == pytest.approx(1.0) and used == 1
    rho, used = harness.budget_distance_correlation(rows)
    assert rho == pytest.approx(0.0) and used == 2


def test_sweep_summary(tmp_path):
    configs = [("no_comm", 0), ("dsms", 22)]
    path = harness.sweep("coop_nav", [0], 2, tmp_path, configs, TINY)
    with open(path) as fh:
        table = list(csv.DictReader(fh))
    assert [r["config"] for r in table] == ["no_comm", "dsms_B22"]
    s = harness.summarize_config(tmp_path / "dsms_B22", [0])
    assert s.episodes == 3 and float(table[1]["mean_return"]) == s.mean_return


# -- command line -------------------------------------------------------------


def test_cli_codec_check(capsys):
    assert cli.main(["codec-check", "--sizes", "4", "8", "--messages", "3"]) == 0
    assert capsys.readouterr().out.strip().endswith("OK")


def test_cli_frame_dump(tmp_path, capsys):
    out = tmp_path / "frame.bin"
    assert cli.main(["frame-dump", "--n", "3", "--bandwidth", "22", "--write", str(out)]) == 0
    text = capsys.readouterr().out
    data = out.read_bytes()
    assert f"total {len(data)} octets" in text
    budgets, _ = wire.decode_frame(data)
    assert budgets.sum() <= 22
    assert cli.main(["frame-dump", str(out)]) == 0
    assert capsys.readouterr().out == text
    out.write_bytes(data[:-1])
    assert cli.main(["frame-dump", str(out)]) == 2
    assert "truncated" in capsys.readouterr().err


def test_cli_train_eval_analyze(tmp_path, capsys):
    run_dir = tmp_path / "r"
    sets = sum((["--set", f"{k}={v}"] for k, v in TINY.items()), [])
    argv = ["train", "--scenario", "predator_prey", "--mode", "dsms", "--bandwidth", "24", "--seed", "5",
            "--episodes", "2", "--out", str(run_dir)] + sets
    assert cli.main(argv) == 0
    assert "seed 5: final mean return" in capsys.readouterr().out
    dump = tmp_path / "d.jsonl"
    assert cli.main(["eval", "--run", str(run_dir), "--seed", "5", "--episodes", "2", "--dump", str(dump)]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["episodes_evaluated"] == 2 and len(harness.read_dump(dump)) == 100
    assert cli.main(["analyze", str(dump), "--out", str(tmp_path / "an"), "--blocks", "1-25,26-50"]) == 0
    out = capsys.readouterr().out
    assert "blocks.csv" in out and "spearman" in out


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["train", "--scenario", "coop_nav", "--mode", "dsms", "--seed", "0", "--episodes", "1", "--out", str(tmp_path)]) == 2
    assert "bandwidth" in capsys.readouterr().err
    assert cli.main(["train", "--scenario", "coop_nav", "--mode", "dsms", "--bandwidth", "7", "--seed", "0",
                     "--episodes", "1", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["train", "--mode", "bogus"])


def test_bad_values_are_usage_errors(tmp_path, capsys):
    base = ["train", "--scenario", "coop_nav", "--mode", "no_comm", "--bandwidth", "0", "--seed", "0", "--episodes", "1", "--out", str(tmp_path)]
    assert cli.main(base + ["--set", "hidden=wide"]) == 2
    assert "wide" in capsys.readouterr().err
    path = tmp_path / "c.ini"
    path.write_text("[trainer]\ncritic_state = maybe\n")
    with pytest.raises(ConfigError):
        harness.load_run_config(path, {"scenario": "coop_nav", "mode": "dsms", "bandwidth": 38, "seeds": [0], "episodes": 1, "out": "x"})
    path.write_text("[trainer]\ncritic_state = no\nbootstrap_time_limit = false\n")
    cfg = harness.load_run_config(path, {"scenario": "coop_nav", "mode": "dsms", "bandwidth": 38, "seeds": [0], "episodes": 1, "out": "x"})
    assert cfg.trainer == {"critic_state": False, "bootstrap_time_limit": False}
