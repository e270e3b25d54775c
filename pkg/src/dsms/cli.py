"""Command line entry point: ``dsms <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import codec, harness, scheduler, wire
from .agent import MODES
from .checks import run_codec_check
from .env import SCENARIOS
from .errors import DSMSError
from .trainer import TrainerConfig


def _overrides(pairs) -> dict:
    types = TrainerConfig.field_types()
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or key not in types:
            raise DSMSError(f"bad --set {pair!r}; expected key=value with key in {sorted(types)}")
        out[key] = harness._coerce(value, types[key])
    return out


def _run_config(args) -> harness.RunConfig:
    cfg = harness.load_run_config(
        args.config,
        {
            "scenario": args.scenario,
            "mode": args.mode,
            "bandwidth": args.bandwidth,
            "seeds": args.seed,
            "episodes": args.episodes,
            "out": args.out,
        },
    )
    cfg.trainer.update(_overrides(args.set))
    return cfg.normalized()


def cmd_train(args) -> int:
    cfg = _run_config(args)
    harness.run(cfg)
    for seed in cfg.seeds:
        final = [r for r in harness.read_metrics(harness.seed_dir(cfg.out, seed) / "metrics.csv") if r.kind == "final"][-1]
        print(f"seed {seed}: final mean return {final.mean_return:.4f} over {final.episodes_evaluated} episodes")
    return 0


def cmd_eval(args) -> int:
    for seed in args.seed:
        rec, rows = harness.evaluate_checkpoint(args.run, seed, args.episodes)
        if args.dump:
            path = Path(args.dump)
            if len(args.seed) > 1:
                path = path.with_name(f"{path.stem}_seed{seed}{path.suffix}")
            harness.write_dump(path, rows)
        print(json.dumps(asdict(rec)))
    return 0


def cmd_analyze(args) -> int:
    rows = [r for p in args.dumps for r in harness.read_dump(p)]
    blocks = harness.parse_blocks(args.blocks) if args.blocks else None
    a = harness.analyze(rows, blocks)
    for path in harness.write_analysis(a, args.out):
        print(path)
    if a.distance_mean is not None:
        rho, used = harness.budget_distance_correlation(rows)
        print(f"spearman(-distance, budget) = {rho:.4f} over {used} steps")
    return 0


def cmd_codec_check(args) -> int:
    res = run_codec_check(args.sizes, args.messages, args.seed)
    print(f"sizes {res.sizes}, {res.messages} messages each")
    print(f"max |spectrum - direct DFT|      {res.max_spectrum_error:.3e}")
    print(f"max |roundtrip - direct inverse| {res.max_roundtrip_error:.3e}")
    print(f"max |mse - direct mse|           {res.max_parseval_error:.3e}")
    print("OK" if res.ok else "FAIL")
    return 0 if res.ok else 1


def demo_frame(n: int, bandwidth: int, p: int, seed: int) -> bytes:
    rng = np.random.default_rng(seed)
    w = scheduler.gumbel_softmax(rng.normal(size=n), 1.0, scheduler.sample_gumbel(rng, n))
    b = np.minimum(scheduler.allocate(w, bandwidth, n), codec.full_budget(p))
    msgs = [codec.compress(rng.uniform(-1, 1, size=p), int(bi)) for bi in b]
    return wire.encode_frame(b, msgs)


def cmd_frame_dump(args) -> int:
    data = Path(args.file).read_bytes() if args.file else demo_frame(args.n, args.bandwidth, args.message_size, args.seed)
    wire.parse_frame(data)  # validate before annotating
    if args.write:
        Path(args.write).write_bytes(data)
    print(wire.hexdump(data))
    return 0


def cmd_sweep(args) -> int:
    configs = harness.sweep_configs(args.scenario, args.bandwidths, args.modes)
    path = harness.sweep(args.scenario, args.seed, args.episodes, args.out, configs, _overrides(args.set))
    print(Path(path).read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsms", description="Dynamic size message scheduling: simulator, trainer and tools.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration over one or more seeds (resumable)")
    t.add_argument("--config", help="INI file with [run], [trainer] and [scenario] sections")
    t.add_argument("--scenario", choices=SCENARIOS)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--bandwidth", type=int)
    t.add_argument("--seed", type=int, nargs="+")
    t.add_argument("--episodes", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="trainer hyperparameter override")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    e.add_argument("--run", required=True, help="run directory written by 'train'")
    e.add_argument("--seed", type=int, nargs="+", required=True)
    e.add_argument("--episodes", type=int, default=200)
    e.add_argument("--dump", help="write per-step JSONL records here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="aggregate JSONL dumps into per-step and per-block CSVs")
    a.add_argument("dumps", nargs="+")
    a.add_argument("--blocks", help="comma separated step ranges, e.g. 1-4,5-15")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("codec-check", help="compare the codec with a direct transform")
    c.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16, 32])
    c.add_argument("--messages", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_codec_check)

    f = sub.add_parser("frame-dump", help="annotated hex dump of a wire frame")
    f.add_argument("file", nargs="?", help="frame file; omit to build a demo frame")
    f.add_argument("--n", type=int, default=4)
    f.add_argument("--bandwidth", type=int, default=64)
    f.add_argument("--message-size", type=int, default=codec.DEFAULT_MESSAGE_SIZE)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--write", help="also save the frame bytes to this file")
    f.set_defaults(func=cmd_frame_dump)

    s = sub.add_parser("sweep", help="train no_comm, dsms/fixed_equal at several bandwidths, and full_comm")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--seed", type=int, nargs="+", required=True)
    s.add_argument("--episodes", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--modes", nargs="+", choices=MODES)
    s.add_argument("--bandwidths", type=int, nargs="+")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (DSMSError, OSError) as exc:
        print(f"dsms: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
