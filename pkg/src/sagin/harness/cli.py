"""Command-line entry point: ``sagin {train,eval,sweep,replay}``.

Exit codes: 0 ok, 1 replay found mismatches, 2 configuration/input error,
3 runtime error. Set ``SAGIN_LOG=INFO`` (or DEBUG) for progress logging.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..scenario import ScenarioError, apply_overrides, default_scenario, dump_scenario, load_scenario, small_scenario
from . import runner

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

BUILTIN = {"default": default_scenario, "small": small_scenario}

log = logging.getLogger("sagin")


class ConfigError(Exception):
    pass


def load_config(name: str, overrides: list[str]):
    if name in BUILTIN:
        cfg = BUILTIN[name]()
    else:
        p = Path(name)
        if not p.is_file():
            raise ConfigError(f"scenario file not found: {name}")
        cfg = load_scenario(p.read_text())
    pairs = []
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    if pairs:
        try:
            cfg = apply_overrides(cfg, pairs)
        except KeyError as exc:
            raise ConfigError(f"unknown key {exc.args[0]!r}") from None
    return cfg


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"not a comma-separated number list: {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"not a comma-separated integer list: {text!r}") from None


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_train(args) -> int:
    cfg = load_config(args.scenario, args.set)
    out = _out_dir(args.out)
    res = runner.train(cfg, args.steps, seed=args.seed)
    runner.write_csv(out / "metrics.csv", runner.METRICS_COLUMNS, res.metrics)
    res.agent.save(out / runner.CHECKPOINT_NAME, {"seed": args.seed, "steps": args.steps})
    (out / "scenario.txt").write_text(dump_scenario(cfg))
    print(f"trained {args.steps} steps, {len(res.episode_rewards)} episodes -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.scenario, args.set)
    try:
        runner.load_policy(args.policy, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    summary, rows = runner.evaluate(cfg, args.policy, args.episodes, args.seed)
    if args.out:
        out = _out_dir(args.out)
        runner.write_csv(out / "eval.csv", runner.EVAL_COLUMNS, rows)
        (out / "summary.json").write_text(runner.dumps_summary(summary))
        if args.trace:
            trace: list = []
            runner.run_episode(cfg, runner.load_policy(args.policy, args.seed), args.seed, trace)
            runner.write_trace(out / "trace.jsonl", trace)
    sys.stdout.write(runner.dumps_summary(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.scenario, args.set)
    values = _floats(args.values)
    seeds = _ints(args.seeds)
    try:
        spec = runner.SweepSpec(args.key, values, args.episodes, tuple(seeds), args.policy)
        runner.load_policy(args.policy, 0)
        for v in values:
            apply_overrides(cfg, {args.key: v})
    except KeyError:
        raise ConfigError(f"unknown sweep key {args.key!r}") from None
    except (ValueError, ScenarioError) as exc:
        raise ConfigError(str(exc)) from None
    rows = runner.sweep(cfg, spec)
    out = _out_dir(args.out)
    runner.write_csv(out / "sweep.csv", runner.SWEEP_COLUMNS, rows)
    for r in rows:
        print(",".join(runner.fmt(v) for v in r))
    return EXIT_OK


def cmd_replay(args) -> int:
    p = Path(args.trace)
    if not p.is_file():
        raise ConfigError(f"trace file not found: {args.trace}")
    try:
        bad = runner.replay(p.read_text().splitlines())
    except runner.CorruptTrace as exc:
        raise ConfigError(f"corrupt trace: {exc}") from None
    for b in bad:
        print(f"line {b['line']} (t={b['t']}): " + "; ".join(b["problems"]))
    print(f"{len(bad)} mismatch(es)")
    return EXIT_MISMATCH if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sagin", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out_required=False):
        p.add_argument("--scenario", default="default", help="scenario file, or 'default' / 'small'")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a scenario key")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, default=None)

    p = sub.add_parser("train", help="train a DSAC agent")
    common(p, out_required=True)
    p.add_argument("--steps", type=int, default=10_000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy (baseline kind or checkpoint)")
    common(p)
    p.add_argument("--policy", default="greedy", help="random | greedy | fixed:<mode> | checkpoint path")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--trace", action="store_true", help="also write trace.jsonl for the first episode")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep one scenario key")
    common(p, out_required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--policy", default="greedy")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="check a JSON-lines episode trace")
    p.add_argument("trace")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=runner.env_log_level(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
