"""Training, evaluation, sweep and replay routines behind the CLI."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..agents.baselines import RandomPolicy, baseline_policy
from ..agents.dsac import DsacAgent, DsacConfig
from ..env import SaginEnv, decode_action, encode_action
from ..scenario import MODE_IDS, ScenarioConfig, apply_overrides

log = logging.getLogger("sagin")

METRICS_COLUMNS = ("step", "episodes", "mean_reward", "critic_loss", "policy_loss", "mean_J", "mean_sigma", "entropy")
EVAL_COLUMNS = ("episode", "seed", "reward", "avg_sce", "completion_rate", *(f"mode_{m}" for m in MODE_IDS))
SWEEP_COLUMNS = ("x", "mean_sce", "std_sce", "mean_reward", "completion_rate")
CHECKPOINT_NAME = "agent.ckpt"


def fmt(x) -> str:
    """Stable float formatting for every CSV we write."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])


def flat_mask(env: SaginEnv) -> np.ndarray:
    return np.concatenate(env.action_masks())


class AgentPolicy:
    """Wrap a trained agent so it acts on an environment like the baselines do."""

    name = "dsac"

    def __init__(self, agent: DsacAgent, stochastic: bool = False):
        self.agent = agent
        self.stochastic = stochastic

    def act(self, env: SaginEnv):
        heads, cont = self.agent.act(env.observe(), flat_mask(env), stochastic=self.stochastic)
        return decode_action(heads, cont, env.cfg)


def make_agent(cfg: ScenarioConfig, seed: int) -> DsacAgent:
    env = SaginEnv(cfg, seed=seed)
    return DsacAgent(env.obs_size, env.spec.discrete, env.spec.n_continuous, cfg.v_max,
                     DsacConfig.from_scenario(cfg, seed=seed))


def load_policy(spec: str, seed: int = 0):
    """A baseline kind (``random``, ``greedy``, ``fixed:M2``) or a checkpoint file/directory."""
    p = Path(spec)
    if p.is_dir():
        p = p / CHECKPOINT_NAME
    if p.is_file():
        agent, _ = DsacAgent.load(p)
        return AgentPolicy(agent)
    return baseline_policy(spec, seed)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    agent: DsacAgent
    metrics: list
    episode_rewards: list


def train(cfg: ScenarioConfig, steps: int, seed: int = 0, agent: DsacAgent | None = None,
          log_interval: int | None = None) -> TrainResult:
    """Interact for ``steps`` slots, updating the agent after the warm-up phase."""
    log_interval = log_interval or cfg.log_interval
    agent = agent or make_agent(cfg, seed)
    warm = RandomPolicy(seed)
    episode = 0
    env = SaginEnv(cfg, seed=_episode_seed(seed, episode))
    obs, mask = env.observe(), flat_mask(env)
    ep_reward, rewards, metrics = 0.0, [], []
    last = {}
    for step in range(1, steps + 1):
        if step <= cfg.warmup_steps:
            heads, cont = encode_action(warm.act(env), cfg)
        else:
            heads, cont = agent.act(obs, mask, stochastic=True)
        res = env.step(decode_action(heads, cont, cfg))
        ep_reward += res.reward
        next_obs, next_mask = env.observe(), flat_mask(env)
        terminal = res.done and env.state.t < cfg.horizon
        agent.buffer.add(obs, agent.encode(heads[None, :], cont[None, :] / cfg.v_max)[0], res.reward,
                         next_obs, terminal, mask, next_mask)
        obs, mask = next_obs, next_mask
        if res.done:
            rewards.append(ep_reward)
            ep_reward = 0.0
            episode += 1
            env = SaginEnv(cfg, seed=_episode_seed(seed, episode))
            obs, mask = env.observe(), flat_mask(env)
        if (step > cfg.warmup_steps and len(agent.buffer) >= agent.hp.batch_size
                and step % cfg.update_every == 0):
            last = agent.train_step()
        if step % log_interval == 0:
            recent = rewards[-10:]
            row = (step, len(rewards), float(np.mean(recent)) if recent else float("nan"),
                   last.get("critic_loss", float("nan")), last.get("policy_loss", float("nan")),
                   last.get("mean_J", float("nan")), last.get("mean_sigma", float("nan")),
                   last.get("entropy", float("nan")))
            metrics.append(row)
            log.info("step %d episodes %d reward %.4g", step, len(rewards), row[2])
    return TrainResult(agent, metrics, rewards)


def _episode_seed(seed: int, episode: int) -> int:
    return seed * 100_003 + episode


# ---------------------------------------------------------------------------
# evaluation


def run_episode(cfg: ScenarioConfig, policy, seed: int, trace: list | None = None) -> dict:
    env = SaginEnv(cfg, seed=seed)
    total = 0.0
    while not env.done:
        res = env.step(policy.act(env))
        total += res.reward
        if trace is not None:
            trace.append(trace_record(res))
    out = env.summary()
    out["reward"] = total
    out["tasks"] = env.state.tasks
    return out


def trace_record(res) -> dict:
    events = [{"task": i, "event": "done", "sce": v} for i, v in res.completed]
    events += [{"task": i, "event": "failed", "reason": why} for i, why in res.failed]
    return {"t": res.t, "reward": res.reward, "phi": res.phi, "events": events}


def evaluate(cfg: ScenarioConfig, policy_spec: str, episodes: int, seed: int = 0):
    """Run ``episodes`` episodes on seeds ``seed, seed+1, ...``; return (summary, rows)."""
    rows, sces, rewards, comps = [], [], [], []
    usage = {m: 0 for m in MODE_IDS}
    for e in range(episodes):
        s = seed + e
        policy = load_policy(policy_spec, s)
        out = run_episode(cfg, policy, s)
        rows.append((e, s, out["reward"], out["avg_sce"], out["completion_rate"],
                     *(out["mode_usage"][m] for m in MODE_IDS)))
        sces.append(out["avg_sce"])
        rewards.append(out["reward"])
        comps.append(out["completion_rate"])
        for m in MODE_IDS:
            usage[m] += out["mode_usage"][m]
    summary = {
        "policy": policy_spec, "episodes": episodes, "seed": seed,
        "mean_sce": float(np.mean(sces)), "std_sce": float(np.std(sces)),
        "mean_reward": float(np.mean(rewards)), "std_reward": float(np.std(rewards)),
        "completion_rate": float(np.mean(comps)), "mode_usage": usage,
    }
    return summary, rows


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepSpec:
    key: str
    values: list
    episodes: int = 1
    seeds: tuple = (0,)
    policy: str = "greedy"

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")


def sweep(cfg: ScenarioConfig, spec: SweepSpec, fixed: dict | None = None) -> list[tuple]:
    """One row per value: (x, mean SCE, std SCE, mean reward, completion rate).

    Seeds are paired across values: episode ``e`` of seed ``s`` always runs on
    environment seed ``s * 1000 + e``.
    """
    rows = []
    for x in spec.values:
        point = apply_overrides(cfg, {**(fixed or {}), spec.key: x})
        sces, rewards, comps = [], [], []
        for s in spec.seeds:
            for e in range(spec.episodes):
                es = int(s) * 1000 + e
                out = run_episode(point, load_policy(spec.policy, es), es)
                sces.append(out["avg_sce"])
                rewards.append(out["reward"])
                comps.append(out["completion_rate"])
        rows.append((x, float(np.mean(sces)), float(np.std(sces)), float(np.mean(rewards)), float(np.mean(comps))))
    return rows


def sweep_point_means(cfg: ScenarioConfig, spec: SweepSpec, fixed: dict | None = None) -> np.ndarray:
    """Per-(value, seed) mean SCE matrix, shape (len(values), len(seeds))."""
    out = np.zeros((len(spec.values), len(spec.seeds)))
    for i, x in enumerate(spec.values):
        point = apply_overrides(cfg, {**(fixed or {}), spec.key: x})
        for j, s in enumerate(spec.seeds):
            vals = []
            for e in range(spec.episodes):
                es = int(s) * 1000 + e
                vals.append(run_episode(point, load_policy(spec.policy, es), es)["avg_sce"])
            out[i, j] = np.mean(vals)
    return out


# ---------------------------------------------------------------------------
# replay


def write_trace(path, records) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


class CorruptTrace(ValueError):
    pass


def replay(lines) -> list[dict]:
    """Recompute each slot's reward from its events and phi; return the mismatches."""
    bad = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sces = [float(e["sce"]) for e in rec.get("events", []) if e.get("event") == "done"]
            phi = int(rec["phi"])
            reward = float(rec["reward"])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptTrace(f"line {n}: {exc}") from None
        failed = any(e.get("event") == "failed" for e in rec.get("events", []))
        expect = sum(sces) - phi
        problems = []
        if not math.isclose(reward, expect, rel_tol=0.0, abs_tol=1e-12):
            problems.append(f"reward {reward!r} != sum(sce) - phi = {expect!r}")
        if failed and phi != 1:
            problems.append("failure event without phi = 1")
        if problems:
            bad.append({"line": n, "t": rec.get("t"), "problems": problems})
    return bad


def env_log_level() -> int:
    name = os.environ.get("SAGIN_LOG", "WARNING").upper()
    return getattr(logging, name, logging.WARNING)


def dumps_summary(summary: dict) -> str:
    buf = io.StringIO()
    json.dump(summary, buf, indent=2, sort_keys=True)
    return buf.getvalue() + "\n"
