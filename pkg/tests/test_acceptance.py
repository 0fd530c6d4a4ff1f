"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line; the terminal
summary repeats the verdicts.
"""

import csv
import dataclasses
import math
import sys
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy.stats import spearmanr

from sagin import channel as ch
from sagin import geometry as geo
from sagin import modes as md
from sagin.agents.dsac import Batch, DsacAgent, DsacConfig, channel_grads, gaussian_nll
from sagin.env import SaginEnv
from sagin.harness import runner
from sagin.harness.cli import main
from sagin.scenario import MODE_IDS, Rng, default_scenario, small_scenario

sys.path.insert(0, str(Path(__file__).parent))
from test_env import check_invariants, hand_simulation, random_raw_action, run, scripted_cfg, scripted_env, serve_all  # noqa: E402


def verdict(n, ok, detail):
    print(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1


def test_c01_coverage_duration():
    mpmath.mp.dps = 40
    dE, dk, tau = mpmath.mpf(6371000), mpmath.mpf(750000), mpmath.radians(40)
    R_ref = 2 * (dE + dk) * (mpmath.acos(dE / (dE + dk) * mpmath.cos(tau)) - tau)
    T_ref = float(R_ref / 7800)
    T = geo.access_duration(geo.coverage_path_length(6371e3, 750e3, math.radians(40)), 7800.0)
    ok = abs(T - 214.5) <= 0.01 * 214.5 and abs(T - T_ref) <= 1e-9 * T_ref
    verdict(1, ok, f"T_k = {T:.6f} s (reference {T_ref:.6f} s, target 214.5 s +-1%)")


# ---------------------------------------------------------------- 2


def test_c02_channel_oracles():
    cfg = default_scenario()
    mpmath.mp.dps = 40
    # scalar oracles written straight from the link budget
    g = mpmath.mpf(cfg.sigma_gain) * (mpmath.mpf(cfg.wavelength) / (4 * mpmath.pi * 750000)) ** 2
    sat_ref = float(cfg.B_su * mpmath.log(1 + cfg.P_S * g / mpmath.mpf(cfg.noise_W), 2))
    h = ch.sat_uav_coeff(cfg.sigma_gain, cfg.wavelength, 750e3)
    sat = ch.shannon_rate(cfg.B_su, cfg.P_S, abs(h) ** 2, cfg.noise_W)
    isl = ch.isl_rate(1e7, 1.0, 100.0, 4e5, 2.5e10, cfg)
    fspl = (4 * mpmath.pi * 400000 * mpmath.mpf(2.5e10) / mpmath.mpf(cfg.v_c)) ** 2
    isl_ref = float(1e7 * mpmath.log(1 + 100 ** 2 / (mpmath.mpf(cfg.zeta) * cfg.chi * 1e7 * fspl), 2))
    mu, d = 10.0, 80.0
    hp = ch.uav_ground_coeff(mu, np.full(100_000, d), cfg.kappa_L, cfg.kappa_N, Rng(2024))
    p_ref = (mu * d ** -cfg.kappa_L + d ** -cfg.kappa_N) / (mu + 1)
    p = float(np.mean(np.abs(hp) ** 2))
    checks = {
        "sat": abs(sat - sat_ref) <= 5e-3 * sat_ref and abs(sat - 7.35e7) <= 5e-3 * 7.35e7,
        "isl": abs(isl - isl_ref) <= 5e-3 * isl_ref and abs(isl - 1.11e7) <= 5e-3 * 1.11e7,
        "rician": abs(p - p_ref) <= 0.02 * p_ref,
    }
    verdict(2, all(checks.values()),
            f"sat {sat:.6g} vs {sat_ref:.6g}; isl {isl:.6g} vs {isl_ref:.6g}; E|h|^2 {p:.4g} vs {p_ref:.4g}")


# ---------------------------------------------------------------- 3


def test_c03_bessel_and_csi():
    mpmath.mp.dps = 50

    def series(x):
        x = mpmath.mpf(x)
        return float(sum((-(x * x) / 4) ** k / mpmath.factorial(k) ** 2 for k in range(60)))

    err = max(abs(ch.bessel_j0(x) - series(x)) for x in np.linspace(0.0, 8.0, 801))
    h_hat = 3e-7 * np.exp(1j * 0.8)
    ratios = {}
    for delta in (0.0, 0.3, 0.9, 1.0):
        h = ch.outdate_csi(np.full(100_000, h_hat), delta, Rng(31))
        ratios[delta] = float(np.mean(np.abs(h) ** 2) / abs(h_hat) ** 2)
    ok = err <= 1e-9 and all(abs(r - 1) <= 0.02 for r in ratios.values())
    verdict(3, ok, f"max |J0 - series| = {err:.2e}; power ratios {ratios}")


# ---------------------------------------------------------------- 4


def test_c04_sce_metric():
    cfg = default_scenario()
    w = md.SceWeights.from_config(cfg)
    zero = all(md.sce(q, q, d, d, w) == 0.0 for q in (10.0, 14.0, 38.0) for d in (2.0, 5.5, 11.0))
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(10_000):
        q1, q2, qm = rng.uniform(0, 50, 3)
        d1, d2, dm = rng.uniform(0, 20, 3)
        lo, hi = sorted((q1, q2))
        dlo, dhi = sorted((d1, d2))
        bad += md.sce(lo, qm, d1, dm, w) > md.sce(hi, qm, d1, dm, w)
        bad += md.sce(q1, hi, d1, dm, w) > md.sce(q1, lo, d1, dm, w)
        bad += md.sce(q1, qm, dhi, dm, w) > md.sce(q1, qm, dlo, dm, w)
        bad += md.sce(q1, qm, d1, dlo, w) > md.sce(q1, qm, d1, dhi, w)
    # weights 0.5/0.5, PSNR bounds 10..40 dB, delay scale 11 s
    bounds = [
        md.sce(40.0, 10.0, 0.0, 11.0, w) == pytest.approx(1.0),
        md.sce(10.0, 40.0, 11.0, 0.0, w) == pytest.approx(-1.0),
        md.sce(25.0, 10.0, 11.0, 11.0, w) == pytest.approx(0.25),
        md.sce(38.0, 10.0, 5.5, 11.0, w) == pytest.approx(0.5 * 28 / 30 + 0.25),
    ]
    verdict(4, zero and bad == 0 and all(bounds), f"zero-point {zero}, monotonicity violations {bad}, bounds {bounds}")


# ---------------------------------------------------------------- 5


def test_c05_environment_oracle():
    cfg = scripted_cfg()
    env = scripted_env(cfg)
    rewards = run(env, serve_all(cfg))
    expect, _ = hand_simulation(cfg, 5.0, 10.0, 8192, 1.33)
    trace_ok = len(rewards) == len(expect) and max(abs(a - b) for a, b in zip(rewards, expect)) <= 1e-9
    cfg = default_scenario()
    rng = np.random.default_rng(55)
    env = SaginEnv(cfg, seed=55)
    slots, failures = 100_000, 0
    for _ in range(slots):
        if env.done:
            env.reset(int(rng.integers(1 << 30)))
        try:
            check_invariants(env, env.step(random_raw_action(cfg, rng)))
        except AssertionError:
            failures += 1
    verdict(5, trace_ok and failures == 0, f"scripted trace match {trace_ok}; invariant failures {failures}/{slots}")


# ---------------------------------------------------------------- 6


def test_c06_critic_gradients():
    rng = np.random.default_rng(6)
    h = 1e-6
    worst, n_active, n_inactive, n = 0.0, 0, 0, 0
    while n < 1000:
        y, J = rng.normal(0.0, 4.0, 2)
        raw = rng.uniform(0.05, 5.0)
        if abs(raw - 1.0) < 1e-3:
            continue  # stay off the kink of the clamp
        n += 1
        n_active += raw < 1.0
        n_inactive += raw >= 1.0
        dJ, dS = channel_grads(y, J, raw, 1.0)

        def nll(j, r):
            return gaussian_nll(y, j, max(r, 1.0))

        for got, fd in ((dJ, (nll(J + h, raw) - nll(J - h, raw)) / (2 * h)),
                        (dS, (nll(J, raw + h) - nll(J, raw - h)) / (2 * h))):
            worst = max(worst, abs(got - fd) / max(1.0, abs(fd)))
    ok = worst <= 1e-4 and n_active > 0 and n_inactive > 0
    verdict(6, ok, f"worst relative error {worst:.2e} over {n} points ({n_active} clamped)")


# ---------------------------------------------------------------- 7


def test_c07_distributional_bandit():
    hp = DsacConfig(hidden=(32, 32), batch_size=256, temperature=0.0, lr_critic=1e-3, lr_actor=1e-3,
                    buffer_size=256, seed=7)
    ag = DsacAgent(1, (2,), 0, 1.0, hp)
    rng = Rng(7, 1)
    seen = []
    B = hp.batch_size
    for i in range(8000):
        if i == 6000:
            ag.hp = dataclasses.replace(ag.hp, lr_critic=1e-4)
        k = rng.integers(0, 2, size=(B, 1))
        r = 2.0 * rng.normal(size=B)
        seen.append(r)
        obs = np.ones((B, 1))
        m = np.ones((B, 2), bool)
        ag.train_step(Batch(obs, ag.encode(k, np.zeros((B, 0))), r, obs, np.ones(B), m, m))
    seen = np.concatenate(seen)
    mc_mean, mc_std = float(seen.mean()), float(seen.std())
    J, S = zip(*(ag.evaluate_critic(np.ones(1), np.array([[k]]), np.zeros((1, 0))) for k in range(2)))
    J, S = np.concatenate(J), np.concatenate(S)
    ok = np.all(np.abs(J - mc_mean) <= 0.1) and np.all(np.abs(S - mc_std) <= 0.2)
    verdict(7, ok, f"J {J.round(4)}, sigma {S.round(4)} vs Monte-Carlo ({mc_mean:.4f}, {mc_std:.4f}) after 8000 updates")


# ---------------------------------------------------------------- 8


def test_c08_tabular_value_iteration():
    nxt = np.array([[1, 2], [2, 0], [0, 1]])
    R = np.array([[0.0, 1.0], [2.0, 0.0], [0.0, -1.0]])
    gamma = 0.8
    Q = np.zeros((3, 2))
    for _ in range(2000):
        Q = R + gamma * Q.max(axis=1)[nxt]
    hp = DsacConfig(hidden=(32, 32), discount=gamma, temperature=0.0, batch_size=256, buffer_size=256,
                    lr_critic=1e-3, lr_actor=1e-3, polyak=0.99, seed=8)
    ag = DsacAgent(3, (2,), 0, 1.0, hp)
    rng = Rng(8, 5)
    eye = np.eye(3)
    B = hp.batch_size
    m = np.ones((B, 2), bool)
    for i in range(10_000):
        if i in (6000, 8500):  # step-size decay averages out the sampled-target noise
            ag.hp = dataclasses.replace(ag.hp, lr_critic=1e-4 if i == 6000 else 2e-5)
        s = rng.integers(0, 3, size=B)
        a = rng.integers(0, 2, size=B)
        ag.train_step(Batch(eye[s], ag.encode(a[:, None], np.zeros((B, 0))), R[s, a], eye[nxt[s, a]],
                            np.zeros(B), m, m))
    J = np.array([[ag.evaluate_critic(eye[s], np.array([[a]]), np.zeros((1, 0)))[0][0] for a in range(2)]
                  for s in range(3)])
    err = float(np.abs(J - Q).max())
    verdict(8, err <= 0.05, f"max |J - Q*| = {err:.4f}")


# ---------------------------------------------------------------- 9


SWEEPS = [
    ("D_max", [2.0, 5.0, 8.0, 11.0], {"Q_min": 10.0}, +1),
    ("Q_min", [10.0, 11.5, 13.0, 14.0], {"D_max": 11.0}, -1),
    ("P_S", [0.25, 0.5, 1.0, 2.0], {"D_max": 11.0, "Q_min": 10.0}, +1),
]


def test_c09_sweep_trends(tmp_path):
    failures = []
    for key, values, fixed, sign in SWEEPS:
        for mode in MODE_IDS:
            out = tmp_path / f"{key}_{mode}"
            args = ["sweep", "--key", key, "--values", ",".join(str(v) for v in values), "--seeds", "0,1,2,3,4",
                    "--policy", f"fixed:{mode}", "--out", str(out)]
            for k, v in fixed.items():
                args += ["--set", f"{k}={v}"]
            assert main(args) == 0
            with open(out / "sweep.csv", newline="") as f:
                rows = list(csv.DictReader(f))
            xs = [float(r["x"]) for r in rows]
            ys = [float(r["mean_sce"]) for r in rows]
            rho = spearmanr(xs, ys).statistic
            if not (xs == values and rho == pytest.approx(sign, abs=1e-12)):
                failures.append(f"{key}/{mode}: rho={rho}")
    verdict(9, not failures, f"{3 * len(MODE_IDS)} sweeps; failures {failures or 'none'}")


# ---------------------------------------------------------------- 10


@pytest.mark.slow
def test_c10_learning_beats_random():
    cfg = small_scenario()
    res = runner.train(cfg, 50_000, seed=0)
    seeds = range(1000, 1020)
    pol = runner.AgentPolicy(res.agent)
    dsac = np.mean([runner.run_episode(cfg, pol, s)["reward"] for s in seeds])
    rand = np.mean([runner.run_episode(cfg, runner.load_policy("random", s), s)["reward"] for s in seeds])
    greedy = np.mean([runner.run_episode(cfg, runner.load_policy("greedy", s), s)["reward"] for s in seeds])
    ok = dsac >= 1.25 * rand and dsac >= greedy - 0.05 * abs(greedy)
    verdict(10, ok, f"DSAC {dsac:.3f}; random {rand:.3f} (x1.25 = {1.25 * rand:.3f}); greedy {greedy:.3f} "
                    f"(-5% = {greedy - 0.05 * abs(greedy):.3f})")


# ---------------------------------------------------------------- 11


def test_c11_determinism(tmp_path):
    commands = [
        ["train", "--scenario", "small", "--set", "warmup_steps=200", "--set", "batch_size=32",
         "--set", "hidden=32,32", "--set", "log_interval=100", "--steps", "1000", "--seed", "3"],
        ["eval", "--policy", "random", "--episodes", "2", "--seed", "5"],
        ["eval", "--scenario", "small", "--policy", "greedy", "--episodes", "3", "--seed", "5", "--trace"],
        ["sweep", "--key", "P_S", "--values", "0.5,1,2", "--seeds", "0,1", "--policy", "fixed:M3_2"],
    ]
    differing = []
    for i, cmd in enumerate(commands):
        outs = []
        for run_id in ("a", "b"):
            out = tmp_path / f"{i}{run_id}"
            assert main(cmd + ["--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            differing.append(cmd[0])
    verdict(11, not differing, f"{len(commands)} commands run twice; differing outputs: {differing or 'none'}")
