import dataclasses
import math

import numpy as np
import pytest

from sagin.agents.dsac import (
    Batch,
    BufferTooSmall,
    DsacAgent,
    DsacConfig,
    ReplayBuffer,
    channel_grads,
    clip_target,
    critic_partials,
    gaussian_nll,
)
from sagin.approximator import AdamState, GradientRecord, optimizer_step
from sagin.scenario import Rng

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def tiny_agent(heads=(5,), n_cont=1, **kw):
    hp = DsacConfig(hidden=(16, 16), batch_size=32, buffer_size=256, **kw)
    return DsacAgent(3, heads, n_cont, 10.0, hp)


def zero_policy(agent):
    for p in agent.policy.params():
        p[:] = 0.0


def bandit_batch(agent, rng, B, reward):
    k = rng.integers(0, agent.heads[0], size=(B, 1)) if agent.heads else np.zeros((B, 0), int)
    a = rng.uniform(-1, 1, size=(B, agent.n_cont))
    obs = np.ones((B, agent.obs_dim))
    m = np.ones((B, agent.n_logits), bool)
    return Batch(obs, agent.encode(k, a), reward(B), obs, np.ones(B), m, m)


# ---------------------------------------------------------------- acting


def test_deterministic_zero_logits_pick_first_index():
    ag = tiny_agent(heads=(5, 3, 4), n_cont=2)
    zero_policy(ag)
    heads, cont = ag.act(np.zeros(3), stochastic=False)
    assert heads.tolist() == [0, 0, 0]
    assert np.array_equal(cont, np.zeros(2))


def test_degenerate_std_gives_squashed_mean():
    ag = tiny_agent(heads=(), n_cont=1)
    zero_policy(ag)
    ag.policy.b[-1][:] = [0.3, -1e6]  # mean, log-std far below the clamp
    _, cont = ag.act(np.zeros(3), stochastic=True, rng=Rng(0))
    assert cont[0] == pytest.approx(10.0 * math.tanh(0.3), abs=1e-7)


def test_stochastic_act_reproducible():
    obs = np.linspace(-1, 1, 3)
    a = tiny_agent(heads=(5, 4), n_cont=2)
    b = tiny_agent(heads=(5, 4), n_cont=2)
    h1, c1 = a.act(obs, stochastic=True, rng=Rng(4))
    h2, c2 = b.act(obs, stochastic=True, rng=Rng(4))
    assert np.array_equal(h1, h2) and np.array_equal(c1, c2)
    assert np.all(np.abs(c1) <= 10.0)


def test_masked_choice_never_sampled():
    ag = tiny_agent(heads=(4,), n_cont=0)
    mask = np.array([False, True, False, True])
    picks = {int(ag.act(np.zeros(3), mask, stochastic=True)[0][0]) for _ in range(200)}
    assert picks <= {1, 3}


# ---------------------------------------------------------------- log-prob


def test_log_prob_uniform_head():
    ag = tiny_agent(heads=(5,), n_cont=0)
    zero_policy(ag)
    for k in range(5):
        assert ag.log_prob(np.zeros(3), [k], np.zeros(0)) == pytest.approx(-math.log(5), abs=1e-12)


def test_log_prob_gaussian_at_mean():
    ag = tiny_agent(heads=(), n_cont=1)
    zero_policy(ag)  # mean 0, log-std 0
    assert ag.log_prob(np.zeros(3), [], np.zeros(1)) == pytest.approx(-HALF_LOG_2PI, abs=1e-12)


def test_log_prob_sums_over_heads():
    ag = tiny_agent(heads=(5, 3), n_cont=2)
    obs = np.array([0.2, -0.4, 0.9])
    heads, cont = ag.act(obs, stochastic=True, rng=Rng(2))
    total = ag.log_prob(obs, heads, cont)
    out = ag.policy.forward(obs[None, :])
    mean, ls, _, logits = ag._split(out)
    parts = 0.0
    for h, (lo, hi) in enumerate(zip(ag.offsets[:-1], ag.offsets[1:])):
        z = logits[0, lo:hi]
        parts += z[heads[h]] - np.log(np.exp(z).sum())
    for j in range(2):
        a = cont[j] / 10.0
        u = math.atanh(a)
        sd = math.exp(ls[0, j])
        parts += -0.5 * ((u - mean[0, j]) / sd) ** 2 - ls[0, j] - HALF_LOG_2PI - math.log(1 - a * a)
    assert total == pytest.approx(parts, abs=1e-8)


# ---------------------------------------------------------------- critic


def test_critic_target_terminal_and_zero_discount():
    ag = tiny_agent()
    rng = Rng(1)
    batch = bandit_batch(ag, rng, 16, lambda B: np.full(B, 5.0))
    assert np.array_equal(ag.critic_target(batch, Rng(3)), np.full(16, 5.0))
    ag2 = tiny_agent(discount=1e-300)
    batch.done[:] = 0.0
    assert np.allclose(ag2.critic_target(batch, Rng(3)), 5.0, atol=1e-200)
    with pytest.raises(ValueError):
        tiny_agent(discount=0.0)


def test_clip_examples():
    assert clip_target(0.3, 0.0, 1.0) == 0.3
    assert clip_target(2.0 + 4.0, 2.0, 2.0) == 4.0
    assert clip_target(-5.0, 0.0, 1.0) == -1.0
    with pytest.raises(ValueError):
        clip_target(0.0, 0.0, 0.0)


def test_partials_vanish_where_expected():
    gJ, _ = critic_partials(1.5, 1.5, 1.0)
    assert gJ == 0.0
    _, gS = critic_partials(3.0, 1.0, 2.0)  # (y - J)^2 = sigma^2
    assert gS == 0.0


def test_std_channel_uses_clipped_target():
    dJ, dS = channel_grads(20.0, 0.0, 2.0, 1.0, bound=10.0)
    assert dJ == pytest.approx(-20.0 / 4.0)
    assert dS == pytest.approx(-(100.0 / 8.0 - 0.5))


def test_channel_grads_match_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(200):
        y, J = rng.normal(0, 3, 2)
        raw = rng.uniform(0.1, 4.0)
        if abs(raw - 1.0) < 1e-3:
            continue
        dJ, dS = channel_grads(y, J, raw, 1.0)

        def nll(j, r):
            return gaussian_nll(y, j, max(r, 1.0))

        fJ = (nll(J + h, raw) - nll(J - h, raw)) / (2 * h)
        fS = (nll(J, raw + h) - nll(J, raw - h)) / (2 * h)
        assert abs(dJ - fJ) <= 1e-4 * max(1.0, abs(fJ))
        assert abs(dS - fS) <= 1e-4 * max(1.0, abs(fS))


def test_pass_through_lets_sigma_leave_floor():
    # sigma_raw under the floor, residual wants a larger sigma: gradient passes
    _, dS = channel_grads(5.0, 0.0, 0.5, 1.0, pass_through=True)
    assert dS < 0
    _, dS_exact = channel_grads(5.0, 0.0, 0.5, 1.0)
    assert dS_exact == 0.0
    # residual wants a smaller sigma: the floor blocks it either way
    _, dS = channel_grads(0.1, 0.0, 0.5, 1.0, pass_through=True)
    assert dS == 0.0


def test_constant_reward_bandit_critic():
    ag = DsacAgent(1, (2,), 0, 1.0, DsacConfig(hidden=(16, 16), temperature=0.0, lr_critic=1e-2, buffer_size=64))
    rng = Rng(0)
    for _ in range(200):
        m = ag.train_step(bandit_batch(ag, rng, 64, lambda B: np.full(B, 3.0)))
        assert m["min_sigma"] >= 1.0
    for k in range(2):
        J, sigma = ag.evaluate_critic(np.ones(1), np.array([[k]]), np.zeros((1, 0)))
        assert J[0] == pytest.approx(3.0, abs=0.1)
        assert sigma[0] >= 1.0


# ---------------------------------------------------------------- actor


class QuadCritic:
    """Stand-in critic J(a) = -a^2 on the last input column, sigma irrelevant."""

    def forward(self, x, keep=False):
        a = x[:, -1]
        out = np.stack([-a * a, np.zeros_like(a)], axis=1)
        return (out, x) if keep else out

    def backward(self, x, up):
        dx = np.zeros_like(x)
        dx[:, -1] = up[:, 0] * (-2.0 * x[:, -1])
        return GradientRecord([], [], dx)


def test_flat_critic_gives_no_continuous_gradient():
    ag = tiny_agent(heads=(), n_cont=2, temperature=0.0)
    for i, c in enumerate(ag.critics):
        for p in c.params():
            p[:] = 0.0
        c.b[-1][:] = [1.5, 0.0]
    batch = bandit_batch(ag, Rng(0), 16, lambda B: np.zeros(B))
    _, grads, _ = ag.policy_loss_and_grads(batch, Rng(1))
    assert np.abs(grads.flat()).max() < 1e-12


def test_policy_finds_critic_argmax():
    hp = DsacConfig(hidden=(16,), temperature=0.0, batch_size=64, buffer_size=64)
    ag = DsacAgent(1, (), 1, 1.0, hp)
    ag.critics = [QuadCritic(), QuadCritic()]
    ag.policy.b[-1][0] = 1.0  # start with tanh(mean) = 0.76
    opt = AdamState.for_net(ag.policy)
    rng = Rng(3)
    batch = bandit_batch(ag, rng, 64, lambda B: np.zeros(B))
    for _ in range(5000):
        _, g, _ = ag.policy_loss_and_grads(batch, rng)
        optimizer_step(ag.policy, g, opt, 1e-3)
    mean = ag.policy.forward(np.ones((1, 1)))[0, 0]
    assert abs(math.tanh(mean)) < 0.05


def test_large_temperature_raises_entropy():
    hp = DsacConfig(hidden=(16,), temperature=1e3, batch_size=64, buffer_size=64)
    ag = DsacAgent(1, (5,), 0, 1.0, hp)
    for c in ag.critics:
        for p in c.params():
            p[:] = 0.0
    ag.policy.b[-1][:] = [4.0, 0.0, -1.0, 0.0, -3.0]  # sharply peaked start
    opt = AdamState.for_net(ag.policy)
    rng = Rng(0)
    batch = bandit_batch(ag, rng, 64, lambda B: np.zeros(B))

    def entropy():
        z = ag.policy.forward(np.ones((1, 1)))[0]
        p = np.exp(z - z.max())
        p /= p.sum()
        return float(-(p * np.log(p)).sum())

    hist = [entropy()]
    for _ in range(1000):
        _, g, _ = ag.policy_loss_and_grads(batch, rng)
        optimizer_step(ag.policy, g, opt, 1e-4)
        hist.append(entropy())
    assert np.all(np.diff(hist) > 0)
    assert hist[-1] > hist[0] + 0.1


# ---------------------------------------------------------------- training plumbing


def test_replay_buffer_reproducible_and_guarded():
    buf = ReplayBuffer(8, 2, 3, 3)
    with pytest.raises(BufferTooSmall):
        buf.sample(1, Rng(0))
    for i in range(12):
        buf.add(np.full(2, i), np.zeros(3), float(i), np.zeros(2), False)
    assert len(buf) == 8
    assert set(buf.rew) == set(range(4, 12))
    a, b = buf.sample(5, Rng(7)), buf.sample(5, Rng(7))
    assert np.array_equal(a.rew, b.rew) and np.array_equal(a.obs, b.obs)


def fill(agent, n=64):
    rng = np.random.default_rng(0)
    for _ in range(n):
        k = rng.integers(0, agent.heads, size=len(agent.heads))
        c = rng.uniform(-1, 1, agent.n_cont)
        agent.buffer.add(rng.normal(size=3), agent.encode(k[None, :], c[None, :])[0], rng.normal(),
                         rng.normal(size=3), bool(rng.integers(2)))


def test_train_step_deterministic():
    a, b = tiny_agent(heads=(5, 3), n_cont=2), tiny_agent(heads=(5, 3), n_cont=2)
    fill(a)
    fill(b)
    for _ in range(5):
        ma, mb = a.train_step(), b.train_step()
        assert ma == mb
        assert ma["min_sigma"] >= 1.0
    for x, y in zip(a.nets().values(), b.nets().values()):
        assert all(np.array_equal(p, q) for p, q in zip(x.params(), y.params()))


def test_train_step_needs_full_batch():
    ag = tiny_agent()
    fill(ag, 10)
    with pytest.raises(BufferTooSmall):
        ag.train_step()


def test_save_load_round_trip(tmp_path):
    ag = tiny_agent(heads=(5, 3), n_cont=2)
    fill(ag)
    ag.train_step()
    ag.save(tmp_path / "a.ckpt", {"note": "x"})
    back, meta = DsacAgent.load(tmp_path / "a.ckpt")
    assert meta["note"] == "x" and back.updates == 1
    assert back.hp == ag.hp
    obs = np.array([0.1, 0.2, 0.3])
    assert all(np.array_equal(x, y) for x, y in zip(ag.act(obs, stochastic=False), back.act(obs, stochastic=False)))


def test_from_scenario_picks_up_learning_settings(small):
    hp = DsacConfig.from_scenario(small, seed=3)
    assert hp.hidden == tuple(small.hidden) and hp.seed == 3
    assert dataclasses.replace(hp, seed=0) != hp
