"""Distributional soft actor-critic over a hybrid (categorical heads + box) action space.

The critic predicts a Gaussian return distribution ``N(J, sigma)``. Targets are
sampled from the target critic under the target policy, sigma is floored at
``std_floor`` and the std-channel residual is clipped to ``J +- clip_bound``.
Two critics are trained; targets and the policy use the one with smaller J.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from ..approximator import AdamState, DenseNet, load_nets, optimizer_step, polyak_update, save_nets
from ..scenario import Rng, ScenarioConfig

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class BufferTooSmall(RuntimeError):
    pass


@dataclass(frozen=True)
class DsacConfig:
    hidden: tuple = (256, 256)
    discount: float = 0.99
    temperature: float = 0.2
    clip_bound: float = 10.0
    std_floor: float = 1.0
    batch_size: int = 256
    buffer_size: int = 200_000
    lr_critic: float = 3e-4
    lr_actor: float = 1e-4
    polyak: float = 0.995
    seed: int = 0

    @classmethod
    def from_scenario(cls, cfg: ScenarioConfig, **kw) -> "DsacConfig":
        base = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cls)}
        base.update(kw)
        return cls(**base)


# ---------------------------------------------------------------------------
# scalar pieces


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def log1m_tanh2(u):
    """``log(1 - tanh(u)^2)`` without cancellation."""
    u = np.asarray(u, dtype=float)
    return 2.0 * (math.log(2.0) - np.abs(u) - softplus(-2.0 * np.abs(u)))


def clip_target(y, J, bound: float):
    if bound <= 0:
        raise ValueError("clip bound must be > 0")
    return np.clip(y, np.asarray(J) - bound, np.asarray(J) + bound)


def gaussian_nll(y, J, sigma):
    return np.log(sigma) + (y - J) ** 2 / (2.0 * sigma * sigma) + _HALF_LOG_2PI


def clamp_sigma(sigma_raw, std_floor: float):
    return np.maximum(sigma_raw, std_floor)


def critic_partials(y, J, sigma, s=None):
    """The two ascent partials of the return log-likelihood.

    Mean channel ``(y - J)/sigma^2``; std channel ``(s - J)^2/sigma^3 - 1/sigma``
    where ``s`` is the clipped target (``y`` when omitted). ``sigma`` must
    already be floored.
    """
    s = y if s is None else s
    return (y - J) / sigma**2, (s - J) ** 2 / sigma**3 - 1.0 / sigma


def channel_grads(y, J, sigma_raw, std_floor: float, bound: float | None = None,
                  pass_through: bool = False):
    """Loss gradients (descent direction) w.r.t. ``J`` and the unclamped ``sigma_raw``.

    With ``pass_through=False`` this is the exact chain rule through
    ``max(sigma_raw, std_floor)``. With ``pass_through=True`` a floored sigma
    still receives the gradient when it asks sigma to grow, so the head can
    leave the floor.
    """
    y, J, sigma_raw = (np.asarray(v, dtype=float) for v in (y, J, sigma_raw))
    sigma = clamp_sigma(sigma_raw, std_floor)
    s = y if bound is None else clip_target(y, J, bound)
    gJ, gS = critic_partials(y, J, sigma, s)
    dJ, dS = -gJ, -gS
    active = sigma_raw < std_floor
    if pass_through:
        dS = np.where(active & (dS > 0), 0.0, dS)
    else:
        dS = np.where(active, 0.0, dS)
    return dJ, dS


def _apply(act: str, z):
    if act == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z) if act == "tanh" else z


# ---------------------------------------------------------------------------
# replay


@dataclass
class Batch:
    obs: np.ndarray
    act: np.ndarray  # critic encoding: one-hot heads then continuous in [-1, 1]
    rew: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    mask: np.ndarray  # flattened head masks at obs
    next_mask: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int, mask_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.mask = np.ones((capacity, mask_dim), bool)
        self.next_mask = np.ones((capacity, mask_dim), bool)
        self.size = 0
        self.ptr = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, rew, next_obs, done, mask=None, next_mask=None) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.mask[i] = True if mask is None else mask
        self.next_mask[i] = True if next_mask is None else next_mask
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: Rng) -> Batch:
        if self.size < n:
            raise BufferTooSmall(f"buffer holds {self.size} < {n} transitions")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx],
                     self.done[idx], self.mask[idx], self.next_mask[idx])


# ---------------------------------------------------------------------------
# agent


class DsacAgent:
    def __init__(self, obs_dim: int, heads, n_cont: int, bound: float = 1.0,
                 hp: DsacConfig | None = None):
        self.hp = hp or DsacConfig()
        if not 0.0 < self.hp.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        self.obs_dim = int(obs_dim)
        self.heads = tuple(int(h) for h in heads)
        self.n_cont = int(n_cont)
        self.bound = float(bound)
        self.offsets = np.concatenate([[0], np.cumsum(self.heads)]).astype(int)
        self.n_logits = int(self.offsets[-1])
        self.act_dim = self.n_logits + self.n_cont
        rng = Rng(self.hp.seed, 11)
        self.rng = rng.child(1)
        hidden = tuple(self.hp.hidden)
        acts = ("relu",) * len(hidden) + ("identity",)
        self.policy = DenseNet.create((self.obs_dim, *hidden, 2 * self.n_cont + self.n_logits), acts, rng.child(2))
        self.critics = [DenseNet.create((self.obs_dim + self.act_dim, *hidden, 2), acts, rng.child(3 + i))
                        for i in range(2)]
        self.policy_targ = self.policy.copy()
        self.critic_targs = [c.copy() for c in self.critics]
        self.opt_policy = AdamState.for_net(self.policy)
        self.opt_critics = [AdamState.for_net(c) for c in self.critics]
        self.buffer = ReplayBuffer(self.hp.buffer_size, self.obs_dim, self.act_dim, self.n_logits)
        self.updates = 0

    # -------------------------------------------------------------- policy
    def _split(self, out):
        C = self.n_cont
        mean = out[..., :C]
        ls_raw = out[..., C:2 * C]
        logits = out[..., 2 * C:]
        return mean, np.clip(ls_raw, LOG_STD_MIN, LOG_STD_MAX), ls_raw, logits

    def _head_probs(self, logits, mask):
        """Per-head masked probabilities and log-probabilities (lists over heads)."""
        probs, logps = [], []
        for h in range(len(self.heads)):
            a, b = self.offsets[h], self.offsets[h + 1]
            z = logits[..., a:b]
            m = np.ones_like(z, bool) if mask is None else mask[..., a:b]
            z = np.where(m, z, -np.inf)
            z = z - z.max(axis=-1, keepdims=True)
            lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
            lp = np.where(m, z - lse, 0.0)
            probs.append(np.where(m, np.exp(lp), 0.0))
            logps.append(lp)
        return probs, logps

    def _sample_heads(self, probs, stochastic: bool, rng: Rng, B: int):
        out = np.zeros((B, len(probs)), dtype=int)
        for h, p in enumerate(probs):
            if stochastic:
                u = rng.uniform(size=(B, 1))
                out[:, h] = np.minimum((np.cumsum(p, axis=-1) < u).sum(axis=-1), p.shape[-1] - 1)
                # never land on a masked choice through round-off
                bad = p[np.arange(B), out[:, h]] == 0
                if bad.any():
                    out[bad, h] = np.argmax(p[bad], axis=-1)
            else:
                out[:, h] = np.argmax(p, axis=-1)
        return out

    def encode(self, heads_idx, a_unit):
        """Critic action encoding for a batch of (head indices, unit continuous)."""
        heads_idx = np.atleast_2d(heads_idx)
        B = heads_idx.shape[0]
        enc = np.zeros((B, self.act_dim))
        for h in range(len(self.heads)):
            enc[np.arange(B), self.offsets[h] + heads_idx[:, h]] = 1.0
        enc[:, self.n_logits:] = np.reshape(a_unit, (B, self.n_cont))
        return enc

    def _sample_policy(self, net, obs, mask, stochastic, rng):
        out = net.forward(obs)
        mean, ls, _, logits = self._split(out)
        eps = rng.normal(size=mean.shape) if stochastic else np.zeros_like(mean)
        u = mean + eps * np.exp(ls)
        a = np.tanh(u)
        probs, logps = self._head_probs(logits, mask)
        k = self._sample_heads(probs, stochastic, rng, obs.shape[0])
        B = obs.shape[0]
        logp = (-0.5 * eps**2 - ls - _HALF_LOG_2PI - log1m_tanh2(u)).sum(axis=-1)
        for h, lp in enumerate(logps):
            logp = logp + lp[np.arange(B), k[:, h]]
        return k, a, logp

    def act(self, obs, mask=None, stochastic: bool = True, rng: Rng | None = None):
        """Return (head indices, continuous action scaled to ``[-bound, bound]``)."""
        obs = np.asarray(obs, dtype=float)[None, :]
        m = None if mask is None else np.asarray(mask, bool)[None, :]
        k, a, _ = self._sample_policy(self.policy, obs, m, stochastic, rng or self.rng)
        return k[0], a[0] * self.bound

    def log_prob(self, obs, heads_idx, action, mask=None) -> float:
        """Log-density of (heads, continuous action in ``[-bound, bound]``) under the policy."""
        obs = np.asarray(obs, dtype=float)[None, :]
        out = self.policy.forward(obs)
        mean, ls, _, logits = self._split(out)
        a = np.clip(np.asarray(action, dtype=float).reshape(1, -1) / self.bound, -1 + 1e-12, 1 - 1e-12)
        u = np.arctanh(a)
        z = (u - mean) / np.exp(ls)
        total = float((-0.5 * z**2 - ls - _HALF_LOG_2PI - log1m_tanh2(u)).sum())
        _, logps = self._head_probs(logits, None if mask is None else np.asarray(mask, bool)[None, :])
        for h, lp in enumerate(logps):
            total += float(lp[0, int(heads_idx[h])])
        return total

    # -------------------------------------------------------------- critic
    def _critic_eval(self, net, x):
        out, cache = net.forward(x, keep=True)
        sigma_raw = softplus(out[:, 1])
        return out[:, 0], sigma_raw, out, cache

    def critic_target(self, batch: Batch, rng: Rng | None = None) -> np.ndarray:
        rng = rng or self.rng
        hp = self.hp
        k, a, logp = self._sample_policy(self.policy_targ, batch.next_obs, batch.next_mask, True, rng)
        x = np.concatenate([batch.next_obs, self.encode(k, a)], axis=1)
        Js, Ss = [], []
        for net in self.critic_targs:
            out = net.forward(x)
            Js.append(out[:, 0])
            Ss.append(clamp_sigma(softplus(out[:, 1]), hp.std_floor))
        pick = Js[1] < Js[0]
        J = np.where(pick, Js[1], Js[0])
        S = np.where(pick, Ss[1], Ss[0])
        sample = J + S * rng.normal(size=J.shape)
        return batch.rew + (1.0 - batch.done) * hp.discount * (sample - hp.temperature * logp)

    def critic_loss_and_grads(self, batch: Batch, y=None, rng: Rng | None = None):
        hp = self.hp
        if y is None:
            y = self.critic_target(batch, rng)
        x = np.concatenate([batch.obs, batch.act], axis=1)
        B = x.shape[0]
        losses, grads, info = [], [], {}
        for i, net in enumerate(self.critics):
            J, sigma_raw, out, cache = self._critic_eval(net, x)
            sigma = clamp_sigma(sigma_raw, hp.std_floor)
            s = clip_target(y, J, hp.clip_bound)
            loss = float(np.mean(gaussian_nll(s, J, sigma)))
            if not math.isfinite(loss):
                raise FloatingPointError("non-finite critic loss")
            dJ, dS = channel_grads(y, J, sigma_raw, hp.std_floor, hp.clip_bound, pass_through=True)
            up = np.stack([dJ, dS * sigmoid(out[:, 1])], axis=1) / B
            grads.append(net.backward(cache, up))
            losses.append(loss)
            info[f"J{i}"] = float(J.mean())
            info[f"sigma{i}"] = float(sigma.mean())
            info[f"sigma_min{i}"] = float(sigma.min())
        return float(np.mean(losses)), grads, info

    # -------------------------------------------------------------- actor
    def policy_loss_and_grads(self, batch: Batch, rng: Rng | None = None):
        rng = rng or self.rng
        hp = self.hp
        iota = hp.temperature
        obs, mask = batch.obs, batch.mask
        B = obs.shape[0]
        out, pcache = self.policy.forward(obs, keep=True)
        mean, ls, ls_raw, logits = self._split(out)
        std = np.exp(ls)
        eps = rng.normal(size=mean.shape)
        u = mean + eps * std
        a = np.tanh(u)
        probs, logps = self._head_probs(logits, mask)
        k = self._sample_heads(probs, True, rng, B)
        x = np.concatenate([obs, self.encode(k, a)], axis=1)

        # continuous heads: reparameterized through the min-J critic
        evals = [self._critic_eval(net, x) for net in self.critics]
        pick1 = evals[1][0] < evals[0][0]
        J = np.where(pick1, evals[1][0], evals[0][0])
        dJ_da = np.zeros((B, self.n_cont))
        if self.n_cont:
            for i, (_, _, o, cache) in enumerate(evals):
                sel = pick1 if i == 1 else ~pick1
                up = np.zeros_like(o)
                up[:, 0] = sel
                dJ_da += self.critics[i].backward(cache, up).dx[:, self.obs_dim + self.n_logits:]
        logp_c = (-0.5 * eps**2 - ls - _HALF_LOG_2PI - log1m_tanh2(u)).sum(axis=-1)
        g_u = dJ_da * (1.0 - a * a)
        d_mean = g_u - iota * 2.0 * a
        d_ls = g_u * eps * std - iota * (-1.0 + 2.0 * a * eps * std)
        d_ls = np.where((ls_raw > LOG_STD_MIN) & (ls_raw < LOG_STD_MAX), d_ls, 0.0)

        # discrete heads: exact expectation, other heads held at their samples
        d_logits = np.zeros_like(logits)
        logp = logp_c.copy()
        entropy = -logp_c
        if self.heads:
            Q = self._head_values(x, mask)
            for h in range(len(self.heads)):
                lo, hi = self.offsets[h], self.offsets[h + 1]
                p, lp = probs[h], logps[h]
                term = np.where(mask[:, lo:hi], Q[:, lo:hi] - iota * lp, 0.0)
                V = (p * term).sum(axis=1)
                d_logits[:, lo:hi] = p * (term - V[:, None])
                entropy = entropy - (p * lp).sum(axis=1)
                logp = logp + lp[np.arange(B), k[:, h]]
        loss = -float(np.mean(J - iota * logp))
        up = -np.concatenate([d_mean, d_ls, d_logits], axis=1) / B
        grads = self.policy.backward(pcache, up)
        return loss, grads, {"entropy": float(entropy.mean()), "J_pi": float(J.mean())}

    def _head_values(self, x, mask):
        """min-twin J for every allowed (head, choice) with the rest of ``x`` fixed.

        Returns shape (B, L); entries of heads with a single allowed choice are
        left at zero since they carry no policy gradient.
        """
        B = x.shape[0]
        L = self.n_logits
        O = self.obs_dim
        head_of = np.repeat(np.arange(len(self.heads)), self.heads)
        allowed = np.add.reduceat(mask, self.offsets[:-1], axis=1)  # (B, H) allowed count
        live = mask & (allowed[:, head_of] > 1)
        bi, li = np.nonzero(live)
        Q = np.zeros((B, L))
        if bi.size == 0:
            return Q
        cur = x[:, O:O + L]
        chosen = np.zeros((B, len(self.heads)), dtype=int)
        for h in range(len(self.heads)):
            lo, hi = self.offsets[h], self.offsets[h + 1]
            chosen[:, h] = np.argmax(cur[:, lo:hi], axis=1) + lo
        best = np.full(bi.size, np.inf)
        for net in self.critics:
            W1 = net.W[0]
            z1 = x @ W1 + net.b[0]
            z = z1[bi] - W1[O + chosen[bi, head_of[li]]] + W1[O + li]
            a = _apply(net.activations[0], z)
            for W, b, act in zip(net.W[1:], net.b[1:], net.activations[1:]):
                a = _apply(act, a @ W + b)
            best = np.minimum(best, a[:, 0])
        Q[bi, li] = best
        return Q

    # -------------------------------------------------------------- training
    def train_step(self, batch: Batch | None = None) -> dict:
        hp = self.hp
        if batch is None:
            batch = self.buffer.sample(hp.batch_size, self.rng)
        closs, cgrads, cinfo = self.critic_loss_and_grads(batch)
        for net, g, st in zip(self.critics, cgrads, self.opt_critics):
            optimizer_step(net, g, st, hp.lr_critic)
        ploss, pgrads, pinfo = self.policy_loss_and_grads(batch)
        optimizer_step(self.policy, pgrads, self.opt_policy, hp.lr_actor)
        for t, o in zip(self.critic_targs, self.critics):
            polyak_update(t, o, hp.polyak)
        polyak_update(self.policy_targ, self.policy, hp.polyak)
        self.updates += 1
        sig = min(cinfo["sigma_min0"], cinfo["sigma_min1"])
        return {"critic_loss": closs, "policy_loss": ploss, "mean_J": 0.5 * (cinfo["J0"] + cinfo["J1"]),
                "mean_sigma": 0.5 * (cinfo["sigma0"] + cinfo["sigma1"]), "min_sigma": sig,
                "entropy": pinfo["entropy"]}

    def evaluate_critic(self, obs, heads_idx, a_unit):
        x = np.concatenate([np.atleast_2d(obs), self.encode(heads_idx, a_unit)], axis=1)
        outs = [net.forward(x) for net in self.critics]
        J = np.minimum(outs[0][:, 0], outs[1][:, 0])
        return J, clamp_sigma(softplus(outs[0][:, 1]), self.hp.std_floor)

    # -------------------------------------------------------------- io
    def nets(self) -> dict:
        return {"policy": self.policy, "policy_targ": self.policy_targ,
                "critic0": self.critics[0], "critic1": self.critics[1],
                "critic0_targ": self.critic_targs[0], "critic1_targ": self.critic_targs[1]}

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"obs_dim": self.obs_dim, "heads": list(self.heads), "n_cont": self.n_cont,
                "bound": self.bound, "hp": {**dataclasses.asdict(self.hp), "hidden": list(self.hp.hidden)},
                "updates": self.updates, **(extra or {})}
        save_nets(path, self.nets(), meta)

    @classmethod
    def load(cls, path) -> tuple["DsacAgent", dict]:
        nets, meta = load_nets(path)
        hp_d = dict(meta["hp"])
        hp_d["hidden"] = tuple(hp_d["hidden"])
        hp = DsacConfig(**hp_d)
        agent = cls(meta["obs_dim"], meta["heads"], meta["n_cont"], meta["bound"],
                    dataclasses.replace(hp, buffer_size=hp.batch_size))
        agent.policy, agent.policy_targ = nets["policy"], nets["policy_targ"]
        agent.critics = [nets["critic0"], nets["critic1"]]
        agent.critic_targs = [nets["critic0_targ"], nets["critic1_targ"]]
        agent.hp = hp  # the buffer stays small; keep the saved settings for re-saving
        agent.updates = int(meta.get("updates", 0))
        return agent, meta
