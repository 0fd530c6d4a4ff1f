"""Reference policies: random, greedy-SCE and fixed-mode."""

from __future__ import annotations

import numpy as np

from .. import channel
from ..env import Action, SaginEnv, decode_action
from ..modes import estimated_delay, sce
from ..scenario import MODE_IDS, Rng
from ..traffic import Stage

_PENDING = (Stage.ENCODING, Stage.QUEUED_AT_LEO, Stage.AT_RELAY_LEO, Stage.SAT_TO_UAV)


class RandomPolicy:
    """Uniform over the masked choices of every head; velocities uniform in the box."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = Rng(seed, 7)

    def act(self, env: SaginEnv) -> Action:
        heads = []
        for m in env.action_masks():
            idx = np.flatnonzero(m)
            heads.append(int(idx[self.rng.integers(0, len(idx))]))
        v = env.cfg.v_max
        cont = self.rng.uniform(-v, v, size=env.spec.n_continuous)
        return decode_action(heads, cont, env.cfg)


class GreedySce:
    """Myopic heuristic.

    Users pair with the nearest UAV, UAVs fly toward the centroid of their users,
    each UAV listens to the visible LEO holding the oldest pending task for its
    users, invisible LEOs forward over ISL to the visible LEO with the most
    remaining pass time, and each new task gets the mode with the best SCE
    estimate under current rates (queueing ignored).
    """

    name = "greedy-sce"

    def __init__(self, force_mode: int | None = None):
        self.force_mode = force_mode
        if force_mode is not None:
            self.name = f"fixed:{MODE_IDS[force_mode]}"

    def act(self, env: SaginEnv) -> Action:
        cfg, st = env.cfg, env.state
        N, M, K = cfg.N, cfg.M, cfg.K
        now = st.t * cfg.slot_dt
        geo = st.geo

        horiz = geo.uav_pos[:, None, :2] - geo.user_pos[None, :, :2]
        user_uav = np.argmin(np.linalg.norm(horiz, axis=2), axis=0)

        vel = np.zeros((N, 3))
        for n in range(N):
            mine = geo.user_pos[user_uav == n]
            if len(mine):
                delta = mine[:, :2].mean(axis=0) - geo.uav_pos[n, :2]
                dist = float(np.linalg.norm(delta))
                if dist > 1e-9:
                    vel[n, :2] = delta / dist * min(cfg.v_max, dist / cfg.slot_dt)

        visible = st.visible
        remaining = np.array([p.remaining(now) for p in geo.passes])
        uav_leo = np.full(N, -1)
        for n in range(N):
            best = None
            for task in env.active:
                if task.stage not in _PENDING or user_uav[task.dst_user] != n:
                    continue
                k = task.cur_leo
                if not visible[k]:
                    continue
                committed = task.stage is Stage.SAT_TO_UAV and task.relay_uav == n
                key = (0 if committed else 1, task.arrival_time, task.id)
                if best is None or key < best[0]:
                    best = (key, k)
            if best is not None:
                uav_leo[n] = best[1]
            elif visible.any():
                uav_leo[n] = int(np.argmax(np.where(visible, remaining, -1.0)))

        isl = np.full(K, -1)
        used = np.zeros(K, bool)
        for task in env.active:  # keep in-flight transfers on their committed link
            if task.stage is Stage.ISL_IN_FLIGHT and isl[task.cur_leo] < 0:
                i, j = task.cur_leo, task.isl_target
                if not used[i] and not used[j]:
                    isl[i] = j
                    used[i] = used[j] = True
        senders = sorted({t.cur_leo for t in env.active
                          if t.stage in (Stage.QUEUED_AT_LEO, Stage.ENCODING) and not t.forwarded
                          and not visible[t.cur_leo]})
        for i in senders:
            if used[i]:
                continue
            cands = [j for j in range(K) if j != i and visible[j] and not used[j]]
            if cands:
                j = max(cands, key=lambda c: (remaining[c], -c))
                isl[i] = j
                used[i] = used[j] = True

        mode = np.zeros(cfg.window, dtype=int)
        ug = channel.ug_rate_matrix(np.abs(st.ug_coeff) ** 2, np.ones(N, bool), cfg)
        for w, task in enumerate(env.window_tasks()):
            if task.stage is not Stage.AWAITING_MODE:
                continue
            if self.force_mode is not None:
                mode[w] = self.force_mode
                continue
            mode[w] = self._pick_mode(env, task, int(user_uav[task.dst_user]), ug, visible, remaining)
        return Action(uav_leo, user_uav.astype(int), isl, vel, mode)

    def _hop_rates(self, env, task, n, ug, visible, remaining) -> list[float]:
        k = task.src_leo
        if visible[k]:
            hops = [env.sat_rates[k, n]]
        else:
            cands = [j for j in range(env.cfg.K) if j != k and visible[j]]
            if not cands:
                return [0.0]
            j = max(cands, key=lambda c: (remaining[c], -c))
            hops = [env.isl_rates[k, j], env.sat_rates[j, n]]
        return hops + [float(ug[n, task.dst_user])]

    def _pick_mode(self, env, task, n, ug, visible, remaining) -> int:
        now = env.state.t * env.cfg.slot_dt
        waited = max(0.0, now - task.arrival_time)
        rates = self._hop_rates(env, task, n, ug, visible, remaining)
        best, best_val = None, -np.inf
        for mi, prof in enumerate(env.profiles):
            if env._quality[mi] < task.Q_min:
                continue
            D = waited + estimated_delay(prof, rates)
            val = sce(env._quality[mi], task.Q_min, D, task.D_max, env.weights)
            if D > task.D_max:
                val -= 10.0  # infeasible; keep as last resort ordered by estimate
            if val > best_val:
                best, best_val = mi, val
        return 0 if best is None else best


def baseline_policy(kind: str, seed: int = 0):
    """``random``, ``greedy`` / ``greedy-sce``, or ``fixed:<mode>`` / ``fixed-mode(<mode>)``."""
    k = kind.strip()
    if k == "random":
        return RandomPolicy(seed)
    if k in ("greedy", "greedy-sce"):
        return GreedySce()
    for prefix, suffix in (("fixed:", ""), ("fixed-mode(", ")")):
        if k.startswith(prefix) and k.endswith(suffix):
            mid = k[len(prefix):len(k) - len(suffix)] if suffix else k[len(prefix):]
            if mid not in MODE_IDS:
                raise ValueError(f"unknown mode {mid!r}; expected one of {MODE_IDS}")
            return GreedySce(force_mode=MODE_IDS.index(mid))
    raise ValueError(f"unknown baseline policy {kind!r}")
