"""Slot-based SAGIN environment: hybrid action, constraint repair, dynamics and reward.

Each slot runs, in order:

1. UAV motion under the (projected) velocity command.
2. LEO pass bookkeeping and per-slot channel resampling.
3. Mode binding for window tasks awaiting a mode.
4. Link service over ``[t*dt, (t+1)*dt)`` in pipeline order: LEO encoders, ISLs,
   LEO->UAV downlinks, UAV->user links, user decoders.  Every resource is an
   exclusive FIFO server; a task finishing one hop mid-slot may start the next
   hop in the same slot, so delays are exact rather than slot-quantized.
5. Completion (SCE accrues) and deadline failure.
6. Penalty flag and reward ``sum(sce) - phi``; new arrivals for the next slot.

Observation layout (``observation_size``)::

    [t/horizon]
    [x, y, z normalized]                 x N UAVs
    [|h_nm|^2 in dB rescaled to [0,1]]   x N*M
    [remaining visibility / pass length] x K LEOs
    per task-window slot (W):
        [present, Q_min norm, D_max/d_scale, elapsed/D_max (<=2, halved),
         remaining hop fraction] + stage one-hot(8) + mode one-hot(5)
         + current-LEO one-hot(K) + destination-user one-hot(M)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel, geometry
from .modes import N_MODES, SceWeights, mode_profiles, sce
from .scenario import MODE_IDS, Rng, ScenarioConfig, validate
from .traffic import Stage, Task, enter_stage, serve

N_TASK_STAGES = int(Stage.DECODING) + 1
# slot boundaries are k * dt in floating point; do not let 1.5000000000000002 breach a 1.5 s deadline
TIME_EPS = 1e-9

# RNG stream ids
_GEO, _CHANNEL, _TRAFFIC = 1, 2, 3

_GAIN_DB_LO, _GAIN_DB_HI = -130.0, -30.0


class EnvDone(RuntimeError):
    pass


@dataclass
class Action:
    uav_leo: np.ndarray  # (N,) LEO index or -1
    user_uav: np.ndarray  # (M,) UAV index or -1
    isl: np.ndarray  # (K,) destination LEO or -1
    uav_vel: np.ndarray  # (N, 3) m/s
    mode: np.ndarray  # (W,) mode index for each task-window slot

    def copy(self) -> "Action":
        return Action(self.uav_leo.copy(), self.user_uav.copy(), self.isl.copy(),
                      self.uav_vel.copy(), self.mode.copy())

    def to_dict(self) -> dict:
        return {"uav_leo": self.uav_leo.tolist(), "user_uav": self.user_uav.tolist(),
                "isl": self.isl.tolist(), "uav_vel": self.uav_vel.tolist(), "mode": self.mode.tolist()}


def idle_action(cfg: ScenarioConfig) -> Action:
    return Action(np.full(cfg.N, -1), np.full(cfg.M, -1), np.full(cfg.K, -1),
                  np.zeros((cfg.N, 3)), np.zeros(cfg.window, dtype=int))


@dataclass
class StepResult:
    reward: float
    done: bool
    completed: list  # (task id, sce)
    failed: list  # (task id, reason)
    violated: bool
    action: Action  # the action actually applied
    repairs: list = field(default_factory=list)
    t: int = 0

    @property
    def phi(self) -> int:
        return int(self.violated)


@dataclass
class EnvState:
    t: int
    geo: geometry.GeoState
    ug_coeff: np.ndarray  # (N, M) complex, current slot
    sat_gain_sq: np.ndarray  # (K, N)
    visible: np.ndarray  # (K,) bool at slot start
    tasks: list
    admitted: int = 0
    los_phase: np.ndarray | None = None


@dataclass(frozen=True)
class ActionSpec:
    discrete: tuple[int, ...]
    n_continuous: int
    bound: float

    @property
    def n_logits(self) -> int:
        return sum(self.discrete)


def action_spec(cfg: ScenarioConfig) -> ActionSpec:
    """Heads: N x (K+1) UAV->LEO, M x (N+1) user->UAV, K x K ISL, W x 5 mode; 3N velocities."""
    heads = (cfg.K + 1,) * cfg.N + (cfg.N + 1,) * cfg.M + (cfg.K,) * cfg.K + (N_MODES,) * cfg.window
    return ActionSpec(heads, 3 * cfg.N, cfg.v_max)


def observation_size(cfg: ScenarioConfig) -> int:
    per_task = 5 + N_TASK_STAGES + N_MODES + cfg.K + cfg.M
    return 1 + 3 * cfg.N + cfg.N * cfg.M + cfg.K + cfg.window * per_task


def _isl_others(i: int, K: int) -> list[int]:
    return [j for j in range(K) if j != i]


def decode_action(heads, cont, cfg: ScenarioConfig) -> Action:
    """Map flat head indices + continuous vector onto an ``Action``."""
    heads = np.asarray(heads, dtype=int)
    N, M, K, W = cfg.N, cfg.M, cfg.K, cfg.window
    uav_leo = heads[:N] - 1
    user_uav = heads[N:N + M] - 1
    isl_raw = heads[N + M:N + M + K]
    isl = np.full(K, -1)
    for i, c in enumerate(isl_raw):
        if c > 0:
            isl[i] = _isl_others(i, K)[c - 1]
    mode = heads[N + M + K:N + M + K + W].copy()
    vel = np.asarray(cont, dtype=float).reshape(N, 3)
    return Action(uav_leo, user_uav, isl, vel, mode)


def encode_action(a: Action, cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    K = cfg.K
    isl = np.zeros(K, dtype=int)
    for i, j in enumerate(a.isl):
        if j >= 0:
            isl[i] = _isl_others(i, K).index(int(j)) + 1
    heads = np.concatenate([a.uav_leo + 1, a.user_uav + 1, isl, a.mode]).astype(int)
    return heads, np.asarray(a.uav_vel, dtype=float).reshape(-1)


def action_violations(raw: Action, state: EnvState, cfg: ScenarioConfig) -> list[str]:
    return project_action(raw, state, cfg, _report=True)[1]


def project_action(raw: Action, state: EnvState, cfg: ScenarioConfig, _report: bool = False):
    """Deterministically repair ``raw`` onto the feasible set.

    UAV pairings with invisible LEOs become none; each LEO takes part in at most
    one ISL per slot (lowest sender index kept); velocities are rescaled to
    ``v_max``.  Malformed indices are reset to none.
    """
    N, M, K, W = cfg.N, cfg.M, cfg.K, cfg.window
    notes: list[str] = []
    a = raw.copy()
    for n in range(N):
        k = int(a.uav_leo[n])
        if k >= K or k < -1:
            notes.append(f"uav_leo[{n}] out of range")
            a.uav_leo[n] = -1
        elif k >= 0 and not state.visible[k]:
            a.uav_leo[n] = -1  # visibility screen, not a P1 violation
    for m in range(M):
        if not -1 <= int(a.user_uav[m]) < N:
            notes.append(f"user_uav[{m}] out of range")
            a.user_uav[m] = -1
    used = np.zeros(K, bool)
    for i in range(K):
        j = int(a.isl[i])
        if j == -1:
            continue
        if j == i or not 0 <= j < K:
            notes.append(f"isl[{i}] invalid target")
            a.isl[i] = -1
        elif used[i] or used[j]:
            notes.append(f"isl[{i}] duplicate ISL use")
            a.isl[i] = -1
        else:
            used[i] = used[j] = True
    vel = np.asarray(a.uav_vel, dtype=float).reshape(N, 3)
    if np.any(np.linalg.norm(vel, axis=1) > cfg.v_max * (1 + 1e-12)):
        notes.append("uav speed above v_max")
    a.uav_vel = geometry.clip_speed(vel, cfg.v_max)
    mode = np.asarray(a.mode, dtype=int).reshape(-1)
    if mode.shape[0] != W or np.any((mode < 0) | (mode >= N_MODES)):
        notes.append("mode out of range")
        fixed = np.zeros(W, dtype=int)
        ok = mode[:W]
        fixed[:ok.shape[0]] = np.where((ok >= 0) & (ok < N_MODES), ok, 0)
        mode = fixed
    a.mode = mode
    if _report:
        return a, notes
    return a


class SaginEnv:
    """Single-owner environment instance; ``reset`` then ``step`` repeatedly."""

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = validate(cfg)
        self.profiles = mode_profiles(cfg)
        self.weights = SceWeights.from_config(cfg)
        self.spec = action_spec(cfg)
        self.obs_size = observation_size(cfg)
        self._qkey = cfg.mode_quality_key
        self._quality = np.array([p.quality(self._qkey) for p in self.profiles])
        self.seed = seed
        self.state: EnvState | None = None
        self.done = False
        self.reset(seed)

    # ------------------------------------------------------------------ setup
    def reset(self, seed: int | None = None) -> EnvState:
        cfg = self.cfg
        if seed is not None:
            self.seed = int(seed)
        root = Rng(self.seed)
        geo_rng = root.child(_GEO)
        self.ch_rng = root.child(_CHANNEL)
        self.tr_rng = root.child(_TRAFFIC)
        geo = geometry.place(cfg, geo_rng)
        los_phase = geo_rng.uniform(0.0, 2.0 * math.pi, size=(cfg.N, cfg.M))
        T_pass = geo.passes[0].pass_length if geo.passes else 0.0
        self.pass_length = T_pass
        R = channel.isl_rate(cfg.B_isl, cfg.P_S, cfg.eta_max, np.where(geo.isl_dist > 0, geo.isl_dist, 1.0),
                             cfg.f_I, cfg)
        np.fill_diagonal(R, 0.0)
        self.isl_rates = np.full((cfg.K, cfg.K), cfg.fixed_rate_isl) if cfg.fixed_rate_isl > 0 else R
        self.state = EnvState(
            t=0, geo=geo, ug_coeff=np.zeros((cfg.N, cfg.M), complex),
            sat_gain_sq=np.zeros((cfg.K, cfg.N)), visible=np.zeros(cfg.K, bool),
            tasks=[], admitted=0, los_phase=los_phase,
        )
        self.active: list[Task] = []
        self.done = False
        self.sat_rates = np.zeros((cfg.K, cfg.N))
        self.ug_rates = np.zeros((cfg.N, cfg.M))
        self._refresh_visibility(0.0)
        self._sample_channels(0.0)
        return self.state

    # --------------------------------------------------------------- helpers
    def _refresh_visibility(self, now: float) -> None:
        geometry.roll_passes(self.state.geo.passes, now, self.cfg.pass_gap_factor)
        self.state.visible = np.array([p.visible(now) for p in self.state.geo.passes], bool)

    def _sample_channels(self, now: float) -> None:
        """Resample every link for the slot starting at ``now``.

        The number of draws is independent of actions and of power settings so
        that paired seeds see identical fading across sweeps.
        """
        cfg, st = self.cfg, self.state
        g_sat = self.ch_rng.complex_normal(1.0, size=(cfg.K, cfg.N))
        g_ug = self.ch_rng.complex_normal(1.0, size=(cfg.N, cfg.M))
        gain_sq = np.zeros((cfg.K, cfg.N))
        for k, p in enumerate(st.geo.passes):
            if not st.visible[k]:
                continue
            elev = geometry.elevation_at(p, now, cfg.tau_min_elev)
            d = float(geometry.slant_range(elev, cfg.d_E, cfg.d_k))
            h_hat = channel.sat_uav_coeff(cfg.sigma_gain, cfg.wavelength, d)
            delta = channel.correlation_delta(cfg.doppler_hz, d / cfg.v_c)
            h = channel.outdate_csi(np.full(cfg.N, h_hat), delta, g=g_sat[k])
            gain_sq[k] = np.abs(h) ** 2
        st.sat_gain_sq = gain_sq
        if cfg.fixed_rate_su > 0:
            self.sat_rates = np.where(st.visible[:, None], cfg.fixed_rate_su, 0.0) * np.ones((cfg.K, cfg.N))
        else:
            self.sat_rates = channel.shannon_rate(cfg.B_su, cfg.P_S, gain_sq, cfg.noise_W)
        diff = st.geo.uav_pos[:, None, :] - st.geo.user_pos[None, :, :]
        d_ug = np.maximum(np.linalg.norm(diff, axis=2), 1.0)
        st.ug_coeff = channel.uav_ground_coeff(cfg.mu, d_ug, cfg.kappa_L, cfg.kappa_N,
                                               los_phase=st.los_phase, g=g_ug)

    def window_tasks(self) -> list[Task]:
        return self.active[: self.cfg.window]

    def inject_task(self, src_leo: int, dst_user: int, D_max: float, Q_min: float) -> Task:
        """Admit a scripted task arriving at the start of the current slot."""
        st = self.state
        task = Task(id=len(st.tasks), src_leo=src_leo, dst_user=dst_user,
                    payload_bits_original=self.cfg.image_bits, arrival_slot=st.t,
                    arrival_time=st.t * self.cfg.slot_dt, D_max=D_max, Q_min=Q_min)
        task.ready_at = task.arrival_time
        st.tasks.append(task)
        self.active.append(task)
        st.admitted += 1
        return task

    def block_leo(self, k: int) -> None:
        """Make LEO ``k`` permanently invisible (elevation floor at zenith)."""
        p = self.state.geo.passes[k]
        p.pass_length = 0.0
        self.state.visible[k] = False

    def _delay(self, task: Task, now: float) -> float:
        d = now - task.arrival_time
        if not self.cfg.count_source_queueing:
            d -= task.source_wait
            if task.stage is Stage.QUEUED_AT_LEO and task.queued_since is not None:
                d -= max(0.0, now - task.queued_since)
        return d

    def action_masks(self) -> list[np.ndarray]:
        """Boolean mask per discrete head (visibility and quality screening)."""
        cfg, st = self.cfg, self.state
        masks = []
        leo_mask = np.concatenate([[True], st.visible])
        masks += [leo_mask.copy() for _ in range(cfg.N)]
        masks += [np.ones(cfg.N + 1, bool) for _ in range(cfg.M)]
        masks += [np.ones(cfg.K, bool) for _ in range(cfg.K)]
        win = self.window_tasks()
        for w in range(cfg.window):
            # heads without a task awaiting a mode have no effect; pin them to index 0
            m = np.zeros(N_MODES, bool)
            m[0] = True
            if w < len(win) and win[w].stage is Stage.AWAITING_MODE:
                ok = self._quality >= win[w].Q_min
                m = ok if ok.any() else np.ones(N_MODES, bool)
            masks.append(m)
        return masks

    # ------------------------------------------------------------------ step
    def step(self, action: Action, project: bool = True) -> StepResult:
        if self.done:
            raise EnvDone("episode finished; call reset()")
        cfg, st = self.cfg, self.state
        dt = cfg.slot_dt
        a, notes = project_action(action, st, cfg, _report=True)
        violated = bool(notes) and not project

        T0 = st.t * dt
        T1 = T0 + dt
        # (1) UAV motion, (2) passes and channels for this slot
        st.geo.uav_pos = geometry.advance_uav(st.geo.uav_pos, a.uav_vel, dt, cfg)
        self._refresh_visibility(T0)
        a.uav_leo = np.where((a.uav_leo >= 0) & st.visible[np.maximum(a.uav_leo, 0)], a.uav_leo, -1)
        self._sample_channels(T0)

        completed: list = []
        failed: list = []

        # (3) mode binding for window tasks
        for w, task in enumerate(self.window_tasks()):
            if task.stage is not Stage.AWAITING_MODE:
                continue
            mi = int(a.mode[w])
            prof = self.profiles[mi]
            task.bind_mode(mi, prof.payload_bits, prof.compute_delay, cfg.encode_fraction)
            task.ready_at = max(task.arrival_time, T0)
            if self._quality[mi] < task.Q_min:
                task.stage = Stage.FAILED
                task.fail_reason = "quality"
                failed.append((task.id, "quality"))

        # (4) service
        self._serve_compute(Stage.ENCODING, lambda t: t.src_leo, T0, T1)
        self._serve_isl(a, T0, T1)
        self._serve_downlinks(a, T0, T1)
        self._serve_ground(a, T0, T1)
        for task in self._serve_compute(Stage.DECODING, lambda t: t.dst_user, T0, T1):
            task.completion_time = task.ready_at
            task.D = self._delay(task, task.completion_time)
            task.elapsed = task.completion_time - task.arrival_time
            task.achieved_Q = float(self._quality[task.mode])
            if task.D > task.D_max + TIME_EPS:
                task.stage = Stage.FAILED
                task.fail_reason = "deadline"
                failed.append((task.id, "deadline"))
            else:
                task.sce = sce(task.achieved_Q, task.Q_min, task.D, task.D_max, self.weights)
                completed.append((task.id, task.sce))

        # (5) deadline breach for everything still in flight
        for task in self.active:
            if task.terminal:
                continue
            task.elapsed = T1 - task.arrival_time
            if self._delay(task, T1) > task.D_max + TIME_EPS:
                task.stage = Stage.FAILED
                task.fail_reason = "deadline"
                failed.append((task.id, "deadline"))
        self.active = [t for t in self.active if not t.terminal]

        # (6) reward
        violated = violated or bool(failed)
        reward = sum(v for _, v in completed) - (1.0 if violated else 0.0)

        # arrivals for the next slot
        self._arrivals(st.t + 1)
        st.t += 1
        all_in = st.admitted >= cfg.G
        self.done = (all_in and not self.active) or st.t >= cfg.horizon
        if not self.done:
            self._refresh_visibility(st.t * dt)
        return StepResult(reward=reward, done=self.done, completed=completed, failed=failed,
                          violated=violated, action=a, repairs=notes, t=st.t - 1)

    def _arrivals(self, slot: int) -> None:
        cfg, st = self.cfg, self.state
        counts = self.tr_rng.poisson(cfg.arrival_rate, size=cfg.K)
        for k in range(cfg.K):
            for _ in range(int(counts[k])):
                u_user, u_d, u_q = self.tr_rng.uniform(size=3)
                if st.admitted >= cfg.G:
                    continue
                dst = min(int(u_user * cfg.M), cfg.M - 1)
                D_max = cfg.D_max_lo + (cfg.D_max_hi - cfg.D_max_lo) * float(u_d)
                Q_min = cfg.Q_min_lo + (cfg.Q_min_hi - cfg.Q_min_lo) * float(u_q)
                task = Task(id=len(st.tasks), src_leo=k, dst_user=dst,
                            payload_bits_original=cfg.image_bits, arrival_slot=slot,
                            arrival_time=slot * cfg.slot_dt, D_max=D_max, Q_min=Q_min)
                task.ready_at = task.arrival_time
                st.tasks.append(task)
                self.active.append(task)
                st.admitted += 1

    # -------------------------------------------------------------- service
    @staticmethod
    def _run_fifo(queue: list[Task], T0: float, T1: float, rate: float, on_start=None) -> list[Task]:
        """Serve ``queue`` (already in FIFO order) exclusively over [T0, T1)."""
        finished = []
        cursor = T0
        for task in queue:
            start = max(cursor, task.ready_at)
            if start >= T1:
                break
            if on_start is not None:
                on_start(task, start)
            end = serve(task, start, T1, rate)
            if end is None:
                break
            finished.append(task)
            cursor = end
        return finished

    def _serve_compute(self, stage: Stage, owner, T0: float, T1: float) -> list[Task]:
        groups: dict[int, list[Task]] = {}
        for t in self.active:
            if t.stage is stage:
                groups.setdefault(owner(t), []).append(t)
        done = []
        for key in sorted(groups):
            q = sorted(groups[key], key=lambda t: (t.ready_at, t.id))
            done += self._run_fifo(q, T0, T1, 0.0)
        return done

    def _routable(self, task: Task, a: Action) -> bool:
        n = int(a.user_uav[task.dst_user])
        return n >= 0 and int(a.uav_leo[n]) == task.cur_leo

    def _serve_isl(self, a: Action, T0: float, T1: float) -> None:
        for i in range(self.cfg.K):
            j = int(a.isl[i])
            if j < 0:
                continue
            queue = []
            for t in self.active:
                if t.cur_leo != i:
                    continue
                if t.stage is Stage.ISL_IN_FLIGHT and t.isl_target == j:
                    queue.append((0, t.ready_at, t.id, t))
                elif (t.stage is Stage.QUEUED_AT_LEO and not t.forwarded and t.ready_at < T1
                      and not self._routable(t, a)):
                    queue.append((1, t.ready_at, t.id, t))
            queue.sort(key=lambda x: x[:3])

            def start_isl(task: Task, start: float, j=j) -> None:
                if task.stage is Stage.QUEUED_AT_LEO:
                    self._leave_source(task, start)
                    task.stage = Stage.ISL_IN_FLIGHT
                    task.isl_target = j
                    task.bits_remaining_current_hop = task.payload_bits

            for task in self._run_fifo([x[3] for x in queue], T0, T1, float(self.isl_rates[i, j]), start_isl):
                task.cur_leo = j
                task.forwarded = True

    def _leave_source(self, task: Task, start: float) -> None:
        if task.queued_since is not None:
            task.source_wait += max(0.0, start - task.queued_since)
            task.queued_since = None

    def _serve_downlinks(self, a: Action, T0: float, T1: float) -> None:
        cfg = self.cfg
        for n in range(cfg.N):
            k = int(a.uav_leo[n])
            if k < 0 or not self.state.visible[k]:
                continue
            queue = []
            for t in self.active:
                if t.cur_leo != k:
                    continue
                if t.stage is Stage.SAT_TO_UAV and t.relay_uav == n:
                    queue.append((0, t.ready_at, t.id, t))
                elif (t.stage in (Stage.QUEUED_AT_LEO, Stage.AT_RELAY_LEO) and t.ready_at < T1
                      and int(a.user_uav[t.dst_user]) == n):
                    queue.append((1, t.ready_at, t.id, t))
            queue.sort(key=lambda x: x[:3])

            def start_down(task: Task, start: float, n=n) -> None:
                if task.stage is not Stage.SAT_TO_UAV:
                    if task.stage is Stage.QUEUED_AT_LEO:
                        self._leave_source(task, start)
                    task.stage = Stage.SAT_TO_UAV
                    task.relay_uav = n
                    task.bits_remaining_current_hop = task.payload_bits

            self._run_fifo([x[3] for x in queue], T0, T1, float(self.sat_rates[k, n]), start_down)

    def _serve_ground(self, a: Action, T0: float, T1: float) -> None:
        cfg = self.cfg
        queues: dict[tuple[int, int], list[Task]] = {}
        for t in self.active:
            if t.stage is Stage.UAV_TO_USER and int(a.user_uav[t.dst_user]) == t.relay_uav:
                queues.setdefault((t.relay_uav, t.dst_user), []).append(t)
        if not queues:
            return
        active = np.zeros(cfg.N, bool)
        for n, _ in queues:
            active[n] = True
        if cfg.fixed_rate_ug > 0:
            rates = np.full((cfg.N, cfg.M), cfg.fixed_rate_ug)
        else:
            rates = channel.ug_rate_matrix(np.abs(self.state.ug_coeff) ** 2, active, cfg)
        self.ug_rates = rates
        for (n, m) in sorted(queues):
            q = sorted(queues[(n, m)], key=lambda t: (t.ready_at, t.id))
            self._run_fifo(q, T0, T1, float(rates[n, m]))

    # ---------------------------------------------------------- observation
    def observe(self) -> np.ndarray:
        cfg, st = self.cfg, self.state
        out = np.zeros(self.obs_size)
        out[0] = min(st.t / cfg.horizon, 1.0)
        i = 1
        pos = st.geo.uav_pos
        x_span = cfg.area_spacing * max(cfg.N - 1, 1) + cfg.area_side
        out[i:i + 3 * cfg.N] = np.column_stack([
            (pos[:, 0] + cfg.area_side / 2) / x_span,
            (pos[:, 1] + cfg.area_side / 2) / cfg.area_side,
            (pos[:, 2] - cfg.z_min) / (cfg.z_max - cfg.z_min),
        ]).reshape(-1)
        i += 3 * cfg.N
        g_db = 10.0 * np.log10(np.maximum(np.abs(st.ug_coeff) ** 2, 1e-30))
        out[i:i + cfg.N * cfg.M] = np.clip((g_db - _GAIN_DB_LO) / (_GAIN_DB_HI - _GAIN_DB_LO), 0, 1).reshape(-1)
        i += cfg.N * cfg.M
        now = st.t * cfg.slot_dt
        if self.pass_length > 0:
            out[i:i + cfg.K] = [p.remaining(now) / self.pass_length for p in st.geo.passes]
        i += cfg.K
        per = 5 + N_TASK_STAGES + N_MODES + cfg.K + cfg.M
        w = self.weights
        for slot, task in enumerate(self.window_tasks()):
            b = i + slot * per
            out[b] = 1.0
            out[b + 1] = min(max((task.Q_min - w.q_lo) / (w.q_hi - w.q_lo), 0.0), 1.0)
            out[b + 2] = min(task.D_max / w.d_scale, 1.0)
            out[b + 3] = min((now - task.arrival_time) / max(task.D_max, 1e-9), 2.0) / 2.0
            if task.stage in (Stage.ENCODING, Stage.DECODING):
                total = task.compute_remaining + 1e-12
                ref = (task.decode_time if task.stage is Stage.DECODING
                       else task.payload_bits and self.profiles[task.mode].compute_delay * self.cfg.encode_fraction)
                out[b + 4] = min(task.compute_remaining / ref, 1.0) if ref else 0.0
            elif task.payload_bits > 0:
                out[b + 4] = task.bits_remaining_current_hop / task.payload_bits
            else:
                out[b + 4] = 1.0
            out[b + 5 + int(task.stage)] = 1.0
            c = b + 5 + N_TASK_STAGES
            if task.mode is not None:
                out[c + task.mode] = 1.0
            c += N_MODES
            out[c + (task.cur_leo if task.cur_leo >= 0 else task.src_leo)] = 1.0
            c += cfg.K
            out[c + task.dst_user] = 1.0
        return out

    # ------------------------------------------------------------ summaries
    def summary(self) -> dict:
        tasks = self.state.tasks
        G = max(self.cfg.G, 1)
        done = [t for t in tasks if t.stage is Stage.DONE]
        usage = {mid: 0 for mid in MODE_IDS}
        for t in tasks:
            if t.mode is not None:
                usage[MODE_IDS[t.mode]] += 1
        return {
            "avg_sce": sum(t.sce for t in done) / G,
            "completed": len(done),
            "failed": sum(t.stage is Stage.FAILED for t in tasks),
            "admitted": len(tasks),
            "completion_rate": len(done) / G,
            "mode_usage": usage,
        }
