"""Task arrivals, per-task constraints and task lifecycle bookkeeping."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

from .scenario import Rng, ScenarioConfig


class Stage(enum.IntEnum):
    AWAITING_MODE = 0
    ENCODING = 1
    QUEUED_AT_LEO = 2
    ISL_IN_FLIGHT = 3
    AT_RELAY_LEO = 4
    SAT_TO_UAV = 5
    UAV_TO_USER = 6
    DECODING = 7
    DONE = 8
    FAILED = 9


TRANSMISSION_STAGES = (Stage.ISL_IN_FLIGHT, Stage.SAT_TO_UAV, Stage.UAV_TO_USER)
COMPUTE_STAGES = (Stage.ENCODING, Stage.DECODING)
ACTIVE_STAGES = tuple(s for s in Stage if s not in (Stage.DONE, Stage.FAILED))

_NEXT = {
    Stage.ENCODING: Stage.QUEUED_AT_LEO,
    Stage.ISL_IN_FLIGHT: Stage.AT_RELAY_LEO,
    Stage.SAT_TO_UAV: Stage.UAV_TO_USER,
    Stage.UAV_TO_USER: Stage.DECODING,
    Stage.DECODING: Stage.DONE,
}


@dataclass
class Task:
    id: int
    src_leo: int
    dst_user: int
    payload_bits_original: float
    arrival_slot: int
    arrival_time: float
    D_max: float
    Q_min: float
    mode: int | None = None
    stage: Stage = Stage.AWAITING_MODE
    payload_bits: float = 0.0
    bits_remaining_current_hop: float = 0.0
    compute_remaining: float = 0.0
    decode_time: float = 0.0
    elapsed: float = 0.0
    achieved_Q: float | None = None
    # routing
    cur_leo: int = -1
    relay_uav: int = -1
    isl_target: int = -1
    forwarded: bool = False
    # timing (absolute seconds)
    ready_at: float = 0.0
    queued_since: float | None = None
    source_wait: float = 0.0
    completion_time: float | None = None
    D: float | None = None
    sce: float = 0.0
    fail_reason: str = ""
    hop_bits: list = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.stage >= Stage.DONE

    def bind_mode(self, mode: int, payload_bits: float, compute_delay: float, encode_fraction: float) -> None:
        self.mode = mode
        self.payload_bits = payload_bits
        self.bits_remaining_current_hop = payload_bits
        self.compute_remaining = compute_delay * encode_fraction
        self.decode_time = compute_delay - self.compute_remaining
        self.stage = Stage.ENCODING
        self.cur_leo = self.src_leo


def ftp3_arrivals(rate: float, rng: Rng) -> int:
    """Number of new file-transfer tasks at one LEO in one slot (Poisson)."""
    if rate < 0:
        raise ValueError("arrival rate must be >= 0")
    return int(rng.poisson(rate))


def sample_constraints(rng: Rng, cfg: ScenarioConfig) -> tuple[float, float]:
    u_d, u_q = rng.uniform(size=2)
    return (cfg.D_max_lo + (cfg.D_max_hi - cfg.D_max_lo) * float(u_d),
            cfg.Q_min_lo + (cfg.Q_min_hi - cfg.Q_min_lo) * float(u_q))


def enter_stage(task: Task, stage: Stage, at: float) -> None:
    """Move ``task`` into ``stage`` at absolute time ``at`` and reset its hop counters."""
    task.stage = stage
    task.ready_at = at
    if stage in TRANSMISSION_STAGES or stage in (Stage.AT_RELAY_LEO, Stage.QUEUED_AT_LEO):
        task.bits_remaining_current_hop = task.payload_bits
    elif stage is Stage.DECODING:
        task.compute_remaining = task.decode_time
    if stage in (Stage.QUEUED_AT_LEO, Stage.AT_RELAY_LEO):
        task.queued_since = at


def serve(task: Task, start: float, end: float, rate: float = 0.0) -> float | None:
    """Work on ``task``'s current stage over ``[start, end)``.

    Transmission stages drain bits at ``rate``; compute stages burn compute time.
    Returns the absolute finish time if the stage completes inside the window
    (and moves the task to its next stage), else ``None``.
    """
    span = end - start
    if span <= 0:
        return None
    if task.stage in TRANSMISSION_STAGES:
        need = task.bits_remaining_current_hop / rate if rate > 0 else float("inf")
        if need <= span:
            task.hop_bits.append(task.payload_bits)
            finish = start + need
            task.bits_remaining_current_hop = 0.0
            enter_stage(task, _NEXT[task.stage], finish)
            return finish
        task.bits_remaining_current_hop = max(0.0, task.bits_remaining_current_hop - rate * span)
        return None
    if task.stage in COMPUTE_STAGES:
        if task.compute_remaining <= span:
            finish = start + task.compute_remaining
            task.compute_remaining = 0.0
            nxt = _NEXT[task.stage]
            if nxt is Stage.DONE:
                task.stage = Stage.DONE
                task.bits_remaining_current_hop = 0.0
                task.ready_at = finish
            else:
                enter_stage(task, nxt, finish)
            return finish
        task.compute_remaining -= span
        return None
    raise ValueError(f"stage {task.stage.name} is not serviceable")


def tick(task: Task, dt: float, hop_rate: float = 0.0) -> Task:
    """Advance one task by ``dt`` seconds at ``hop_rate`` on its current hop.

    At most one stage is completed per call; the deadline is checked afterwards.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if task.terminal:
        raise ValueError("task already finished")
    t0 = task.arrival_time + task.elapsed
    task.elapsed += dt
    if task.stage in TRANSMISSION_STAGES or task.stage in COMPUTE_STAGES:
        finish = serve(task, t0, t0 + dt, hop_rate)
        if finish is not None and task.stage is Stage.DONE:
            task.completion_time = finish
            task.D = finish - task.arrival_time
    if task.stage is not Stage.DONE and task.elapsed > task.D_max:
        task.stage = Stage.FAILED
        task.fail_reason = "deadline"
    return task


TRACE_COLUMNS = ("id", "mode", "D_g", "Q_g", "sce", "failed")


def task_trace_csv(tasks, mode_names) -> str:
    """One CSV row per task: id, mode, D_g, Q_g, sce, failed flag."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for t in tasks:
        w.writerow([
            t.id,
            mode_names[t.mode] if t.mode is not None else "",
            "" if t.D is None else f"{t.D:.9g}",
            "" if t.achieved_Q is None else f"{t.achieved_Q:.9g}",
            f"{t.sce:.9g}",
            int(t.stage is Stage.FAILED),
        ])
    return buf.getvalue()
