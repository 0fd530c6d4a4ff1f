"""Positions, UAV kinematics and the LEO pass / coverage model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import Rng, ScenarioConfig


class NotVisibleError(ValueError):
    """Elevation requested outside a LEO's visibility window."""


def coverage_path_length(d_E: float, d_k: float, tau: float) -> float:
    """Arc length flown by a LEO while above elevation ``tau`` for a ground point."""
    assert d_E > 0 and d_k > 0 and 0 <= tau <= math.pi / 2
    arg = d_E / (d_E + d_k) * math.cos(tau)
    assert -1.0 <= arg <= 1.0
    return max(0.0, 2.0 * (d_E + d_k) * (math.acos(arg) - tau))


def access_duration(R_k: float, v_k: float) -> float:
    if v_k <= 0:
        raise ValueError("orbital speed must be positive")
    return R_k / v_k


@dataclass
class LeoPass:
    leo_id: int
    pass_start: float
    pass_length: float
    phase_offset: float
    ground_track_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def pass_end(self) -> float:
        return self.pass_start + self.pass_length

    def visible(self, t: float) -> bool:
        return self.pass_length > 0 and self.pass_start <= t <= self.pass_end

    def remaining(self, t: float) -> float:
        return self.pass_end - t if self.visible(t) else 0.0


def elevation_at(p: LeoPass, t: float, tau: float) -> float:
    """Symmetric piecewise-linear elevation: ``tau`` at the pass edges, zenith mid-pass."""
    if not p.visible(t):
        raise NotVisibleError(f"LEO {p.leo_id} not visible at t={t}")
    frac = (t - p.pass_start) / p.pass_length
    return tau + (math.pi / 2 - tau) * (1.0 - abs(2.0 * frac - 1.0))


def slant_range(elev, d_E: float, d_k: float):
    """Satellite-to-ground range at elevation ``elev`` (UAV altitude neglected)."""
    r = d_E + d_k
    c = np.cos(elev)
    return np.sqrt(r * r - (d_E * c) ** 2) - d_E * np.sin(elev)


def distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def clip_speed(vel, v_max: float) -> np.ndarray:
    """Rescale velocities (shape (3,) or (n, 3)) so that each norm is <= v_max."""
    v = np.asarray(vel, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > v_max, v_max / np.where(norm > 0, norm, 1.0), 1.0)
    return v * scale


def advance_uav(pos, vel, dt: float, cfg: ScenarioConfig) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = clip_speed(vel, cfg.v_max)
    out = np.asarray(pos, dtype=float) + v * dt
    out[..., 2] = np.clip(out[..., 2], cfg.z_min, cfg.z_max)
    return out


def isl_distance_matrix(cfg: ScenarioConfig, rng: Rng) -> np.ndarray:
    """Symmetric per-episode ISL distances, uniform in [isl_d_lo, isl_d_hi]; zero diagonal."""
    K = cfg.K
    d = np.zeros((K, K))
    for i in range(K):
        for j in range(i + 1, K):
            d[i, j] = d[j, i] = rng.uniform(cfg.isl_d_lo, cfg.isl_d_hi)
    return d


def isl_distance(i: int, j: int, table: np.ndarray) -> float:
    if i == j:
        raise ValueError("ISL endpoints must differ")
    return float(table[i, j])


@dataclass
class GeoState:
    uav_pos: np.ndarray  # (N, 3)
    user_pos: np.ndarray  # (M, 3)
    user_area: np.ndarray  # (M,) area index per user
    area_centers: np.ndarray  # (N, 3) ground-level centers
    passes: list[LeoPass]
    isl_dist: np.ndarray  # (K, K)
    t: int = 0


def place(cfg: ScenarioConfig, rng: Rng) -> GeoState:
    """Initial geometry: N disjoint square areas, users round-robin over areas,
    one UAV hovering over each area center, randomized LEO pass phases."""
    centers = np.array([[n * cfg.area_spacing, 0.0, 0.0] for n in range(cfg.N)])
    user_area = np.arange(cfg.M) % cfg.N
    offsets = rng.uniform(-cfg.area_side / 2, cfg.area_side / 2, size=(cfg.M, 2))
    user_pos = np.zeros((cfg.M, 3))
    user_pos[:, :2] = centers[user_area, :2] + offsets
    uav_pos = centers.copy()
    uav_pos[:, 2] = cfg.uav_z0

    T = access_duration(coverage_path_length(cfg.d_E, cfg.d_k, cfg.tau_min_elev), cfg.v_k)
    passes = []
    for k in range(cfg.K):
        phase = float(rng.uniform(0.0, T))
        passes.append(LeoPass(leo_id=k, pass_start=-phase, pass_length=T, phase_offset=phase))
    isl = isl_distance_matrix(cfg, rng)
    return GeoState(uav_pos=uav_pos, user_pos=user_pos, user_area=user_area,
                    area_centers=centers, passes=passes, isl_dist=isl)


def roll_passes(passes: list[LeoPass], t: float, gap_factor: float) -> None:
    """Start the next pass of any LEO whose pass (plus invisibility gap) has elapsed."""
    for p in passes:
        if p.pass_length <= 0:
            continue
        while t > p.pass_end + gap_factor * p.pass_length:
            p.pass_start = p.pass_end + gap_factor * p.pass_length
            p.phase_offset = 0.0
