"""Transmission-mode profiles and the semantic communication efficiency (SCE) metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .scenario import MODE_IDS, ScenarioConfig

N_MODES = len(MODE_IDS)


@dataclass(frozen=True)
class ModeProfile:
    mode_id: str
    payload_bits: float
    compute_delay: float
    quality_psnr: float
    quality_msssim: float

    def quality(self, metric: str = "psnr") -> float:
        return self.quality_msssim if metric == "msssim" else self.quality_psnr


@dataclass(frozen=True)
class SceWeights:
    xi_q: float
    xi_d: float
    q_lo: float
    q_hi: float
    d_scale: float

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "SceWeights":
        return cls(cfg.xi_q, cfg.xi_d, cfg.q_lo, cfg.q_hi, cfg.d_scale)


def vqe_payload_bits(h: int, w: int, V: int) -> int:
    """Bits to send an ``h x w`` grid of codebook indices for a codebook of size ``V``."""
    if h < 1 or w < 1:
        raise ValueError("latent grid must be at least 1x1")
    if V < 2 or V & (V - 1):
        raise ValueError(f"codebook size must be a power of two >= 2, got {V}")
    return h * w * (V.bit_length() - 1)


def mode_payload(mode_id: str, cfg: ScenarioConfig) -> float:
    if mode_id == "M1":
        return cfg.image_bits / cfg.jpeg_ratio
    if mode_id == "M2":
        return float(cfg.text_bits)
    spec = cfg.modes[mode_id]
    return float(cfg.text_bits + vqe_payload_bits(spec.h, spec.w, cfg.codebook_size))


def mode_compute_delay(mode_id: str, cfg: ScenarioConfig) -> float:
    return cfg.modes[mode_id].compute_delay


def mode_profiles(cfg: ScenarioConfig) -> tuple[ModeProfile, ...]:
    """Profiles in canonical order M1, M2, M3_1, M3_2, M3_3."""
    return tuple(
        ModeProfile(mid, mode_payload(mid, cfg), mode_compute_delay(mid, cfg),
                    cfg.modes[mid].psnr, cfg.modes[mid].msssim)
        for mid in MODE_IDS
    )


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def normalize_q(q: float, w: SceWeights) -> float:
    return _clamp01((q - w.q_lo) / (w.q_hi - w.q_lo))


def normalize_d(d: float, w: SceWeights) -> float:
    return _clamp01(d / w.d_scale)


def sce(Q: float, Q_min: float, D: float, D_max: float, w: SceWeights) -> float:
    """Weighted normalized quality surplus plus normalized delay slack."""
    return (w.xi_q * (normalize_q(Q, w) - normalize_q(Q_min, w))
            + w.xi_d * (normalize_d(D_max, w) - normalize_d(D, w)))


def estimated_delay(profile: ModeProfile, hop_rates: Iterable[float]) -> float:
    total = profile.compute_delay
    for r in hop_rates:
        total += profile.payload_bits / r if r > 0 else math.inf
    return total


def feasible_modes(task, hop_rates: Iterable[float], cfg: ScenarioConfig,
                   profiles: tuple[ModeProfile, ...] | None = None) -> set[str]:
    """Modes meeting ``task.Q_min`` whose estimated delay fits ``task.D_max``."""
    rates = list(hop_rates)
    metric = cfg.mode_quality_key
    out = set()
    for p in profiles or mode_profiles(cfg):
        if p.quality(metric) >= task.Q_min and estimated_delay(p, rates) <= task.D_max:
            out.add(p.mode_id)
    return out
