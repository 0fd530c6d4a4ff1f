"""Channel coefficients and achievable rates for satellite-UAV, ISL and UAV-ground links."""

from __future__ import annotations

import math

import numpy as np

from .scenario import Rng, ScenarioConfig

# Hankel asymptotic expansion is accurate to ~1e-10 from here on; the power
# series is still well conditioned below it.
_SERIES_LIMIT = 12.0


def sat_uav_coeff(gain: float, wavelength: float, d, phase=0.0):
    """Free-space LEO->UAV coefficient ``sqrt(gain) * lambda / (4 pi d) * exp(j phase)``."""
    return math.sqrt(gain) * wavelength / (4.0 * math.pi * np.asarray(d, dtype=float)) * np.exp(1j * np.asarray(phase))


def _j0_series(x: float) -> float:
    q = -(x * x) / 4.0
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if abs(term) < 1e-17 * max(1.0, abs(total)) and k > 5:
            return total


def _j0_asymptotic(x: float) -> float:
    # Hankel P, Q series for order 0, truncated before the smallest term.
    # t_j = prod_{i<=j} (2i-1)^2 / (j! (8x)^j); P = sum (-1)^k t_2k, Q = -sum (-1)^k t_2k+1
    z = 8.0 * x
    p, q = 1.0, 0.0
    t = 1.0
    j = 0
    while True:
        j += 1
        nxt = t * (2 * j - 1) ** 2 / (j * z)
        if nxt >= t or nxt < 1e-18:
            break
        t = nxt
        k = j // 2
        sign = -1.0 if k % 2 else 1.0
        if j % 2 == 0:
            p += sign * t
        else:
            q -= sign * t
    chi = x - math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j0(x: float) -> float:
    """Bessel function of the first kind, order 0."""
    x = abs(float(x))
    if x < _SERIES_LIMIT:
        return _j0_series(x)
    return _j0_asymptotic(x)


def correlation_delta(doppler_hz: float, delay_s: float) -> float:
    return bessel_j0(2.0 * math.pi * doppler_hz * delay_s)


def outdate_csi(h_hat, delta: float, rng: Rng | None = None, g=None):
    """Outdated CSI ``delta*h_hat + sqrt(1-delta^2)*g`` with ``g ~ CN(0, |h_hat|^2)``.

    ``g`` may be supplied directly as a unit-variance complex draw (scaled here).
    """
    if abs(delta) > 1:
        raise ValueError("|delta| must be <= 1")
    h_hat = np.asarray(h_hat)
    if g is None:
        g = rng.complex_normal(1.0, size=h_hat.shape)
    return delta * h_hat + math.sqrt(1.0 - delta * delta) * np.abs(h_hat) * g


def shannon_rate(B: float, P, gain_sq, noise_plus_interf):
    return B * np.log2(1.0 + P * np.asarray(gain_sq) / noise_plus_interf)


def isl_rate(B: float, P: float, eta_max: float, d, f_I: float, cfg: ScenarioConfig):
    """ISL rate; ``eta_max`` is the peak gain amplitude (its square is the power gain)."""
    fspl = (4.0 * math.pi * np.asarray(d, dtype=float) * f_I / cfg.v_c) ** 2
    return B * np.log2(1.0 + P * eta_max**2 / (cfg.zeta * cfg.chi * B * fspl))


def uav_ground_coeff(mu: float, d, kL: float, kN: float, rng: Rng | None = None,
                     los_phase=None, g=None):
    """Rician UAV->user coefficient.

    ``los_phase`` fixes the LoS phase (drawn from ``rng`` when omitted); ``g``
    is the unit-variance NLoS draw (drawn from ``rng`` when omitted).
    """
    d = np.asarray(d, dtype=float)
    if los_phase is None:
        los_phase = rng.uniform(0.0, 2.0 * math.pi, size=d.shape)
    if g is None:
        g = rng.complex_normal(1.0, size=d.shape)
    los = np.exp(1j * np.asarray(los_phase)) * d ** (-kL / 2.0)
    nlos = g * d ** (-kN / 2.0)
    if math.isinf(mu):
        return los
    return math.sqrt(mu / (mu + 1.0)) * los + math.sqrt(1.0 / (mu + 1.0)) * nlos


def uav_ground_rate(m: int, serving: int, coeffs, cfg: ScenarioConfig, active=None) -> float:
    """SINR-based rate from UAV ``serving`` to user ``m``.

    ``coeffs`` holds the N coefficients h_{i,m}; ``active`` (bool per UAV)
    selects which other UAVs transmit this slot (all of them when omitted).
    """
    p = cfg.P_U * np.abs(np.asarray(coeffs)) ** 2
    mask = np.ones(p.shape, bool) if active is None else np.asarray(active, bool).copy()
    mask[serving] = False
    interf = float(np.sum(p[mask]))
    return float(shannon_rate(cfg.B_ug, 1.0, p[serving], interf + cfg.noise_W))


def ug_rate_matrix(gain_sq: np.ndarray, active: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """Rates for every (UAV n, user m) given |h|^2 (N, M) and the active-UAV mask."""
    p = cfg.P_U * gain_sq
    total = (p * active[:, None]).sum(axis=0)  # interference from all active UAVs
    interf = total[None, :] - p * active[:, None]
    return cfg.B_ug * np.log2(1.0 + p / (interf + cfg.noise_W))
