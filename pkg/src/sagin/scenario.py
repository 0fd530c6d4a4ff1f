"""Scenario configuration, validation, scenario-file parsing and seeded randomness.

All quantities are SI internally. A scenario file is line-oriented ``key = value``
text with ``#`` comments; keys whose name embeds a unit (``tau_deg``,
``noise_dBm``, ``sigma_gain_dB``...) are converted on load.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

MODE_IDS = ("M1", "M2", "M3_1", "M3_2", "M3_3")
SEMANTIC_LEVELS = ("M3_1", "M3_2", "M3_3")


class ScenarioError(ValueError):
    """Raised for malformed scenario text or configs violating invariants."""

    def __init__(self, message: str, violations: list[str] | None = None, line: int | None = None):
        super().__init__(message)
        self.violations = list(violations or [])
        self.line = line


@dataclass(frozen=True)
class ModeSpec:
    """Configurable knobs of one transmission mode (payload derived in ``modes``)."""

    psnr: float
    msssim: float
    compute_delay: float
    h: int = 0
    w: int = 0


def _default_modes() -> dict[str, ModeSpec]:
    return {
        "M1": ModeSpec(psnr=38.0, msssim=0.985, compute_delay=0.1323),
        "M2": ModeSpec(psnr=14.0, msssim=0.65, compute_delay=1.33),
        "M3_1": ModeSpec(psnr=20.0, msssim=0.82, compute_delay=1.33, h=8, w=8),
        "M3_2": ModeSpec(psnr=24.0, msssim=0.90, compute_delay=1.33, h=16, w=16),
        "M3_3": ModeSpec(psnr=28.0, msssim=0.95, compute_delay=1.33, h=32, w=32),
    }


@dataclass(frozen=True)
class ScenarioConfig:
    # topology
    K: int = 5
    N: int = 3
    M: int = 8
    # orbit / coverage
    d_E: float = 6_371_000.0
    d_k: float = 750_000.0
    v_k: float = 7_800.0
    tau_min_elev: float = math.radians(40.0)
    pass_gap_factor: float = 10.0
    isl_d_lo: float = 250_000.0
    isl_d_hi: float = 500_000.0
    # radio
    sigma_gain: float = 1e4  # LEO antenna power gain (40 dB)
    eta_max: float = 100.0  # ISL peak gain amplitude; |eta_max|^2 = 40 dB
    f_c: float = 25e9
    f_I: float = 25e9
    v_c: float = 299_792_458.0
    zeta: float = 1.380649e-23
    chi: float = 354.81
    P_S: float = 1.0
    P_U: float = 0.2
    B_su: float = 10e6
    B_isl: float = 10e6
    B_ug: float = 10e6
    noise_W: float = 1e-16
    mu: float = 10.0
    kappa_L: float = 2.0
    kappa_N: float = 2.6
    doppler_hz: float = 650e3
    fixed_rate_su: float = 0.0  # > 0 freezes the link class at this rate (bit/s)
    fixed_rate_isl: float = 0.0
    fixed_rate_ug: float = 0.0
    # UAVs and users
    v_max: float = 10.0
    z_min: float = 45.0
    z_max: float = 60.0
    uav_z0: float = 50.0
    area_side: float = 500.0
    area_spacing: float = 1000.0
    # time
    slot_dt: float = 0.1
    horizon: int = 2000
    # traffic
    image_bits: float = 3.5 * 2**20 * 8
    G: int = 100
    arrival_rate: float = 0.05
    D_max_lo: float = 2.0
    D_max_hi: float = 11.0
    Q_min_lo: float = 10.0
    Q_min_hi: float = 30.0
    count_source_queueing: bool = True
    # modes
    modes: Mapping[str, ModeSpec] = field(default_factory=_default_modes)
    text_bits: int = 8192
    codebook_size: int = 1024
    jpeg_ratio: float = 10.0
    encode_fraction: float = 0.5
    # SCE metric
    sce_metric: str = "psnr"
    xi_q: float = 0.5
    xi_d: float = 0.5
    q_lo: float = 10.0
    q_hi: float = 40.0
    d_scale: float = 11.0
    # learner
    window: int = 16
    discount: float = 0.99
    temperature: float = 0.2
    clip_bound: float = 10.0
    std_floor: float = 1.0
    buffer_size: int = 200_000
    batch_size: int = 256
    lr_critic: float = 3e-4
    lr_actor: float = 1e-4
    polyak: float = 0.995
    hidden: tuple[int, ...] = (256, 256)
    warmup_steps: int = 1000
    update_every: int = 1
    n_envs: int = 1
    log_interval: int = 100
    seed: int = 0

    @property
    def wavelength(self) -> float:
        return self.v_c / self.f_c

    @property
    def mode_quality_key(self) -> str:
        return "msssim" if self.sce_metric == "msssim" else "psnr"


def default_scenario() -> ScenarioConfig:
    return ScenarioConfig()


def small_scenario() -> ScenarioConfig:
    """Reduced topology used for desk-scale training runs."""
    return dataclasses.replace(
        ScenarioConfig(),
        K=2, N=1, M=2, G=20, arrival_rate=0.1, window=4, horizon=300,
        hidden=(128, 128), batch_size=128, buffer_size=100_000,
        temperature=0.02, lr_critic=1e-3, lr_actor=3e-4, warmup_steps=2000,
    )


def violations(cfg: ScenarioConfig) -> list[str]:
    """Return one descriptor per violated invariant (empty when valid)."""
    out: list[str] = []

    def need(ok: bool, name: str, what: str) -> None:
        if not ok:
            out.append(f"{name}: {what}")

    for name in ("K", "N", "M", "G", "horizon", "window"):
        need(getattr(cfg, name) >= 1, name, "must be >= 1")
    need(0.0 < cfg.xi_q < 1.0 and 0.0 < cfg.xi_d < 1.0, "xi", "weights must lie in (0,1)")
    need(abs(cfg.xi_q + cfg.xi_d - 1.0) <= 1e-12, "weight-sum", "xi_q + xi_d must equal 1")
    need(cfg.z_min < cfg.z_max, "altitude-order", "z_min must be < z_max")
    need(cfg.z_min <= cfg.uav_z0 <= cfg.z_max, "uav_z0", "initial altitude outside [z_min, z_max]")
    need(cfg.v_max > 0, "v_max", "must be > 0")
    for name in ("P_S", "P_U", "B_su", "B_isl", "B_ug", "f_c", "f_I", "v_c", "noise_W",
                 "sigma_gain", "eta_max", "zeta", "chi", "d_E", "d_k", "v_k", "slot_dt"):
        need(getattr(cfg, name) > 0, name, "must be > 0")
    need(0.0 < cfg.tau_min_elev < math.pi / 2, "tau_min_elev", "must lie in (0, pi/2)")
    need(cfg.q_lo < cfg.q_hi, "q-bounds", "q_lo must be < q_hi")
    need(cfg.d_scale > 0, "d_scale", "must be > 0")
    need(cfg.mu >= 0, "mu", "must be >= 0")
    need(cfg.doppler_hz >= 0, "doppler_hz", "must be >= 0")
    need(cfg.arrival_rate >= 0, "arrival_rate", "must be >= 0")
    need(0 < cfg.isl_d_lo <= cfg.isl_d_hi, "isl-distance", "need 0 < isl_d_lo <= isl_d_hi")
    need(0 <= cfg.D_max_lo <= cfg.D_max_hi, "D_max-range", "need 0 <= D_max_lo <= D_max_hi")
    need(cfg.Q_min_lo <= cfg.Q_min_hi, "Q_min-range", "need Q_min_lo <= Q_min_hi")
    need(0.0 <= cfg.encode_fraction <= 1.0, "encode_fraction", "must lie in [0,1]")
    need(cfg.sce_metric in ("psnr", "msssim"), "sce_metric", "must be psnr or msssim")
    need(0.0 < cfg.discount < 1.0, "discount", "must lie in (0,1)")
    need(cfg.std_floor > 0 and cfg.clip_bound > 0, "dsac", "std_floor and clip_bound must be > 0")
    need(0.0 <= cfg.polyak <= 1.0, "polyak", "must lie in [0,1]")
    need(cfg.n_envs == 1, "n_envs", "only single-environment training is implemented")
    need(cfg.batch_size >= 1 and cfg.buffer_size >= cfg.batch_size, "buffer", "need buffer_size >= batch_size >= 1")
    need(cfg.jpeg_ratio > 0 and cfg.text_bits >= 0, "payload", "jpeg_ratio > 0 and text_bits >= 0")
    V = cfg.codebook_size
    need(V >= 2 and (V & (V - 1)) == 0, "codebook_size", "must be a power of two >= 2")
    for name in ("fixed_rate_su", "fixed_rate_isl", "fixed_rate_ug"):
        need(getattr(cfg, name) >= 0, name, "must be >= 0")

    if set(cfg.modes) != set(MODE_IDS):
        out.append(f"modes: expected exactly {MODE_IDS}")
        return out
    m = cfg.modes
    for mid in SEMANTIC_LEVELS:
        need(m[mid].h >= 1 and m[mid].w >= 1, f"mode.{mid}", "latent size must be >= 1")
    sizes = [m[x].h * m[x].w for x in SEMANTIC_LEVELS]
    need(sizes[0] < sizes[1] < sizes[2], "mode-payload-order", "Mode 3 latent sizes must increase 3_1 < 3_2 < 3_3")
    for key in ("psnr", "msssim"):
        q = {x: getattr(m[x], key) for x in MODE_IDS}
        need(q["M3_1"] < q["M3_2"] < q["M3_3"], f"mode-{key}-order", "Mode 3 quality must increase with payload")
        need(q["M1"] == max(q.values()), f"mode-{key}-max", "Mode 1 must have the maximum quality")
        need(q["M2"] < q["M3_1"], f"mode-{key}-m2", "Mode 2 quality must be below every Mode 3 level")
    for mid in MODE_IDS:
        need(m[mid].compute_delay >= 0, f"mode.{mid}.compute_delay", "must be >= 0")
    return out


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    bad = violations(cfg)
    if bad:
        raise ScenarioError("invalid scenario: " + "; ".join(bad), violations=bad)
    return cfg


# ---------------------------------------------------------------------------
# scenario-file parsing

_INT_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig) if f.type in ("int",)}
_BOOL_FIELDS = {"count_source_queueing"}
_STR_FIELDS = {"sce_metric"}
_SKIP = {"modes", "hidden"}
_PLAIN = {f.name for f in dataclasses.fields(ScenarioConfig)} - _SKIP

# unit-bearing aliases: key -> (field, converter)
_ALIASES = {
    "tau_deg": ("tau_min_elev", math.radians),
    "noise_dBm": ("noise_W", lambda x: 10 ** ((x - 30.0) / 10.0)),
    "sigma_gain_dB": ("sigma_gain", lambda x: 10 ** (x / 10.0)),
    "eta_max_dB": ("eta_max", lambda x: 10 ** (x / 20.0)),
    "image_MB": ("image_bits", lambda x: x * 2**20 * 8),
    "d_k_km": ("d_k", lambda x: x * 1e3),
    "f_c_GHz": ("f_c", lambda x: x * 1e9),
    "f_I_GHz": ("f_I", lambda x: x * 1e9),
    "sce.metric": ("sce_metric", str),
}

_MODE_FIELDS = {"psnr": float, "msssim": float, "compute_delay": float, "h": int, "w": int}

_METRIC_BOUNDS = {"psnr": (10.0, 40.0, 10.0, 30.0), "msssim": (0.5, 1.0, 0.6, 0.95)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(name: str, raw: str) -> Any:
    if name in _BOOL_FIELDS:
        return _parse_bool(raw)
    if name in _STR_FIELDS:
        return raw.strip().lower()
    if name in _INT_FIELDS:
        value = float(raw)
        if value != int(value):
            raise ValueError(f"{name} must be an integer")
        return int(value)
    return float(raw)


def apply_overrides(cfg: ScenarioConfig, items: Mapping[str, Any] | list[tuple[str, Any]],
                    check: bool = True) -> ScenarioConfig:
    """Apply ``key -> value`` overrides using scenario-file key semantics.

    Values may be strings (as read from a file) or numbers. Besides plain
    field names this understands unit aliases, ``mode.<id>.<field>``,
    ``hidden = 128,128`` and the constraint shorthands ``D_max`` / ``Q_min``
    which pin both ends of the sampling range.
    """
    pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
    changes: dict[str, Any] = {}
    modes = {k: v for k, v in cfg.modes.items()}
    mode_changed = False
    given: set[str] = set()
    for key, value in pairs:
        raw = str(value)
        if key.startswith("mode."):
            parts = key.split(".")
            if len(parts) != 3 or parts[1] not in MODE_IDS or parts[2] not in _MODE_FIELDS:
                raise KeyError(key)
            cast = _MODE_FIELDS[parts[2]]
            v = float(raw)
            if cast is int and v != int(v):
                raise ValueError(f"{key} must be an integer")
            modes[parts[1]] = dataclasses.replace(modes[parts[1]], **{parts[2]: cast(v)})
            mode_changed = True
        elif key == "hidden":
            widths = tuple(int(x) for x in raw.replace("(", "").replace(")", "").split(",") if x.strip())
            if not widths or min(widths) < 1:
                raise ValueError("hidden must be a comma-separated list of positive widths")
            changes["hidden"] = widths
        elif key in ("D_max", "Q_min"):
            v = float(raw)
            changes[f"{key}_lo"] = v
            changes[f"{key}_hi"] = v
            given.update({f"{key}_lo", f"{key}_hi"})
        elif key in _ALIASES:
            name, conv = _ALIASES[key]
            changes[name] = conv(raw.strip().lower()) if conv is str else conv(float(raw))
            given.add(name)
        elif key in _PLAIN:
            changes[key] = _coerce(key, raw)
            given.add(key)
        else:
            raise KeyError(key)
    if mode_changed:
        changes["modes"] = modes
    if "xi_q" in given and "xi_d" not in given:
        changes["xi_d"] = 1.0 - changes["xi_q"]
    elif "xi_d" in given and "xi_q" not in given:
        changes["xi_q"] = 1.0 - changes["xi_d"]
    metric = changes.get("sce_metric")
    if metric in _METRIC_BOUNDS and metric != cfg.sce_metric:
        q_lo, q_hi, qm_lo, qm_hi = _METRIC_BOUNDS[metric]
        for name, v in (("q_lo", q_lo), ("q_hi", q_hi), ("Q_min_lo", qm_lo), ("Q_min_hi", qm_hi)):
            if name not in given:
                changes[name] = v
    out = dataclasses.replace(cfg, **changes)
    return validate(out) if check else out


def parse_scenario_text(text: str) -> list[tuple[str, str, int]]:
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ScenarioError(f"line {lineno}: expected 'key = value'", line=lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if not key or not value:
            raise ScenarioError(f"line {lineno}: empty key or value", line=lineno)
        items.append((key, value, lineno))
    return items


def load_scenario(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse scenario-file text on top of ``base`` (defaults) and validate."""
    cfg = base or default_scenario()
    pairs = []
    for key, value, lineno in parse_scenario_text(text):
        try:
            apply_overrides(cfg, [(key, value)], check=False)
        except KeyError:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}", line=lineno) from None
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}", line=lineno) from None
        pairs.append((key, value))
    return apply_overrides(cfg, pairs, check=True)


def dump_scenario(cfg: ScenarioConfig) -> str:
    """Serialize ``cfg`` to scenario-file text that round-trips through ``load_scenario``."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "modes":
            for mid in MODE_IDS:
                spec = value[mid]
                for attr in _MODE_FIELDS:
                    lines.append(f"mode.{mid}.{attr} = {getattr(spec, attr)!r}")
        elif f.name == "hidden":
            lines.append("hidden = " + ",".join(str(w) for w in value))
        elif isinstance(value, bool):
            lines.append(f"{f.name} = {str(value).lower()}")
        else:
            lines.append(f"{f.name} = {value!r}" if not isinstance(value, str) else f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# randomness

class Rng:
    """Seeded generator; sub-streams are derived from ``(seed, *stream_ids)``."""

    def __init__(self, seed: int, *stream: int):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.stream])
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *stream: int) -> "Rng":
        return Rng(self.seed, *self.stream, *stream)

    def uniform(self, lo=0.0, hi=1.0, size=None):
        return self.gen.uniform(lo, hi, size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def complex_normal(self, var=1.0, size=None):
        """Circular complex Gaussian with ``E|z|^2 = var``."""
        s = np.sqrt(np.asarray(var, dtype=float) / 2.0)
        re = self.gen.standard_normal(size)
        im = self.gen.standard_normal(size)
        return s * (re + 1j * im)

    def poisson(self, lam, size=None):
        return self.gen.poisson(lam, size)

    def integers(self, lo, hi=None, size=None):
        return self.gen.integers(lo, hi, size)
