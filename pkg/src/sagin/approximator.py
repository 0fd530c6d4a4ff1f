"""Small dense networks in float64 with hand-written backprop, Adam and Polyak averaging.

Checkpoint layout (little-endian)::

    b"SGNN" | u32 version | u32 header_len | header (UTF-8 JSON)
    then for each array: u32 ndim | ndim x u64 dims | float64 data (C order)

The JSON header records array names, layer widths, activations and free-form metadata.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .scenario import Rng

ACTIVATIONS = ("relu", "tanh", "identity")
MAGIC = b"SGNN"
VERSION = 1


class ShapeError(ValueError):
    pass


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class GradientRecord:
    dW: list
    db: list
    dx: np.ndarray | None = None

    def scaled(self, c: float) -> "GradientRecord":
        return GradientRecord([c * g for g in self.dW], [c * g for g in self.db],
                              None if self.dx is None else c * self.dx)

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for pair in zip(self.dW, self.db) for g in pair])


@dataclass
class DenseNet:
    sizes: tuple
    activations: tuple  # one per layer (len(sizes) - 1)
    W: list = field(default_factory=list)  # W[l] has shape (in, out)
    b: list = field(default_factory=list)

    @classmethod
    def create(cls, sizes, activations, rng: Rng | None = None) -> "DenseNet":
        sizes = tuple(int(s) for s in sizes)
        if isinstance(activations, str):
            activations = (activations,) * (len(sizes) - 1)
        activations = tuple(activations)
        if len(activations) != len(sizes) - 1 or any(a not in ACTIVATIONS for a in activations):
            raise ValueError(f"need {len(sizes) - 1} activations from {ACTIVATIONS}")
        W, b = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)) if rng else np.zeros((fan_in, fan_out)))
            b.append(np.zeros(fan_out))
        return cls(sizes, activations, W, b)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.W, self.b))

    def params(self) -> list:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, self.activations, [w.copy() for w in self.W], [b.copy() for b in self.b])

    def zero_grads(self) -> GradientRecord:
        return GradientRecord([np.zeros_like(w) for w in self.W], [np.zeros_like(b) for b in self.b])

    def forward(self, x, keep: bool = False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        cache = [x]
        a = x
        for W, b, act in zip(self.W, self.b, self.activations):
            z = a @ W + b
            a = _act(act, z)
            cache += [z, a]
        return (a, cache) if keep else a

    def backward(self, cache, upstream) -> GradientRecord:
        """Gradients of ``sum(output * upstream)`` w.r.t. parameters and input."""
        up = np.asarray(upstream, dtype=float)
        if up.shape != cache[-1].shape:
            raise ShapeError(f"upstream shape {up.shape} != output shape {cache[-1].shape}")
        L = len(self.W)
        dW, db = [None] * L, [None] * L
        g = up
        for l in range(L - 1, -1, -1):
            x_in, z, a = cache[2 * l], cache[2 * l + 1], cache[2 * l + 2]
            dz = g * _act_grad(self.activations[l], z, a)
            if dz.ndim == 1:
                dW[l] = np.outer(x_in, dz)
                db[l] = dz.copy()
            else:
                dW[l] = x_in.T @ dz
                db[l] = dz.sum(axis=0)
            g = dz @ self.W[l].T
        return GradientRecord(dW, db, g)


def forward(net: DenseNet, x):
    return net.forward(x)


def backward(net: DenseNet, x, upstream) -> GradientRecord:
    _, cache = net.forward(x, keep=True)
    return net.backward(cache, upstream)


def add_grads(a: GradientRecord, b: GradientRecord) -> GradientRecord:
    return GradientRecord([x + y for x, y in zip(a.dW, b.dW)], [x + y for x, y in zip(a.db, b.db)])


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()], **kw)


def optimizer_step(net: DenseNet, grads: GradientRecord, state: AdamState, lr: float) -> tuple[DenseNet, AdamState]:
    """Bias-corrected Adam descent step, applied in place (also returned)."""
    flat = [g for pair in zip(grads.dW, grads.db) for g in pair]
    for g in flat:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(net.params(), flat, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError("gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def polyak_update(target: DenseNet, online: DenseNet, rho: float) -> DenseNet:
    if target.sizes != online.sizes:
        raise ShapeError("target and online nets differ in shape")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    for pt, po in zip(target.params(), online.params()):
        pt *= rho
        pt += (1.0 - rho) * po
    return target


# ---------------------------------------------------------------------------
# checkpoints

def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    names = list(arrays)
    header = json.dumps({"arrays": names, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
        for name in names:
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            f.write(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes())


def load_arrays(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    header = json.loads(blob[off:off + hlen].decode())
    off += hlen
    arrays = {}
    for name in header["arrays"]:
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, off)
        off += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    if off != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return arrays, header["meta"]


def nets_to_arrays(nets: dict) -> tuple[dict, dict]:
    arrays, layout = {}, {}
    for key, net in nets.items():
        layout[key] = {"sizes": list(net.sizes), "activations": list(net.activations)}
        for l, (W, b) in enumerate(zip(net.W, net.b)):
            arrays[f"{key}.W{l}"] = W
            arrays[f"{key}.b{l}"] = b
    return arrays, layout


def nets_from_arrays(arrays: dict, layout: dict) -> dict:
    nets = {}
    for key, spec in layout.items():
        L = len(spec["sizes"]) - 1
        net = DenseNet(tuple(spec["sizes"]), tuple(spec["activations"]),
                       [arrays[f"{key}.W{l}"] for l in range(L)], [arrays[f"{key}.b{l}"] for l in range(L)])
        for l, (W, b) in enumerate(zip(net.W, net.b)):
            if W.shape != (net.sizes[l], net.sizes[l + 1]) or b.shape != (net.sizes[l + 1],):
                raise ShapeError(f"{key} layer {l} has inconsistent shape")
        nets[key] = net
    return nets


def save_nets(path, nets: dict, meta: dict | None = None) -> None:
    arrays, layout = nets_to_arrays(nets)
    save_arrays(path, arrays, {"layout": layout, **(meta or {})})


def load_nets(path) -> tuple[dict, dict]:
    arrays, meta = load_arrays(path)
    layout = meta.pop("layout")
    return nets_from_arrays(arrays, layout), meta
