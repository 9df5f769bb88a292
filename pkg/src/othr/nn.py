"""Small numpy building blocks shared by the recognizer and the projector.

Parameter files share one layout::

    b"OTHR" | u32 version | u32 header length | JSON header | f64 arrays

All integers and floats are little-endian. The header lists arrays in
storage order as ``{"name": ..., "shape": [...]}`` plus free-form ``meta``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OTHR"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


class Adam:
    """Adam over a dict of arrays, updated in place."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        if self.clip_norm is not None:
            # fixed summation order: the norm must not depend on dict insertion order
            norm = np.sqrt(sum(float(np.sum(grads[k] * grads[k])) for k in sorted(grads)))
            if norm > self.clip_norm:
                grads = {k: g * (self.clip_norm / norm) for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def save_params(path, params: dict, kind: str, meta: dict | None = None):
    names = sorted(params)
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_params(path, kind: str | None = None) -> tuple[dict, dict]:
    """Read a parameter file; returns ``(arrays, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise ValueError(f"{path}: holds {header['kind']!r} parameters, expected {kind!r}")
    pos = 12 + hlen
    params = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        params[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return params, header["meta"]
