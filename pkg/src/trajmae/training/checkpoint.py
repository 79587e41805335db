"""Binary checkpoint format.

Layout (little-endian)::

    b"TMAE"  u32 version
    u32 n  <n bytes JSON config block>
    u32 tensor_count
    per tensor: u32 name_len, name, u32 rank, u32 dims[rank],
                f64 value[...], f64 adam_m[...], f64 adam_v[...]
    u32 n  <n bytes JSON state block: counters + rng states>
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..tensor import ParamStore

MAGIC = b"TMAE"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict
    store: ParamStore
    counters: dict = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(ckpt):
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    cfg = _dumps(ckpt.config)
    out += struct.pack("<I", len(cfg)) + cfg
    store = ckpt.store
    out += struct.pack("<I", len(store))
    for name in store:
        p = store[name]
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", p.ndim)
        out += struct.pack(f"<{p.ndim}I", *p.shape)
        for arr in (p.data, store.m[name], store.v[name]):
            out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    state = _dumps({"counters": ckpt.counters, "step_count": store.step_count, "rng": ckpt.rng_states})
    out += struct.pack("<I", len(state)) + state
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not a TMAE checkpoint")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(r.u32("config length"), "config block"))
    except json.JSONDecodeError as err:
        raise CheckpointError(f"corrupt config block: {err}") from None
    store = ParamStore()
    count = r.u32("tensor count")
    for t in range(count):
        name = r.take(r.u32(f"tensor {t} name length"), f"tensor {t} name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} dims"))
        n = int(np.prod(dims)) if rank else 1
        arrs = []
        for part in ("value", "adam_m", "adam_v"):
            raw = r.take(8 * n, f"{name} {part}")
            arrs.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims))
        store.add(name, arrs[0])
        store.m[name] = arrs[1].copy()
        store.v[name] = arrs[2].copy()
    try:
        state = json.loads(r.take(r.u32("state length"), "state block"))
    except json.JSONDecodeError as err:
        raise CheckpointError(f"corrupt state block: {err}") from None
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after state block")
    store.step_count = int(state["step_count"])
    return Checkpoint(config, store, state["counters"], state["rng"])


def save_checkpoint(path, ckpt):
    data = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def load_checkpoint(path, expected_model=None):
    """Read a checkpoint; when ``expected_model`` (a dict) is given, its model block must match."""
    with open(path, "rb") as fh:
        ckpt = from_bytes(fh.read())
    if expected_model is not None:
        have = ckpt.config.get("model")
        if have != expected_model:
            diff = sorted(
                k for k in set(have or {}) | set(expected_model)
                if (have or {}).get(k) != expected_model.get(k)
            )
            raise CheckpointMismatch(f"{path}: model config mismatch in {diff}")
    return ckpt


def copy_prefix(dst, src, prefix):
    """Copy every ``prefix*`` parameter of ``src`` into ``dst``; shapes must agree."""
    names = src.names(prefix)
    if not names:
        raise CheckpointMismatch(f"checkpoint has no parameters under {prefix!r}")
    problems = []
    for n in names:
        if n not in dst:
            problems.append(f"{n}: not in model")
        elif dst[n].shape != src[n].shape:
            problems.append(f"{n}: checkpoint {src[n].shape} vs model {dst[n].shape}")
    missing = [n for n in dst.names(prefix) if n not in src]
    problems += [f"{n}: missing from checkpoint" for n in missing]
    if problems:
        raise CheckpointMismatch("mismatched tensors: " + "; ".join(problems))
    for n in names:
        dst[n].data = src[n].data.copy()
