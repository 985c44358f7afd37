"""Versioned binary checkpoints.

Layout: magic ``WAMK``, u32 format version, u64 payload length, payload,
and a trailing 64-bit BLAKE2b checksum of the payload.  The payload holds
the model config (canonical JSON), action stats, every parameter tensor
(sorted by name, float64 little-endian), optimizer moments, the iteration
counter, and the named RNG stream states.  Save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .tensor import Tensor
from .tokens import ActionStats

MAGIC = b"WAMK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    stats: ActionStats
    opt_state: dict | None = None
    iteration: int = 0
    rng_states: dict | None = None


def _pack_str(out: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def _pack_array(out: io.BytesIO, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    out.write(struct.pack("<B", a.ndim))
    out.write(struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b"")
    out.write(a.tobytes())


def _payload(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    _pack_str(out, ckpt.config.to_json())
    out.write(np.asarray(ckpt.stats.mean, dtype="<f8").tobytes())
    out.write(np.asarray(ckpt.stats.std, dtype="<f8").tobytes())
    names = sorted(ckpt.params)
    out.write(struct.pack("<I", len(names)))
    for name in names:
        p = ckpt.params[name]
        _pack_str(out, name)
        out.write(struct.pack("<B", 1 if p.requires_grad else 0))
        _pack_array(out, p.data)
    if ckpt.opt_state is None:
        out.write(struct.pack("<B", 0))
    else:
        out.write(struct.pack("<B", 1))
        out.write(struct.pack("<Q", ckpt.opt_state["t"]))
        moment_names = sorted(ckpt.opt_state["m"])
        out.write(struct.pack("<I", len(moment_names)))
        for name in moment_names:
            _pack_str(out, name)
            _pack_array(out, ckpt.opt_state["m"][name])
            _pack_array(out, ckpt.opt_state["v"][name])
    out.write(struct.pack("<Q", ckpt.iteration))
    rng = ckpt.rng_states or {}
    out.write(struct.pack("<I", len(rng)))
    for name in sorted(rng):
        seed, stream, counter = rng[name]
        _pack_str(out, name)
        out.write(struct.pack("<3Q", seed, stream, counter))
    return out.getvalue()


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = _payload(ckpt)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(_checksum(payload))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointCorruptError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<I", what)
        return self.take(n, what).decode("utf-8")

    def array(self, what: str) -> np.ndarray:
        (ndim,) = self.unpack("<B", what)
        shape = self.unpack(f"<{ndim}I", what) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(count * 8, what)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise NotACheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointCorruptError(f"{path}: truncated header")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, expected {VERSION}")
    (length,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + length + 8:
        raise CheckpointCorruptError(f"{path}: truncated payload")
    payload = raw[16:16 + length]
    digest = raw[16 + length:16 + length + 8]
    if _checksum(payload) != digest:
        raise CheckpointCorruptError(f"{path}: payload checksum mismatch")

    r = _Reader(payload, path)
    config = ModelConfig.from_json(r.string("config"))
    mean = np.frombuffer(r.take(24, "stats"), dtype="<f8").copy()
    std = np.frombuffer(r.take(24, "stats"), dtype="<f8").copy()
    stats = ActionStats(mean=mean, std=std)
    (n_params,) = r.unpack("<I", "param count")
    params = {}
    for _ in range(n_params):
        name = r.string("param name")
        (req,) = r.unpack("<B", "param flag")
        params[name] = Tensor(r.array(f"param {name}"), requires_grad=bool(req))
    (has_opt,) = r.unpack("<B", "optimizer flag")
    opt_state = None
    if has_opt:
        (t,) = r.unpack("<Q", "optimizer step")
        (n_m,) = r.unpack("<I", "moment count")
        m, v = {}, {}
        for _ in range(n_m):
            name = r.string("moment name")
            m[name] = r.array(f"moment m {name}")
            v[name] = r.array(f"moment v {name}")
        opt_state = {"t": t, "m": m, "v": v}
    (iteration,) = r.unpack("<Q", "iteration")
    (n_rng,) = r.unpack("<I", "rng count")
    rng_states = {}
    for _ in range(n_rng):
        name = r.string("rng name")
        rng_states[name] = tuple(r.unpack("<3Q", f"rng {name}"))
    return Checkpoint(config=config, params=params, stats=stats,
                      opt_state=opt_state, iteration=iteration,
                      rng_states=rng_states)
