"""Clip records and dataset manifests.

One binary record per clip: a little-endian header (magic ``WAMC``,
version, K, H, W, C, F, A) followed by the frame payload (float32), the
t=0 boundary frame, actions (float64), per-boundary ego states, route
command bytes, the scenario code, and the generation seed.  A JSON
manifest lists clip paths, scenarios, and seeds.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import guidance as G
from .sim import (ROUTE_CODES, ROUTE_NAMES, SCENARIOS, Clip, generate_clip)

MAGIC = b"WAMC"
VERSION = 1
_SCENARIO_CODE = {name: i for i, name in enumerate(SCENARIOS)}


class ClipFormatError(ValueError):
    pass


def write_clip(path, clip: Clip) -> None:
    f, h, w, c = clip.frames.shape
    a = clip.actions.shape[0]
    header = MAGIC + struct.pack("<7I", VERSION, clip.chunks, h, w, c, f, a)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(clip.initial_frame, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(clip.actions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(clip.ego_states, dtype="<f8").tobytes())
        fh.write(bytes(ROUTE_CODES[r] for r in clip.route_commands))
        fh.write(struct.pack("<BQ", _SCENARIO_CODE[clip.scenario], clip.seed))


def _take(buf: memoryview, n: int, path, what: str) -> memoryview:
    if len(buf) < n:
        raise ClipFormatError(f"{path}: truncated clip record while reading {what}")
    return buf[:n]


def read_clip(path) -> Clip:
    raw = memoryview(Path(path).read_bytes())
    if len(raw) < 4 or bytes(raw[:4]) != MAGIC:
        raise ClipFormatError(f"{path}: not a clip record (bad magic)")
    if len(raw) < 32:
        raise ClipFormatError(f"{path}: truncated clip header")
    version, k, h, w, c, f, a = struct.unpack("<7I", raw[4:32])
    if version != VERSION:
        raise ClipFormatError(f"{path}: unsupported clip version {version}")
    buf = raw[32:]

    def pull(count, dtype, shape, what):
        nonlocal buf
        nbytes = count * np.dtype(dtype).itemsize
        chunk = _take(buf, nbytes, path, what)
        buf = buf[nbytes:]
        return np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()

    frames = pull(f * h * w * c, "<f4", (f, h, w, c), "frames")
    initial = pull(h * w * c, "<f4", (h, w, c), "initial frame")
    actions = pull(a * 3, "<f8", (a, 3), "actions")
    ego = pull((k + 1) * 3, "<f8", (k + 1, 3), "ego states")
    cmds = bytes(_take(buf, k, path, "route commands"))
    buf = buf[k:]
    tail = _take(buf, 9, path, "trailer")
    scen_code, seed = struct.unpack("<BQ", tail)
    try:
        commands = tuple(ROUTE_NAMES[b] for b in cmds)
        scenario = SCENARIOS[scen_code]
    except (KeyError, IndexError) as exc:
        raise ClipFormatError(f"{path}: corrupt enum value ({exc})") from exc
    return Clip(frames=frames, initial_frame=initial, actions=actions,
                ego_states=ego, route_commands=commands, chunk_seconds=4.0,
                seed=seed, scenario=scenario, chunks=k)


def write_manifest(path, entries: list[dict], chunks: int) -> None:
    payload = {"version": 1, "chunks": chunks, "clips": entries}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def read_manifest(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if "clips" not in payload:
        raise ClipFormatError(f"{path}: manifest has no clip list")
    return payload


def manifest_clip_paths(manifest_path) -> list[Path]:
    root = Path(manifest_path).parent
    payload = read_manifest(manifest_path)
    return [root / entry["path"] for entry in payload["clips"]]


def generate_dataset(out_dir, n_clips: int, chunks: int, base_seed: int,
                     scenarios=SCENARIOS, guidance_cache: bool = True) -> Path:
    """Write `n_clips` clips (scenarios round-robin) plus a manifest.

    Returns the manifest path.  Guidance caches are precomputed alongside
    each clip as JSON.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_clips):
        scenario = scenarios[i % len(scenarios)]
        seed = base_seed + i
        clip = generate_clip(seed, scenario, chunks)
        name = f"clip_{i:05d}.wamc"
        write_clip(out / name, clip)
        if guidance_cache:
            steps = G.guidance_steps_for_clip(clip)
            G.save_guidance_cache(out / f"clip_{i:05d}.guidance.json", steps)
        entries.append({"path": name, "scenario": scenario, "seed": seed,
                        "chunks": chunks})
    manifest = out / "manifest.json"
    write_manifest(manifest, entries, chunks)
    return manifest


def write_manifest_subset(manifest_path, n: int, out_path) -> Path:
    """Nested subset manifest reusing the first n clip records."""
    payload = read_manifest(manifest_path)
    if n > len(payload["clips"]):
        raise ValueError(f"subset of {n} exceeds manifest size {len(payload['clips'])}")
    write_manifest(out_path, payload["clips"][:n], payload["chunks"])
    return Path(out_path)
