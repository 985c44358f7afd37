import json

import numpy as np
import pytest

from minidrive.data import (ClipFormatError, generate_dataset,
                            manifest_clip_paths, read_clip, read_manifest,
                            write_clip, write_manifest_subset)
from minidrive.sim import generate_clip


def test_clip_roundtrip(tmp_path):
    clip = generate_clip(42, "left_turn", 3)
    path = tmp_path / "c.wamc"
    write_clip(path, clip)
    loaded = read_clip(path)
    assert np.array_equal(loaded.frames, clip.frames)
    assert np.array_equal(loaded.initial_frame, clip.initial_frame)
    assert np.array_equal(loaded.actions, clip.actions)
    assert np.array_equal(loaded.ego_states, clip.ego_states)
    assert loaded.route_commands == clip.route_commands
    assert loaded.seed == 42
    assert loaded.scenario == "left_turn"


def test_read_clip_bad_magic(tmp_path):
    path = tmp_path / "junk.wamc"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ClipFormatError, match="bad magic"):
        read_clip(path)


def test_read_clip_truncated_names_file(tmp_path):
    clip = generate_clip(1, "straight", 2)
    path = tmp_path / "t.wamc"
    write_clip(path, clip)
    raw = path.read_bytes()
    path.write_bytes(raw[:200])
    with pytest.raises(ClipFormatError, match=str(path)):
        read_clip(path)


def test_generate_dataset_manifest(tmp_path):
    manifest = generate_dataset(tmp_path, 7, 2, base_seed=50)
    payload = read_manifest(manifest)
    assert len(payload["clips"]) == 7
    scenarios = {e["scenario"] for e in payload["clips"]}
    assert len(scenarios) == 5
    paths = manifest_clip_paths(manifest)
    assert all(p.exists() for p in paths)
    # guidance caches written alongside
    assert all(p.parent.joinpath(p.stem + ".guidance.json").exists() for p in paths)


def test_manifest_subsets_are_nested(tmp_path):
    manifest = generate_dataset(tmp_path, 10, 2, base_seed=0)
    s4 = write_manifest_subset(manifest, 4, tmp_path / "m4.json")
    s8 = write_manifest_subset(manifest, 8, tmp_path / "m8.json")
    p4 = [e["path"] for e in read_manifest(s4)["clips"]]
    p8 = [e["path"] for e in read_manifest(s8)["clips"]]
    assert p4 == p8[:4]
    with pytest.raises(ValueError):
        write_manifest_subset(manifest, 99, tmp_path / "m99.json")
