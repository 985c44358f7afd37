import json

import numpy as np
import pytest

from minidrive.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small dataset + config + trained checkpoint shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = {
        "model": {"d": 16, "layers": 1, "heads": 2, "d_z": 8, "n_video": 16,
                  "n_action": 5, "k_max": 8, "group_size": 8, "patch": 16,
                  "mlp_ratio": 2, "action_hidden": 16, "ego_hidden": 8},
        "train": {"manifest": str(root / "data" / "manifest.json"),
                  "iterations": 3, "batch_size": 2, "window_chunks": 2,
                  "log_every": 1},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["gen-data", "--clips", "6", "--chunks", "2", "--seed", "800",
               "--out", str(root / "data")])
    assert rc == 0
    rc = main(["--config", str(cfg_path), "train", "--out", str(root / "run")])
    assert rc == 0
    return {"root": root, "config": cfg_path,
            "manifest": root / "data" / "manifest.json",
            "checkpoint": root / "run" / "checkpoint.wamk"}


def test_gen_data_writes_manifest_and_subsets(tmp_path, capsys):
    rc = main(["--json", "gen-data", "--clips", "5", "--chunks", "2",
               "--seed", "1", "--subsets", "2", "--out", str(tmp_path)])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert (tmp_path / "manifest.json").exists()
    assert (tmp_path / "manifest_2.json").exists()
    assert out["clips"] == 5


def test_unknown_flag_exits_2_with_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--does-not-exist", "x", "--out", "y"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_runtime_failure_exits_1_with_structured_message(tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(tmp_path / "missing.wamk"),
               "--manifest", str(tmp_path / "missing.json")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert "error" in err and "message" in err


def test_eval_json_output(workspace, capsys):
    rc = main(["--json", "eval", "--checkpoint", str(workspace["checkpoint"]),
               "--manifest", str(workspace["manifest"]), "--baseline"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert {"ade_3s", "ade_4s", "fde_3s", "fde_4s", "standstill"} <= set(report)


def test_bench_kv_json_is_single_document(workspace, capsys):
    rc = main(["--json", "bench-kv", "--checkpoint", str(workspace["checkpoint"]),
               "--manifest", str(workspace["manifest"]),
               "--strategies", "full,selective", "--horizon-chunks", "10",
               "--max-clips", "2"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["strategies"]) == {"full", "selective"}
    assert "reference_large_scale" in report


def test_rollout_subcommand(workspace, tmp_path, capsys):
    rc = main(["--json", "rollout", "--checkpoint", str(workspace["checkpoint"]),
               "--manifest", str(workspace["manifest"]), "--clip", "0",
               "--out", str(tmp_path / "roll")])
    assert rc == 0
    assert (tmp_path / "roll" / "rollout.json").exists()


def test_inspect_mask_writes_pgm(tmp_path, capsys):
    rc = main(["--json", "inspect-mask", "--chunks", "2", "--out", str(tmp_path)])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    for name in info["files"]:
        raw = (tmp_path / name).read_bytes()
        assert raw.startswith(b"P5\n")


def test_seed_override_changes_training(workspace, tmp_path, capsys):
    rc = main(["--json", "--seed", "9", "--config", str(workspace["config"]),
               "train", "--iterations", "2", "--out", str(tmp_path / "r9")])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["iterations"] == 2
