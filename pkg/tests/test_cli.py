import json

import numpy as np
import pytest
import torch

from textcolorize.cli import main
from textcolorize.dataset import load_manifest
from textcolorize.pngio import decode_png, encode_png


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    torch.set_num_threads(1)
    root = tmp_path_factory.mktemp("cli")
    manifest = root / "data" / "manifest.jsonl"
    manifest.parent.mkdir()
    assert main(["gen-synthetic", "--seed", "0", "--count", "4", "--out", str(manifest)]) == 0

    config = {
        "stage": "ioc",
        "steps": 2,
        "batch_size": 4,
        "resolution": 32,
        "base_channels": 8,
        "disc_channels": [8, 16, 16],
        "data_kind": "manifest",
        "manifest_path": str(manifest),
        "seed": 0,
        "checkpoint_every": 0,
    }
    cfg_path = root / "ioc.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["train-ioc", "--config", str(cfg_path), "--out-dir", str(root / "ioc")]) == 0
    ioc_ckpt = root / "ioc" / "ioc_final.pt"

    config.update(stage="fusion", ioc_checkpoint=str(ioc_ckpt))
    fusion_cfg = root / "fusion.json"
    fusion_cfg.write_text(json.dumps(config))
    assert main(
        ["train-fusion", "--config", str(fusion_cfg), "--out-dir", str(root / "fusion")]
    ) == 0
    return {
        "root": root,
        "manifest": manifest,
        "ioc_ckpt": ioc_ckpt,
        "fusion_ckpt": root / "fusion" / "fusion_final.pt",
    }


def test_gen_synthetic_manifest_loads(workspace):
    samples = load_manifest(str(workspace["manifest"]))
    assert len(samples) == 4


def test_training_artifacts_exist(workspace):
    assert workspace["ioc_ckpt"].exists()
    assert workspace["fusion_ckpt"].exists()
    assert (workspace["root"] / "ioc" / "ioc_metrics.jsonl").exists()


def test_evaluate_cli(workspace):
    out = workspace["root"] / "table.csv"
    rc = main(
        [
            "evaluate",
            "--manifest", str(workspace["manifest"]),
            "--ioc-ckpt", str(workspace["ioc_ckpt"]),
            "--fusion-ckpt", str(workspace["fusion_ckpt"]),
            "--out", str(out),
            "--lpips", "stub",
        ]
    )
    assert rc == 0
    assert "mean" in out.read_text()


def test_colorize_cli(workspace, tmp_path):
    gray = np.tile(np.linspace(0.2, 0.8, 64), (64, 1))
    src = tmp_path / "input.png"
    src.write_bytes(encode_png(gray, bit_depth=8))
    instances = tmp_path / "instances.json"
    instances.write_text(json.dumps([{"box": [8, 8, 40, 40], "caption": "red square"}]))
    out = tmp_path / "out.png"
    rc = main(
        [
            "colorize",
            "--image", str(src),
            "--ioc-ckpt", str(workspace["ioc_ckpt"]),
            "--fusion-ckpt", str(workspace["fusion_ckpt"]),
            "--instances", str(instances),
            "--scene-caption", "red square on gray",
            "--out", str(out),
        ]
    )
    assert rc == 0
    decoded = decode_png(out.read_bytes())
    assert decoded.shape == (64, 64, 3)
