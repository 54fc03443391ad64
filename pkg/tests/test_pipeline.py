import numpy as np
import pytest
import torch

from textcolorize.colorspace import LabImage, clip_chroma_to_gamut, lab_to_rgb, rgb_to_lab
from textcolorize.dataset import generate_synthetic_scene
from textcolorize.pipeline import ColorizePipeline, recaption_instances
from textcolorize.training import TrainConfig, train


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    torch.set_num_threads(1)
    root = tmp_path_factory.mktemp("pipe_ckpts")
    common = dict(
        batch_size=4, resolution=32, base_channels=8, disc_channels=(8, 16, 16),
        synthetic_count=6, synthetic_seed=0, seed=0, checkpoint_every=0,
    )
    ioc = train(TrainConfig(stage="ioc", steps=2, **common), str(root / "ioc"))
    fusion = train(
        TrainConfig(stage="fusion", steps=2, lambdas=None,
                    ioc_checkpoint=ioc.checkpoint_path, **common),
        str(root / "fusion"),
    )
    return ColorizePipeline(ioc.checkpoint_path, fusion.checkpoint_path)


def test_chroma_clip_preserves_luminance():
    rng = np.random.default_rng(0)
    L = rng.uniform(0, 100, (16, 16))
    ab = rng.uniform(-100, 100, (16, 16, 2))
    clipped, count = clip_chroma_to_gamut(LabImage(L=L, ab=ab))
    assert count > 0
    assert np.array_equal(clipped.L, L)
    rgb = lab_to_rgb(clipped)
    assert rgb.out_of_gamut_count == 0
    back = rgb_to_lab(rgb)
    assert np.abs(back.L - L).max() <= 1e-6


def test_chroma_clip_noop_in_gamut():
    lab = rgb_to_lab(
        __import__("textcolorize.colorspace", fromlist=["RGBImage"]).RGBImage(
            np.random.default_rng(1).random((8, 8, 3))
        )
    )
    clipped, count = clip_chroma_to_gamut(lab)
    assert count == 0
    assert np.array_equal(clipped.ab, lab.ab)


def test_pipeline_preserves_full_resolution_luminance(pipeline):
    scene = generate_synthetic_scene(2, 2)
    result = pipeline.colorize_sample(scene)
    in_L = rgb_to_lab(scene.image).L_n[..., 0]
    out_L = rgb_to_lab(result.rgb).L_n[..., 0]
    assert result.rgb.pixels.shape == (256, 256, 3)
    assert np.abs(out_L - in_L).max() <= 1e-3


def test_pipeline_empty_instances(pipeline):
    scene = generate_synthetic_scene(2, 1)
    scene.instances = []
    result = pipeline.colorize_gray(
        rgb_to_lab(scene.image).L_n[..., 0], [], "plain scene"
    )
    assert result.rgb.pixels.shape == (256, 256, 3)
    assert result.captions_used == []
    assert not result.merged.coverage.any()


def test_pipeline_deterministic(pipeline):
    scene = generate_synthetic_scene(4, 2)
    a = pipeline.colorize_sample(scene)
    b = pipeline.colorize_sample(scene)
    assert np.array_equal(a.rgb.pixels, b.rgb.pixels)


def test_pipeline_rejects_oversized(pipeline):
    with pytest.raises(ValueError, match="4096"):
        pipeline.colorize_gray(np.zeros((5000, 8)), [], "scene")


def test_pipeline_caption_affects_output(pipeline):
    scene = generate_synthetic_scene(6, 1)
    base = pipeline.colorize_sample(scene)
    edited = recaption_instances(scene.instances, [(0, "red circle")])
    changed = pipeline.colorize_gray(
        rgb_to_lab(scene.image).L_n[..., 0], edited, scene.scene_caption
    )
    if scene.instances[0].caption != "red circle":
        assert not np.array_equal(base.rgb.pixels, changed.rgb.pixels)


def test_recaption_instances_validation():
    scene = generate_synthetic_scene(1, 2)
    edited = recaption_instances(scene.instances, [(1, "pink square")])
    assert edited[1].caption == "pink square"
    assert scene.instances[1].caption != "pink square"  # original untouched
    with pytest.raises(IndexError):
        recaption_instances(scene.instances, [(9, "x")])
    with pytest.raises(ValueError):
        recaption_instances(scene.instances, [(0, "")])


def test_timing_breakdown_present(pipeline):
    scene = generate_synthetic_scene(3, 1)
    result = pipeline.colorize_sample(scene)
    for key in ("instances_ms", "merge_ms", "fusion_ms", "recombine_ms", "total_ms"):
        assert key in result.timings_ms


def test_saturated_tanh_output_stays_in_ab_domain(pipeline):
    # force the fusion head into tanh saturation (+1 would denormalize to
    # raw ab = 128, one past the domain's upper bound of 127)
    with torch.no_grad():
        pipeline.fusion.decoder.head.bias.fill_(50.0)
    try:
        scene = generate_synthetic_scene(8, 1)
        result = pipeline.colorize_sample(scene)
        lab = rgb_to_lab(result.rgb)
        assert lab.ab.max() <= 127.0 + 1e-9
        in_L = rgb_to_lab(scene.image).L_n[..., 0]
        out_L = rgb_to_lab(result.rgb).L_n[..., 0]
        assert np.abs(out_L - in_L).max() <= 1e-3
    finally:
        with torch.no_grad():
            pipeline.fusion.decoder.head.bias.zero_()


def test_mismatched_checkpoints_rejected(tmp_path):
    torch.set_num_threads(1)
    a = train(
        TrainConfig(stage="ioc", steps=0, resolution=32, base_channels=8,
                    disc_channels=(8, 16, 16), synthetic_count=2, seed=0,
                    checkpoint_every=0),
        str(tmp_path / "a"),
    )
    b = train(
        TrainConfig(stage="fusion", steps=0, resolution=16, base_channels=8,
                    disc_channels=(8, 16, 16), synthetic_count=2, seed=0,
                    lambdas=None, ioc_checkpoint=a.checkpoint_path,
                    checkpoint_every=0),
        str(tmp_path / "b"),
    )
    with pytest.raises(ValueError, match="resolution"):
        ColorizePipeline(a.checkpoint_path, b.checkpoint_path)
