import numpy as np
import pytest

from textcolorize.colorspace import RGBImage, rgb_color_to_lab
from textcolorize.dataset import (
    SHAPE_CLASS_IDS,
    InstanceRecord,
    SceneSample,
    generate_synthetic_scene,
    load_manifest,
    make_synthetic_dataset,
    make_training_pair,
    mask_to_rle,
    nearest_palette_color,
    palette_rgb,
    rle_to_mask,
    save_manifest,
    scale_instance,
)


def test_generation_deterministic():
    a = generate_synthetic_scene(7, 1)
    b = generate_synthetic_scene(7, 1)
    assert np.array_equal(a.image.pixels, b.image.pixels)
    assert a.scene_caption == b.scene_caption
    for ra, rb in zip(a.instances, b.instances):
        assert np.array_equal(ra.mask, rb.mask)
        assert ra.box == rb.box and ra.caption == rb.caption


def test_seed_sensitivity():
    a = generate_synthetic_scene(7, 1)
    b = generate_synthetic_scene(8, 1)
    assert not np.array_equal(a.image.pixels, b.image.pixels)


def test_caption_color_matches_mask_pixels():
    # nearest-palette-color classifier over the mask region as oracle
    for seed in range(20):
        scene = generate_synthetic_scene(seed, 3)
        for rec in scene.instances:
            color_word = rec.caption.split()[0]
            mean_rgb = scene.image.pixels[rec.mask].mean(axis=0)
            assert nearest_palette_color(mean_rgb) == color_word
            # flat shading makes the match exact, not merely nearest
            assert np.abs(mean_rgb - palette_rgb(color_word)).max() <= 1e-12


def test_scene_invariants_and_class_table():
    for seed in range(10):
        scene = generate_synthetic_scene(seed, 4)
        scene.validate()
        for rec in scene.instances:
            shape_word = rec.caption.split()[1]
            assert rec.class_id == SHAPE_CLASS_IDS[shape_word]
            assert rec.confidence == 1.0


def test_masks_disjoint_without_overlap_flag():
    for seed in range(10):
        scene = generate_synthetic_scene(seed, 4)
        total = np.zeros((256, 256), dtype=np.int32)
        for rec in scene.instances:
            total += rec.mask.astype(np.int32)
        assert total.max() <= 1


def test_scene_caption_mentions_background_and_objects():
    scene = generate_synthetic_scene(3, 2)
    assert "background" in scene.scene_caption
    for rec in scene.instances:
        assert rec.caption in scene.scene_caption


def test_rle_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10):
        mask = rng.random((37, 22)) > 0.7
        back = rle_to_mask(mask_to_rle(mask), 37, 22)
        assert np.array_equal(back, mask)


def test_rle_length_mismatch():
    mask = np.ones((4, 4), dtype=bool)
    with pytest.raises(ValueError, match="pixels"):
        rle_to_mask(mask_to_rle(mask), 5, 5)


def test_manifest_round_trip(tmp_path):
    samples = make_synthetic_dataset(4, seed=3)
    path = tmp_path / "manifest.jsonl"
    save_manifest(samples, str(path), split="train")
    loaded = load_manifest(str(path))
    assert len(loaded) == len(samples)
    for orig, back in zip(samples, loaded):
        assert np.abs(back.image.pixels - orig.image.pixels).max() <= 0.5 / 255
        assert back.scene_caption == orig.scene_caption
        assert len(back.instances) == len(orig.instances)
        for ra, rb in zip(orig.instances, back.instances):
            assert ra.box == rb.box
            assert np.array_equal(ra.mask, rb.mask)
            assert ra.class_id == rb.class_id and ra.caption == rb.caption
            assert ra.confidence == rb.confidence


def test_manifest_palette_pixels_survive_exactly(tmp_path):
    # palette values sit on the 8-bit lattice, so PNG round-trips them exactly
    samples = [generate_synthetic_scene(1, 2)]
    path = tmp_path / "m.jsonl"
    save_manifest(samples, str(path))
    loaded = load_manifest(str(path))
    assert np.array_equal(loaded[0].image.pixels, samples[0].image.pixels)


def test_empty_manifest(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_manifest(str(path)) == []


def test_missing_manifest():
    with pytest.raises(FileNotFoundError):
        load_manifest("/nonexistent/manifest.jsonl")


def test_manifest_bad_box_names_entry(tmp_path):
    samples = make_synthetic_dataset(2, seed=5)
    path = tmp_path / "m.jsonl"
    save_manifest(samples, str(path))
    lines = path.read_text().splitlines()
    import json

    obj = json.loads(lines[2])  # header + entry0 + entry1
    obj["instances"][0]["box"] = [0, 0, 999, 999]
    lines[2] = json.dumps(obj)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="entry 1"):
        load_manifest(str(path))


def test_manifest_missing_image_named(tmp_path):
    samples = make_synthetic_dataset(1, seed=5)
    path = tmp_path / "m.jsonl"
    save_manifest(samples, str(path))
    (tmp_path / "images" / "scene_00000.png").unlink()
    with pytest.raises(ValueError, match="entry 0"):
        load_manifest(str(path))


def _full_frame_sample():
    pixels = np.tile(palette_rgb("green"), (256, 256, 1))
    mask = np.ones((256, 256), dtype=bool)
    rec = InstanceRecord(
        mask=mask, box=(0, 0, 256, 256), class_id=3, confidence=1.0, caption="green square"
    )
    return SceneSample(image=RGBImage(pixels), instances=[rec], scene_caption="green")


def test_training_pair_identity_resize():
    sample = _full_frame_sample()
    L_n, ab_n, caption, class_id = make_training_pair(sample, 0, resolution=256)
    from textcolorize.dataset import scene_lab_planes

    L_ref, ab_ref = scene_lab_planes(sample, 256)
    assert np.abs(L_n - L_ref).max() <= 1e-6
    assert np.abs(ab_n - ab_ref).max() <= 1e-6
    assert class_id == 3  # passthrough


def test_training_pair_red_square_mean_ab():
    # a red square crop resized to 256 stays uniformly red; its mean raw ab
    # must match the palette red's Lab chroma
    pixels = np.tile(palette_rgb("gray"), (256, 256, 1))
    mask = np.zeros((256, 256), dtype=bool)
    mask[96:160, 96:160] = True
    pixels[mask] = palette_rgb("red")
    rec = InstanceRecord(
        mask=mask, box=(96, 96, 160, 160), class_id=73, confidence=1.0, caption="red square"
    )
    sample = SceneSample(image=RGBImage(pixels), instances=[rec], scene_caption="scene")
    _, ab_n, caption, _ = make_training_pair(sample, 0, resolution=256)
    _, a_ref, b_ref = rgb_color_to_lab(tuple(palette_rgb("red")))
    ab_raw_mean = ab_n.reshape(-1, 2).mean(axis=0) * 128.0
    assert abs(ab_raw_mean[0] - a_ref) <= 2.0
    assert abs(ab_raw_mean[1] - b_ref) <= 2.0
    assert caption == "red square"


def test_training_pair_degenerate_box_rejected():
    sample = _full_frame_sample()
    sample.instances[0].box = (0, 0, 1, 256)
    with pytest.raises(ValueError, match="degenerate"):
        make_training_pair(sample, 0)


def test_training_pair_bad_index():
    sample = _full_frame_sample()
    with pytest.raises(IndexError):
        make_training_pair(sample, 5)


def test_scale_instance_preserves_invariants():
    for seed in range(5):
        scene = generate_synthetic_scene(seed, 2)
        for rec in scene.instances:
            scaled = scale_instance(rec, (256, 256), (64, 64))
            scaled.validate(64, 64)


def test_synthetic_dataset_instance_counts():
    scenes = make_synthetic_dataset(20, seed=0, max_objects=3)
    counts = {len(s.instances) for s in scenes}
    assert counts <= {1, 2, 3}
    assert len(counts) > 1
