"""Synthetic scene generation and manifest-based dataset ingestion.

The synthetic generator produces 256x256 flat-shaded scenes: a uniformly
colored background plus 1..4 simple shapes (circle, square, triangle,
ellipse), each carrying a "<color> <shape>" caption. Colors come from a
fixed 12-entry named palette (exact 8-bit sRGB values, see ``PALETTE``), so
caption <-> pixel-color checks are exact.

Palette design notes: "blue" is an ocean blue, (0, 145, 175), because pure
RGB blue sits at a = +79 in CIE Lab, on the same side of the green-red axis
as red. Red, gray and blue also share one luminance band (L = 50.0, 53.6,
55.4) so luminance alone cannot predict chroma there and models must rely
on the caption, mirroring the one-to-many ambiguity of real colorization.

Real datasets enter through a line-delimited JSON manifest; field-by-field
documentation lives in the README. Masks travel as base64 run-length
encodings (alternating zero/one run lengths, uint32 little-endian).
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .colorspace import RGBImage, rgb_to_lab, split_gray_color
from .imageops import resize_bilinear
from .pngio import decode_png, encode_png

# Named palette: exact sRGB bytes / 255 (see the module docstring and README
# for the red/gray/blue luminance-band rationale).
PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (235, 25, 25),
    "green": (25, 165, 40),
    "blue": (0, 145, 175),
    "yellow": (242, 217, 25),
    "orange": (255, 140, 0),
    "purple": (140, 40, 180),
    "brown": (140, 75, 25),
    "pink": (255, 155, 190),
    "gray": (128, 128, 128),
    "white": (255, 255, 255),
    "black": (0, 0, 0),
    "cyan": (0, 215, 230),
}

COLOR_NAMES = tuple(PALETTE)

SHAPES = ("circle", "square", "triangle", "ellipse")

# Shape -> detector class id (COCO-80 label space, see adapters.COCO_CLASSES):
# circle -> sports ball (32), square -> book (73), triangle -> kite (33),
# ellipse -> frisbee (29).
SHAPE_CLASS_IDS = {"circle": 32, "square": 73, "triangle": 33, "ellipse": 29}

SCENE_SIZE = 256

MANIFEST_FORMAT = "textcolorize-manifest-v1"


def palette_rgb(name: str) -> np.ndarray:
    return np.array(PALETTE[name], dtype=np.float64) / 255.0


def nearest_palette_color(rgb: np.ndarray) -> str:
    """Name of the palette entry closest (L2 in sRGB) to the given triple."""
    dists = {n: float(np.sum((palette_rgb(n) - rgb) ** 2)) for n in PALETTE}
    return min(dists, key=dists.get)


@dataclass(eq=False)
class InstanceRecord:
    """One annotated/detected object instance in a scene."""

    mask: np.ndarray  # HxW bool, full-scene frame
    box: tuple[int, int, int, int]  # (x0, y0, x1, y1), inclusive-exclusive
    class_id: int
    confidence: float
    caption: str

    def validate(self, height: int, width: int) -> "InstanceRecord":
        x0, y0, x1, y1 = self.box
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise ValueError(f"box {self.box} outside {width}x{height} image bounds")
        if self.mask.shape != (height, width):
            raise ValueError(f"mask shape {self.mask.shape} != image {height}x{width}")
        if self.mask.dtype != np.bool_:
            raise ValueError("mask must be boolean")
        if not self.mask.any():
            raise ValueError("mask has no true pixels")
        ys, xs = np.nonzero(self.mask)
        if xs.min() < x0 or xs.max() >= x1 or ys.min() < y0 or ys.max() >= y1:
            raise ValueError(f"mask pixels escape box {self.box}")
        if not (0 <= self.class_id < 80):
            raise ValueError(f"class_id {self.class_id} outside [0, 80)")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        return self


@dataclass(eq=False)
class SceneSample:
    image: RGBImage
    instances: list[InstanceRecord]
    scene_caption: str

    def validate(self) -> "SceneSample":
        self.image.validate()
        if not self.scene_caption:
            raise ValueError("scene_caption is empty")
        for i, rec in enumerate(self.instances):
            try:
                rec.validate(self.image.height, self.image.width)
            except ValueError as e:
                raise ValueError(f"instance {i}: {e}") from e
        return self


@dataclass
class DatasetManifest:
    entries: list[SceneSample]
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train|test, got {self.split!r}")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


def _raster_shape(rng: np.random.Generator, shape: str, size: int) -> np.ndarray:
    """Rasterize one randomly placed shape; returns an HxW bool mask."""
    yy, xx = np.mgrid[0:size, 0:size]
    margin = size // 5
    cx = rng.integers(margin, size - margin)
    cy = rng.integers(margin, size - margin)
    lo, hi = size // 16, size // 6
    if shape == "circle":
        r = rng.integers(lo, hi)
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if shape == "square":
        h = rng.integers(lo, hi)
        return (np.abs(xx - cx) <= h) & (np.abs(yy - cy) <= h)
    if shape == "ellipse":
        rx = rng.integers(lo, hi)
        ry = rng.integers(lo, hi)
        if abs(rx - ry) < 3:  # keep it visibly distinct from a circle
            ry = rx + 4
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if shape == "triangle":
        h = int(rng.integers(lo + 2, hi + 4))
        # upward isoceles triangle: apex at (cx, cy-h), base at cy+h
        rel_y = yy - (cy - h)
        half_width = (rel_y / (2.0 * h)) * 2.0 * h * 0.9
        return (rel_y >= 0) & (rel_y <= 2 * h) & (np.abs(xx - cx) <= half_width)
    raise ValueError(f"unknown shape {shape!r}")


def generate_synthetic_scene(
    seed: int,
    num_objects: int,
    allow_overlap: bool = False,
) -> SceneSample:
    """Deterministically generate one 256x256 synthetic scene.

    Output is a pure function of (seed, num_objects, allow_overlap): same
    arguments give bitwise-identical pixels.
    """
    if not 1 <= num_objects <= 4:
        raise ValueError(f"num_objects must be in [1, 4], got {num_objects}")
    size = SCENE_SIZE
    rng = np.random.default_rng([int(seed), num_objects, int(allow_overlap)])
    bg_name = COLOR_NAMES[rng.integers(len(COLOR_NAMES))]
    pixels = np.tile(palette_rgb(bg_name), (size, size, 1))
    occupied = np.zeros((size, size), dtype=bool)
    instances: list[InstanceRecord] = []
    for _ in range(num_objects):
        shape = SHAPES[rng.integers(len(SHAPES))]
        choices = [c for c in COLOR_NAMES if c != bg_name]
        color = choices[rng.integers(len(choices))]
        mask = None
        for _attempt in range(64):
            cand = _raster_shape(rng, shape, size)
            if cand.sum() < 16:
                continue
            if allow_overlap or not (cand & occupied).any():
                mask = cand
                break
        if mask is None:  # crowded scene: accept overlap rather than fail
            mask = cand
        occupied |= mask
        pixels[mask] = palette_rgb(color)
        ys, xs = np.nonzero(mask)
        box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        instances.append(
            InstanceRecord(
                mask=mask,
                box=box,
                class_id=SHAPE_CLASS_IDS[shape],
                confidence=1.0,
                caption=f"{color} {shape}",
            )
        )
    scene_caption = f"{bg_name} background, " + ", ".join(r.caption for r in instances)
    # overlap can hide earlier instances: rebuild masks against the paint order
    if allow_overlap:
        kept = []
        for i, rec in enumerate(instances):
            visible = rec.mask.copy()
            for later in instances[i + 1 :]:
                visible &= ~later.mask
            if visible.any():
                ys, xs = np.nonzero(visible)
                rec.mask = visible
                rec.box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
                kept.append(rec)
        instances = kept
    return SceneSample(
        image=RGBImage(pixels), instances=instances, scene_caption=scene_caption
    ).validate()


def make_synthetic_dataset(
    count: int, seed: int = 0, max_objects: int = 3, allow_overlap: bool = False
) -> list[SceneSample]:
    """Generate ``count`` scenes; scene i uses seed ``seed*1_000_003 + i``."""
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(count):
        n = int(rng.integers(1, max_objects + 1))
        scenes.append(
            generate_synthetic_scene(seed * 1_000_003 + i, n, allow_overlap=allow_overlap)
        )
    return scenes


# ---------------------------------------------------------------------------
# Mask run-length encoding
# ---------------------------------------------------------------------------


def mask_to_rle(mask: np.ndarray) -> str:
    """Boolean HxW mask -> base64 of alternating run lengths (starts at 0)."""
    flat = mask.astype(np.uint8).ravel()
    changes = np.nonzero(np.diff(flat))[0] + 1
    boundaries = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(boundaries).astype(np.uint32)
    if flat.size and flat[0] == 1:  # leading zero-run of length 0
        runs = np.concatenate([[np.uint32(0)], runs])
    return base64.b64encode(runs.astype("<u4").tobytes()).decode("ascii")


def rle_to_mask(rle: str, height: int, width: int) -> np.ndarray:
    runs = np.frombuffer(base64.b64decode(rle.encode("ascii")), dtype="<u4")
    total = int(runs.sum())
    if total != height * width:
        raise ValueError(f"RLE covers {total} pixels, expected {height * width}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += int(run)
        value = not value
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# Manifest IO
# ---------------------------------------------------------------------------


def save_manifest(samples: list[SceneSample], path: str, split: str = "train") -> None:
    """Write manifest JSONL + PNG images under the manifest's directory."""
    root = os.path.dirname(os.path.abspath(path))
    img_dir = os.path.join(root, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = [json.dumps({"format": MANIFEST_FORMAT, "split": split})]
    for i, sample in enumerate(samples):
        sample.validate()
        rel = os.path.join("images", f"scene_{i:05d}.png")
        with open(os.path.join(root, rel), "wb") as f:
            f.write(encode_png(sample.image.pixels, bit_depth=8))
        lines.append(
            json.dumps(
                {
                    "image": rel,
                    "height": sample.image.height,
                    "width": sample.image.width,
                    "scene_caption": sample.scene_caption,
                    "instances": [
                        {
                            "box": list(rec.box),
                            "class_id": rec.class_id,
                            "confidence": rec.confidence,
                            "caption": rec.caption,
                            "mask_rle": mask_to_rle(rec.mask),
                        }
                        for rec in sample.instances
                    ],
                }
            )
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _parse_instance(obj: dict, height: int, width: int) -> InstanceRecord:
    for key in ("box", "class_id", "confidence", "caption", "mask_rle"):
        if key not in obj:
            raise ValueError(f"instance missing field {key!r}")
    box = tuple(int(v) for v in obj["box"])
    if len(box) != 4:
        raise ValueError(f"box must have 4 coordinates, got {obj['box']!r}")
    mask = rle_to_mask(obj["mask_rle"], height, width)
    return InstanceRecord(
        mask=mask,
        box=box,
        class_id=int(obj["class_id"]),
        confidence=float(obj["confidence"]),
        caption=str(obj["caption"]),
    )


def load_dataset_manifest(path: str) -> DatasetManifest:
    """Load and validate a manifest; errors name the offending entry."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    root = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        return DatasetManifest(entries=[], split="train")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"unknown manifest format {header.get('format')!r}")
    split = header.get("split", "train")
    samples: list[SceneSample] = []
    for idx, line in enumerate(lines[1:]):
        try:
            obj = json.loads(line)
            img_path = os.path.join(root, obj["image"])
            if not os.path.exists(img_path):
                raise ValueError(f"referenced image missing: {obj['image']}")
            with open(img_path, "rb") as f:
                pixels = decode_png(f.read())
            if pixels.ndim != 3:
                raise ValueError(f"image {obj['image']} is not RGB")
            image = RGBImage(pixels)
            instances = [
                _parse_instance(o, image.height, image.width) for o in obj["instances"]
            ]
            sample = SceneSample(
                image=image,
                instances=instances,
                scene_caption=str(obj["scene_caption"]),
            ).validate()
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise ValueError(f"manifest entry {idx}: {e}") from e
        samples.append(sample)
    return DatasetManifest(entries=samples, split=split)


def load_manifest(path: str) -> list[SceneSample]:
    return load_dataset_manifest(path).entries


# ---------------------------------------------------------------------------
# Training pairs
# ---------------------------------------------------------------------------


def make_training_pair(
    sample: SceneSample, instance_index: int, resolution: int = 256
) -> tuple[np.ndarray, np.ndarray, str, int]:
    """Crop one instance's bounding box and split it into Lab planes.

    Returns normalized planes: (L_n RxRx1 in [0,1], ab_n RxRx2 in [-1,1],
    caption, class_id). The crop uses the bounding box only; the mask stays
    with the record for the merge step.
    """
    if not 0 <= instance_index < len(sample.instances):
        raise IndexError(f"instance index {instance_index} out of range")
    rec = sample.instances[instance_index]
    x0, y0, x1, y1 = rec.box
    if x1 - x0 < 2 or y1 - y0 < 2:
        raise ValueError(f"degenerate box {rec.box}: sides must be >= 2px")
    crop = sample.image.pixels[y0:y1, x0:x1]
    resized = np.clip(resize_bilinear(crop, resolution, resolution), 0.0, 1.0)
    lab = rgb_to_lab(RGBImage(resized))
    L_n, ab_n = split_gray_color(lab)
    return L_n, ab_n, rec.caption, rec.class_id


def scene_lab_planes(
    sample: SceneSample, resolution: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Whole-scene normalized (L_n, ab_n) at the requested resolution."""
    pixels = sample.image.pixels
    if pixels.shape[0] != resolution or pixels.shape[1] != resolution:
        pixels = np.clip(resize_bilinear(pixels, resolution, resolution), 0.0, 1.0)
    return split_gray_color(rgb_to_lab(RGBImage(pixels)))


def scale_instance(
    rec: InstanceRecord, src_hw: tuple[int, int], dst_hw: tuple[int, int]
) -> InstanceRecord:
    """Map an instance's box and mask from one scene frame to another."""
    from .imageops import resize_mask_nearest

    if src_hw == dst_hw:
        return rec
    sy = dst_hw[0] / src_hw[0]
    sx = dst_hw[1] / src_hw[1]
    x0, y0, x1, y1 = rec.box
    nx0 = min(int(np.floor(x0 * sx)), dst_hw[1] - 1)
    ny0 = min(int(np.floor(y0 * sy)), dst_hw[0] - 1)
    nx1 = max(min(int(np.ceil(x1 * sx)), dst_hw[1]), nx0 + 1)
    ny1 = max(min(int(np.ceil(y1 * sy)), dst_hw[0]), ny0 + 1)
    mask = resize_mask_nearest(rec.mask, dst_hw[0], dst_hw[1])
    # keep the box/mask containment invariant after independent rounding
    clipped = np.zeros_like(mask)
    clipped[ny0:ny1, nx0:nx1] = mask[ny0:ny1, nx0:nx1]
    if not clipped.any():
        clipped[ny0:ny1, nx0:nx1] = True
    return InstanceRecord(
        mask=clipped,
        box=(nx0, ny0, nx1, ny1),
        class_id=rec.class_id,
        confidence=rec.confidence,
        caption=rec.caption,
    )
