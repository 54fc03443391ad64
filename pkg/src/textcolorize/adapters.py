"""Pluggable contracts for the two pretrained external dependencies.

Both the caption encoder and the instance detector come in two flavors:

* a deterministic in-process stub, used by the test suite and the toy
  training runs (no pretrained weights anywhere in the core test path), and
* an external adapter speaking a one-request/one-response JSON protocol to
  a separately running backend process (configured by URL / env var).

External adapters never fall back to the stub silently: an unreachable
backend raises :class:`AdapterUnavailable`.
"""

from __future__ import annotations

import hashlib
import json
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .dataset import InstanceRecord, SceneSample, rle_to_mask

EMBEDDING_DIM = 256

# COCO-80 label space; synthetic shapes map onto the subset documented in
# dataset.SHAPE_CLASS_IDS.
COCO_CLASSES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon",
    "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
    "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)

assert len(COCO_CLASSES) == 80


class AdapterUnavailable(RuntimeError):
    """An external backend (text encoder / detector / feature net) is down."""


@dataclass
class TextEmbedding:
    vector: np.ndarray  # shape (256,)
    source: str = "stub"

    def validate(self) -> "TextEmbedding":
        if self.vector.shape != (EMBEDDING_DIM,):
            raise ValueError(f"embedding must have {EMBEDDING_DIM} dims, got {self.vector.shape}")
        if not np.isfinite(self.vector).all():
            raise ValueError("embedding contains non-finite values")
        return self


@dataclass
class DetectionResult:
    instances: list[InstanceRecord]


def _token_vector(token: str) -> np.ndarray:
    # stable across processes: seed from sha256, not Python's salted hash()
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(seed).standard_normal(EMBEDDING_DIM)


def encode_text_stub(caption: str) -> TextEmbedding:
    """Deterministic caption embedding: sum of per-token hash vectors, L2-normalized.

    Case-insensitive, whitespace-tokenized; token order does not matter.
    """
    tokens = caption.lower().split()
    if not tokens:
        raise ValueError("caption is empty")
    vec = np.zeros(EMBEDDING_DIM)
    for tok in tokens:
        vec += _token_vector(tok)
    norm = np.linalg.norm(vec)
    if norm < 1e-8:  # astronomically unlikely cancellation
        vec = _token_vector("\x00" + tokens[0])
        norm = np.linalg.norm(vec)
    return TextEmbedding(vector=vec / norm, source="stub").validate()


def _post_json(url: str, payload: dict, timeout: float, what: str) -> dict:
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            if resp.status != 200:
                raise AdapterUnavailable(f"{what} at {url}: HTTP {resp.status}")
            return json.loads(resp.read().decode("utf-8"))
    except AdapterUnavailable:
        raise
    except (urllib.error.URLError, OSError, json.JSONDecodeError, ValueError) as e:
        raise AdapterUnavailable(f"{what} at {url}: {e}") from e


class ExternalTextEncoder:
    """Adapter for a pretrained sentence encoder served over HTTP.

    Protocol: POST {"text": caption} -> {"embedding": [floats]}. If the
    backend's native dimension differs from 256, a fixed seeded linear map
    reduces it; the map can be frozen to disk so it stays identical across
    runs (``projection_path``).
    """

    PROJECTION_SEED = 7919

    def __init__(self, url: str, timeout: float = 10.0, projection_path: str | None = None):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.projection_path = projection_path
        self._projection: np.ndarray | None = None

    def _projection_for(self, native_dim: int) -> np.ndarray:
        if self._projection is not None and self._projection.shape[1] == native_dim:
            return self._projection
        if self.projection_path is not None:
            try:
                data = np.load(self.projection_path)
                if data["matrix"].shape == (EMBEDDING_DIM, native_dim):
                    self._projection = data["matrix"]
                    return self._projection
            except (OSError, KeyError):
                pass
        rng = np.random.default_rng([self.PROJECTION_SEED, native_dim])
        matrix = rng.standard_normal((EMBEDDING_DIM, native_dim)) / np.sqrt(native_dim)
        if self.projection_path is not None:
            np.savez(self.projection_path, matrix=matrix)
        self._projection = matrix
        return matrix

    def encode(self, caption: str) -> TextEmbedding:
        if not caption.strip():
            raise ValueError("caption is empty")
        reply = _post_json(
            self.url + "/encode", {"text": caption}, self.timeout, "text encoder"
        )
        if "embedding" not in reply:
            raise AdapterUnavailable(
                f"text encoder at {self.url}: reply missing 'embedding'"
            )
        native = np.asarray(reply["embedding"], dtype=np.float64)
        if native.ndim != 1 or native.size == 0:
            raise AdapterUnavailable(
                f"text encoder at {self.url}: embedding must be a flat vector"
            )
        if native.size != EMBEDDING_DIM:
            native = self._projection_for(native.size) @ native
        norm = np.linalg.norm(native)
        if norm < 1e-12 or not np.isfinite(norm):
            raise AdapterUnavailable(f"text encoder at {self.url}: degenerate embedding")
        return TextEmbedding(vector=native / norm, source="external").validate()


def detect_instances_stub(sample: SceneSample) -> DetectionResult:
    """Ground-truth passthrough detector: annotations in, confidence 1.0 out."""
    instances = [
        InstanceRecord(
            mask=rec.mask,
            box=rec.box,
            class_id=rec.class_id,
            confidence=1.0,
            caption=rec.caption,
        )
        for rec in sample.instances
    ]
    return DetectionResult(instances=instances)


class ExternalDetector:
    """Adapter for an instance-segmentation backend served over HTTP.

    Protocol: POST {"image_png_b64": str} -> {"instances": [{"box": [4 ints],
    "class_id": int, "confidence": float, "mask_rle": str?, "caption": str?}]}.
    Results below ``threshold`` are dropped, masks are clipped to their boxes,
    and anything violating the instance invariants is rejected loudly.
    """

    def __init__(
        self,
        url: str,
        threshold: float = 0.5,
        max_instances: int = 16,
        timeout: float = 30.0,
    ):
        self.url = url.rstrip("/")
        self.threshold = threshold
        self.max_instances = max_instances
        self.timeout = timeout

    def detect(self, image_png_b64: str, height: int, width: int) -> DetectionResult:
        reply = _post_json(
            self.url + "/detect",
            {"image_png_b64": image_png_b64},
            self.timeout,
            "detector",
        )
        raw = reply.get("instances")
        if raw is None:
            raise AdapterUnavailable(f"detector at {self.url}: reply missing 'instances'")
        records: list[InstanceRecord] = []
        for i, obj in enumerate(raw):
            conf = float(obj.get("confidence", 0.0))
            if conf < self.threshold:
                continue
            box = tuple(int(v) for v in obj["box"])
            if obj.get("mask_rle"):
                mask = rle_to_mask(obj["mask_rle"], height, width)
            else:
                mask = np.zeros((height, width), dtype=bool)
                mask[box[1] : box[3], box[0] : box[2]] = True
            clipped = np.zeros_like(mask)
            clipped[box[1] : box[3], box[0] : box[2]] = mask[
                box[1] : box[3], box[0] : box[2]
            ]
            rec = InstanceRecord(
                mask=clipped,
                box=box,
                class_id=int(obj.get("class_id", 0)),
                confidence=conf,
                caption=str(obj.get("caption", "")),
            )
            try:
                rec.validate(height, width)
            except ValueError as e:
                raise ValueError(f"detector returned invalid instance {i}: {e}") from e
            records.append(rec)
        records.sort(key=lambda r: -r.confidence)
        return DetectionResult(instances=records[: self.max_instances])


def get_text_encoder(kind: str, url: str | None = None):
    """Config-key dispatch: 'stub' or 'external' (requires url)."""
    if kind == "stub":
        return encode_text_stub
    if kind == "external":
        if not url:
            raise ValueError("external text encoder needs a URL")
        return ExternalTextEncoder(url).encode
    raise ValueError(f"unknown text encoder kind {kind!r}")
