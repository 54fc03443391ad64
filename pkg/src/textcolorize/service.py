"""HTTP inference service exposing the colorize / re-colorize pipeline.

Endpoints:
  GET  /health    -> {"status": "loading"|"ready", checkpoint ids, adapter info}
  POST /detect    -> instances for an uploaded image (stub passthrough of the
                     request's annotations, or an external detector backend)
  POST /colorize  -> full pipeline; the client supplies the instance list
                     (usually straight from /detect, captions edited) plus a
                     scene caption, and gets a base64 PNG back.

Image payloads are base64 PNG. Responses default to 16-bit PNG: the
luminance-preservation guarantee is tighter than 8-bit quantization allows.
The service is stateless across requests apart from the loaded checkpoints.
"""

from __future__ import annotations

import base64
import os
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .adapters import (
    COCO_CLASSES,
    AdapterUnavailable,
    ExternalDetector,
    ExternalTextEncoder,
    encode_text_stub,
)
from .colorspace import RGBImage, rgb_to_lab
from .dataset import InstanceRecord, mask_to_rle, rle_to_mask
from .pipeline import ColorizePipeline, recaption_instances
from .pngio import PNGError, decode_png, encode_png

MAX_SIDE = 4096


@dataclass
class ServiceConfig:
    ioc_checkpoint: str | None = None
    fusion_checkpoint: str | None = None
    text_encoder: str = "stub"  # stub | external
    text_encoder_url: str | None = None
    detector: str = "stub"  # stub | external | none
    detector_url: str | None = None
    detector_threshold: float = 0.5
    png_bits: int = 16

    @staticmethod
    def from_env(**overrides) -> "ServiceConfig":
        cfg = ServiceConfig(**overrides)
        cfg.text_encoder_url = cfg.text_encoder_url or os.environ.get(
            "TEXTCOLORIZE_TEXT_ENCODER_URL"
        )
        cfg.detector_url = cfg.detector_url or os.environ.get("TEXTCOLORIZE_DETECTOR_URL")
        return cfg


class InstanceSpec(BaseModel):
    box: list[int] = Field(..., min_length=4, max_length=4)
    caption: str
    class_id: int | None = None
    confidence: float = 1.0
    mask_rle: str | None = None


class InstanceOverride(BaseModel):
    caption: str
    index: int | None = None
    box: list[int] | None = Field(None, min_length=4, max_length=4)


class ColorizeOptions(BaseModel):
    detector: str | None = None
    threshold: float | None = None


class ColorizeRequestModel(BaseModel):
    image_png_b64: str
    scene_caption: str = ""
    instances: list[InstanceSpec] | None = None
    instance_overrides: list[InstanceOverride] = []
    options: ColorizeOptions = ColorizeOptions()


class DetectRequestModel(BaseModel):
    image_png_b64: str
    annotations: list[InstanceSpec] | None = None
    options: ColorizeOptions = ColorizeOptions()


def _decode_image(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64.encode("ascii"), validate=True)
    except Exception as e:
        raise ValueError(f"image_png_b64 is not valid base64: {e}") from e
    try:
        arr = decode_png(raw)
    except PNGError as e:
        raise ValueError(f"image_png_b64 is not a decodable PNG: {e}") from e
    if max(arr.shape[:2]) > MAX_SIDE:
        raise ValueError(f"image side {max(arr.shape[:2])} exceeds the {MAX_SIDE}px limit")
    return arr


def _luminance_of(arr: np.ndarray) -> np.ndarray:
    """Normalized L plane from a decoded gray or RGB array."""
    if arr.ndim == 2:
        rgb = np.repeat(arr[..., None], 3, axis=2)
    else:
        rgb = arr
    return rgb_to_lab(RGBImage(rgb)).L_n[..., 0]


def _specs_to_records(specs: list[InstanceSpec], height: int, width: int) -> list[InstanceRecord]:
    records = []
    for i, spec in enumerate(specs):
        box = tuple(int(v) for v in spec.box)
        if spec.mask_rle:
            mask = rle_to_mask(spec.mask_rle, height, width)
        else:
            mask = np.zeros((height, width), dtype=bool)
            mask[box[1] : box[3], box[0] : box[2]] = True
        rec = InstanceRecord(
            mask=mask,
            box=box,
            class_id=spec.class_id if spec.class_id is not None else 0,
            confidence=float(spec.confidence),
            caption=spec.caption,
        )
        try:
            rec.validate(height, width)
        except ValueError as e:
            raise ValueError(f"instance {i}: {e}") from e
        if not spec.caption.strip():
            raise ValueError(f"instance {i}: caption is empty")
        records.append(rec)
    return records


def _record_payload(rec: InstanceRecord, include_mask: bool = True) -> dict:
    payload = {
        "box": list(rec.box),
        "caption": rec.caption,
        "class_id": rec.class_id,
        "class_name": COCO_CLASSES[rec.class_id],
        "confidence": rec.confidence,
    }
    if include_mask:
        payload["mask_rle"] = mask_to_rle(rec.mask)
    return payload


class ModelRegistry:
    """Loaded pipeline + adapter handles; 'loading' until checkpoints are in."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.pipeline: ColorizePipeline | None = None
        if config.text_encoder == "external":
            if not config.text_encoder_url:
                raise ValueError("external text encoder configured without a URL")
            self.text_encoder = ExternalTextEncoder(config.text_encoder_url).encode
        else:
            self.text_encoder = encode_text_stub

    def load(self) -> None:
        if not (self.config.ioc_checkpoint and self.config.fusion_checkpoint):
            return
        self.pipeline = ColorizePipeline(
            self.config.ioc_checkpoint,
            self.config.fusion_checkpoint,
            text_encoder=self.text_encoder,
        )

    @property
    def ready(self) -> bool:
        return self.pipeline is not None

    def external_detector(self, threshold: float | None) -> ExternalDetector:
        if not self.config.detector_url:
            raise AdapterUnavailable("detector: no external detector URL configured")
        return ExternalDetector(
            self.config.detector_url,
            threshold=self.config.detector_threshold if threshold is None else threshold,
        )


def create_app(config: ServiceConfig | None = None, autoload: bool = True) -> FastAPI:
    config = config or ServiceConfig.from_env()
    registry = ModelRegistry(config)
    if autoload:
        registry.load()

    app = FastAPI(title="textcolorize inference service")
    app.state.registry = registry

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first.get("loc", []) if p != "body")
        return JSONResponse(
            status_code=400,
            content={"detail": f"invalid request field '{loc}': {first.get('msg')}"},
        )

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(IndexError)
    async def index_error_handler(request: Request, exc: IndexError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(AdapterUnavailable)
    async def adapter_handler(request: Request, exc: AdapterUnavailable):
        return JSONResponse(
            status_code=503,
            content={"detail": str(exc), "adapter": str(exc).split(":")[0]},
        )

    @app.get("/health")
    def health():
        def ckpt_id(path):
            return os.path.basename(path) if path else None

        return {
            "status": "ready" if registry.ready else "loading",
            "checkpoints": {
                "ioc": ckpt_id(config.ioc_checkpoint) if registry.ready else None,
                "fusion": ckpt_id(config.fusion_checkpoint) if registry.ready else None,
            },
            "adapters": {
                "text_encoder": config.text_encoder,
                "detector": config.detector,
            },
        }

    @app.post("/detect")
    def detect(req: DetectRequestModel):
        arr = _decode_image(req.image_png_b64)
        h, w = arr.shape[:2]
        detector = req.options.detector or config.detector
        if req.annotations is not None:
            if detector == "external":
                raise ValueError(
                    "request carries annotations but asks for the external detector; "
                    "drop one of the two"
                )
            records = _specs_to_records(req.annotations, h, w)
            records = [
                InstanceRecord(r.mask, r.box, r.class_id, 1.0, r.caption) for r in records
            ]
        elif detector == "external":
            result = registry.external_detector(req.options.threshold).detect(
                req.image_png_b64, h, w
            )
            records = result.instances
        elif detector == "none":
            records = []
        else:
            raise ValueError(
                "stub detector passes through request annotations; supply "
                "'annotations' or set options.detector to 'external' or 'none'"
            )
        return {"instances": [_record_payload(r) for r in records]}

    @app.post("/colorize")
    def colorize(req: ColorizeRequestModel):
        t_start = time.perf_counter()
        if not registry.ready:
            return JSONResponse(
                status_code=503,
                content={"detail": "models not loaded yet", "adapter": "checkpoints"},
            )
        arr = _decode_image(req.image_png_b64)
        h, w = arr.shape[:2]
        L = _luminance_of(arr)

        if req.instances is not None:
            records = _specs_to_records(req.instances, h, w)
        else:
            detector = req.options.detector or config.detector
            if detector == "external":
                records = registry.external_detector(req.options.threshold).detect(
                    req.image_png_b64, h, w
                ).instances
            elif detector in ("none", "stub"):
                records = []
            else:
                raise ValueError(f"unknown detector option {detector!r}")

        index_edits = []
        for i, ov in enumerate(req.instance_overrides):
            if (ov.index is None) == (ov.box is None):
                raise ValueError(
                    f"instance_overrides[{i}] must set exactly one of index or box"
                )
            if not ov.caption.strip():
                raise ValueError(f"instance_overrides[{i}]: caption is empty")
            if ov.index is not None:
                index_edits.append((ov.index, ov.caption))
            else:
                records.extend(
                    _specs_to_records(
                        [InstanceSpec(box=ov.box, caption=ov.caption)], h, w
                    )
                )
        records = recaption_instances(records, index_edits)

        result = registry.pipeline.colorize_gray(L, records, req.scene_caption)
        png = encode_png(result.rgb.pixels, bit_depth=config.png_bits)
        timing = dict(result.timings_ms)
        timing["request_ms"] = (time.perf_counter() - t_start) * 1000
        return {
            "image_png_b64": base64.b64encode(png).decode("ascii"),
            "width": w,
            "height": h,
            "bit_depth": config.png_bits,
            "instances": [_record_payload(r, include_mask=False) for r in result.instances],
            "captions_used": result.captions_used,
            "out_of_gamut_count": result.rgb.out_of_gamut_count,
            "timing_ms": timing,
        }

    return app


def serve(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=host, port=port)
