"""Full colorization pipeline: detect -> per-instance colorize -> merge -> fuse.

Everything internal runs at the checkpoints' working resolution (256x256 by
default, smaller for toy models). Predicted chroma is upsampled back to the
input's native size and recombined with the untouched input luminance, so
colorization never alters L.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import colorspace
from .adapters import encode_text_stub
from .colorspace import LabImage, RGBImage, clip_chroma_to_gamut, lab_to_rgb, rgb_to_lab
from .dataset import InstanceRecord, SceneSample, scale_instance
from .imageops import resize_bilinear, to_tensor_chw
from .merge import ColoredInstance, MergedImage, merge_instances
from .training import load_generator

MAX_SIDE = 4096


@dataclass
class ColorizeResult:
    rgb: RGBImage
    ab_internal: np.ndarray  # (R, R, 2) fusion output, normalized
    merged: MergedImage
    instances: list[InstanceRecord]
    captions_used: list[str]
    timings_ms: dict


class ColorizePipeline:
    """Holds loaded generators + a text encoder and runs the full flow."""

    def __init__(self, ioc_checkpoint: str, fusion_checkpoint: str, text_encoder=encode_text_stub):
        self.ioc = load_generator(ioc_checkpoint)
        self.fusion = load_generator(fusion_checkpoint)
        if self.ioc.resolution != self.fusion.resolution:
            raise ValueError(
                f"checkpoint resolution mismatch: instance stage {self.ioc.resolution}, "
                f"fusion stage {self.fusion.resolution}"
            )
        self.resolution = self.ioc.resolution
        self.text_encoder = text_encoder

    def _embed(self, caption: str) -> torch.Tensor:
        return torch.from_numpy(self.text_encoder(caption).vector).float().unsqueeze(0)

    def colorize_gray(
        self,
        L_orig: np.ndarray,
        instances: list[InstanceRecord],
        scene_caption: str,
    ) -> ColorizeResult:
        """Colorize a normalized luminance plane (HxW in [0,1])."""
        L_orig = np.asarray(L_orig, dtype=np.float64)
        if L_orig.ndim == 3:
            L_orig = L_orig[..., 0]
        h, w = L_orig.shape
        if max(h, w) > MAX_SIDE:
            raise ValueError(f"image side {max(h, w)} exceeds the {MAX_SIDE}px limit")
        res = self.resolution
        timings = {}

        t0 = time.perf_counter()
        colored: list[ColoredInstance] = []
        captions_used: list[str] = []
        self.ioc.eval()
        with torch.no_grad():
            for rec in instances:
                rec.validate(h, w)
                if not rec.caption:
                    raise ValueError("instance caption is empty")
                x0, y0, x1, y1 = rec.box
                crop = resize_bilinear(L_orig[y0:y1, x0:x1], res, res)
                crop = np.clip(crop, 0.0, 1.0)
                out = self.ioc(to_tensor_chw(crop[..., None]).unsqueeze(0), self._embed(rec.caption))
                ab_pred = out.ab_pred[0].permute(1, 2, 0).numpy().astype(np.float64)
                scaled = scale_instance(rec, (h, w), (res, res))
                colored.append(ColoredInstance(ab_pred=ab_pred, record=scaled))
                captions_used.append(rec.caption)
        timings["instances_ms"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        L_internal = np.clip(resize_bilinear(L_orig, res, res), 0.0, 1.0)[..., None]
        merged = merge_instances(L_internal, colored)
        timings["merge_ms"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        if not scene_caption:
            scene_caption = " ".join(captions_used) or "scene"
        self.fusion.eval()
        with torch.no_grad():
            fusion_out = self.fusion(
                to_tensor_chw(merged.planes).unsqueeze(0), self._embed(scene_caption)
            )
        ab_final = fusion_out.ab_final[0].permute(1, 2, 0).numpy().astype(np.float64)
        timings["fusion_ms"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        ab_full = ab_final if (h, w) == (res, res) else resize_bilinear(ab_final, h, w)
        # tanh saturates at +1 but raw ab tops out at 127 (= 127/128 normalized)
        ab_full = np.clip(ab_full, -1.0, colorspace.AB_MAX / colorspace.AB_SCALE)
        lab = LabImage.from_normalized(L_orig[..., None], ab_full)
        # gamut handling must not touch L: shrink chroma instead of clamping RGB
        lab, chroma_clipped = clip_chroma_to_gamut(lab)
        rgb = lab_to_rgb(lab)
        rgb.out_of_gamut_count = chroma_clipped
        timings["recombine_ms"] = (time.perf_counter() - t0) * 1000
        timings["total_ms"] = sum(timings.values())

        return ColorizeResult(
            rgb=rgb,
            ab_internal=ab_final,
            merged=merged,
            instances=instances,
            captions_used=captions_used,
            timings_ms=timings,
        )

    def colorize_sample(self, sample: SceneSample) -> ColorizeResult:
        """Annotated-scene entry point: luminance from the scene's own image."""
        lab = rgb_to_lab(sample.image)
        return self.colorize_gray(
            lab.L_n[..., 0], list(sample.instances), sample.scene_caption
        )

    def evaluation_predictor(self):
        """Adapter for evaluation.evaluate: sample -> {rgb, ab_l1}."""

        def predict(sample: SceneSample) -> dict:
            result = self.colorize_sample(sample)
            true_lab = rgb_to_lab(sample.image)
            pred_full = result.rgb
            true_ab_n = true_lab.ab_n
            h, w = true_ab_n.shape[:2]
            ab_pred_full = (
                result.ab_internal
                if (h, w) == result.ab_internal.shape[:2]
                else resize_bilinear(result.ab_internal, h, w)
            )
            ab_l1 = float(np.mean(np.abs(ab_pred_full - true_ab_n)))
            return {"rgb": pred_full, "ab_l1": ab_l1}

        return predict


def recaption_instances(
    instances: list[InstanceRecord], edits: list[tuple[int, str]]
) -> list[InstanceRecord]:
    """Return a copy of the instance list with per-index caption overrides."""
    out = list(instances)
    for index, caption in edits:
        if not 0 <= index < len(out):
            raise IndexError(f"instance override index {index} out of range")
        if not caption:
            raise ValueError(f"override caption for instance {index} is empty")
        out[index] = dataclasses.replace(out[index], caption=caption)
    return out
