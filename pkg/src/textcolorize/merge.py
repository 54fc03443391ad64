"""Composite per-instance chroma predictions back into the scene frame.

Each colorized instance is resized from the network's square working
resolution back to its stored bounding box and restricted to its mask.
Where several instances claim a pixel, the one with the highest detection
confidence wins (ties go to the lower list index, deterministically).
Unclaimed pixels stay at neutral chroma (ab = 0). The luminance plane is
passed through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InstanceRecord
from .imageops import resize_bilinear


@dataclass(eq=False)
class ColoredInstance:
    ab_pred: np.ndarray  # (r, r, 2) normalized chroma in [-1, 1]
    record: InstanceRecord

    def validate(self) -> "ColoredInstance":
        if self.ab_pred.ndim != 3 or self.ab_pred.shape[2] != 2:
            raise ValueError(f"ab_pred must be RxRx2, got {self.ab_pred.shape}")
        if np.abs(self.ab_pred).max() > 1.0 + 1e-6:
            raise ValueError("ab_pred outside [-1, 1]")
        return self


@dataclass(eq=False)
class MergedImage:
    planes: np.ndarray  # (H, W, 3): L_n then merged ab
    coverage: np.ndarray  # (H, W) bool, true where an instance painted

    @property
    def L_n(self) -> np.ndarray:
        return self.planes[..., :1]

    @property
    def ab(self) -> np.ndarray:
        return self.planes[..., 1:]


def merge_instances(
    L_full: np.ndarray, colored: list[ColoredInstance]
) -> MergedImage:
    """Paste instance chroma at stored supports, resolving overlaps by confidence."""
    L_full = np.asarray(L_full, dtype=np.float64)
    if L_full.ndim == 2:
        L_full = L_full[..., None]
    if L_full.ndim != 3 or L_full.shape[2] != 1:
        raise ValueError(f"L_full must be HxWx1, got {L_full.shape}")
    h, w = L_full.shape[:2]
    ab = np.zeros((h, w, 2))
    best_conf = np.full((h, w), -np.inf)
    coverage = np.zeros((h, w), dtype=bool)
    for idx, inst in enumerate(colored):
        inst.validate()
        rec = inst.record
        x0, y0, x1, y1 = rec.box
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"instance {idx}: box {rec.box} outside {w}x{h} scene")
        if rec.mask.shape != (h, w):
            raise ValueError(
                f"instance {idx}: mask shape {rec.mask.shape} != scene {h}x{w}"
            )
        ab_box = resize_bilinear(inst.ab_pred, y1 - y0, x1 - x0)
        region = rec.mask[y0:y1, x0:x1]
        # strict > keeps the earlier instance on ties
        wins = region & (rec.confidence > best_conf[y0:y1, x0:x1])
        ab[y0:y1, x0:x1][wins] = ab_box[wins]
        best_conf[y0:y1, x0:x1][wins] = rec.confidence
        coverage[y0:y1, x0:x1] |= wins
    ab[~coverage] = 0.0
    planes = np.concatenate([L_full, ab], axis=-1)
    return MergedImage(planes=planes, coverage=coverage)
