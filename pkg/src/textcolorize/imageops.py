"""Resampling helpers shared by the dataset, merge and inference code.

Chroma and luminance planes are resized bilinearly; boolean masks use
nearest-neighbor so they stay binary. Both delegate to torch's CPU kernels
(align_corners=False) and round-trip through numpy, which keeps every
consumer on one deterministic interpolation implementation.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize HxW or HxWxC float array to (out_h, out_w) bilinearly."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid target size {(out_h, out_w)}")
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))
    t = t.permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=(out_h, out_w), mode="bilinear", align_corners=False)
    res = out.squeeze(0).permute(1, 2, 0).numpy()
    return res[..., 0] if squeeze else res


def resize_mask_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a boolean HxW mask with nearest-neighbor sampling."""
    t = torch.from_numpy(mask.astype(np.float32))[None, None]
    out = F.interpolate(t, size=(out_h, out_w), mode="nearest")
    return out[0, 0].numpy() > 0.5


def to_tensor_chw(arr: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """HxWxC numpy -> CxHxW torch tensor."""
    if arr.ndim == 2:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).to(dtype)


def to_numpy_hwc(t: torch.Tensor) -> np.ndarray:
    """CxHxW (or 1xCxHxW) tensor -> HxWxC float64 numpy."""
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValueError("expected a single image")
        t = t[0]
    return t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float64)
