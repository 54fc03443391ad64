"""CIE Lab <-> sRGB conversions and channel normalization.

All conversions assume sRGB primaries with a D65 white point. The white
point is taken as the row sums of the forward matrix so that any gray
pixel (r=g=b) maps to a=b=0 exactly instead of picking up rounding noise
from published four-decimal constants.

Two parallel implementations live here:

* numpy functions operating on the ``RGBImage`` / ``LabImage`` dataclasses
  (float64, exact, used by the dataset / merge / evaluation code), and
* torch functions (``srgb_to_lab_t`` / ``lab_to_srgb_t``) used wherever a
  conversion has to stay differentiable, e.g. inside the colorfulness loss.

Normalization convention: L is stored raw in [0, 100] and normalized by
/100 to [0, 1]; a and b are stored raw in [-128, 127] and normalized by
/128 to [-1, 1]. A tanh-bounded generator output therefore covers the
full chroma range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# sRGB -> XYZ (D65, 2 degree observer), linear-light.
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)

# Reference white = image of (1,1,1): keeps the gray axis exactly at a=b=0.
WHITE_POINT = RGB_TO_XYZ.sum(axis=1)

# Piecewise f() of the Lab encoding, exact rational form.
_DELTA = 6.0 / 29.0
_F_THRESHOLD = _DELTA**3
_F_SLOPE = 1.0 / (3.0 * _DELTA**2)
_F_OFFSET = 4.0 / 29.0

# sRGB transfer function breakpoints.
_SRGB_GAMMA_THRESHOLD = 0.0031308
_SRGB_LINEAR_THRESHOLD = 0.04045

L_MAX = 100.0
AB_SCALE = 128.0
AB_MIN, AB_MAX = -128.0, 127.0


@dataclass(eq=False)
class RGBImage:
    """H x W x 3 sRGB image with values in [0, 1].

    ``out_of_gamut_count`` is populated by ``lab_to_rgb`` when clamping was
    required; it is metadata, not part of the pixel payload.
    """

    pixels: np.ndarray
    out_of_gamut_count: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected HxWx3 pixels, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def validate(self) -> "RGBImage":
        for i, name in enumerate(("red", "green", "blue")):
            chan = self.pixels[..., i]
            if chan.min() < -1e-12 or chan.max() > 1.0 + 1e-12:
                raise ValueError(
                    f"{name} channel out of range [0,1]: "
                    f"min={chan.min():.6g} max={chan.max():.6g}"
                )
        return self


@dataclass(eq=False)
class LabImage:
    """CIE Lab image with raw L in [0, 100] and raw ab in [-128, 127]."""

    L: np.ndarray
    ab: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        self.ab = np.asarray(self.ab, dtype=np.float64)
        if self.L.ndim == 3 and self.L.shape[2] == 1:
            self.L = self.L[..., 0]
        if self.L.ndim != 2:
            raise ValueError(f"expected HxW luminance plane, got shape {self.L.shape}")
        if self.ab.shape != self.L.shape + (2,):
            raise ValueError(
                f"ab shape {self.ab.shape} inconsistent with L shape {self.L.shape}"
            )

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]

    def validate(self) -> "LabImage":
        if self.L.min() < -1e-9 or self.L.max() > L_MAX + 1e-9:
            raise ValueError(f"L out of [0,100]: min={self.L.min()} max={self.L.max()}")
        if self.ab.min() < AB_MIN - 1e-9 or self.ab.max() > AB_MAX + 1e-9:
            raise ValueError(
                f"ab out of [-128,127]: min={self.ab.min()} max={self.ab.max()}"
            )
        return self

    # Normalized views -----------------------------------------------------

    @property
    def L_n(self) -> np.ndarray:
        """L rescaled to [0, 1], shape HxWx1."""
        return (self.L / L_MAX)[..., None]

    @property
    def ab_n(self) -> np.ndarray:
        """ab rescaled to [-1, 1), shape HxWx2."""
        return self.ab / AB_SCALE

    @staticmethod
    def from_normalized(L_n: np.ndarray, ab_n: np.ndarray) -> "LabImage":
        L_n = np.asarray(L_n, dtype=np.float64)
        if L_n.ndim == 3:
            L_n = L_n[..., 0]
        return LabImage(L=L_n * L_MAX, ab=np.asarray(ab_n, dtype=np.float64) * AB_SCALE)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(
        v <= _SRGB_LINEAR_THRESHOLD,
        v / 12.92,
        ((v + 0.055) / 1.055) ** 2.4,
    )


def _linear_to_srgb(v: np.ndarray) -> np.ndarray:
    return np.where(
        v <= _SRGB_GAMMA_THRESHOLD,
        v * 12.92,
        1.055 * np.maximum(v, 0.0) ** (1.0 / 2.4) - 0.055,
    )


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _F_THRESHOLD, np.cbrt(t), _F_SLOPE * t + _F_OFFSET)


def _lab_f_inv(u: np.ndarray) -> np.ndarray:
    return np.where(u > _DELTA, u**3, (u - _F_OFFSET) / _F_SLOPE)


def rgb_to_lab(img: RGBImage) -> LabImage:
    """Convert an in-range sRGB image to CIE Lab (D65)."""
    img.validate()
    linear = _srgb_to_linear(np.clip(img.pixels, 0.0, 1.0))
    xyz = linear @ RGB_TO_XYZ.T
    f = _lab_f(xyz / WHITE_POINT)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    # Guard against -0.0 / tiny negatives for pure black.
    L = np.clip(L, 0.0, L_MAX)
    return LabImage(L=L, ab=np.stack([a, b], axis=-1))


def lab_to_rgb(lab: LabImage) -> RGBImage:
    """Convert Lab back to sRGB, clamping out-of-gamut pixels.

    The number of pixels that needed clamping (in linear light or after
    encoding) is reported on ``RGBImage.out_of_gamut_count``.
    """
    lab.validate()
    fy = (lab.L + 16.0) / 116.0
    fx = fy + lab.ab[..., 0] / 500.0
    fz = fy - lab.ab[..., 1] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1)
    xyz = xyz * WHITE_POINT
    linear = xyz @ XYZ_TO_RGB.T
    out_of_gamut = np.any((linear < -1e-9) | (linear > 1.0 + 1e-9), axis=-1)
    srgb = _linear_to_srgb(np.clip(linear, 0.0, 1.0))
    srgb = np.clip(srgb, 0.0, 1.0)
    return RGBImage(pixels=srgb, out_of_gamut_count=int(out_of_gamut.sum()))


def _linear_rgb_of_lab(L: np.ndarray, ab: np.ndarray) -> np.ndarray:
    fy = (L + 16.0) / 116.0
    fx = fy + ab[..., 0] / 500.0
    fz = fy - ab[..., 1] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1)
    return (xyz * WHITE_POINT) @ XYZ_TO_RGB.T


def clip_chroma_to_gamut(lab: LabImage, iterations: int = 40) -> tuple[LabImage, int]:
    """Scale chroma toward zero, per pixel, until the color fits the sRGB gamut.

    Luminance is held fixed, so converting the result to sRGB never needs a
    clamp that would shift L. Neutral chroma is always in gamut for
    L in [0, 100], so the per-pixel binary search on the scale factor is
    guaranteed to converge. Returns the clipped image and the number of
    pixels whose chroma was reduced.
    """
    lab.validate()
    linear = _linear_rgb_of_lab(lab.L, lab.ab)
    out = np.any((linear < 0.0) | (linear > 1.0), axis=-1)
    count = int(out.sum())
    if count == 0:
        return lab, 0
    L_bad = lab.L[out]
    ab_bad = lab.ab[out]
    lo = np.zeros(count)
    hi = np.ones(count)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        rgb = _linear_rgb_of_lab(L_bad, ab_bad * mid[:, None])
        ok = np.all((rgb >= 0.0) & (rgb <= 1.0), axis=-1)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    ab_new = lab.ab.copy()
    ab_new[out] = ab_bad * lo[:, None]
    return LabImage(L=lab.L.copy(), ab=ab_new), count


def split_gray_color(lab: LabImage) -> tuple[np.ndarray, np.ndarray]:
    """Split into a normalized gray plane (HxWx1) and chroma planes (HxWx2)."""
    lab.validate()
    return lab.L_n, lab.ab_n


def combine_gray_color(L_n: np.ndarray, ab_n: np.ndarray) -> LabImage:
    """Inverse of :func:`split_gray_color`."""
    return LabImage.from_normalized(L_n, ab_n)


def rgb_color_to_lab(rgb: tuple[float, float, float]) -> tuple[float, float, float]:
    """Scalar convenience: one sRGB triple to one (L, a, b) triple."""
    lab = rgb_to_lab(RGBImage(np.array(rgb, dtype=np.float64).reshape(1, 1, 3)))
    return float(lab.L[0, 0]), float(lab.ab[0, 0, 0]), float(lab.ab[0, 0, 1])


# ---------------------------------------------------------------------------
# torch path (differentiable)
# ---------------------------------------------------------------------------


def _srgb_to_linear_t(v: torch.Tensor) -> torch.Tensor:
    # clamp inside the pow branch so masked-out entries cannot poison grads
    safe = torch.clamp(v, min=_SRGB_LINEAR_THRESHOLD * 0.5)
    return torch.where(
        v <= _SRGB_LINEAR_THRESHOLD,
        v / 12.92,
        ((safe + 0.055) / 1.055) ** 2.4,
    )


def _linear_to_srgb_t(v: torch.Tensor) -> torch.Tensor:
    safe = torch.clamp(v, min=_SRGB_GAMMA_THRESHOLD * 0.5)
    return torch.where(
        v <= _SRGB_GAMMA_THRESHOLD,
        v * 12.92,
        1.055 * safe ** (1.0 / 2.4) - 0.055,
    )


def _lab_f_t(t: torch.Tensor) -> torch.Tensor:
    safe = torch.clamp(t, min=_F_THRESHOLD * 0.5)
    return torch.where(t > _F_THRESHOLD, safe ** (1.0 / 3.0), _F_SLOPE * t + _F_OFFSET)


def _lab_f_inv_t(u: torch.Tensor) -> torch.Tensor:
    return torch.where(u > _DELTA, u**3, (u - _F_OFFSET) / _F_SLOPE)


def srgb_to_lab_t(rgb: torch.Tensor) -> torch.Tensor:
    """sRGB [..., 3, H, W] in [0,1] -> normalized Lab [..., 3, H, W].

    Channel 0 is L/100, channels 1..2 are (a, b)/128.
    """
    m = torch.as_tensor(RGB_TO_XYZ, dtype=rgb.dtype, device=rgb.device)
    white = torch.as_tensor(WHITE_POINT, dtype=rgb.dtype, device=rgb.device)
    linear = _srgb_to_linear_t(rgb)
    xyz = torch.einsum("ij,...jhw->...ihw", m, linear)
    f = _lab_f_t(xyz / white[:, None, None])
    L = 116.0 * f[..., 1, :, :] - 16.0
    a = 500.0 * (f[..., 0, :, :] - f[..., 1, :, :])
    b = 200.0 * (f[..., 1, :, :] - f[..., 2, :, :])
    return torch.stack([L / L_MAX, a / AB_SCALE, b / AB_SCALE], dim=-3)


def lab_to_srgb_t(lab_n: torch.Tensor) -> torch.Tensor:
    """Normalized Lab [..., 3, H, W] -> sRGB in [0, 1], clamped at the gamut."""
    L = lab_n[..., 0, :, :] * L_MAX
    a = lab_n[..., 1, :, :] * AB_SCALE
    b = lab_n[..., 2, :, :] * AB_SCALE
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    f = torch.stack([fx, fy, fz], dim=-3)
    white = torch.as_tensor(WHITE_POINT, dtype=lab_n.dtype, device=lab_n.device)
    xyz = _lab_f_inv_t(f) * white[:, None, None]
    m_inv = torch.as_tensor(XYZ_TO_RGB, dtype=lab_n.dtype, device=lab_n.device)
    linear = torch.einsum("ij,...jhw->...ihw", m_inv, xyz)
    srgb = _linear_to_srgb_t(torch.clamp(linear, 0.0, 1.0))
    return torch.clamp(srgb, 0.0, 1.0)
