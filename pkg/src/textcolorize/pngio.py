"""Minimal PNG codec supporting 8- and 16-bit depths.

The HTTP wire format carries colorized images as base64 PNG. 16-bit output
matters there: the luminance-preservation guarantee (|L_out - L_in| <= 1e-3)
does not survive 8-bit quantization, so responses default to 48-bit RGB.
Pillow cannot write those, hence this codec. Reading handles the PNG variants
browsers and common tools actually emit: color types 0/2/4/6, bit depth 8 or
16, all five scanline filters, non-interlaced.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# color type -> samples per pixel
_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


class PNGError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png(arr: np.ndarray, bit_depth: int = 8) -> bytes:
    """Encode HxW (gray) or HxWx3 (RGB) float array in [0,1] as PNG bytes."""
    if bit_depth not in (8, 16):
        raise PNGError(f"unsupported bit depth {bit_depth}")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        color_type, channels = 0, 1
        arr = arr[..., None]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type, channels = 2, 3
    else:
        raise PNGError(f"expected HxW or HxWx3 array, got shape {arr.shape}")
    h, w = arr.shape[:2]
    maxval = (1 << bit_depth) - 1
    quant = np.round(np.clip(arr, 0.0, 1.0) * maxval).astype(
        np.uint8 if bit_depth == 8 else np.dtype(">u2")
    )
    raw = quant.tobytes()
    bytes_per_row = w * channels * (bit_depth // 8)
    rows = bytearray()
    for y in range(h):
        rows.append(0)  # filter type None
        rows += raw[y * bytes_per_row : (y + 1) * bytes_per_row]
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, color_type, 0, 0, 0)
    return (
        _SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(bytes(rows), 6))
        + _chunk(b"IEND", b"")
    )


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(data: bytes, h: int, w: int, channels: int, bit_depth: int) -> bytes:
    bpp = channels * (bit_depth // 8)
    stride = w * bpp
    out = bytearray(h * stride)
    pos = 0
    prev_start = None
    for y in range(h):
        ftype = data[pos]
        pos += 1
        row = bytearray(data[pos : pos + stride])
        pos += stride
        start = y * stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            if prev_start is not None:
                for i in range(stride):
                    row[i] = (row[i] + out[prev_start + i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if prev_start is not None else 0
                row[i] = (row[i] + ((left + up) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if prev_start is not None else 0
                ul = out[prev_start + i - bpp] if (prev_start is not None and i >= bpp) else 0
                row[i] = (row[i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise PNGError(f"unknown scanline filter {ftype} on row {y}")
        out[start : start + stride] = row
        prev_start = start
    return bytes(out)


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a float64 array in [0,1] (HxW or HxWx3).

    Alpha channels are dropped. Palette and interlaced PNGs are rejected.
    """
    if data[:8] != _SIGNATURE:
        raise PNGError("not a PNG file (bad signature)")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        (crc,) = struct.unpack(">I", data[pos + 8 + length : pos + 12 + length])
        if zlib.crc32(tag + payload) & 0xFFFFFFFF != crc:
            raise PNGError(f"CRC mismatch in {tag!r} chunk")
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise PNGError("missing IHDR chunk")
    w, h, bit_depth, color_type, compression, filter_method, interlace = ihdr
    if interlace != 0:
        raise PNGError("interlaced PNGs are not supported")
    if color_type == 3:
        raise PNGError("palette PNGs are not supported")
    if color_type not in _CHANNELS:
        raise PNGError(f"unsupported color type {color_type}")
    if bit_depth not in (8, 16):
        raise PNGError(f"unsupported bit depth {bit_depth}")
    channels = _CHANNELS[color_type]
    raw = _unfilter(zlib.decompress(bytes(idat)), h, w, channels, bit_depth)
    dtype = np.uint8 if bit_depth == 8 else np.dtype(">u2")
    arr = np.frombuffer(raw, dtype=dtype).reshape(h, w, channels).astype(np.float64)
    arr /= (1 << bit_depth) - 1
    if color_type == 0:
        return arr[..., 0]
    if color_type == 2:
        return arr
    if color_type == 4:  # gray + alpha -> gray
        return arr[..., 0]
    return arr[..., :3]  # RGBA -> RGB
