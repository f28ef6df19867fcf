"""Image planes: decoding, encoding, resizing, and Gaussian pyramids.

An image plane is a float32 ndarray of shape (H, W, C) with C in {1, 3} and
samples in [0, 1]. Coordinate origin is the center of the top-left pixel.
All filtering and resampling replicates edge samples rather than padding
with zeros, so constant images stay constant out to the border.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ParameterError, ShapeError

# Luma weights for RGB -> grayscale conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# 5-tap binomial low-pass used for pyramid construction.
PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float32) / 16.0


def decode_image(data: bytes) -> np.ndarray:
    """Decode a PNG or JPEG byte stream into a float32 plane in [0, 1].

    8-bit sample v maps to v / 255 exactly. Palette and alpha images are
    flattened to RGB; 16-bit inputs are scaled by 1/65535.
    """
    stream = io.BytesIO(data)
    try:
        with Image.open(stream) as img:
            img.load()
            mode = img.mode
            if mode in ("1", "P", "RGBA", "LA", "CMYK", "PA"):
                img = img.convert("RGB")
                mode = "RGB"
            arr = np.asarray(img)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(
            f"cannot decode image stream at byte offset {stream.tell()}: {exc}"
        ) from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] not in (1, 3):
        raise DecodeError(f"unsupported channel count {arr.shape[2]} (mode {mode})")
    if arr.dtype == np.uint8:
        plane = arr.astype(np.float32) / np.float32(255.0)
    elif arr.dtype == np.uint16:
        plane = arr.astype(np.float32) / np.float32(65535.0)
    else:
        plane = np.clip(arr.astype(np.float32), 0.0, 1.0)
    return plane


def encode_image(plane: np.ndarray, format: str = "PNG") -> bytes:
    """Encode a plane to PNG (lossless for 8-bit data) or JPEG bytes."""
    plane = np.asarray(plane)
    if plane.ndim != 3 or plane.shape[2] not in (1, 3):
        raise ShapeError(f"expected (H, W, 1|3) plane, got {plane.shape}")
    quant = np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8)
    if quant.shape[2] == 1:
        img = Image.fromarray(quant[:, :, 0], mode="L")
    else:
        img = Image.fromarray(quant, mode="RGB")
    out = io.BytesIO()
    img.save(out, format=format)
    return out.getvalue()


def luma(plane: np.ndarray) -> np.ndarray:
    """Grayscale (H, W) view of a plane, using 0.299 R + 0.587 G + 0.114 B."""
    plane = np.asarray(plane, dtype=np.float32)
    if plane.ndim == 2:
        return plane
    if plane.shape[2] == 1:
        return plane[:, :, 0]
    r, g, b = LUMA_WEIGHTS
    return (r * plane[:, :, 0] + g * plane[:, :, 1] + b * plane[:, :, 2]).astype(
        np.float32
    )


def _axis_coords(out_size: int, in_size: int) -> np.ndarray:
    # Half-pixel-center mapping; collapses to the identity when sizes match.
    scale = in_size / out_size
    coords = (np.arange(out_size, dtype=np.float32) + 0.5) * scale - 0.5
    return np.clip(coords, 0.0, in_size - 1)


def resize_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with edge replication to an (out_h, out_w) plane."""
    plane = np.asarray(plane, dtype=np.float32)
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"target size {out_h}x{out_w} must be positive")
    squeeze = plane.ndim == 2
    if squeeze:
        plane = plane[:, :, None]
    h, w = plane.shape[:2]
    if h < 1 or w < 1:
        raise ParameterError("input plane is empty")
    xs = _axis_coords(out_w, w)
    ys = _axis_coords(out_h, h)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0).astype(np.float32)[None, :, None]
    fy = (ys - y0).astype(np.float32)[:, None, None]
    rows0 = plane[y0]
    rows1 = plane[y1]
    top = rows0[:, x0] * (1.0 - fx) + rows0[:, x1] * fx
    bot = rows1[:, x0] * (1.0 - fx) + rows1[:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def resize_to_area(plane: np.ndarray, target_area: int) -> np.ndarray:
    """Resize preserving aspect ratio so H*W is closest to ``target_area``.

    Output dims are round(H*s) x round(W*s) with s = sqrt(target / (H*W)).
    A plane already at the target area is returned unchanged.
    """
    plane = np.asarray(plane, dtype=np.float32)
    if target_area < 1:
        raise ParameterError(f"target_area must be >= 1, got {target_area}")
    h, w = plane.shape[:2]
    if h < 1 or w < 1:
        raise ParameterError("input plane is empty")
    scale = float(np.sqrt(target_area / (h * w)))
    out_h = max(1, int(round(h * scale)))
    out_w = max(1, int(round(w * scale)))
    if (out_h, out_w) == (h, w):
        return plane
    return resize_bilinear(plane, out_h, out_w)


def _lowpass_axis(plane: np.ndarray, axis: int, step: int = 1) -> np.ndarray:
    """Binomial filter along one axis, keeping every ``step``-th sample."""
    pad = [(0, 0)] * plane.ndim
    pad[axis] = (2, 2)
    padded = np.pad(plane, pad, mode="edge")
    n = plane.shape[axis]
    n_out = -(-n // step)
    out_shape = list(plane.shape)
    out_shape[axis] = n_out
    out = np.zeros(out_shape, dtype=np.float32)
    for tap, weight in enumerate(PYRAMID_KERNEL):
        sl = [slice(None)] * plane.ndim
        sl[axis] = slice(tap, tap + n, step)
        out += weight * padded[tuple(sl)]
    return out


def gaussian_downsample(plane: np.ndarray) -> np.ndarray:
    """Low-pass with the 5-tap binomial kernel, then decimate by 2.

    Output is ceil(H/2) x ceil(W/2); a constant plane stays constant.
    """
    plane = np.asarray(plane, dtype=np.float32)
    h, w = plane.shape[:2]
    if h < 2 or w < 2:
        raise ParameterError(f"plane {h}x{w} too small to downsample (need >= 2)")
    return np.ascontiguousarray(_lowpass_axis(_lowpass_axis(plane, 0, step=2), 1, step=2))
