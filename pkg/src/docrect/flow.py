"""Warping flows and the geometric transforms built on them.

A flow field stores one absolute coordinate pair per pixel. A *backward*
flow is indexed by output (rectified) pixels and points into the source
image: applying it fills every output pixel by bilinear sampling of the
source at the stored coordinate. A *forward* flow is indexed by source
pixels and stores their destinations; it must be inverted through
scattered-data splatting before it can be applied.

Conventions fixed here: (0, 0) is the center of the top-left pixel, ``u``
is the horizontal coordinate (width axis) and ``v`` the vertical one.
Sampling outside the source rectangle clamps to the border.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConversionError,
    FormatError,
    ParameterError,
    SemanticsError,
    ShapeError,
)

BACKWARD = "backward"
FORWARD = "forward"

# Minimum fraction of target pixels that must receive splat weight before
# hole filling is considered meaningful.
MIN_COVERAGE = 0.01
MAX_FILL_SWEEPS = 1000


@dataclass(frozen=True)
class FlowField:
    """Dense grid of absolute coordinates with direction and unit tags.

    ``scale_units`` names the (height, width) of the grid the coordinate
    values index, e.g. (36, 36) for a flow downsampled to 1/8 resolution.
    ``None`` means unspecified (flows loaded from DSFL files), in which
    case unit checks are skipped.
    """

    u: np.ndarray
    v: np.ndarray
    direction: str
    scale_units: tuple[int, int] | None = None

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ShapeError(f"u/v grids must be equal 2-D arrays, got {u.shape} vs {v.shape}")
        if self.direction not in (BACKWARD, FORWARD):
            raise ParameterError(f"direction must be backward or forward, got {self.direction!r}")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def with_values(self, u: np.ndarray, v: np.ndarray) -> "FlowField":
        return FlowField(u, v, self.direction, self.scale_units)


@dataclass(frozen=True)
class ResidualFlow:
    """Per-pixel displacement increment (du, dv), in pixels of its grid."""

    du: np.ndarray
    dv: np.ndarray

    def __post_init__(self):
        du = np.ascontiguousarray(self.du, dtype=np.float32)
        dv = np.ascontiguousarray(self.dv, dtype=np.float32)
        if du.ndim != 2 or du.shape != dv.shape:
            raise ShapeError(f"du/dv grids must be equal 2-D arrays, got {du.shape} vs {dv.shape}")
        if not (np.isfinite(du).all() and np.isfinite(dv).all()):
            raise ParameterError("residual flow contains non-finite values")
        object.__setattr__(self, "du", du)
        object.__setattr__(self, "dv", dv)

    @property
    def shape(self) -> tuple[int, int]:
        return self.du.shape


def identity_flow(height: int, width: int) -> FlowField:
    """Backward flow with u(x, y) = x and v(x, y) = y."""
    if height < 1 or width < 1:
        raise ParameterError(f"flow size {height}x{width} must be positive")
    u = np.broadcast_to(np.arange(width, dtype=np.float32), (height, width)).copy()
    v = np.broadcast_to(
        np.arange(height, dtype=np.float32)[:, None], (height, width)
    ).copy()
    return FlowField(u, v, BACKWARD, (height, width))


def sample_bilinear_grid(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples of ``plane`` at decimal coordinates, border-clamped.

    ``plane`` is (H, W) or (H, W, C); the result has the shape of ``xs``
    plus the channel axis when present.
    """
    plane = np.asarray(plane, dtype=np.float32)
    squeeze = plane.ndim == 2
    if squeeze:
        plane = plane[:, :, None]
    h, w = plane.shape[:2]
    if h < 1 or w < 1:
        raise ParameterError("cannot sample an empty plane")
    xs = np.clip(np.asarray(xs, dtype=np.float32), 0.0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=np.float32), 0.0, h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    p00 = plane[y0, x0]
    p01 = plane[y0, x1]
    p10 = plane[y1, x0]
    p11 = plane[y1, x1]
    top = p00 * (1.0 - fx) + p01 * fx
    bot = p10 * (1.0 - fx) + p11 * fx
    out = (top * (1.0 - fy) + bot * fy).astype(np.float32)
    return out[..., 0] if squeeze else out


def bilinear_sample(plane: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample one decimal location; returns the per-channel value vector."""
    out = sample_bilinear_grid(plane, np.float32(x), np.float32(y))
    return np.atleast_1d(out)


def apply_backward_flow(src: np.ndarray, flow: FlowField) -> np.ndarray:
    """Fill the flow's grid by sampling ``src`` at the stored coordinates."""
    if flow.direction != BACKWARD:
        raise SemanticsError("flow direction must be backward to warp an image")
    src = np.asarray(src, dtype=np.float32)
    if flow.scale_units is not None and flow.scale_units != src.shape[:2]:
        raise SemanticsError(
            f"flow values index a {flow.scale_units} grid but source is {src.shape[:2]}"
        )
    return sample_bilinear_grid(src, flow.u, flow.v)


def warp_features(c0: np.ndarray, flow_m: FlowField) -> np.ndarray:
    """Unwarp a feature map toward the rectified domain (same sampling rule)."""
    if flow_m.direction != BACKWARD:
        raise SemanticsError("feature unwarping requires a backward flow")
    c0 = np.asarray(c0, dtype=np.float32)
    if flow_m.scale_units is not None and flow_m.scale_units != c0.shape[:2]:
        raise SemanticsError(
            f"flow values index a {flow_m.scale_units} grid but features are {c0.shape[:2]}"
        )
    return sample_bilinear_grid(c0, flow_m.u, flow_m.v)


def downsample_flow(flow: FlowField, factor: int = 8) -> FlowField:
    """Decimate a backward flow by ``factor`` and rescale values to match.

    Output pixel (x, y) takes the value at input (factor*x, factor*y)
    divided by ``factor``, so the coordinates index the 1/factor grid.
    """
    if flow.direction != BACKWARD:
        raise SemanticsError("downsample_flow expects a backward flow")
    if factor < 1:
        raise ParameterError(f"factor must be >= 1, got {factor}")
    inv = np.float32(1.0 / factor)
    u = flow.u[::factor, ::factor] * inv
    v = flow.v[::factor, ::factor] * inv
    units = flow.scale_units
    if units is not None:
        units = (-(-units[0] // factor), -(-units[1] // factor))
    return FlowField(u, v, BACKWARD, units)


def _resample_axis_indices(out_size: int, in_size: int):
    # Pure-ratio mapping (coarse sample i sits at fine i*out/in) with linear
    # extrapolation past the last sample, so affine flows resample exactly.
    pos = np.arange(out_size, dtype=np.float64) * (in_size / out_size)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, max(in_size - 2, 0))
    frac = (pos - i0).astype(np.float32)
    i1 = np.minimum(i0 + 1, in_size - 1)
    return i0, i1, frac


def resample_flow(flow: FlowField, out_h: int, out_w: int) -> FlowField:
    """Resample a flow to a new grid, rescaling coordinate values to match.

    Requires the flow's values to index its own grid (scale_units equal to
    the grid shape, or unspecified). The identity flow resamples to the
    identity flow at any size.
    """
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"target size {out_h}x{out_w} must be positive")
    h, w = flow.shape
    if flow.scale_units is not None and flow.scale_units != (h, w):
        raise SemanticsError(
            "resample_flow requires self-referenced values "
            f"(scale_units {flow.scale_units} != grid {(h, w)})"
        )
    y0, y1, fy = _resample_axis_indices(out_h, h)
    x0, x1, fx = _resample_axis_indices(out_w, w)
    fy = fy[:, None]
    fx = fx[None, :]

    def interp(grid):
        rows0 = grid[y0]
        rows1 = grid[y1]
        top = rows0[:, x0] * (1.0 - fx) + rows0[:, x1] * fx
        bot = rows1[:, x0] * (1.0 - fx) + rows1[:, x1] * fx
        return top * (1.0 - fy) + bot * fy

    su = np.float32(out_w / w)
    sv = np.float32(out_h / h)
    u = (interp(flow.u) * su).astype(np.float32)
    v = (interp(flow.v) * sv).astype(np.float32)
    return FlowField(u, v, flow.direction, (out_h, out_w))


def update_flow(flow: FlowField, delta: ResidualFlow) -> FlowField:
    """Elementwise flow update: u' = u + du, v' = v + dv."""
    if flow.shape != delta.shape:
        raise ShapeError(f"flow {flow.shape} and residual {delta.shape} differ")
    return flow.with_values(flow.u + delta.du, flow.v + delta.dv)


def forward_to_backward(g: FlowField) -> FlowField:
    """Invert a forward flow by bilinear splatting plus hole filling.

    Every source pixel's coordinates are scattered into the target grid at
    its mapped position with bilinear weights; accumulated values are
    normalized, and pixels that received no weight are filled by repeated
    4-neighbor averaging of already-filled values.
    """
    flow, _ = forward_to_backward_with_coverage(g)
    return flow


def forward_to_backward_with_coverage(g: FlowField) -> tuple[FlowField, float]:
    """forward_to_backward plus the fraction of pixels covered by splatting."""
    if g.direction != FORWARD:
        raise SemanticsError("forward_to_backward expects a forward flow")
    h, w = g.shape
    tx = np.asarray(g.u, dtype=np.float64).ravel()
    ty = np.asarray(g.v, dtype=np.float64).ravel()
    src_x = np.broadcast_to(np.arange(w, dtype=np.float64), (h, w)).ravel()
    src_y = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w)).ravel()

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0

    wsum = np.zeros((h, w), dtype=np.float64)
    usum = np.zeros((h, w), dtype=np.float64)
    vsum = np.zeros((h, w), dtype=np.float64)
    for dy, dx, wt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        gx = x0 + dx
        gy = y0 + dy
        ok = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h) & (wt > 0)
        idx = gy[ok] * w + gx[ok]
        np.add.at(wsum.ravel(), idx, wt[ok])
        np.add.at(usum.ravel(), idx, wt[ok] * src_x[ok])
        np.add.at(vsum.ravel(), idx, wt[ok] * src_y[ok])

    filled = wsum > 1e-12
    coverage = float(filled.mean())
    if coverage < MIN_COVERAGE:
        raise ConversionError(
            f"forward flow is degenerate: splat coverage fraction {coverage:.6f}"
        )
    u = np.zeros((h, w), dtype=np.float64)
    v = np.zeros((h, w), dtype=np.float64)
    u[filled] = usum[filled] / wsum[filled]
    v[filled] = vsum[filled] / wsum[filled]

    def shifted(arr, dy, dx):
        out = np.zeros_like(arr)
        src = arr[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)]
        out[max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)] = src
        return out

    for _ in range(MAX_FILL_SWEEPS):
        if filled.all():
            break
        fl = filled.astype(np.float64)
        nsum_u = np.zeros_like(u)
        nsum_v = np.zeros_like(v)
        ncnt = np.zeros_like(fl)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nsum_u += shifted(u * fl, dy, dx)
            nsum_v += shifted(v * fl, dy, dx)
            ncnt += shifted(fl, dy, dx)
        fillable = (~filled) & (ncnt > 0)
        u[fillable] = nsum_u[fillable] / ncnt[fillable]
        v[fillable] = nsum_v[fillable] / ncnt[fillable]
        filled |= fillable
    if not filled.all():
        raise ConversionError(
            f"hole filling did not converge: coverage fraction {coverage:.6f}"
        )
    return FlowField(u.astype(np.float32), v.astype(np.float32), BACKWARD, (h, w)), coverage


# ---------------------------------------------------------------------------
# DSFL container: "DSFL" magic, u32 LE version, u8 direction, (v2: u8
# semantics), u32 LE height, u32 LE width, then H*W interleaved (u, v)
# float32 LE pairs.
# ---------------------------------------------------------------------------

_MAGIC = b"DSFL"
SEMANTICS_ABSOLUTE = 0
SEMANTICS_DISPLACEMENT = 1


def write_flow_bytes(flow: FlowField, semantics: int = SEMANTICS_ABSOLUTE) -> bytes:
    """Serialize a flow field; displacement semantics selects version 2."""
    if semantics not in (SEMANTICS_ABSOLUTE, SEMANTICS_DISPLACEMENT):
        raise ParameterError(f"unknown semantics code {semantics}")
    version = 1 if semantics == SEMANTICS_ABSOLUTE else 2
    h, w = flow.shape
    direction = 0 if flow.direction == BACKWARD else 1
    header = _MAGIC + struct.pack("<IB", version, direction)
    if version == 2:
        header += struct.pack("<B", semantics)
    header += struct.pack("<II", h, w)
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = flow.u
    data[:, :, 1] = flow.v
    return header + data.tobytes()


def read_flow_bytes(raw: bytes) -> tuple[FlowField, int]:
    """Parse a DSFL byte string; returns (flow, semantics code)."""
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}: field 'magic' must be {_MAGIC!r}")
    off = 4
    if len(raw) < off + 5:
        raise FormatError("truncated header: field 'version'")
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version not in (1, 2):
        raise FormatError(f"unsupported value {version} in field 'version'")
    direction_code = raw[off]
    off += 1
    if direction_code not in (0, 1):
        raise FormatError(f"bad value {direction_code} in field 'direction'")
    semantics = SEMANTICS_ABSOLUTE
    if version == 2:
        if len(raw) < off + 1:
            raise FormatError("truncated header: field 'semantics'")
        semantics = raw[off]
        off += 1
        if semantics not in (SEMANTICS_ABSOLUTE, SEMANTICS_DISPLACEMENT):
            raise FormatError(f"bad value {semantics} in field 'semantics'")
    if len(raw) < off + 8:
        raise FormatError("truncated header: field 'height'/'width'")
    h, w = struct.unpack_from("<II", raw, off)
    off += 8
    if h < 1 or w < 1:
        raise FormatError(f"bad value {h}x{w} in field 'height'/'width'")
    expected = h * w * 8
    payload = raw[off:]
    if len(payload) != expected:
        raise FormatError(
            f"field 'payload' holds {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    direction = BACKWARD if direction_code == 0 else FORWARD
    return FlowField(data[:, :, 0], data[:, :, 1], direction, None), semantics


def write_flow(path, flow: FlowField, semantics: int = SEMANTICS_ABSOLUTE) -> None:
    with open(path, "wb") as fh:
        fh.write(write_flow_bytes(flow, semantics))


def read_flow(path) -> tuple[FlowField, int]:
    with open(path, "rb") as fh:
        return read_flow_bytes(fh.read())
