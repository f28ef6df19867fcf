"""Coarse-to-fine discrete matching of dense SIFT descriptor grids.

The energy combines a truncated-L1 data term between descriptors, a
small-displacement prior, and truncated-L1 smoothness over 4-neighbors,
decoupled per displacement component. It is minimized by dual-layer
loopy belief propagation with distance-transform message updates, run
coarse to fine over a descriptor pyramid: a wide search window at the
coarsest level, then a one-pixel refinement window around the doubled
coarse solution at each finer level.

The returned field never has higher energy than the all-zero field; the
driver checks and falls back if the optimizer did worse.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _bp
from .errors import ShapeError
from .imaging import gaussian_downsample


@dataclass(frozen=True)
class MatchConfig:
    """Matcher parameters; defaults follow the classic dense-matcher settings
    with costs scaled as if descriptors held 0..255 values."""

    top_radius: int = 5
    fine_radius: int = 1
    iterations: int = 60
    alpha: float = 2.0 * 255.0
    trunc_smooth: float = 40.0 * 255.0
    eta: float = 0.005 * 255.0
    trunc_data: float = 2.0 * 255.0
    min_pyramid_dim: int = 16
    descriptor_scale: float = 255.0

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DisplacementField:
    """Integer displacements: a(p) is matched to b(p + (dx, dy))."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.ascontiguousarray(self.dx, dtype=np.int32)
        dy = np.ascontiguousarray(self.dy, dtype=np.int32)
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise ShapeError(f"dx/dy grids must be equal 2-D arrays, got {dx.shape} vs {dy.shape}")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape


def displacement_bound(levels: int, config: MatchConfig) -> int:
    """Largest displacement magnitude reachable through the pyramid."""
    bound = config.top_radius
    for _ in range(levels - 1):
        bound = 2 * bound + config.fine_radius
    return bound


def _build_pyramid(desc: np.ndarray, min_dim: int) -> list[np.ndarray]:
    levels = [desc]
    while min(levels[-1].shape[0], levels[-1].shape[1]) >= 2 * min_dim:
        levels.append(gaussian_downsample(levels[-1]))
    return levels


def match_energy(
    a: np.ndarray, b: np.ndarray, fieldv: DisplacementField, config: MatchConfig | None = None
) -> float:
    """Energy of a displacement field under the full matching model."""
    config = config or MatchConfig()
    if a.shape != b.shape:
        raise ShapeError(f"descriptor grids {a.shape} and {b.shape} differ")
    if fieldv.shape != a.shape[:2]:
        raise ShapeError(f"field {fieldv.shape} does not match grids {a.shape[:2]}")
    return float(
        _bp.flow_energy(
            np.ascontiguousarray(a, np.float32),
            np.ascontiguousarray(b, np.float32),
            fieldv.dx,
            fieldv.dy,
            config.descriptor_scale,
            config.trunc_data,
            config.eta,
            config.alpha,
            config.trunc_smooth,
        )
    )


def sift_flow_match(
    a: np.ndarray, b: np.ndarray, config: MatchConfig | None = None
) -> DisplacementField:
    """Match two equal-size descriptor grids; returns integer displacements."""
    config = config or MatchConfig()
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"descriptor grids {a.shape} and {b.shape} differ")
    if a.ndim != 3:
        raise ShapeError(f"descriptor grids must be (H, W, D), got {a.shape}")

    pyr_a = _build_pyramid(a, config.min_pyramid_dim)
    pyr_b = _build_pyramid(b, config.min_pyramid_dim)

    wu = wv = None
    for level in range(len(pyr_a) - 1, -1, -1):
        da = pyr_a[level]
        db = pyr_b[level]
        h, w = da.shape[:2]
        if wu is None:
            radius = config.top_radius
            cu = np.zeros((h, w), np.int32)
            cv = np.zeros((h, w), np.int32)
        else:
            radius = config.fine_radius
            parent_y = np.minimum(np.arange(h) // 2, wu.shape[0] - 1)
            parent_x = np.minimum(np.arange(w) // 2, wu.shape[1] - 1)
            cu = np.ascontiguousarray(2 * wu[parent_y][:, parent_x], np.int32)
            cv = np.ascontiguousarray(2 * wv[parent_y][:, parent_x], np.int32)
        labels = 2 * radius + 1
        dcost = _bp.data_cost(
            da, db, cu, cv, radius,
            config.descriptor_scale, config.trunc_data, config.eta,
        )
        dcost_t = np.ascontiguousarray(dcost.transpose(0, 1, 3, 2))
        msg_u = np.zeros((4, h, w, labels), np.float32)
        msg_v = np.zeros((4, h, w, labels), np.float32)
        for _ in range(config.iterations):
            msum_v = msg_v.sum(axis=0)
            _bp.bp_phase(dcost, msum_v, msg_u, cu, radius, config.alpha, config.trunc_smooth)
            msum_u = msg_u.sum(axis=0)
            _bp.bp_phase(dcost_t, msum_u, msg_v, cv, radius, config.alpha, config.trunc_smooth)
        wu, wv = _bp.decode(dcost, msg_u, msg_v, cu, cv, radius)

    result = DisplacementField(wu, wv)
    zero = DisplacementField(np.zeros_like(wu), np.zeros_like(wv))
    if match_energy(a, b, zero, config) < match_energy(a, b, result, config):
        return zero
    return result
