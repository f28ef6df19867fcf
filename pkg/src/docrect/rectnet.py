"""Forward-only inference of the progressive rectification network.

The network keeps a single backward warping flow and refines it over K
iterations: features of the (background-excluded) distorted image are
unwarped by the current flow, fused with flow features, fed with the
hidden state through a convolutional GRU, and decoded into a residual
displacement at 1/8 resolution that a learned convex-combination module
upsamples to full resolution and adds onto the flow.

All convolutions are plain cross-correlations with zero padding chosen so
stride-1 layers preserve spatial size, evaluated as im2col matmuls on
float32 channels-last arrays. Weights come from an external store; there
is no training here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as fl
from . import imaging
from .errors import ParameterError, ShapeError
from .weights import (
    ENCODER_BLOCKS,
    FUSE_DIM,
    HIDDEN_DIM,
    UPSAMPLE_FACTOR,
    WeightStore,
)

# Canonical spatial size for flow estimation; 1/8 of it is the feature grid.
CANONICAL_SIZE = 288


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for float32
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    """Patch matrix (oh*ow, kh*kw*cin) for a zero-padded cross-correlation."""
    cin = x.shape[2]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride]
    oh, ow = win.shape[:2]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * cin)
    return cols, oh, ow


def _check_conv_input(x, name, kernel):
    if kernel.ndim != 4:
        raise ShapeError(f"kernel '{name}.weight' must be 4-D, got {kernel.shape}")
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"conv input must be (H, W, C), got {x.shape}")
    if x.shape[2] != kernel.shape[1]:
        raise ShapeError(
            f"tensor '{name}.weight' expects {kernel.shape[1]} input channels, "
            f"got {x.shape[2]}"
        )
    return x


def conv2d(x: np.ndarray, name: str, stride: int, weights: WeightStore) -> np.ndarray:
    """Cross-correlate (H, W, Cin) input with the named kernel plus bias.

    Zero padding of (k-1)//2 keeps stride-1 outputs the same size; stride-s
    outputs are ceil(H/s) x ceil(W/s) for odd kernels.
    """
    kernel = weights[f"{name}.weight"]
    bias = weights[f"{name}.bias"]
    x = _check_conv_input(x, name, kernel)
    cout, cin, kh, kw = kernel.shape
    if kh == 1 and kw == 1:
        out = x[::stride, ::stride].reshape(-1, cin) @ weights.gemm_kernel(f"{name}.weight")
        oh = -(-x.shape[0] // stride)
        ow = -(-x.shape[1] // stride)
    else:
        cols, oh, ow = _im2col(x, kh, kw, stride)
        out = cols @ weights.gemm_kernel(f"{name}.weight")
    out += bias
    return out.reshape(oh, ow, cout)


def _conv_pair(x, name_a, name_b, weights):
    # two stride-1 convs over the same input share one patch matrix
    ka = weights[f"{name_a}.weight"]
    kb = weights[f"{name_b}.weight"]
    x = _check_conv_input(x, name_a, ka)
    _check_conv_input(x, name_b, kb)
    cols, oh, ow = _im2col(x, ka.shape[2], ka.shape[3], 1)
    out_a = cols @ weights.gemm_kernel(f"{name_a}.weight") + weights[f"{name_a}.bias"]
    out_b = cols @ weights.gemm_kernel(f"{name_b}.weight") + weights[f"{name_b}.bias"]
    return out_a.reshape(oh, ow, -1), out_b.reshape(oh, ow, -1)


def _residual_block(x, name, stride, weights):
    out = conv2d(relu(x), f"{name}.conv1", stride, weights)
    out = conv2d(relu(out), f"{name}.conv2", 1, weights)
    if f"{name}.proj.weight" in weights:
        skip = conv2d(x, f"{name}.proj", stride, weights)
    else:
        skip = x
    return skip + out


def encode(img: np.ndarray, weights: WeightStore) -> tuple[np.ndarray, np.ndarray]:
    """Run the distorted-feature encoder; returns (c0, h0) at 1/8 resolution.

    The 256-channel head output splits channelwise: the first 128 channels
    pass through ReLU as the distorted features c0, the last 128 through
    tanh as the initial GRU hidden state h0.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"encoder expects an (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    if h % 8 or w % 8:
        raise ShapeError(f"encoder input dims {h}x{w} must be divisible by 8")
    x = conv2d(img, "enc.stem", 2, weights)
    for name, _cin, _cout, stride in ENCODER_BLOCKS:
        x = _residual_block(x, name, stride, weights)
    x = conv2d(relu(x), "enc.head", 1, weights)
    c0 = relu(x[:, :, :HIDDEN_DIM])
    h0 = np.tanh(x[:, :, HIDDEN_DIM:])
    return np.ascontiguousarray(c0), np.ascontiguousarray(h0)


def gen_rect_features(
    c0: np.ndarray, flow_m: fl.FlowField, weights: WeightStore
) -> np.ndarray:
    """Build the 128-channel rectified feature map for one iteration.

    c0 is unwarped by the 1/8-scale flow; warped-feature and flow-feature
    branches are fused to 126 channels and the raw 2-channel flow is
    concatenated on top.
    """
    if c0.shape[2] != HIDDEN_DIM:
        raise ShapeError(f"c0 must have {HIDDEN_DIM} channels, got {c0.shape[2]}")
    if flow_m.shape != c0.shape[:2]:
        raise ShapeError(f"flow grid {flow_m.shape} does not match features {c0.shape[:2]}")
    warped = fl.warp_features(c0, flow_m)
    q = relu(conv2d(warped, "gen.q1", 1, weights))
    q = relu(conv2d(q, "gen.q2", 1, weights))
    flow_img = np.stack([flow_m.u, flow_m.v], axis=-1)
    v = relu(conv2d(flow_img, "gen.v1", 1, weights))
    v = relu(conv2d(v, "gen.v2", 1, weights))
    fused = relu(conv2d(np.concatenate([q, v], axis=2), "gen.fuse", 1, weights))
    fk = np.concatenate([fused, flow_img], axis=2)
    assert fk.shape[2] == FUSE_DIM + 2 == HIDDEN_DIM
    return fk


def convgru_step(
    h_prev: np.ndarray, x_k: np.ndarray, weights: WeightStore
) -> np.ndarray:
    """One convolutional GRU update.

    z = sigmoid(conv([h, x])), r = sigmoid(conv([h, x])),
    h~ = tanh(conv([r*h, x])), h' = (1 - z)*h + z*h~.
    """
    if h_prev.shape[2] != HIDDEN_DIM:
        raise ShapeError(f"hidden state must have {HIDDEN_DIM} channels, got {h_prev.shape[2]}")
    if x_k.shape[2] != 2 * HIDDEN_DIM:
        raise ShapeError(f"GRU input must have {2 * HIDDEN_DIM} channels, got {x_k.shape[2]}")
    if h_prev.shape[:2] != x_k.shape[:2]:
        raise ShapeError(f"hidden {h_prev.shape[:2]} and input {x_k.shape[:2]} grids differ")
    hx = np.concatenate([h_prev, x_k], axis=2)
    pre_z, pre_r = _conv_pair(hx, "gru.update", "gru.reset", weights)
    z = sigmoid(pre_z)
    r = sigmoid(pre_r)
    rhx = np.concatenate([r * h_prev, x_k], axis=2)
    h_tilde = np.tanh(conv2d(rhx, "gru.candidate", 1, weights))
    return ((1.0 - z) * h_prev + z * h_tilde).astype(np.float32)


def predict_residual(h_k: np.ndarray, weights: WeightStore) -> fl.ResidualFlow:
    """Decode the hidden state into a 2-channel residual at 1/8 scale."""
    out = relu(conv2d(h_k, "delta.conv1", 1, weights))
    out = conv2d(out, "delta.conv2", 1, weights)
    return fl.ResidualFlow(out[:, :, 0], out[:, :, 1])


def upsample_weights(h_k: np.ndarray, weights: WeightStore) -> np.ndarray:
    """Softmax weights (h, w, 8, 8, 9) over each 3x3 coarse neighborhood."""
    logits = relu(conv2d(h_k, "upsample.conv1", 1, weights))
    logits = conv2d(logits, "upsample.conv2", 1, weights)
    h, w = logits.shape[:2]
    logits = logits.reshape(h, w, UPSAMPLE_FACTOR, UPSAMPLE_FACTOR, 9)
    logits -= logits.max(axis=-1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=-1, keepdims=True)
    return logits


def _neighbor_stack(plane: np.ndarray) -> np.ndarray:
    # (h, w, 9, C) of the 3x3 neighborhoods, border-replicated, row-major
    # over (dy, dx) in {-1, 0, 1}^2
    h, w = plane.shape[:2]
    padded = np.pad(plane, ((1, 1), (1, 1), (0, 0)), mode="edge")
    slabs = [
        padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
    ]
    return np.stack(slabs, axis=2)


def learnable_upsample(
    delta_m: fl.ResidualFlow, h_k: np.ndarray, weights: WeightStore
) -> fl.ResidualFlow:
    """Convex-combination upsampling of a 1/8-scale residual to full scale.

    Each 8x8 subpixel of a coarse cell blends the 3x3 coarse neighborhood
    with its softmax weights; values are multiplied by 8 to convert
    1/8-grid displacements to full-resolution pixels.
    """
    h, w = delta_m.shape
    if h_k.shape[:2] != (h, w):
        raise ShapeError(f"residual {delta_m.shape} and hidden {h_k.shape[:2]} grids differ")
    wgt = upsample_weights(h_k, weights)
    coarse = np.stack([delta_m.du, delta_m.dv], axis=-1) * np.float32(UPSAMPLE_FACTOR)
    neighbors = _neighbor_stack(coarse)
    sub = UPSAMPLE_FACTOR * UPSAMPLE_FACTOR
    # batched matmul: per coarse cell, (8*8, 9) weights x (9, 2) neighbors
    fine = np.matmul(
        wgt.reshape(h * w, sub, 9), np.ascontiguousarray(neighbors).reshape(h * w, 9, 2)
    )
    fine = fine.reshape(h, w, UPSAMPLE_FACTOR, UPSAMPLE_FACTOR, 2)
    full = fine.transpose(0, 2, 1, 3, 4).reshape(
        h * UPSAMPLE_FACTOR, w * UPSAMPLE_FACTOR, 2
    )
    return fl.ResidualFlow(full[:, :, 0], full[:, :, 1])


def apply_document_mask(
    img: np.ndarray, conf: np.ndarray, tau: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Binarize a confidence map at tau and zero out background pixels."""
    img = np.asarray(img, dtype=np.float32)
    conf = np.asarray(conf, dtype=np.float32)
    if conf.ndim == 3:
        conf = conf[:, :, 0]
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must lie in (0, 1), got {tau}")
    if conf.shape != img.shape[:2]:
        raise ShapeError(f"confidence map {conf.shape} does not match image {img.shape[:2]}")
    mask = (conf >= tau).astype(np.float32)
    masked = img * mask[:, :, None]
    return masked, mask


@dataclass(frozen=True)
class RectifyTrace:
    """Per-iteration backward flows f^1..f^K plus the final warped image."""

    flows: tuple[fl.FlowField, ...]
    rectified: np.ndarray


def progressive_rectify(
    img_masked: np.ndarray,
    img_original: np.ndarray,
    weights: WeightStore,
    iterations: int,
) -> RectifyTrace:
    """Run the K-iteration refinement loop at a fixed resolution.

    Encoder features are computed once from the masked image; the final
    image warps the unmasked original with f^K. Both inputs must share
    dimensions divisible by 8.
    """
    if iterations < 1:
        raise ParameterError(f"iteration count must be >= 1, got {iterations}")
    img_masked = np.asarray(img_masked, dtype=np.float32)
    img_original = np.asarray(img_original, dtype=np.float32)
    if img_masked.shape[:2] != img_original.shape[:2]:
        raise ShapeError(
            f"masked {img_masked.shape[:2]} and original {img_original.shape[:2]} differ"
        )
    h, w = img_masked.shape[:2]
    if h % 8 or w % 8:
        raise ShapeError(f"input dims {h}x{w} must be divisible by 8")

    c0, hidden = encode(img_masked, weights)
    current = fl.identity_flow(h, w)
    flows = []
    for _ in range(iterations):
        flow_m = fl.downsample_flow(current, UPSAMPLE_FACTOR)
        fk = gen_rect_features(c0, flow_m, weights)
        x_k = np.concatenate([c0, fk], axis=2)
        hidden = convgru_step(hidden, x_k, weights)
        delta_m = predict_residual(hidden, weights)
        delta = learnable_upsample(delta_m, hidden, weights)
        current = fl.update_flow(current, delta)
        flows.append(current)
    rectified = fl.apply_backward_flow(img_original, flows[-1])
    return RectifyTrace(tuple(flows), rectified)


def rectify_document(
    img: np.ndarray,
    weights: WeightStore,
    iterations: int = 12,
    conf: np.ndarray | None = None,
    tau: float = 0.5,
) -> tuple[np.ndarray, RectifyTrace]:
    """Full-resolution rectification of an arbitrary-size image.

    The (optionally masked) image is resized to the canonical estimation
    size, the estimated flow is rescaled back with its coordinate values
    scaled by the resize ratios, and the original image is warped with it.
    """
    img = np.asarray(img, dtype=np.float32)
    if conf is not None:
        masked, _ = apply_document_mask(img, conf, tau)
    else:
        masked = img
    masked_c = imaging.resize_bilinear(masked, CANONICAL_SIZE, CANONICAL_SIZE)
    orig_c = imaging.resize_bilinear(img, CANONICAL_SIZE, CANONICAL_SIZE)
    trace = progressive_rectify(masked_c, orig_c, weights, iterations)
    h, w = img.shape[:2]
    if (h, w) == (CANONICAL_SIZE, CANONICAL_SIZE):
        return trace.rectified, trace
    full_flow = fl.resample_flow(trace.flows[-1], h, w)
    return fl.apply_backward_flow(img, full_flow), trace
