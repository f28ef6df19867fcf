"""Named-tensor weight store and the DSW1 binary container.

DSW1 layout: magic "DSW1", u32 LE version = 1, u64 LE manifest byte
length, UTF-8 JSON manifest (array of {name, shape, offset, dtype}),
then a contiguous float32 payload. The loader admits exactly the tensors
of the layer manifest below, with exactly the declared shapes, tiling
the payload without gaps or overlaps.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, ManifestError

_MAGIC = b"DSW1"
_VERSION = 1

# Channel plan of the rectification network. The encoder halves resolution
# at the stem and at the two stride-2 blocks (total 1/8); the head's 256
# channels split into the 128-channel feature map and the 128-channel
# initial hidden state. The fuse layer emits 126 channels so that
# concatenating the 2-channel flow yields exactly 128.
HIDDEN_DIM = 128
GEN_Q_DIM = 192
GEN_V_DIM = 64
FUSE_DIM = 126
GRU_INPUT_DIM = 2 * HIDDEN_DIM
UPSAMPLE_FACTOR = 8
UPSAMPLE_LOGITS = UPSAMPLE_FACTOR * UPSAMPLE_FACTOR * 9

_ENCODER_BLOCKS = (
    # (name, in_ch, out_ch, stride)
    ("enc.block1", 64, 64, 1),
    ("enc.block2", 64, 64, 1),
    ("enc.block3", 64, 96, 1),
    ("enc.block4", 96, 96, 2),
    ("enc.block5", 96, 128, 1),
    ("enc.block6", 128, 128, 2),
)


def _conv_entry(name, cout, cin, k):
    return [(f"{name}.weight", (cout, cin, k, k)), (f"{name}.bias", (cout,))]


def _build_manifest():
    entries = []
    entries += _conv_entry("enc.stem", 64, 3, 7)
    for name, cin, cout, stride in _ENCODER_BLOCKS:
        entries += _conv_entry(f"{name}.conv1", cout, cin, 3)
        entries += _conv_entry(f"{name}.conv2", cout, cout, 3)
        if cin != cout or stride != 1:
            entries += _conv_entry(f"{name}.proj", cout, cin, 1)
    entries += _conv_entry("enc.head", 2 * HIDDEN_DIM, HIDDEN_DIM, 1)
    entries += _conv_entry("gen.q1", 224, HIDDEN_DIM, 1)
    entries += _conv_entry("gen.q2", GEN_Q_DIM, 224, 3)
    entries += _conv_entry("gen.v1", 128, 2, 7)
    entries += _conv_entry("gen.v2", GEN_V_DIM, 128, 3)
    entries += _conv_entry("gen.fuse", FUSE_DIM, GEN_Q_DIM + GEN_V_DIM, 3)
    for gate in ("update", "reset", "candidate"):
        entries += _conv_entry(
            f"gru.{gate}", HIDDEN_DIM, HIDDEN_DIM + GRU_INPUT_DIM, 3
        )
    entries += _conv_entry("delta.conv1", 256, HIDDEN_DIM, 3)
    entries += _conv_entry("delta.conv2", 2, 256, 3)
    entries += _conv_entry("upsample.conv1", 256, HIDDEN_DIM, 3)
    entries += _conv_entry("upsample.conv2", UPSAMPLE_LOGITS, 256, 1)
    return tuple(entries)


LAYER_MANIFEST = _build_manifest()
ENCODER_BLOCKS = _ENCODER_BLOCKS


class WeightStore:
    """Immutable name -> float32 tensor map with cached GEMM kernels."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self._tensors = {}
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            arr.flags.writeable = False
            self._tensors[name] = arr
        self._gemm_cache: dict[str, np.ndarray] = {}

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ManifestError(f"weight store is missing tensor '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self):
        return tuple(self._tensors)

    def gemm_kernel(self, name: str) -> np.ndarray:
        """Kernel reshaped to (kh*kw*cin, cout) for im2col matmul."""
        cached = self._gemm_cache.get(name)
        if cached is None:
            w = self[name]
            if w.ndim != 4:
                raise ManifestError(f"tensor '{name}' is not a conv kernel: shape {w.shape}")
            cout, cin, kh, kw = w.shape
            cached = np.ascontiguousarray(
                w.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
            )
            self._gemm_cache[name] = cached
        return cached


def zero_weights() -> WeightStore:
    """All-zero store matching the layer manifest (an identity network)."""
    return WeightStore({name: np.zeros(shape, np.float32) for name, shape in LAYER_MANIFEST})


def random_weights(seed: int = 0, scale: float = 0.05) -> WeightStore:
    """Small random store for kernel-level tests."""
    rng = np.random.default_rng(seed)
    return WeightStore(
        {
            name: (rng.standard_normal(shape) * scale).astype(np.float32)
            for name, shape in LAYER_MANIFEST
        }
    )


def write_weights_bytes(store: WeightStore, manifest=LAYER_MANIFEST) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, shape in manifest:
        arr = store[name]
        if arr.shape != tuple(shape):
            raise ManifestError(
                f"tensor '{name}' has shape {arr.shape}, manifest declares {tuple(shape)}"
            )
        raw = arr.astype("<f4").tobytes()
        entries.append(
            {"name": name, "shape": list(shape), "offset": offset, "dtype": "f32le"}
        )
        chunks.append(raw)
        offset += len(raw)
    manifest_json = json.dumps(entries).encode("utf-8")
    header = _MAGIC + struct.pack("<IQ", _VERSION, len(manifest_json))
    return header + manifest_json + b"".join(chunks)


def write_weights(path, store: WeightStore, manifest=LAYER_MANIFEST) -> None:
    with open(path, "wb") as fh:
        fh.write(write_weights_bytes(store, manifest))


def read_weights_bytes(raw: bytes, manifest=LAYER_MANIFEST) -> WeightStore:
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}: field 'magic' must be {_MAGIC!r}")
    if len(raw) < 16:
        raise FormatError("truncated header: field 'version'/'manifest length'")
    version, manifest_len = struct.unpack_from("<IQ", raw, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported value {version} in field 'version'")
    if len(raw) < 16 + manifest_len:
        raise FormatError("truncated container: field 'manifest'")
    try:
        entries = json.loads(raw[16 : 16 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"field 'manifest' is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise ManifestError("field 'manifest' must be a JSON array")

    expected = {name: tuple(shape) for name, shape in manifest}
    payload = raw[16 + manifest_len :]
    seen = {}
    spans = []
    for entry in entries:
        if not isinstance(entry, dict) or not {"name", "shape", "offset", "dtype"} <= set(entry):
            raise ManifestError(f"malformed manifest entry: {entry!r}")
        name = entry["name"]
        if entry["dtype"] != "f32le":
            raise ManifestError(f"tensor '{name}' has unsupported dtype {entry['dtype']!r}")
        if name not in expected:
            raise ManifestError(f"unexpected extra tensor '{name}' in container")
        if name in seen:
            raise ManifestError(f"tensor '{name}' appears twice in manifest")
        shape = tuple(int(s) for s in entry["shape"])
        if shape != expected[name]:
            raise ManifestError(
                f"tensor '{name}' has shape {shape}, layer manifest requires {expected[name]}"
            )
        size = int(np.prod(shape, dtype=np.int64)) * 4
        offset = int(entry["offset"])
        if offset < 0 or offset + size > len(payload):
            raise ManifestError(
                f"tensor '{name}' spans [{offset}, {offset + size}) outside the payload"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=offset)
        seen[name] = arr.reshape(shape)
        spans.append((offset, offset + size, name))
    missing = set(expected) - set(seen)
    if missing:
        raise ManifestError(f"container is missing tensor '{sorted(missing)[0]}'")
    spans.sort()
    cursor = 0
    for start, end, name in spans:
        if start != cursor:
            kind = "overlap" if start < cursor else "gap"
            raise ManifestError(
                f"payload {kind} of {abs(start - cursor)} bytes before tensor '{name}'"
            )
        cursor = end
    if cursor != len(payload):
        raise ManifestError(f"payload has {len(payload) - cursor} trailing unclaimed bytes")
    return WeightStore(seen)


def read_weights(path, manifest=LAYER_MANIFEST) -> WeightStore:
    with open(path, "rb") as fh:
        return read_weights_bytes(fh.read(), manifest)
