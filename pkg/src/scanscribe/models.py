"""Stack-to-box regression networks and their weights container.

Three architectures over a stack of single-channel localizer slices:

  stacked2d  slices stacked on the channel axis (zero padded to the
             configured maximum), 2D conv trunk with one residual block.
  conv3d     fully convolutional 3D mirror of the 2D stage list (3x3x3
             kernels, strided spatially only so shallow stacks survive),
             global average pool at the end.
  attention  a single-channel 2D feature extractor shared across slices,
             a two-layer scoring network whose softmax weights pool the
             per-slice features, then a small conv head.

Every network emits two scalars: one boundary pair (top/bottom or
left/right) in normalized [0, 1] coordinates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (
    ArchitectureMismatchError,
    BadMagicError,
    MissingTensorError,
    NumericError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
    WeightsFormatError,
)
from .geometry import Box

STACKED2D = "stacked2d"
CONV3D = "conv3d"
ATTENTION = "attention"
KINDS = (STACKED2D, CONV3D, ATTENTION)

AXIS_LR = "lr"
AXIS_TB = "tb"

MAGIC = b"SSWT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    kind: str
    image_size: int = 64
    max_slices: int = 8
    widths: tuple = (16, 32, 64)
    attn_hidden: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise NumericError(f"unknown architecture kind {self.kind!r}")
        if len(self.widths) != 3:
            raise NumericError("widths must list three stage widths")


@dataclass
class ModelWeights:
    config: ArchitectureConfig
    params: dict          # name -> ad.Tensor (trainable)
    stats: dict           # name -> np.ndarray (batch-norm running stats)
    bn_momentum: float = 0.9

    @property
    def kind(self) -> str:
        return self.config.kind

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def clone(self) -> "ModelWeights":
        return ModelWeights(
            self.config,
            {k: ad.Tensor(p.data.copy(), requires_grad=True, name=k)
             for k, p in self.params.items()},
            {k: v.copy() for k, v in self.stats.items()},
            bn_momentum=self.bn_momentum,
        )


def _add_conv(rng, params, name, cin, cout, k, nd, dtype):
    kshape = (cout, cin) + (k,) * nd
    fan_in = cin * k ** nd
    params[f"{name}.w"] = ad.Tensor(
        ad.uniform_init(rng, kshape, fan_in, dtype), requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = ad.Tensor(
        np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.b")


def _add_bn(params, stats, name, ch, dtype):
    params[f"{name}.gamma"] = ad.Tensor(
        np.ones(ch, dtype=dtype), requires_grad=True, name=f"{name}.gamma")
    params[f"{name}.beta"] = ad.Tensor(
        np.zeros(ch, dtype=dtype), requires_grad=True, name=f"{name}.beta")
    stats[f"{name}.running_mean"] = np.zeros(ch, dtype=dtype)
    stats[f"{name}.running_var"] = np.ones(ch, dtype=dtype)


def _add_fc(rng, params, name, fin, fout, dtype):
    params[f"{name}.w"] = ad.Tensor(
        ad.uniform_init(rng, (fout, fin), fin, dtype), requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = ad.Tensor(
        np.zeros(fout, dtype=dtype), requires_grad=True, name=f"{name}.b")


def build_weights(config: ArchitectureConfig, seed: int = 0, dtype=np.float32) -> ModelWeights:
    rng = np.random.default_rng(seed)
    w1, w2, w3 = config.widths
    params, stats = {}, {}

    # conv3d mirrors the 2D stage list with 3x3x3 kernels (strided
    # spatially only, so shallow stacks survive every stage)
    nd = 3 if config.kind == CONV3D else 2
    cin = config.max_slices if config.kind == STACKED2D else 1
    _add_conv(rng, params, "c1", cin, w1, 3, nd, dtype)
    _add_bn(params, stats, "b1", w1, dtype)
    _add_conv(rng, params, "c2", w1, w2, 3, nd, dtype)
    _add_bn(params, stats, "b2", w2, dtype)
    _add_conv(rng, params, "r1", w2, w2, 3, nd, dtype)
    _add_bn(params, stats, "rb1", w2, dtype)
    _add_conv(rng, params, "r2", w2, w2, 3, nd, dtype)
    _add_bn(params, stats, "rb2", w2, dtype)
    _add_conv(rng, params, "c3", w2, w3, 3, nd, dtype)
    _add_bn(params, stats, "b3", w3, dtype)
    if config.kind == ATTENTION:
        _add_fc(rng, params, "a1", w3, config.attn_hidden, dtype)
        _add_fc(rng, params, "a2", config.attn_hidden, 1, dtype)
    _add_conv(rng, params, "h1", w3, w3, 3, nd, dtype)
    _add_bn(params, stats, "hb1", w3, dtype)
    _add_conv(rng, params, "h2", w3, w3, 3, nd, dtype)
    _add_bn(params, stats, "hb2", w3, dtype)
    _add_fc(rng, params, "out", w3, 2, dtype)
    return ModelWeights(config, params, stats)


def _bn_mode(mode: str) -> str:
    # at inference the batch IS the input stack: normalize by its own
    # statistics rather than by running averages accumulated over stacks
    return "batch" if mode == "infer" else mode


def _stage(x, mw, conv, bn, mode, stride):
    mode = _bn_mode(mode)
    p, s = mw.params, mw.stats
    if p[f"{conv}.w"].data.ndim == 5:
        stride = (1, stride, stride)  # 3D: never stride the slice axis
    y = ad.convolution(x, p[f"{conv}.w"], p[f"{conv}.b"], stride=stride, padding="same")
    y = ad.batch_norm(
        y, p[f"{bn}.gamma"], p[f"{bn}.beta"],
        s[f"{bn}.running_mean"], s[f"{bn}.running_var"], mode=mode,
        momentum=mw.bn_momentum)
    return ad.relu(y)


def _residual(x, mw, mode):
    p, s = mw.params, mw.stats
    h = _stage(x, mw, "r1", "rb1", mode, 1)
    h = ad.convolution(h, p["r2.w"], p["r2.b"], stride=1, padding="same")
    h = ad.batch_norm(
        h, p["rb2.gamma"], p["rb2.beta"],
        s["rb2.running_mean"], s["rb2.running_var"], mode=_bn_mode(mode),
        momentum=mw.bn_momentum)
    return ad.relu(ad.add(h, x))


def _extract_features(x, mw, mode):
    h = _stage(x, mw, "c1", "b1", mode, 2)
    h = _stage(h, mw, "c2", "b2", mode, 2)
    h = _residual(h, mw, mode)
    return _stage(h, mw, "c3", "b3", mode, 2)


def _head(x, mw, mode):
    h = _stage(x, mw, "h1", "hb1", mode, 2)
    h = _stage(h, mw, "h2", "hb2", mode, 2)
    pooled = ad.global_avg_pool(h)
    vec = ad.reshape(pooled, (pooled.shape[1],)) if pooled.shape[0] == 1 else pooled
    return ad.fully_connected(vec, mw.params["out.w"], mw.params["out.b"])


def _check_stack(stack, config):
    arr = np.asarray(stack)
    if arr.ndim != 3:
        raise ShapeError(f"expected (S, H, W) stack, got shape {arr.shape}")
    s, h, w = arr.shape
    if h != config.image_size or w != config.image_size:
        raise ShapeError(
            f"slice size {h}x{w} does not match configured {config.image_size}")
    if s < 1:
        raise ShapeError("stack must contain at least one slice")
    return arr


def attention_pool(features: ad.Tensor, mw: ModelWeights):
    """Score each slice, softmax the scores, and mix the feature maps.

    features: (S, C, h, w).  Returns (alpha tensor of shape (S,), pooled
    feature map of shape (1, C, h, w)).
    """
    if features.shape[0] < 1:
        raise ShapeError("attention_pool needs at least one feature map")
    vecs = ad.global_avg_pool(features)                      # (S, C)
    hidden = ad.relu(ad.fully_connected(vecs, mw.params["a1.w"], mw.params["a1.b"]))
    logits = ad.fully_connected(hidden, mw.params["a2.w"], mw.params["a2.b"])  # (S, 1)
    alpha = ad.softmax(ad.reshape(logits, (features.shape[0],)))
    pooled = ad.sum_weighted(features, alpha)                # (C, h, w)
    return alpha, ad.reshape(pooled, (1,) + pooled.shape)


def forward_attention(stack, mw: ModelWeights, mode="infer"):
    """Returns (output tensor of shape (2,), per-slice attention weights)."""
    arr = _check_stack(stack, mw.config)
    if arr.shape[0] > mw.config.max_slices:
        raise ShapeError(
            f"stack has {arr.shape[0]} slices, configured maximum is {mw.config.max_slices}")
    x = ad.Tensor(arr[:, None].astype(mw.params["c1.w"].data.dtype))
    features = _extract_features(x, mw, mode)
    alpha, pooled = attention_pool(features, mw)
    return _head(pooled, mw, mode), alpha.data.copy()


def forward_stacked2d(stack, mw: ModelWeights, mode="infer"):
    arr = _check_stack(stack, mw.config)
    s_max = mw.config.max_slices
    if arr.shape[0] > s_max:
        raise ShapeError(f"stack has {arr.shape[0]} slices, maximum is {s_max}")
    dtype = mw.params["c1.w"].data.dtype
    padded = np.zeros((1, s_max) + arr.shape[1:], dtype=dtype)
    padded[0, : arr.shape[0]] = arr
    h = _extract_features(ad.Tensor(padded), mw, mode)
    return _head(h, mw, mode)


def forward_conv3d(stack, mw: ModelWeights, mode="infer"):
    arr = _check_stack(stack, mw.config)
    dtype = mw.params["c1.w"].data.dtype
    x = ad.Tensor(arr[None, None].astype(dtype))   # (1, 1, S, H, W)
    h = _extract_features(x, mw, mode)
    return _head(h, mw, mode)


def forward(stack, mw: ModelWeights, mode="infer"):
    """Dispatch on the architecture kind; returns the (2,) output tensor."""
    if mw.kind == ATTENTION:
        out, _ = forward_attention(stack, mw, mode)
        return out
    if mw.kind == STACKED2D:
        return forward_stacked2d(stack, mw, mode)
    return forward_conv3d(stack, mw, mode)


def normalize_stack(stack) -> np.ndarray:
    """Per-stack division by the maximum intensity."""
    arr = np.asarray(stack, dtype=np.float32)
    peak = float(arr.max())
    return arr / max(peak, 1e-6)


def predict_roi(stack, weights_lr: ModelWeights, weights_tb: ModelWeights):
    """Run both instances on a stack and assemble a pixel-space box.

    Returns (box, diagnostics) where diagnostics records clamping and
    inverted-pair swaps.
    """
    if weights_lr.config != weights_tb.config:
        raise ArchitectureMismatchError(
            f"instance configs differ: {weights_lr.config} vs {weights_tb.config}")
    size = weights_lr.config.image_size
    normalized = normalize_stack(stack)
    diagnostics = {"swapped_lr": False, "swapped_tb": False, "clamped": False}

    def pair(mw, key):
        out = forward(normalized, mw, mode="infer").data.astype(np.float64)
        lo, hi = float(out[0]) * size, float(out[1]) * size
        if lo > hi:
            lo, hi = hi, lo
            diagnostics[key] = True
        clamped = (max(0.0, min(lo, size)), max(0.0, min(hi, size)))
        if clamped != (lo, hi):
            diagnostics["clamped"] = True
        return clamped

    left, right = pair(weights_lr, "swapped_lr")
    top, bottom = pair(weights_tb, "swapped_tb")
    return Box(top, bottom, left, right), diagnostics


# ---------------------------------------------------------------------------
# Weights file: magic "SSWT", version, architecture header, tensor table.
# All multi-byte integers little-endian; tensor data is raw float32 LE.
# ---------------------------------------------------------------------------

def _write_str(f, s: str):
    raw = s.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_exact(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise TruncatedFileError(f"truncated file: wanted {n} bytes, got {len(raw)}")
    return raw


def _read_str(f) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode("utf-8")


def save_weights(mw: ModelWeights, path):
    tensors = {**{k: p.data for k, p in mw.params.items()}, **mw.stats}
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        _write_str(f, mw.config.kind)
        f.write(struct.pack("<III", mw.config.image_size, mw.config.image_size,
                            mw.config.max_slices))
        f.write(struct.pack("<H", len(mw.config.widths)))
        for w in mw.config.widths:
            f.write(struct.pack("<I", w))
        f.write(struct.pack("<I", mw.config.attn_hidden))
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            _write_str(f, name)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_weights(path, expect_kind: str | None = None) -> ModelWeights:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"unsupported format version {version}, expected {FORMAT_VERSION}")
        kind = _read_str(f)
        h, w, s_max = struct.unpack("<III", _read_exact(f, 12))
        (nw,) = struct.unpack("<H", _read_exact(f, 2))
        widths = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(nw))
        (attn_hidden,) = struct.unpack("<I", _read_exact(f, 4))
        if h != w:
            raise WeightsFormatError(f"non-square image size {h}x{w}")
        try:
            config = ArchitectureConfig(kind, h, s_max, widths, attn_hidden)
        except NumericError as exc:
            raise WeightsFormatError(str(exc)) from exc
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(count):
            name = _read_str(f)
            (rank,) = struct.unpack("<B", _read_exact(f, 1))
            dims = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(rank))
            n = int(np.prod(dims)) if dims else 1
            raw = _read_exact(f, 4 * n)
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if expect_kind is not None and kind != expect_kind:
        raise ArchitectureMismatchError(
            f"architecture mismatch: file holds {kind!r}, expected {expect_kind!r}")

    skeleton = build_weights(config, seed=0)
    mw = ModelWeights(config, {}, {})
    for name, ref in skeleton.params.items():
        if name not in tensors:
            raise MissingTensorError(f"missing tensor {name!r}")
        arr = tensors.pop(name)
        if arr.shape != ref.data.shape:
            raise WeightsFormatError(
                f"tensor {name!r} has shape {arr.shape}, expected {ref.data.shape}")
        mw.params[name] = ad.Tensor(arr, requires_grad=True, name=name)
    for name, ref in skeleton.stats.items():
        if name not in tensors:
            raise MissingTensorError(f"missing tensor {name!r}")
        mw.stats[name] = tensors.pop(name)
    if tensors:
        raise WeightsFormatError(f"unexpected tensors {sorted(tensors)}")
    return mw
