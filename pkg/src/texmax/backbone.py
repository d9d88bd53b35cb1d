"""Frozen convolutional feature extractor with tap layers.

The default network has four blocks of two 3x3 convolutions (8/16/16/32
channels) separated by 2x2 max pooling; the last relu of every block is a tap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, FormatError
from .numerics import (
    ConvLayerSpec,
    as_tensor3,
    check_finite,
    conv2d_backward_from_preact,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
)

DEFAULT_CHANNELS = (8, 16, 16, 32)
FILTER_KINDS = ("gabor", "random_orthogonal")
MAGIC = b"TXBB"
VERSION = 1


class MaxPool2:
    """Marker for a 2x2 / stride-2 max-pool layer."""

    def __repr__(self):
        return "MaxPool2()"

    def __eq__(self, other):
        return isinstance(other, MaxPool2)

    def __hash__(self):
        return hash("MaxPool2")


Layer = Union[ConvLayerSpec, MaxPool2]


@dataclass(frozen=True, eq=False)
class BackboneSpec:
    layers: tuple
    taps: tuple
    mean: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        layers = tuple(self.layers)
        taps = tuple(int(t) for t in self.taps)
        if not layers or not isinstance(layers[0], ConvLayerSpec):
            raise ConfigError("a backbone must start with a convolution layer")
        channels = layers[0].in_channels
        for i, layer in enumerate(layers):
            if isinstance(layer, ConvLayerSpec):
                if layer.in_channels != channels:
                    raise ConfigError(
                        f"layer {i} expects {layer.in_channels} channels but receives {channels}"
                    )
                channels = layer.out_channels
            elif not isinstance(layer, MaxPool2):
                raise ConfigError(f"layer {i} has unsupported type {type(layer).__name__}")
        if not taps:
            raise ConfigError("at least one tap layer is required")
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise ConfigError(f"taps must be strictly increasing, got {taps}")
        for t in taps:
            if not 0 <= t < len(layers):
                raise ConfigError(f"tap index {t} out of range")
            layer = layers[t]
            if not isinstance(layer, ConvLayerSpec) or layer.activation != "relu":
                raise ConfigError(f"tap {t} must be a relu convolution")
        c = layers[0].in_channels
        mean = np.full(c, 0.5) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        scale = np.full(c, 0.5) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        if mean.shape != (c,) or scale.shape != (c,):
            raise ConfigError(f"normalization needs {c} means and scales")
        if np.any(scale == 0) or not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale))):
            raise ConfigError("normalization scale must be finite and non-zero")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def input_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def tap_channels(self) -> tuple[int, ...]:
        return tuple(self.layers[t].out_channels for t in self.taps)

    def __eq__(self, other):
        if not isinstance(other, BackboneSpec):
            return NotImplemented
        return (
            self.layers == other.layers
            and self.taps == other.taps
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.scale, other.scale)
        )


@dataclass
class FeatureStack:
    """Tap activations plus everything needed to run the chain rule back."""

    taps: list
    input_shape: tuple
    cache: list = field(default_factory=list)  # per layer: (input_shape, preact | PoolRecord)


def forward_taps(image, spec: BackboneSpec) -> FeatureStack:
    """Run the trunk up to the deepest tap, keeping each tap's activation.

    ``image`` is (H, W, C) with values nominally in [0, 1]; it is normalized
    per channel as ``(image - mean) / scale`` before the first layer.
    """
    image = as_tensor3(image, "image")
    if image.shape[2] != spec.input_channels:
        raise ConfigError(
            f"image has {image.shape[2]} channels, backbone expects {spec.input_channels}"
        )
    check_finite(image, "image")
    a = (image - spec.mean) / spec.scale
    taps, cache = [], []
    tap_set = set(spec.taps)
    for i, layer in enumerate(spec.layers[: spec.taps[-1] + 1]):
        shape = a.shape
        if isinstance(layer, MaxPool2):
            a, rec = maxpool2_forward(a)
            cache.append((shape, rec))
        else:
            a, z = conv2d_forward(a, layer, return_preact=True)
            cache.append((shape, z))
        if i in tap_set:
            taps.append(a)
    return FeatureStack(taps=taps, input_shape=image.shape, cache=cache)


def backward_to_image(stack: FeatureStack, spec: BackboneSpec, tap_grads: Sequence) -> np.ndarray:
    """Gradient of ``sum_i <tap_grads[i], tap_i(image)>`` with respect to the image."""
    if len(tap_grads) != len(spec.taps):
        raise ConfigError(f"expected {len(spec.taps)} tap gradients, got {len(tap_grads)}")
    for g, t in zip(tap_grads, stack.taps):
        if np.shape(g) != t.shape:
            raise ConfigError(f"tap gradient shape {np.shape(g)} != activation shape {t.shape}")
    by_layer = dict(zip(spec.taps, tap_grads))
    g = None
    for i in range(spec.taps[-1], -1, -1):
        if i in by_layer:
            tg = np.asarray(by_layer[i], dtype=np.float64)
            g = tg.copy() if g is None else g + tg
        shape, rec = stack.cache[i]
        layer = spec.layers[i]
        if isinstance(layer, MaxPool2):
            g = maxpool2_backward(rec, g)
        else:
            g = conv2d_backward_from_preact(shape, layer, rec, g)
    return g / spec.scale


def kink_quantities(image, spec: BackboneSpec) -> list[tuple[np.ndarray, float]]:
    """Relu pre-activations and pooling argmax labels, for gradient-check kink exclusion."""
    a = (as_tensor3(image, "image") - spec.mean) / spec.scale
    out = []
    for layer in spec.layers[: spec.taps[-1] + 1]:
        if isinstance(layer, MaxPool2):
            a, rec = maxpool2_forward(a)
            out.append((rec.argmax.reshape(-1), None))
        else:
            a, z = conv2d_forward(a, layer, return_preact=True)
            if layer.activation == "relu":
                out.append((z.reshape(-1), 1e-6))
    return out


def default_layout(channels=DEFAULT_CHANNELS, convs_per_block=2):
    """(in, out) per conv and pool positions for the block layout."""
    plan, taps = [], []
    for b, c in enumerate(channels):
        if b > 0:
            plan.append("pool")
        for _ in range(convs_per_block):
            plan.append(c)
        taps.append(len(plan) - 1)
    return plan, taps


def gabor_kernel(size: int, theta: float, wavelength: float, sigma: float) -> np.ndarray:
    """Zero-mean, unit-norm even Gabor kernel."""
    r = np.arange(size) - (size - 1) / 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    xr = xx * np.cos(theta) + yy * np.sin(theta)
    yr = -xx * np.sin(theta) + yy * np.cos(theta)
    g = np.exp(-(xr**2 + yr**2) / (2 * sigma**2)) * np.cos(2 * np.pi * xr / wavelength)
    g -= g.mean()
    return g / np.linalg.norm(g)


def _gabor_weights(out_c: int, in_c: int, size: int = 5, orientations: int = 8) -> np.ndarray:
    w = np.zeros((out_c, in_c, size, size))
    for k in range(out_c):
        o, s = k % orientations, k // orientations
        wavelength = 4.0 * 1.5**s
        g = gabor_kernel(size, np.pi * o / orientations, wavelength, 0.5 * wavelength)
        w[k] = g / in_c
    return w


def _orthonormal_weights(rng, out_c: int, in_c: int, k: int) -> np.ndarray:
    fan_in = in_c * k * k
    if out_c > fan_in:
        raise ConfigError(
            f"cannot build {out_c} orthonormal rows of length {fan_in} ({in_c}x{k}x{k})"
        )
    q, r = np.linalg.qr(rng.standard_normal((fan_in, out_c)))
    q *= np.sign(np.diag(r))
    return q.T.reshape(out_c, in_c, k, k)


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def make_filter_bank(
    kind: str = "gabor",
    input_channels: int = 3,
    channels: Sequence[int] = DEFAULT_CHANNELS,
    convs_per_block: int = 2,
    kernel: int = 3,
    seed: int = 0,
    probe_size: int = 32,
) -> BackboneSpec:
    """Build a deterministic backbone.

    ``random_orthogonal`` draws every kernel with orthonormal flattened rows,
    then rescales layer by layer so a constant-1 input has unit activation RMS
    at each relu. ``gabor`` replaces the first convolution with 5x5 Gabor
    filters (8 orientations per scale) and calibrates the remaining layers the
    same way on a seeded noise probe. Weights are rounded to float32 so a
    save/load round trip is exact.
    """
    if kind not in FILTER_KINDS:
        raise ConfigError(f"unknown filter bank kind {kind!r}; choose from {FILTER_KINDS}")
    if input_channels < 1 or convs_per_block < 1 or kernel < 1 or kernel % 2 == 0:
        raise ConfigError("invalid backbone shape parameters")
    if len(channels) < 1 or min(channels) < 1:
        raise ConfigError("channels must be positive")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    plan, taps = default_layout(channels, convs_per_block)

    if kind == "random_orthogonal":
        probe = np.ones((probe_size, probe_size, input_channels))
    else:
        probe = np.random.default_rng(np.uint64(seed % 2**64) ^ np.uint64(0x5EED)).uniform(
            size=(probe_size, probe_size, input_channels)
        )
    a = (probe - 0.5) / 0.5
    layers, in_c = [], input_channels
    for n, step in enumerate(plan):
        if step == "pool":
            layers.append(MaxPool2())
            a, _ = maxpool2_forward(a)
            continue
        if kind == "gabor" and n == 0:
            w = _gabor_weights(step, in_c)
        else:
            w = _orthonormal_weights(rng, step, in_c, kernel)
        k = w.shape[2]
        layer = ConvLayerSpec(w, np.zeros(step), 1, k // 2, "relu")
        out = conv2d_forward(a, layer)
        rms = float(np.sqrt(np.mean(out**2)))
        if not (kind == "gabor" and n == 0) and rms > 0:
            w = w / rms
        layer = ConvLayerSpec(_f32(w), np.zeros(step), 1, k // 2, "relu")
        a = conv2d_forward(a, layer)
        layers.append(layer)
        in_c = step
    return BackboneSpec(tuple(layers), tuple(taps), np.full(input_channels, 0.5), np.full(input_channels, 0.5))


def encode_backbone(spec: BackboneSpec) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(spec.layers))]
    for layer in spec.layers:
        if isinstance(layer, MaxPool2):
            parts.append(struct.pack("<B", 1))
            continue
        parts.append(struct.pack("<B", 0))
        parts.append(
            struct.pack(
                "<6I",
                layer.in_channels,
                layer.out_channels,
                layer.kernel_h,
                layer.kernel_w,
                layer.stride,
                layer.padding,
            )
        )
        parts.append(struct.pack("<B", 1 if layer.activation == "relu" else 0))
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    parts.append(struct.pack("<I", len(spec.taps)))
    parts.append(struct.pack(f"<{len(spec.taps)}I", *spec.taps))
    parts.append(spec.mean.astype("<f4").tobytes())
    parts.append(spec.scale.astype("<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"file truncated while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float64)


def decode_backbone(data: bytes) -> BackboneSpec:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a TXBB backbone file", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported TXBB version {version}", 4)
    n_layers = r.u32("layer count")
    layers = []
    for i in range(n_layers):
        at = r.pos
        kind = r.u8(f"layer {i} type")
        if kind == 1:
            layers.append(MaxPool2())
            continue
        if kind != 0:
            raise FormatError(f"layer {i}: unknown layer type {kind}", at)
        cin, cout, kh, kw, stride, pad = struct.unpack("<6I", r.take(24, f"layer {i} header"))
        act = r.u8(f"layer {i} activation")
        if act not in (0, 1):
            raise FormatError(f"layer {i}: unknown activation code {act}", r.pos - 1)
        w = r.f32(cout * cin * kh * kw, f"layer {i} weights").reshape(cout, cin, kh, kw)
        b = r.f32(cout, f"layer {i} bias")
        try:
            layers.append(ConvLayerSpec(w, b, stride, pad, "relu" if act else "linear"))
        except ConfigError as exc:
            raise FormatError(f"layer {i}: {exc}", at) from exc
    n_taps = r.u32("tap count")
    taps = struct.unpack(f"<{n_taps}I", r.take(4 * n_taps, "tap indices"))
    if not layers or not isinstance(layers[0], ConvLayerSpec):
        raise FormatError("backbone must start with a convolution layer", 12)
    c = layers[0].in_channels
    mean = r.f32(c, "normalization means")
    scale = r.f32(c, "normalization scales")
    if r.pos != len(data):
        raise FormatError("trailing bytes after backbone", r.pos)
    try:
        return BackboneSpec(tuple(layers), taps, mean, scale)
    except ConfigError as exc:
        raise FormatError(f"invalid backbone: {exc}", r.pos) from exc


def save_backbone(spec: BackboneSpec, path) -> None:
    from .ppm import atomic_write

    atomic_write(Path(path), encode_backbone(spec))


def load_backbone(path) -> BackboneSpec:
    return decode_backbone(Path(path).read_bytes())
