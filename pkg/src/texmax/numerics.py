"""Dense (H, W, C) tensor ops with hand-written backward passes.

Images and activation maps are plain ``numpy.ndarray`` objects of shape
``(height, width, channels)`` in float64. Every op here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError

ACTIVATIONS = ("linear", "relu")


def as_tensor3(x, name="input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ConfigError(f"{name} must be a non-empty (H, W, C) array, got shape {x.shape}")
    return x


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


@dataclass(frozen=True, eq=False)
class ConvLayerSpec:
    """One convolution layer: weights are (out, in, kh, kw)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    activation: str = "relu"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4:
            raise ConfigError(f"conv weights must be 4-d (out, in, kh, kw), got {w.shape}")
        out_c, _, kh, kw = w.shape
        if min(w.shape) < 1:
            raise ConfigError(f"conv weights have an empty dimension: {w.shape}")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {kh}x{kw}")
        if b.shape != (out_c,):
            raise ConfigError(f"bias shape {b.shape} does not match out_channels={out_c}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid stride={self.stride} / padding={self.padding}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigError("conv weights or bias contain non-finite values")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[3]

    def output_hw(self, height: int, width: int) -> tuple[int, int]:
        ho = (height + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (width + 2 * self.padding - self.kernel_w) // self.stride + 1
        return ho, wo

    def __eq__(self, other):
        if not isinstance(other, ConvLayerSpec):
            return NotImplemented
        return (
            self.stride == other.stride
            and self.padding == other.padding
            and self.activation == other.activation
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


def _conv_preact(x: np.ndarray, layer: ConvLayerSpec) -> np.ndarray:
    h, w, c = x.shape
    if c != layer.in_channels:
        raise ConfigError(f"input has {c} channels, layer expects {layer.in_channels}")
    ho, wo = layer.output_hw(h, w)
    if ho < 1 or wo < 1:
        raise ConfigError(f"input {h}x{w} too small for {layer.kernel_h}x{layer.kernel_w} kernel")
    p, s = layer.padding, layer.stride
    xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
    # windows: (ho, wo, c, kh, kw), same (in, kh, kw) order as the flattened weights
    win = sliding_window_view(xp, (layer.kernel_h, layer.kernel_w), axis=(0, 1))
    win = win[: (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
    cols = win.reshape(ho * wo, -1)
    wmat = layer.weights.reshape(layer.out_channels, -1)
    return (cols @ wmat.T + layer.bias).reshape(ho, wo, layer.out_channels)


def conv2d_forward(x, layer: ConvLayerSpec, return_preact: bool = False):
    """Zero-padded cross-correlation followed by the layer activation.

    With ``return_preact=True`` returns ``(output, preactivation)``.
    """
    x = as_tensor3(x)
    check_finite(x, "conv2d input")
    z = _conv_preact(x, layer)
    out = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return (out, z) if return_preact else out


def conv2d_backward_from_preact(
    input_shape: tuple, layer: ConvLayerSpec, preact: np.ndarray, grad_output: np.ndarray
) -> np.ndarray:
    if grad_output.shape != preact.shape:
        raise ConfigError(f"grad_output shape {grad_output.shape} != output shape {preact.shape}")
    g = grad_output
    if layer.activation == "relu":
        g = np.where(preact > 0.0, g, 0.0)
    h, w, c = input_shape
    ho, wo, _ = preact.shape
    p, s, kh, kw = layer.padding, layer.stride, layer.kernel_h, layer.kernel_w
    wmat = layer.weights.reshape(layer.out_channels, -1)
    gcols = (g.reshape(ho * wo, -1) @ wmat).reshape(ho, wo, c, kh, kw)
    gp = np.zeros((h + 2 * p, w + 2 * p, c))
    for i in range(kh):
        for j in range(kw):
            gp[i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += gcols[:, :, :, i, j]
    return gp[p : p + h, p : p + w] if p else gp


def conv2d_backward(x, layer: ConvLayerSpec, grad_output) -> np.ndarray:
    """Gradient of ``sum(grad_output * conv2d_forward(x, layer))`` with respect to ``x``.

    The relu gate uses the forward pre-activation; the subgradient at exactly 0 is 0.
    """
    x = as_tensor3(x)
    grad_output = as_tensor3(grad_output, "grad_output")
    z = _conv_preact(x, layer)
    return conv2d_backward_from_preact(x.shape, layer, z, grad_output)


class PoolRecord(NamedTuple):
    input_shape: tuple
    argmax: np.ndarray  # (H/2, W/2, C) in 0..3, row-major within the window


def maxpool2_forward(x) -> tuple[np.ndarray, PoolRecord]:
    x = as_tensor3(x)
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool2 needs even height and width, got {h}x{w}")
    check_finite(x, "maxpool input")
    win = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    # np.argmax returns the first maximum, i.e. ties go to the earliest row-major slot
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, PoolRecord(x.shape, idx)


def maxpool2_backward(record: PoolRecord, grad_output) -> np.ndarray:
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != record.argmax.shape:
        raise RuntimeError(
            f"pool record shape {record.argmax.shape} does not match grad {grad_output.shape}"
        )
    h, w, c = record.input_shape
    onehot = record.argmax[..., None] == np.arange(4)
    g = np.where(onehot, grad_output[..., None], 0.0)
    return g.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


KinkFn = Callable[[np.ndarray], Sequence[tuple[np.ndarray, float]]]


def gradcheck(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    h: float = 1e-5,
    samples: int | None = 256,
    seed: int = 0,
    kinks: KinkFn | None = None,
) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` returns ``(value, gradient)``. When ``x`` has more than ``samples``
    entries, that many coordinates are drawn without replacement.

    ``kinks(x)`` may return ``(quantities, tol)`` pairs whose zero crossings are
    points of non-differentiability (relu pre-activations, ...). A coordinate is
    skipped when any quantity it moves changes sign across ``x - h, x, x + h``
    or comes within ``tol`` of zero. With ``tol=None`` the quantities are
    discrete labels (pooling argmax) and any change skips the coordinate.
    """
    x = np.array(x, dtype=np.float64)
    if samples is not None and samples < 64:
        raise ConfigError("gradcheck needs at least 64 sampled coordinates")
    _, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ConfigError(f"gradient shape {grad.shape} != input shape {x.shape}")
    n = x.size
    if samples is None or samples >= n:
        coords = np.arange(n)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(n, size=samples, replace=False))

    flat = x.reshape(-1)
    kinks = _copying(kinks)
    base_kinks = kinks(x) if kinks is not None else None
    worst, checked = 0.0, 0
    for k in coords:
        old = flat[k]
        flat[k] = old + h
        fp = f(x)[0]
        kp = kinks(x) if kinks is not None else None
        flat[k] = old - h
        fm = f(x)[0]
        km = kinks(x) if kinks is not None else None
        flat[k] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {k}")
        if base_kinks is not None and _near_kink(base_kinks, kp, km):
            continue
        numeric = (fp - fm) / (2.0 * h)
        worst = max(worst, float(relative_error(grad.reshape(-1)[k], numeric)))
        checked += 1
    if checked == 0:
        raise ConfigError("every sampled coordinate sits next to a kink")
    return worst


def _copying(kinks):
    # the caller may hand back views of x, which is perturbed in place
    if kinks is None:
        return None
    return lambda z: [(np.array(q, copy=True), tol) for q, tol in kinks(z)]


def _near_kink(base, plus, minus) -> bool:
    for (q0, tol), (qp, _), (qm, _) in zip(base, plus, minus):
        moved = (qp != q0) | (qm != q0)
        if not moved.any():
            continue
        if tol is None:
            return True
        a, b, c = q0[moved], qp[moved], qm[moved]
        if np.any(np.sign(a) != np.sign(b)) or np.any(np.sign(a) != np.sign(c)):
            return True
        if min(np.abs(a).min(), np.abs(b).min(), np.abs(c).min()) < tol:
            return True
    return False
