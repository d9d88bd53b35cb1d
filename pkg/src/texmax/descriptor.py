"""Second-order texture descriptor: outer-product pooling, signed square root, l2 normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_tensor3

SQRT_GRAD_EPS = 1e-4
NORM_EPS = 1e-12


@dataclass
class TextureDescriptor:
    """Per-tap unit vectors of length D_i**2 (row-major D_i x D_i matrices).

    ``zero[i]`` is set when tap ``i`` pooled to (numerically) nothing and its
    vector was left at exactly zero.
    """

    vectors: list
    dims: tuple
    zero: tuple

    def concat(self) -> np.ndarray:
        return np.concatenate(self.vectors)


def pool_second_order(feat, centered: bool = False) -> np.ndarray:
    """(1/N) * sum over positions of phi phi^T for an (H, W, D) map."""
    feat = as_tensor3(feat, "feature map")
    f = feat.reshape(-1, feat.shape[2])
    if centered:
        f = f - f.mean(axis=0)
    a = f.T @ f / f.shape[0]
    # symmetrize away matmul rounding asymmetry
    return 0.5 * (a + a.T)


def signed_sqrt(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.sqrt(np.abs(v))


def signed_sqrt_backward(v, grad) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return grad / (2.0 * np.maximum(np.sqrt(np.abs(v)), SQRT_GRAD_EPS))


def l2_normalize(v) -> tuple[np.ndarray, bool]:
    """Return ``(v / ||v||, False)``, or ``(zeros, True)`` when ``||v|| <= 1e-12``."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= NORM_EPS:
        return np.zeros_like(v), True
    return v / n, False


def l2_normalize_backward(v, grad) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= NORM_EPS:
        return np.zeros_like(v)
    u = v / n
    return (grad - u * np.dot(u, grad)) / n


def descriptor_forward(stack_or_taps, centered: bool = False) -> TextureDescriptor:
    """Pool -> vectorize -> signed sqrt -> l2 normalize, independently per tap.

    Accepts a ``FeatureStack`` or a plain list of (H, W, D) maps.
    """
    taps = getattr(stack_or_taps, "taps", stack_or_taps)
    vectors, dims, zero = [], [], []
    for feat in taps:
        a = pool_second_order(feat, centered)
        d, z = l2_normalize(signed_sqrt(a.reshape(-1)))
        vectors.append(d)
        dims.append(a.shape[0])
        zero.append(z)
    return TextureDescriptor(vectors, tuple(dims), tuple(zero))


def descriptor_backward(stack_or_taps, grad_desc, centered: bool = False) -> list:
    """Vector-Jacobian product of :func:`descriptor_forward`; one (H, W, D) gradient per tap."""
    taps = getattr(stack_or_taps, "taps", stack_or_taps)
    if len(grad_desc) != len(taps):
        raise RuntimeError(f"expected {len(taps)} descriptor gradients, got {len(grad_desc)}")
    out = []
    for feat, g in zip(taps, grad_desc):
        feat = np.asarray(feat, dtype=np.float64)
        h, w, d = feat.shape
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (d * d,):
            raise RuntimeError(f"descriptor gradient has shape {g.shape}, expected ({d * d},)")
        f = feat.reshape(-1, d)
        if centered:
            f = f - f.mean(axis=0)
        n = f.shape[0]
        a = (f.T @ f / n).reshape(-1)
        s = signed_sqrt(a)
        gs = l2_normalize_backward(s, g)
        ga = signed_sqrt_backward(a, gs).reshape(d, d)
        # centering drops out: the centered rows sum to zero
        gf = f @ (ga + ga.T) / n
        out.append(gf.reshape(h, w, d))
    return out
