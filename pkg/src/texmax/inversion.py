"""Maximal texture images: minimize the summed per-tap softmax loss plus a TV prior.

For a target class c the objective over pixels x in [0, 1] is

    sum_i CE(softmax(W_i d_i(x) + b_i), c) + gamma * TV_beta(x)

where d_i(x) is tap i's texture descriptor. It is minimized by projected
gradient descent with Armijo backtracking.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneSpec, backward_to_image, forward_taps
from .descriptor import descriptor_backward, descriptor_forward
from .errors import ConfigError, NumericError
from .heads import SoftmaxHead, cross_entropy, head_logits

TV_EPS = 1e-8
ARMIJO_C = 1e-4
MAX_HALVINGS = 20
STALL_WINDOW = 10
INITS = ("uniform_noise", "mid_gray")


@dataclass(frozen=True)
class InversionConfig:
    target_class: int = 0
    gamma: float = 0.01
    tv_beta: float = 2.0
    step_size: float = 1.0
    max_iters: int = 500
    init: str = "uniform_noise"
    seed: int = 0
    ftol: float = 1e-6
    size: int = 64

    def __post_init__(self):
        vals = (self.gamma, self.tv_beta, self.step_size, self.ftol)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError("inversion settings must be finite")
        if self.gamma < 0 or self.tv_beta < 1 or self.step_size <= 0 or self.ftol < 0:
            raise ConfigError(f"invalid inversion settings: {self}")
        if self.max_iters < 1 or self.size < 1 or self.target_class < 0:
            raise ConfigError(f"invalid inversion settings: {self}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; choose from {INITS}")


@dataclass
class InversionTrace:
    records: list = field(default_factory=list)  # (iteration, objective, sum_loss, tv_term, step)
    image: np.ndarray | None = None
    stalled: bool = False
    converged: bool = False

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r[1] for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iteration,objective,sum_loss,tv_term,step\n")
        for it, obj, loss, tv, step in self.records:
            buf.write(f"{it},{obj:.17g},{loss:.17g},{tv:.17g},{step:.17g}\n")
        return buf.getvalue()


def tv_norm(x, beta: float = 2.0) -> tuple[float, np.ndarray]:
    """Smoothed TV: sum over pixels/channels of (dx^2 + dy^2 + eps)^(beta/2).

    Forward differences; the last column's dx and last row's dy are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if beta < 1:
        raise ConfigError("TV exponent beta must be >= 1")
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    t = dx * dx + dy * dy + TV_EPS
    value = float(np.sum(t ** (beta / 2)))
    q = beta * t ** (beta / 2 - 1)
    qdx, qdy = q * dx, q * dy
    grad = -(qdx + qdy)
    grad[:, 1:] += qdx[:, :-1]
    grad[1:, :] += qdy[:-1, :]
    return value, grad


def objective(
    x,
    heads: SoftmaxHead,
    backbone: BackboneSpec,
    cfg: InversionConfig,
    need_grad: bool = True,
    centered: bool = False,
):
    """Returns ``(value, gradient or None, per_tap_losses, tv_value)``."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.target_class >= heads.num_classes:
        raise ConfigError(
            f"target class {cfg.target_class} out of range for {heads.num_classes} classes"
        )
    stack = forward_taps(x, backbone)
    desc = descriptor_forward(stack, centered)
    logits = head_logits(desc, heads)
    losses, grad_desc = [], []
    for z, w in zip(logits, heads.weights):
        loss, gz = cross_entropy(z, cfg.target_class)
        losses.append(loss)
        grad_desc.append(gz @ w)
    tv, tv_grad = tv_norm(x, cfg.tv_beta)
    value = float(sum(losses)) + cfg.gamma * tv
    if not np.isfinite(value):
        raise NumericError("non-finite inversion objective")
    if not need_grad:
        return value, None, losses, tv
    tap_grads = descriptor_backward(stack, grad_desc, centered)
    grad = backward_to_image(stack, backbone, tap_grads) + cfg.gamma * tv_grad
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite inversion gradient")
    return value, grad, losses, tv


def initial_image(cfg: InversionConfig, channels: int) -> np.ndarray:
    shape = (cfg.size, cfg.size, channels)
    if cfg.init == "mid_gray":
        return np.full(shape, 0.5)
    rng = np.random.default_rng(np.uint64(cfg.seed % 2**64))
    return rng.uniform(0.45, 0.55, size=shape)


def synthesize_maximal_image(
    cfg: InversionConfig, heads: SoftmaxHead, backbone: BackboneSpec, log=None
) -> tuple[np.ndarray, InversionTrace]:
    """Projected gradient descent on the inversion objective.

    Each iteration first tries twice the last accepted step, then halves it
    (at most 20 times) until the Armijo condition holds for the clamped step.
    Stops after ``max_iters`` or when the objective fell by less than ``ftol``
    (relative) over the last 10 iterations. A failed line search ends the run
    with ``trace.stalled`` set and the best image so far.
    """
    x = initial_image(cfg, backbone.input_channels)
    trace = InversionTrace()
    f, g, losses, tv = _eval(x, heads, backbone, cfg, 0)
    trace.records.append((0, f, float(sum(losses)), cfg.gamma * tv, 0.0))
    step = cfg.step_size / 2
    for it in range(1, cfg.max_iters + 1):
        t = 2 * step
        for _ in range(MAX_HALVINGS + 1):
            x_new = np.clip(x - t * g, 0.0, 1.0)
            f_new, _, losses_new, tv_new = _eval(x_new, heads, backbone, cfg, it, need_grad=False)
            if f_new <= f + ARMIJO_C * float(np.sum(g * (x_new - x))):
                break
            t *= 0.5
        else:
            trace.stalled = True
            if log:
                log(f"iteration {it}: line search failed after {MAX_HALVINGS} halvings")
            break
        step = t
        x = x_new
        f, g, losses, tv = _eval(x, heads, backbone, cfg, it)
        trace.records.append((it, f, float(sum(losses)), cfg.gamma * tv, t))
        if log and it % 50 == 0:
            log(f"iteration {it}: objective {f:.6g} (loss {sum(losses):.6g}, step {t:.3g})")
        if it >= STALL_WINDOW:
            old = trace.records[-1 - STALL_WINDOW][1]
            if (old - f) / max(abs(old), 1e-12) < cfg.ftol:
                trace.converged = True
                break
    trace.image = x
    return x, trace


def _eval(x, heads, backbone, cfg, iteration, need_grad=True):
    try:
        return objective(x, heads, backbone, cfg, need_grad=need_grad)
    except NumericError as exc:
        raise NumericError(f"iteration {iteration}: {exc}") from exc


def oriented_energy_ratio(x) -> float:
    """Energy of vertical edges over energy of horizontal edges, on the channel mean.

    The numerator sums squared differences between left/right neighbours (large
    for vertical stripes), the denominator between up/down neighbours.
    """
    g = np.asarray(x, dtype=np.float64)
    if g.ndim == 3:
        g = g.mean(axis=2)
    across_vertical_edges = np.sum((g[:, 1:] - g[:, :-1]) ** 2)
    across_horizontal_edges = np.sum((g[1:, :] - g[:-1, :]) ** 2)
    return float(across_vertical_edges / (across_horizontal_edges + 1e-12))
