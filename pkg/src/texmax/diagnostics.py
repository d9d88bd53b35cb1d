"""Finite-difference checks of every hand-written backward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneSpec, backward_to_image, forward_taps, kink_quantities, make_filter_bank
from .descriptor import (
    descriptor_backward,
    descriptor_forward,
    l2_normalize,
    l2_normalize_backward,
    pool_second_order,
    signed_sqrt,
    signed_sqrt_backward,
)
from .errors import ConfigError
from .heads import SoftmaxHead, cross_entropy
from .inversion import InversionConfig, objective, tv_norm
from .numerics import ConvLayerSpec, conv2d_backward, conv2d_forward, gradcheck, maxpool2_backward, maxpool2_forward

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seeds: int
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _conv_case(rng):
    layer = ConvLayerSpec(rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4) * 0.1, 1, 1, "relu")
    x = rng.normal(size=(4, 4, 3))
    g = rng.normal(size=(4, 4, 4))

    def f(z):
        return float(np.sum(g * conv2d_forward(z, layer))), conv2d_backward(z, layer, g)

    def kinks(z):
        return [(conv2d_forward(z, layer, return_preact=True)[1].reshape(-1), 1e-6)]

    return f, x, kinks


def _pool_case(rng):
    x = rng.normal(size=(8, 8, 2))
    g = rng.normal(size=(4, 4, 2))

    def f(z):
        out, rec = maxpool2_forward(z)
        return float(np.sum(g * out)), maxpool2_backward(rec, g)

    def kinks(z):
        return [(maxpool2_forward(z)[1].argmax.reshape(-1), None)]

    return f, x, kinks


def _signed_sqrt_case(rng):
    v = rng.normal(size=(4, 4, 4))
    # element-wise op: keep each coordinate's cotangent away from 0 so the
    # relative error is not dominated by round-off in the summed value
    g = rng.uniform(0.5, 1.5, size=v.shape) * rng.choice([-1.0, 1.0], size=v.shape)
    return (
        lambda z: (float(np.sum(g * signed_sqrt(z))), signed_sqrt_backward(z, g)),
        v,
        lambda z: [(z.reshape(-1), 1e-3)],
    )


def _l2_case(rng):
    v = rng.normal(size=(4, 4, 4))
    g = rng.normal(size=v.shape)

    def f(z):
        flat = z.reshape(-1)
        return float(g.reshape(-1) @ l2_normalize(flat)[0]), l2_normalize_backward(
            flat, g.reshape(-1)
        ).reshape(z.shape)

    return f, v, None


def _descriptor_case(rng):
    feat = rng.normal(size=(6, 6, 4))
    g = rng.normal(size=16)

    def f(z):
        d = descriptor_forward([z])
        return float(g @ d.vectors[0]), descriptor_backward([z], [g])[0]

    def kinks(z):
        return [(pool_second_order(z).reshape(-1), 1e-3)]

    return f, feat, kinks


def _tv_case(beta):
    def make(rng):
        x = rng.uniform(size=(16, 16, 3))
        return (lambda z: tv_norm(z, beta)), x, None

    return make


def _ce_case(rng):
    logits = rng.normal(size=(5, 1, 1)) * 2
    target = int(rng.integers(5))

    def f(z):
        loss, g = cross_entropy(z.reshape(-1), target)
        return loss, g.reshape(z.shape)

    return f, logits, None


def random_heads(backbone: BackboneSpec, rng, k: int = 4, scale: float = 2.0) -> SoftmaxHead:
    dims = [c * c for c in backbone.tap_channels]
    return SoftmaxHead(
        [rng.normal(size=(k, d)) * scale for d in dims],
        [rng.normal(size=k) for _ in dims],
        tuple(f"class{i}" for i in range(k)),
    )


def _full_kinks(backbone):
    def kinks(z):
        q = kink_quantities(z, backbone)
        # guarded signed-sqrt region: derivative deliberately capped below 1e-8
        q += [(pool_second_order(t).reshape(-1), 1e-8) for t in forward_taps(z, backbone).taps]
        return q

    return kinks


def _backbone_case(backbone):
    def make(rng):
        x = rng.uniform(size=(16, 16, backbone.input_channels))
        stack = forward_taps(x, backbone)
        gs = [rng.normal(size=t.shape) for t in stack.taps]

        def f(z):
            st = forward_taps(z, backbone)
            val = sum(float(np.sum(g * t)) for g, t in zip(gs, st.taps))
            return val, backward_to_image(st, backbone, gs)

        return f, x, (lambda z: kink_quantities(z, backbone))

    return make


def _objective_case(backbone):
    def make(rng):
        heads = random_heads(backbone, rng)
        cfg = InversionConfig(target_class=int(rng.integers(heads.num_classes)), gamma=0.01, size=16)
        x = rng.uniform(size=(16, 16, backbone.input_channels))
        return (lambda z: objective(z, heads, backbone, cfg)[:2]), x, _full_kinks(backbone)

    return make


def check_cases(backbone: BackboneSpec | None = None) -> dict:
    backbone = backbone if backbone is not None else make_filter_bank("gabor", seed=0)
    return {
        "conv2d": _conv_case,
        "maxpool2": _pool_case,
        "signed_sqrt": _signed_sqrt_case,
        "l2_normalize": _l2_case,
        "descriptor": _descriptor_case,
        "tv_norm(beta=1.5)": _tv_case(1.5),
        "tv_norm(beta=2)": _tv_case(2.0),
        "cross_entropy": _ce_case,
        "backbone_taps": _backbone_case(backbone),
        "objective": _objective_case(backbone),
    }


def run_gradchecks(
    seed: int = 0, n_seeds: int = 10, samples: int = 128, backbone: BackboneSpec | None = None, only=None
) -> list[CheckResult]:
    """Check every backward pass at ``n_seeds`` random points.

    A draw on which every sampled coordinate touches a kink is replaced by a
    fresh draw (at most 5 times per seed).
    """
    results = []
    for name, make in check_cases(backbone).items():
        if only is not None and name not in only:
            continue
        start = time.process_time()
        worst = 0.0
        for s in range(seed, seed + n_seeds):
            for attempt in range(5):
                rng = np.random.default_rng([s, attempt])
                f, x, kinks = make(rng)
                try:
                    err = gradcheck(f, x, h=STEP, samples=samples, seed=s, kinks=kinks)
                except ConfigError:
                    continue
                worst = max(worst, err)
                break
            else:
                raise ConfigError(f"{name}: seed {s} gave no checkable coordinates in 5 draws")
        results.append(CheckResult(name, worst, n_seeds, time.process_time() - start))
    return results


def format_table(results) -> str:
    lines = [f"{'op':<20} {'max rel err':>12} {'seeds':>5} {'cpu s':>7}  status"]
    for r in results:
        status = "ok" if r.ok else "FAIL"
        lines.append(f"{r.name:<20} {r.max_rel_error:>12.3e} {r.seeds:>5} {r.seconds:>7.2f}  {status}")
    return "\n".join(lines)
