import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from texmax import inversion
from texmax.diagnostics import _full_kinks, random_heads
from texmax.errors import ConfigError, NumericError
from texmax.heads import SoftmaxHead
from texmax.inversion import (
    TV_EPS,
    InversionConfig,
    objective,
    oriented_energy_ratio,
    synthesize_maximal_image,
    tv_norm,
)
from texmax.numerics import gradcheck


def test_tv_hand_example():
    x = np.array([[0.0, 1.0], [0.0, 1.0]])[:, :, None]
    value, _ = tv_norm(x, 2.0)
    assert abs(value - (2 + 4 * TV_EPS)) < 1e-15


def tv_reference(x, beta):
    h, w, c = x.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                dx = x[i, j + 1, k] - x[i, j, k] if j + 1 < w else 0.0
                dy = x[i + 1, j, k] - x[i, j, k] if i + 1 < h else 0.0
                total += (dx * dx + dy * dy + TV_EPS) ** (beta / 2)
    return total


@pytest.mark.parametrize("beta", [1.0, 1.5, 2.0, 3.0])
def test_tv_matches_loop(beta):
    x = np.random.default_rng(0).uniform(size=(5, 7, 2))
    assert abs(tv_norm(x, beta)[0] - tv_reference(x, beta)) < 1e-12


@pytest.mark.parametrize("beta", [1.5, 2.0])
def test_tv_constant_image(beta):
    x = np.full((8, 8, 3), 0.3)
    value, grad = tv_norm(x, beta)
    assert value <= 8 * 8 * 3 * TV_EPS ** (beta / 2) * (1 + 1e-12)
    assert np.max(np.abs(grad)) < 1e-12


@pytest.mark.parametrize("beta", [1.5, 2.0])
@pytest.mark.parametrize("seed", range(10))
def test_tv_gradcheck(beta, seed):
    x = np.random.default_rng(seed).uniform(size=(16, 16, 3))
    assert gradcheck(lambda z: tv_norm(z, beta), x, seed=seed) < 1e-4


def test_tv_rejects_small_beta():
    with pytest.raises(ConfigError):
        tv_norm(np.zeros((2, 2, 1)), 0.5)


def test_gamma_zero_is_pure_loss(backbone):
    heads = random_heads(backbone, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(size=(16, 16, 3))
    value, _, losses, tv = objective(x, heads, backbone, InversionConfig(gamma=0.0, size=16))
    assert value == sum(losses)
    assert tv > 0


def test_zero_heads_give_m_log_k(backbone):
    heads = SoftmaxHead.zeros((64, 256, 256, 1024), ("a", "b", "c", "d", "e"))
    cfg = InversionConfig(gamma=0.0, target_class=2, size=16)
    for seed in range(3):
        x = np.random.default_rng(seed).uniform(size=(16, 16, 3))
        value, grad, losses, _ = objective(x, heads, backbone, cfg)
        assert abs(value - 4 * math.log(5)) < 1e-12
        assert np.max(np.abs(grad)) < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_objective_gradcheck(backbone, seed):
    rng = np.random.default_rng(100 + seed)
    heads = random_heads(backbone, rng)
    cfg = InversionConfig(target_class=seed % 4, size=16)
    x = rng.uniform(size=(16, 16, 3))
    err = gradcheck(lambda z: objective(z, heads, backbone, cfg)[:2], x, samples=96, seed=seed,
                    kinks=_full_kinks(backbone))
    assert err < 1e-4


def test_target_out_of_range(backbone):
    heads = random_heads(backbone, np.random.default_rng(0), k=3)
    with pytest.raises(ConfigError):
        objective(np.zeros((16, 16, 3)), heads, backbone, InversionConfig(target_class=3))


@pytest.fixture(scope="module")
def small_run(backbone):
    heads = random_heads(backbone, np.random.default_rng(5))
    cfg = InversionConfig(target_class=1, size=16, max_iters=40, ftol=0.0)
    return heads, cfg, synthesize_maximal_image(cfg, heads, backbone)


def test_trace_is_monotone(small_run):
    _, _, (x, trace) = small_run
    obj = trace.objectives
    assert len(obj) == 41
    assert np.all(np.diff(obj) <= 0)
    assert obj[-1] < obj[0]


def test_output_is_clamped(small_run):
    _, _, (x, trace) = small_run
    assert x.shape == (16, 16, 3)
    assert x.min() >= 0 and x.max() <= 1
    assert trace.image is x


def test_same_seed_same_image(backbone, small_run):
    heads, cfg, (x, trace) = small_run
    y, trace2 = synthesize_maximal_image(cfg, heads, backbone)
    assert x.tobytes() == y.tobytes()
    assert trace.to_csv() == trace2.to_csv()
    z, _ = synthesize_maximal_image(InversionConfig(**{**cfg.__dict__, "seed": 1}), heads, backbone)
    assert x.tobytes() != z.tobytes()


def test_trace_csv(small_run):
    _, _, (_, trace) = small_run
    lines = trace.to_csv().splitlines()
    assert lines[0] == "iteration,objective,sum_loss,tv_term,step"
    assert len(lines) == len(trace.records) + 1
    it, obj, loss, tv, step = lines[1].split(",")
    assert it == "0" and float(step) == 0
    assert float(obj) == trace.records[0][1]
    assert abs(float(loss) + float(tv) - float(obj)) < 1e-9


def test_initialization(backbone):
    heads = random_heads(backbone, np.random.default_rng(0))
    x0 = inversion.initial_image(InversionConfig(size=8), 3)
    assert x0.min() >= 0.45 and x0.max() <= 0.55
    assert np.all(inversion.initial_image(InversionConfig(init="mid_gray", size=8), 3) == 0.5)
    _, trace = synthesize_maximal_image(InversionConfig(size=16, max_iters=1), heads, backbone)
    assert len(trace.records) == 2


def test_wrong_gradient_stalls(backbone, monkeypatch):
    real = inversion.objective

    def uphill(*args, **kwargs):
        value, grad, losses, tv = real(*args, **kwargs)
        return value, (None if grad is None else -grad), losses, tv

    monkeypatch.setattr(inversion, "objective", uphill)
    heads = random_heads(backbone, np.random.default_rng(1))
    messages = []
    x, trace = synthesize_maximal_image(InversionConfig(size=16, max_iters=20), heads, backbone, log=messages.append)
    assert trace.stalled and not trace.converged
    assert len(trace.records) < 21
    assert any("line search" in m for m in messages)


def test_converges_on_flat_objective(backbone):
    heads = SoftmaxHead.zeros((64, 256, 256, 1024), ("a", "b"))
    _, trace = synthesize_maximal_image(InversionConfig(size=16, init="mid_gray"), heads, backbone)
    assert trace.converged and not trace.stalled
    assert len(trace.records) == 11


def test_non_finite_input_is_numeric_error(backbone):
    heads = random_heads(backbone, np.random.default_rng(0))
    x = np.full((16, 16, 3), np.nan)
    with pytest.raises(NumericError):
        objective(x, heads, backbone, InversionConfig(size=16))


def test_config_validation():
    for bad in ({"gamma": -1}, {"tv_beta": 0.5}, {"max_iters": 0}, {"init": "zeros"}, {"step_size": 0},
                {"gamma": float("nan")}):
        with pytest.raises(ConfigError):
            InversionConfig(**bad)


def test_ratio_cases():
    assert oriented_energy_ratio(np.full((8, 8, 3), 0.5)) == 0
    xx = np.arange(32)
    stripes = np.tile((0.5 + 0.5 * np.sin(2 * np.pi * xx / 6))[None, :, None], (32, 1, 3))
    assert oriented_energy_ratio(stripes) > 100
    assert oriented_energy_ratio(np.transpose(stripes, (1, 0, 2))) < 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.integers(2, 20))
def test_ratio_inverts_under_rotation(seed, h, w):
    x = np.random.default_rng(seed).uniform(size=(h, w, 3))
    g = x.mean(axis=2)
    # the 1e-12 denominator guard only matters when one direction has no energy
    assume(min(np.sum(np.diff(g, axis=0) ** 2), np.sum(np.diff(g, axis=1) ** 2)) > 1e-3)
    r = oriented_energy_ratio(x)
    assert abs(oriented_energy_ratio(np.rot90(x)) * r - 1) < 1e-9
