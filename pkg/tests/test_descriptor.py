import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texmax.backbone import forward_taps
from texmax.descriptor import (
    descriptor_backward,
    descriptor_forward,
    l2_normalize,
    l2_normalize_backward,
    pool_second_order,
    signed_sqrt,
    signed_sqrt_backward,
)
from texmax.numerics import gradcheck


def pool_reference(feat, centered=False):
    h, w, d = feat.shape
    n = h * w
    mu = [sum(feat[y, x, k] for y in range(h) for x in range(w)) / n for k in range(d)] if centered else [0.0] * d
    out = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for y in range(h):
                for x in range(w):
                    acc += (feat[y, x, i] - mu[i]) * (feat[y, x, j] - mu[j])
            out[i, j] = acc / n
    return out


def random_maps(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        shape = tuple(int(s) for s in rng.integers(1, 9, size=3))
        yield rng.normal(size=shape) * rng.uniform(0.1, 3)


def test_pooling_matches_double_loop_on_200_maps():
    worst = max(np.max(np.abs(pool_second_order(f) - pool_reference(f))) for f in random_maps(200, 0))
    assert worst < 1e-12


def test_centered_pooling_matches_reference():
    for f in random_maps(20, 1):
        assert np.max(np.abs(pool_second_order(f, centered=True) - pool_reference(f, True))) < 1e-12


def test_pooling_small_cases():
    assert not pool_second_order(np.zeros((3, 3, 4))).any()
    np.testing.assert_array_equal(pool_second_order(np.array([[[2.0, 1.0]]])), [[4, 2], [2, 1]])
    two = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    np.testing.assert_array_equal(pool_second_order(two), [[0.5, 0], [0, 0.5]])


def test_pooling_is_symmetric():
    for f in random_maps(20, 2):
        a = pool_second_order(f)
        np.testing.assert_array_equal(a, a.T)
        s = signed_sqrt(a)
        np.testing.assert_array_equal(s, s.T)


def test_signed_sqrt_values():
    np.testing.assert_array_equal(signed_sqrt([0.0, 4.0, -4.0, 0.25]), [0.0, 2.0, -2.0, 0.5])


def test_signed_sqrt_derivative_guard():
    g = signed_sqrt_backward(np.array([0.0, 1e-12, 4.0]), np.ones(3))
    np.testing.assert_allclose(g, [1 / 2e-4, 1 / 2e-4, 0.25])


@pytest.mark.parametrize("seed", range(10))
def test_signed_sqrt_gradcheck(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(4, 4, 4))
    g = rng.uniform(0.5, 1.5, size=v.shape)
    err = gradcheck(
        lambda z: (float(np.sum(g * signed_sqrt(z))), signed_sqrt_backward(z, g)),
        v, kinks=lambda z: [(z.reshape(-1), 1e-3)],
    )
    assert err < 1e-4


def test_l2_normalize_cases():
    v, flag = l2_normalize([3.0, 4.0])
    np.testing.assert_allclose(v, [0.6, 0.8], rtol=0, atol=1e-15)
    assert not flag
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u)[0], u)
    z, flag = l2_normalize(np.zeros(4))
    assert flag and not z.any()
    assert not l2_normalize_backward(np.zeros(4), np.ones(4)).any()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 50))
def test_l2_backward_is_orthogonal_to_output(seed, n):
    rng = np.random.default_rng(seed)
    v, g = rng.normal(size=n) * rng.uniform(0.01, 100), rng.normal(size=n)
    u, _ = l2_normalize(v)
    assert abs(u @ l2_normalize_backward(v, g)) < 1e-9 * max(1.0, np.linalg.norm(g) / np.linalg.norm(v))


@pytest.mark.parametrize("seed", range(10))
def test_l2_gradcheck(seed):
    rng = np.random.default_rng(seed)
    v, g = rng.normal(size=(5, 5, 3)), rng.normal(size=75)

    def f(z):
        return float(g @ l2_normalize(z.reshape(-1))[0]), l2_normalize_backward(z.reshape(-1), g).reshape(z.shape)

    assert gradcheck(f, v) < 1e-6


def test_default_descriptor_lengths_and_norms(backbone):
    x = np.random.default_rng(0).uniform(size=(32, 32, 3))
    d = descriptor_forward(forward_taps(x, backbone))
    assert [len(v) for v in d.vectors] == [64, 256, 256, 1024]
    assert d.dims == (8, 16, 16, 32)
    assert d.concat().shape == (1600,)
    for v, z in zip(d.vectors, d.zero):
        assert not z
        assert abs(np.linalg.norm(v) - 1) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_spatial_permutation_invariance(seed, centered):
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(5, 6, 4))
    perm = rng.permutation(30)
    shuffled = feat.reshape(30, 4)[perm].reshape(5, 6, 4)
    a = descriptor_forward([feat], centered).vectors[0]
    b = descriptor_forward([shuffled], centered).vectors[0]
    assert np.max(np.abs(a - b)) < 1e-12


def test_zero_map_sets_flag():
    d = descriptor_forward([np.zeros((4, 4, 3)), np.ones((2, 2, 2))])
    assert d.zero == (True, False)
    assert not d.vectors[0].any()
    g = descriptor_backward([np.zeros((4, 4, 3))], [np.ones(9)])
    assert not g[0].any()


def test_zero_cotangent():
    feat = np.random.default_rng(3).normal(size=(4, 4, 3))
    assert not descriptor_backward([feat], [np.zeros(9)])[0].any()


def test_backward_shape_checks():
    feat = np.ones((2, 2, 3))
    with pytest.raises(RuntimeError):
        descriptor_backward([feat], [np.ones(4)])
    with pytest.raises(RuntimeError):
        descriptor_backward([feat], [])


@pytest.mark.parametrize("centered", [False, True])
@pytest.mark.parametrize("seed", range(10))
def test_descriptor_gradcheck(seed, centered):
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(6, 6, 4))
    g = rng.normal(size=16)

    def f(z):
        return float(g @ descriptor_forward([z], centered).vectors[0]), descriptor_backward([z], [g], centered)[0]

    kinks = lambda z: [(pool_second_order(z, centered).reshape(-1), 1e-3)]
    assert gradcheck(f, feat, seed=seed, kinks=kinks) < 1e-4


def test_centering_changes_the_statistic():
    feat = np.random.default_rng(4).uniform(size=(4, 4, 3)) + 2.0
    a = descriptor_forward([feat]).vectors[0]
    b = descriptor_forward([feat], centered=True).vectors[0]
    assert np.max(np.abs(a - b)) > 1e-2
