import numpy as np
import pytest

from texmax.backbone import (
    BackboneSpec,
    MaxPool2,
    _orthonormal_weights,
    backward_to_image,
    decode_backbone,
    encode_backbone,
    forward_taps,
    gabor_kernel,
    kink_quantities,
    load_backbone,
    make_filter_bank,
    save_backbone,
)
from texmax.errors import ConfigError, FormatError
from texmax.numerics import ConvLayerSpec, gradcheck


def test_default_has_four_taps(backbone):
    assert len(backbone.taps) == 4
    assert backbone.tap_channels == (8, 16, 16, 32)
    assert backbone.input_channels == 3


def test_tap_sizes_for_32px_input(backbone):
    stack = forward_taps(np.random.default_rng(0).uniform(size=(32, 32, 3)), backbone)
    assert [t.shape for t in stack.taps] == [(32, 32, 8), (16, 16, 16), (8, 8, 16), (4, 4, 32)]


def test_taps_are_nonnegative(backbone):
    stack = forward_taps(np.random.default_rng(1).uniform(size=(16, 16, 3)), backbone)
    assert all(t.min() >= 0 for t in stack.taps)


def test_zero_image_gives_zero_taps(backbone):
    # the mean must map a black image to 0 after normalization
    spec = BackboneSpec(backbone.layers, backbone.taps, np.zeros(3), np.ones(3))
    assert all(not t.any() for t in forward_taps(np.zeros((16, 16, 3)), spec).taps)


def test_zero_tap_grads_give_zero_image_grad(backbone):
    stack = forward_taps(np.random.default_rng(2).uniform(size=(16, 16, 3)), backbone)
    g = backward_to_image(stack, backbone, [np.zeros_like(t) for t in stack.taps])
    assert g.shape == (16, 16, 3) and not g.any()


def test_multi_tap_gradient_is_sum_of_single_taps(backbone):
    rng = np.random.default_rng(3)
    stack = forward_taps(rng.uniform(size=(16, 16, 3)), backbone)
    grads = [rng.normal(size=t.shape) for t in stack.taps]
    total = backward_to_image(stack, backbone, grads)
    parts = [
        backward_to_image(stack, backbone, [g if j == i else np.zeros_like(g) for j, g in enumerate(grads)])
        for i in range(len(grads))
    ]
    assert np.max(np.abs(total - sum(parts))) < 1e-12


@pytest.mark.parametrize("kind", ["gabor", "random_orthogonal"])
@pytest.mark.parametrize("seed", range(3))
def test_backbone_gradcheck(kind, seed):
    spec = make_filter_bank(kind, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(16, 16, 3))
    grads = [rng.normal(size=t.shape) for t in forward_taps(x, spec).taps]

    def f(z):
        st = forward_taps(z, spec)
        return sum(float(np.sum(g * t)) for g, t in zip(grads, st.taps)), backward_to_image(st, spec, grads)

    assert gradcheck(f, x, samples=96, seed=seed, kinks=lambda z: kink_quantities(z, spec)) < 1e-4


def test_forward_stops_at_last_tap():
    layers = (
        ConvLayerSpec(np.ones((2, 1, 3, 3)), np.zeros(2), padding=1),
        MaxPool2(),
        ConvLayerSpec(np.ones((2, 2, 3, 3)), np.zeros(2), padding=1),
    )
    stack = forward_taps(np.ones((4, 4, 1)), BackboneSpec(layers, (0,)))
    assert len(stack.cache) == 1


@pytest.mark.parametrize("kind", ["gabor", "random_orthogonal"])
def test_same_seed_same_bits(kind):
    a, b = make_filter_bank(kind, seed=11), make_filter_bank(kind, seed=11)
    assert encode_backbone(a) == encode_backbone(b)
    assert encode_backbone(a) != encode_backbone(make_filter_bank(kind, seed=12))


def test_orthonormal_draw():
    rng = np.random.default_rng(0)
    for out_c, in_c in [(8, 3), (16, 8), (32, 16)]:
        w = _orthonormal_weights(rng, out_c, in_c, 3).reshape(out_c, -1)
        assert np.max(np.abs(w @ w.T - np.eye(out_c))) < 1e-10


def test_orthonormal_draw_needs_enough_fan_in():
    with pytest.raises(ConfigError):
        _orthonormal_weights(np.random.default_rng(0), 30, 3, 3)


def test_shipped_orthogonal_rows():
    # rescaled by one scalar per layer, then rounded to float32
    spec = make_filter_bank("random_orthogonal", seed=5)
    for layer in spec.layers:
        if isinstance(layer, ConvLayerSpec):
            w = layer.weights.reshape(layer.out_channels, -1)
            gram = w @ w.T
            d = np.diag(gram)
            assert np.max(np.abs(gram - np.diag(d))) / d.max() < 1e-7
            assert np.ptp(d) / d.max() < 1e-7


def test_gabor_kernels_are_dc_free():
    for theta in np.linspace(0, np.pi, 8, endpoint=False):
        for lam in (4.0, 6.0, 9.0):
            k = gabor_kernel(5, theta, lam, 0.5 * lam)
            assert abs(k.sum()) < 1e-6
            assert abs(np.linalg.norm(k) - 1) < 1e-12
    first = make_filter_bank("gabor", seed=0).layers[0].weights
    assert np.max(np.abs(first.sum(axis=(2, 3)))) < 1e-6


@pytest.mark.parametrize("kind", ["gabor", "random_orthogonal"])
def test_activation_scale_is_calibrated(kind):
    spec = make_filter_bank(kind, seed=0)
    x = np.random.default_rng(7).uniform(size=(32, 32, 3))
    for t in forward_taps(x, spec).taps:
        rms = float(np.sqrt(np.mean(t**2)))
        assert 0.1 <= rms <= 10


def test_round_trip(tmp_path, backbone):
    path = tmp_path / "bb.txbb"
    save_backbone(backbone, path)
    assert load_backbone(path) == backbone
    assert path.read_bytes()[:4] == b"TXBB"


def test_round_trip_linear_and_custom_norm():
    layers = (
        ConvLayerSpec(np.ones((2, 1, 1, 1)), np.array([0.25, -0.5]), 2, 0, "linear"),
        ConvLayerSpec(np.full((1, 2, 3, 3), 0.125), np.zeros(1), 1, 1, "relu"),
    )
    spec = BackboneSpec(layers, (1,), np.array([0.25]), np.array([2.0]))
    assert decode_backbone(encode_backbone(spec)) == spec


def test_bad_magic():
    raw = bytearray(encode_backbone(make_filter_bank(seed=0)))
    raw[:4] = b"XXXX"
    with pytest.raises(FormatError, match="magic"):
        decode_backbone(bytes(raw))


def test_truncated_weights_name_the_layer(backbone):
    raw = encode_backbone(backbone)
    # header is 12 bytes; layer 0 is type + 24-byte shape + activation, then weights
    w0 = backbone.layers[0]
    off = 12 + 1 + 24 + 1 + 4 * w0.weights.size // 2
    with pytest.raises(FormatError, match="layer 0 weights") as err:
        decode_backbone(raw[:off])
    assert err.value.offset == 12 + 26
    # cut inside layer 3 (a conv after the first pool)
    pos = 12
    for layer in backbone.layers[:3]:
        pos += 1 if isinstance(layer, MaxPool2) else 26 + 4 * (layer.weights.size + layer.bias.size)
    with pytest.raises(FormatError, match="layer 3 weights"):
        decode_backbone(raw[: pos + 30])


def test_trailing_and_version_errors(backbone):
    raw = encode_backbone(backbone)
    with pytest.raises(FormatError, match="trailing"):
        decode_backbone(raw + b"\0")
    with pytest.raises(FormatError, match="version"):
        decode_backbone(raw[:4] + b"\x09\0\0\0" + raw[8:])


def test_invalid_specs():
    conv = ConvLayerSpec(np.ones((2, 1, 3, 3)), np.zeros(2), padding=1)
    with pytest.raises(ConfigError):
        BackboneSpec((MaxPool2(), conv), (1,))
    with pytest.raises(ConfigError):
        BackboneSpec((conv, conv), (1,))  # channel mismatch
    with pytest.raises(ConfigError):
        BackboneSpec((conv, MaxPool2()), (1,))  # tap on a pool
    with pytest.raises(ConfigError):
        make_filter_bank("vgg16")
