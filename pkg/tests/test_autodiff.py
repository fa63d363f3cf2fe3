"""Tape gradients against central differences (float64, h = 1e-6, rel. err. 1e-4)."""
import numpy as np
import pytest
from conftest import check_grads, rand_tensor
from hypothesis import given, settings
from hypothesis import strategies as st

from qstnet.exceptions import ShapeError
from qstnet.measurement import GridGeometry
from qstnet.nn import autodiff as ad
from qstnet.nn import physics
from qstnet.nn.losses import msnn_loss, rfb_loss


def weighted(out, seed=99):
    """Random linear functional so every output entry contributes."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.sum_(ad.mul(out, w))


rng = np.random.default_rng(0)

ELEMENTWISE = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 0.5)),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_binary_ops(name):
    a, b = rand_tensor(rng, (3, 4), "a"), rand_tensor(rng, (3, 4), "b")
    check_grads(lambda: weighted(ELEMENTWISE[name](a, b)), [a, b])


def test_broadcasting():
    a, b, c = rand_tensor(rng, (2, 3, 4)), rand_tensor(rng, (4,)), rand_tensor(rng, (3, 1))
    check_grads(lambda: weighted(ad.mul(ad.add(a, b), c)), [a, b, c])


def test_batched_matmul_broadcast():
    a, b = rand_tensor(rng, (2, 3, 4)), rand_tensor(rng, (4, 5))
    check_grads(lambda: weighted(ad.matmul(a, b)), [a, b])


UNARY = {
    "abs": lambda x: ad.abs_(x),
    "leaky_relu": lambda x: ad.leaky_relu(x, 0.2),
    "reshape": lambda x: ad.reshape(x, (4, 6)),
    "transpose": lambda x: ad.transpose(x),
    "sum_axis": lambda x: ad.sum_(x, axis=1, keepdims=True),
    "mean": lambda x: ad.mean(x, axis=(0, 2)),
    "select": lambda x: ad.select(x, (slice(None), 1)),
    "neg_rsub": lambda x: 1.0 - (-x),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops(name):
    x = rand_tensor(rng, (2, 3, 4))
    check_grads(lambda: weighted(UNARY[name](x)), [x])


def test_dense():
    x, w, b = rand_tensor(rng, (5, 4)), rand_tensor(rng, (4, 3)), rand_tensor(rng, (3,))
    check_grads(lambda: weighted(ad.dense(x, w, b)), [x, w, b])


@pytest.mark.parametrize("stride,padding", [(1, None), (2, None), (1, 0), (2, 1)])
def test_conv2d(stride, padding):
    x, w, b = rand_tensor(rng, (2, 2, 6, 5)), rand_tensor(rng, (3, 2, 3, 3)), rand_tensor(rng, (3,))
    check_grads(lambda: weighted(ad.conv2d(x, w, b, stride=stride, padding=padding)), [x, w, b])


def test_conv2d_matches_direct_loop():
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((1, 2, 3, 3))
    out = ad.conv2d(x, w, padding=0).data
    ref = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            ref[i, j] = np.sum(x[0, :, i : i + 3, j : j + 3] * w[0])
    assert np.allclose(out[0, 0], ref)


def test_dropout_and_noise_fixed_masks():
    x = rand_tensor(rng, (3, 5))
    check_grads(lambda: weighted(ad.dropout(x, 0.4, np.random.default_rng(1), True)), [x])
    check_grads(lambda: weighted(ad.gaussian_noise(x, 0.3, np.random.default_rng(1), True)), [x])
    assert ad.dropout(x, 0.4, None, False) is x


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm(training):
    x, g, b = rand_tensor(rng, (3, 2, 3, 2)), rand_tensor(rng, (2,)), rand_tensor(rng, (2,))
    stats = None if training else (np.array([0.1, -0.2]), np.array([1.5, 0.7]))

    def build():
        out = ad.batch_norm(x, g, b, stats=stats)
        return weighted(out[0] if training else out)

    check_grads(build, [x, g, b])


def test_losses():
    logits, feats = rand_tensor(rng, (4, 7)), rand_tensor(rng, (4, 6))
    labels = np.array([0, 3, 6, 2])
    true = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    check_grads(lambda: ad.softmax_cross_entropy(logits, labels), [logits])
    check_grads(lambda: rfb_loss(logits, labels, feats, true), [logits, feats])
    a = rand_tensor(rng, (3, 4))
    check_grads(lambda: ad.mean_abs_error(a, np.zeros((3, 4))), [a])


def test_cross_entropy_value():
    logits = np.array([[1.0, 2.0, 0.5]])
    expected = -np.log(np.exp(2.0) / np.exp(logits).sum())
    assert ad.softmax_cross_entropy(logits, [1]).item() == pytest.approx(expected)


@pytest.mark.parametrize("layer", ["cholesky", "split"])
def test_density_layers(layer):
    tr_, ti_ = rand_tensor(rng, (2, 4, 4)), rand_tensor(rng, (2, 4, 4))
    # keep the split trace away from zero
    tr_.data[:, np.arange(4), np.arange(4)] += 2.0
    fn = physics.cholesky_density if layer == "cholesky" else physics.split_density
    check_grads(lambda: weighted(ad.add(*fn(tr_, ti_))), [tr_, ti_])


def test_husimi_layer_and_msnn_loss():
    geom = GridGeometry(3, 1.5)
    re, im = rand_tensor(rng, (2, 4, 4)), rand_tensor(rng, (2, 4, 4))
    m_in = rng.random((2, 9))
    d_true = rng.standard_normal((2, 4, 4)) + 1j * rng.standard_normal((2, 4, 4))

    def build():
        q = physics.husimi_layer(re, im, geom)
        return msnn_loss(m_in, q, d_true, (re, im), alpha=3.0)

    check_grads(build, [re, im])


def test_backward_requires_scalar():
    x = rand_tensor(rng, (2,))
    with ad.Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ShapeError):
        ad.backward(tape, y)


def test_no_tape_records_nothing():
    x = rand_tensor(rng, (2,))
    y = ad.mul(x, 2.0)
    assert not y.requires_grad and y.parents == ()


def test_gradient_accumulates_over_reuse():
    x = ad.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.sum_(ad.mul(x, x))
    grads = ad.backward(tape, loss, [x])
    assert np.allclose(grads[x], 2 * x.data)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 10_000))
def test_matmul_shapes_property(m, k, seed):
    r = np.random.default_rng(seed)
    a, b = rand_tensor(r, (m, k)), rand_tensor(r, (k, 2))
    check_grads(lambda: weighted(ad.matmul(a, b)), [a, b])
