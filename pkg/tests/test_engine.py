import zlib

import numpy as np
import pytest

from gcprune import _kernels_py, kernels
from gcprune.engine import SGD, BNParams, Network, Tensor, backward, cosine_lr, no_grad
from gcprune.engine import functional as F
from gcprune.netgraph import init_weights, parse_graph

import gradsuite
from fdcheck import check


def test_batchnorm_constant_channel_gives_beta():
    x = Tensor(np.full((2, 1, 2, 2), 3.7))
    p = BNParams.create(1)
    p.gamma.data[:] = 5.0
    p.beta.data[:] = 0.5
    assert np.allclose(F.batchnorm(x, p, training=True).data, 0.5)


def test_batchnorm_hand_values():
    x = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
    p = BNParams.create(1, eps=1e-12)
    p.gamma.data[:] = 2.0
    p.beta.data[:] = 0.5
    assert np.allclose(F.batchnorm(x, p, training=True).data.ravel(), [-1.5, 2.5])


def test_batchnorm_identity_on_normalized_input():
    x = Tensor(np.array([-1.0, 1.0]).reshape(1, 1, 2, 1))
    y = F.batchnorm(x, BNParams.create(1), training=True).data.ravel()
    assert np.allclose(y, [-1, 1], atol=1e-4)


def test_identity_conv():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 4, 4)))
    assert np.array_equal(F.conv2d(x, Tensor(np.ones((1, 1, 1, 1)))).data, x.data)


def test_activation_points():
    assert F.leaky_relu(Tensor(np.array([-1.0]))).data[0] == pytest.approx(-0.1)
    assert F.mish(Tensor(np.array([0.0]))).data[0] == 0.0


def test_mish_large_inputs_are_identity():
    x = np.array([25.0, 100.0, -30.0])
    y = F.mish(Tensor(x)).data
    assert y[0] == 25.0 and y[1] == 100.0 and abs(y[2]) < 1e-10


def test_upsample_replicates():
    y = F.upsample_nearest(Tensor(np.ones((1, 1, 1, 1))), 2).data
    assert np.array_equal(y, np.ones((1, 1, 2, 2)))


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 4)), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((2, 3, 4)))


def test_conv_fd_single_fixture():
    rng = np.random.default_rng(2)
    x, w = rng.standard_normal((1, 1, 4, 4)), rng.standard_normal((1, 1, 3, 3))
    assert check(lambda x, w: F.conv2d(x, w).sum(), [x, w]) < 1e-4


def test_batchnorm_fd_gamma_beta():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 2, 3, 3))

    def build(g, b):
        p = BNParams(g, b, np.zeros(2), np.ones(2), 1e-5)
        return (F.batchnorm(Tensor(x), p, True) * Tensor(x + 1)).sum()
    assert check(build, [rng.standard_normal(2), rng.standard_normal(2)]) < 1e-4


@pytest.mark.parametrize("name", gradsuite.ALL_OPS)
def test_op_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(3):
        assert gradsuite.op_error(name, rng) < gradsuite.TOL


def test_sgd_one_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([2.0])
    SGD([p]).step(0.1)
    assert p.data[0] == pytest.approx(0.8)


def test_sgd_zero_grad_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    SGD([p], momentum=0.9).step(0.5)
    assert np.array_equal(p.data, [1.0, -2.0])


def test_cosine_endpoints():
    assert cosine_lr(0, 10, 0.1, 0.001) == pytest.approx(0.1)
    assert cosine_lr(10, 10, 0.1, 0.001) == pytest.approx(0.001)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y._parents


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_kernel_backends_agree(dtype):
    if kernels.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    from gcprune import _kernels

    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 7, 6)).astype(dtype)
    for k, s in ((3, 1), (1, 1), (3, 2)):
        pad = k // 2
        ho, wo = -(-7 // s), -(-6 // s)
        a = _kernels.im2col(x, k, s, pad, ho, wo)
        b = _kernels_py.im2col(x, k, s, pad, ho, wo)
        assert np.array_equal(a, b)
        assert np.allclose(_kernels.col2im(np.ascontiguousarray(a), 2, 3, 7, 6, k, s, pad, ho, wo),
                           _kernels_py.col2im(b, 2, 3, 7, 6, k, s, pad, ho, wo))
    for k, s in ((5, 1), (2, 2), (13, 1)):
        pad = (k - 1) // 2
        ho, wo = -(-7 // s), -(-6 // s)
        ya, aa = _kernels.maxpool_forward(x, k, s, pad, ho, wo)
        yb, ab = _kernels_py.maxpool_forward(x, k, s, pad, ho, wo)
        assert np.array_equal(ya, yb) and np.array_equal(aa, ab)
        g = rng.standard_normal(ya.shape).astype(dtype)
        assert np.allclose(_kernels.maxpool_backward(g, aa, 7, 6), _kernels_py.maxpool_backward(g, ab, 7, 6))
    v = (rng.standard_normal(50) * 10).astype(dtype)
    for ra, rb in zip(_kernels.mish_forward(v), _kernels_py.mish_forward(v)):
        assert np.allclose(ra, rb, rtol=1e-5, atol=1e-6)


TOY = """
0 conv out=4 k=3 s=1 cin=3 layer=0 inputs=[]
1 bn inputs=[0]
2 act fn=leaky inputs=[1]
3 conv out=4 k=3 s=2 layer=1 inputs=[2]
4 bn inputs=[3]
5 act fn=mish inputs=[4]
6 conv out=16 k=1 s=1 bias=1 layer=2 inputs=[5]
7 detect_head anchors=2 classes=3 inputs=[6]
"""


def test_network_forward_shapes_and_taps():
    g = parse_graph(TOY, require_heads=False)
    net = Network(g, init_weights(g, np.random.default_rng(0)), dtype=np.float64)
    res = net.forward(np.zeros((2, 3, 8, 8)), training=False, taps=(2, 5))
    assert res.heads[0].shape == (2, 16, 4, 4)
    assert set(res.features) == {2, 5}


def test_network_gradient_matches_fd():
    g = parse_graph(TOY, require_heads=False)
    w = init_weights(g, np.random.default_rng(0), dtype=np.float64)
    x = np.random.default_rng(1).standard_normal((2, 3, 8, 8))
    coef = np.random.default_rng(2).standard_normal((2, 16, 4, 4))
    net = Network(g, w, dtype=np.float64)
    out = (net(x, training=True)[0] * Tensor(coef)).sum()
    backward(out)
    gamma = net.bn[4].gamma
    analytic = gamma.grad.copy()
    num = np.zeros_like(analytic)
    for i in range(len(num)):
        for sgn in (1, -1):
            w2 = {k: {n: a.copy() for n, a in v.items()} for k, v in w.items()}
            w2[4]["gamma"][i] += sgn * 1e-5
            val = (Network(g, w2, dtype=np.float64)(x, training=True)[0] * Tensor(coef)).sum().item()
            num[i] += sgn * val / 2e-5
    assert np.allclose(analytic, num, rtol=1e-4, atol=1e-7)
