import numpy as np
import pytest
from hypothesis import given, strategies as st

from skinseg.errors import ParameterError, ShapeError, StateError
from skinseg.layers import (
    BlockConfig, Conv2d, DenseBlock, Dropout, FullyConnected, GaussianNoise, MaxPool2, MergeBlock,
    Param, ReLU, ResidualBlock, Tanh01, Upsample2, conv2d, fully_connected, maxpool2, relu, tanh01,
    upsample2_nearest,
)
from skinseg.tensor import Rng


def conv_loops(x, w, b):
    """Direct nested-loop convolution, zero padding 1."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    out = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for y in range(h):
                for xx in range(wd):
                    s = b[oi]
                    for ci in range(c):
                        for dy in range(3):
                            for dx in range(3):
                                yy, xs = y + dy - 1, xx + dx - 1
                                if 0 <= yy < h and 0 <= xs < wd:
                                    s += w[oi, ci, dy, dx] * x[ni, ci, yy, xs]
                    out[ni, oi, y, xx] = s
    return out


def init(layer, seed=0):
    for p in layer.parameters():
        p.initialize(Rng(seed))
    return layer


# -- conv ------------------------------------------------------------------------

def test_conv_identity_kernel():
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    np.testing.assert_array_equal(conv2d(x, w, np.zeros(1)), x)


def test_conv_all_ones_kernel():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    np.testing.assert_array_equal(conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1)), np.full((1, 1, 2, 2), 10.0))


def test_conv_bias_only():
    out = conv2d(np.random.default_rng(0).normal(size=(1, 2, 3, 3)), np.zeros((4, 2, 3, 3)), np.full(4, 5.0))
    np.testing.assert_array_equal(out, np.full((1, 4, 3, 3), 5.0))


@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5),
       st.integers(0, 10**6))
def test_conv_matches_loops(n, c, o, h, w, seed):
    g = np.random.default_rng(seed)
    x, k, b = g.normal(size=(n, c, h, w)), g.normal(size=(o, c, 3, 3)), g.normal(size=o)
    np.testing.assert_allclose(conv2d(x, k, b), conv_loops(x, k, b), rtol=1e-12, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        init(Conv2d(3, 2)).forward(np.ones((1, 2, 4, 4)))


def test_conv_backward_before_forward():
    with pytest.raises(StateError):
        init(Conv2d(1, 1)).backward(np.ones((1, 1, 2, 2)))


# -- pooling / upsampling ------------------------------------------------------

def test_maxpool_examples():
    y, idx = maxpool2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    np.testing.assert_array_equal(y, [[[[4.0]]]])
    y, idx = maxpool2(np.full((1, 2, 4, 4), 7.0))
    np.testing.assert_array_equal(y, np.full((1, 2, 2, 2), 7.0))
    np.testing.assert_array_equal(idx, np.zeros((1, 2, 2, 2)))


def test_maxpool_tie_backward_routes_to_first():
    pool = MaxPool2()
    pool.forward(np.full((1, 1, 2, 2), 4.0))
    np.testing.assert_array_equal(pool.backward(np.ones((1, 1, 1, 1))), [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_maxpool_odd_shape():
    with pytest.raises(ShapeError):
        maxpool2(np.ones((1, 1, 3, 4)))


def test_upsample_examples():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    expect = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    np.testing.assert_array_equal(upsample2_nearest(x)[0, 0], expect)
    up = Upsample2()
    up.forward(x)
    np.testing.assert_array_equal(up.backward(np.ones((1, 1, 4, 4))), np.full((1, 1, 2, 2), 4.0))


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
def test_pool_and_upsample_shape_algebra(c, h, w):
    x = np.random.default_rng(h * 31 + w).normal(size=(2, c, 2 * h, 2 * w))
    y, _ = maxpool2(x)
    assert y.shape == (2, c, h, w)
    assert upsample2_nearest(y).shape == x.shape


# -- fully connected and activations --------------------------------------------

def test_fc_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(fully_connected(x, np.eye(2), np.zeros(2)), x)
    np.testing.assert_array_equal(fully_connected(x, np.array([[3.0, 4.0]]), np.array([1.0])), [[12.0]])
    batch = np.array([[1.0, 2.0], [0.5, -1.0]])
    w, b = np.array([[3.0, 4.0], [1.0, 1.0]]), np.array([1.0, 0.0])
    out = fully_connected(batch, w, b)
    for i in range(2):
        np.testing.assert_array_equal(out[i], fully_connected(batch[i:i + 1], w, b)[0])
    with pytest.raises(ShapeError):
        init(FullyConnected(3, 2)).forward(np.ones((1, 4)))


def test_relu_examples():
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    r = ReLU()
    r.forward(np.array([0.0, -1.0, 3.0]))
    np.testing.assert_array_equal(r.backward(np.ones(3)), [0.0, 0.0, 1.0])


def test_tanh01_examples():
    assert tanh01(0.0) == 0.5
    assert abs(tanh01(20.0) - 1.0) < 1e-9
    t = Tanh01()
    t.forward(np.array([0.0]))
    h = 1e-6
    fd = (tanh01(h) - tanh01(-h)) / (2 * h)
    assert t.backward(np.array([1.0]))[0] == 0.5
    assert abs(fd - 0.5) < 1e-9


# -- stochastic layers ------------------------------------------------------------

def test_dropout_eval_and_rate_zero_identity():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 4))
    assert Dropout(0.5).forward(x, train=False) is x
    assert Dropout(0.0).forward(x, train=True, rng=Rng(0)) is x
    with pytest.raises(ParameterError):
        Dropout(1.0)


def test_dropout_expectation_and_mask_reuse():
    d = Dropout(0.5)
    y = d.forward(np.ones(100000), train=True, rng=Rng(1))
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) <= {0.0, 2.0}
    np.testing.assert_array_equal(d.backward(np.ones(100000)), y)


def test_dropout_train_needs_rng():
    with pytest.raises(StateError):
        Dropout(0.5).forward(np.ones(3), train=True)


def test_noise_identity_and_statistics():
    x = np.ones((3, 3))
    assert GaussianNoise(0.025).forward(x) is x
    assert GaussianNoise(0.0).forward(x, train=True, rng=Rng(0)) is x
    y = GaussianNoise(0.025).forward(np.zeros(100000), train=True, rng=Rng(2))
    assert abs(y.std() - 0.025) < 0.001
    with pytest.raises(ParameterError):
        GaussianNoise(-0.1)


def test_frozen_layer_replays_draw():
    d = Dropout(0.5)
    d.freeze()
    a = d.forward(np.ones(50), train=True, rng=Rng(0))
    b = d.forward(np.ones(50), train=True, rng=Rng(99))
    np.testing.assert_array_equal(a, b)


# -- composite blocks -------------------------------------------------------------

def test_dense_block_shapes():
    blk = DenseBlock(6, BlockConfig(depth=3, growth=12), "d")
    assert [c.weight.shape[1] for c in blk.convs] == [6, 18, 30]
    init(blk)
    y = blk.forward(np.random.default_rng(0).normal(size=(1, 6, 4, 4)))
    assert y.shape == (1, 36, 4, 4)
    assert len(blk.per_conv_outputs) == 3
    np.testing.assert_array_equal(np.concatenate(blk.per_conv_outputs, axis=1), y)


def test_dense_block_depth_one_is_conv_relu():
    blk = init(DenseBlock(2, BlockConfig(depth=1, growth=3), "d"), seed=4)
    x = np.random.default_rng(1).normal(size=(1, 2, 4, 4))
    c = blk.convs[0]
    np.testing.assert_array_equal(blk.forward(x), relu(conv2d(x, c.weight.value, c.bias.value)))


def test_dense_block_zero_weights():
    blk = DenseBlock(2, BlockConfig(depth=2, growth=3), "d")
    for p in blk.parameters():
        p.value = np.zeros(p.shape)
    assert not blk.forward(np.ones((1, 2, 4, 4))).any()


@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 4))
def test_dense_block_channel_count_ignores_input(cin, depth, growth):
    blk = init(DenseBlock(cin, BlockConfig(depth=depth, growth=growth), "d"))
    assert blk.forward(np.ones((1, cin, 2, 2))).shape[1] == depth * growth


def test_block_config_validation():
    with pytest.raises(ParameterError):
        BlockConfig(depth=0)


def test_residual_block_identity_and_zero():
    blk = ResidualBlock(3, "r")
    for p in blk.parameters():
        p.value = np.zeros(p.shape)
    x = np.abs(np.random.default_rng(0).normal(size=(1, 3, 4, 4)))
    np.testing.assert_array_equal(blk.forward(x), x)
    np.testing.assert_array_equal(blk.backward(np.ones_like(x)), (x > 0).astype(float))
    init(blk)
    for conv in (blk.conv1, blk.conv2):
        conv.bias.value = np.zeros(3)
    assert not blk.forward(np.zeros((1, 3, 4, 4))).any()
    with pytest.raises(ShapeError):
        blk.forward(np.ones((1, 2, 4, 4)))


def test_residual_block_fresh_is_identity_on_nonnegative():
    blk = init(ResidualBlock(2, "r"), seed=3)
    x = np.abs(np.random.default_rng(2).normal(size=(1, 2, 4, 4)))
    np.testing.assert_array_equal(blk.forward(x), x)


def test_merge_block():
    m = MergeBlock([12, 12, 12], 4, "m")
    assert m.conv.weight.shape[1] == 36 and m.z == 3
    m.conv.weight.value = np.zeros(m.conv.weight.shape)
    m.conv.bias.value = np.full(4, 0.7)
    m.conv.weight.grad = None
    y = m.forward([np.ones((1, 12, 4, 4))] * 3)
    np.testing.assert_array_equal(y, np.full((1, 4, 4, 4), 0.7))
    with pytest.raises(ShapeError):
        m.forward([np.ones((1, 12, 4, 4))] * 2)
    with pytest.raises(ShapeError):
        m.forward([np.ones((1, 12, 4, 4)), np.ones((1, 12, 4, 4)), np.ones((1, 12, 2, 4))])


def test_merge_single_input_is_plain_conv():
    m = init(MergeBlock([2], 3, "m"))
    x = np.random.default_rng(0).normal(size=(1, 2, 4, 4))
    np.testing.assert_array_equal(m.forward([x]), relu(conv2d(x, m.conv.weight.value, m.conv.bias.value)))


def test_merge_backward_splits():
    m = init(MergeBlock([1, 2], 2, "m"))
    m.forward([np.ones((1, 1, 3, 3)), np.ones((1, 2, 3, 3))])
    dx = m.backward(np.ones((1, 2, 3, 3)))
    assert [d.shape[1] for d in dx] == [1, 2]


def test_param_initializers():
    he = Param("w", (64, 32), "he", fan_in=32)
    he.initialize(Rng(0))
    assert np.abs(he.value).max() <= np.sqrt(6 / 32)
    assert not he.grad.any() and not he.velocity.any()
    gl = Param("w", (64, 32), "glorot", fan_in=32, fan_out=64)
    gl.initialize(Rng(0))
    assert np.abs(gl.value).max() <= np.sqrt(6 / 96)
    z = Param("b", (5,))
    z.initialize(Rng(0))
    assert not z.value.any()
    with pytest.raises(ParameterError):
        Param("x", (1,), "bogus").initialize(Rng(0))
