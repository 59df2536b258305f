"""Both kernel backends against the brute-force oracles and each other."""
import numpy as np
import pytest

from tasteeg import kernels
from oracles import conv2d_naive, maxpool2d_naive

BACKENDS = sorted(kernels.available_backends().items())


@pytest.fixture(params=[name for name, _ in BACKENDS])
def backend(request):
    return dict(BACKENDS)[request.param]


def random_conv_case(rng):
    n = int(rng.integers(1, 4))
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 5))
    kh = int(rng.integers(1, 4))
    kw = int(rng.integers(1, 5))
    ph = int(rng.integers(0, 3))
    pw = int(rng.integers(0, 3))
    h = int(rng.integers(max(1, kh - 2 * ph), 8))
    w = int(rng.integers(max(1, kw - 2 * pw), 9))
    if h + 2 * ph < kh or w + 2 * pw < kw:
        return None
    sh = int(rng.integers(1, 3))
    sw = int(rng.integers(1, 3))
    x = rng.standard_normal((n, cin, h, w))
    wt = rng.standard_normal((cout, cin, kh, kw))
    b = rng.standard_normal(cout)
    return x, wt, b, (sh, sw), (ph, pw)


def test_conv2d_forward_matches_naive(backend):
    rng = np.random.default_rng(7)
    done = 0
    while done < 25:
        case = random_conv_case(rng)
        if case is None:
            continue
        x, w, b, stride, pad = case
        got = backend.conv2d_forward(x, w, b, stride, pad)
        want = conv2d_naive(x, w, b, stride, pad)
        np.testing.assert_allclose(got, want, atol=1e-12)
        done += 1


def test_conv2d_backward_matches_naive_grads(backend):
    # dW and dX checked against finite differences through the naive forward
    from oracles import numerical_grad, rel_err
    rng = np.random.default_rng(11)
    done = 0
    while done < 8:
        case = random_conv_case(rng)
        if case is None:
            continue
        x, w, b, stride, pad = case
        dy = rng.standard_normal(backend.conv2d_forward(x, w, b, stride, pad).shape)

        def loss():
            return float((conv2d_naive(x, w, b, stride, pad) * dy).sum())

        dx_num, dw_num = numerical_grad(loss, [x, w])
        dx, dw = backend.conv2d_backward(x, w, dy, stride, pad, need_dx=True)
        assert rel_err(dx, dx_num) < 1e-6
        assert rel_err(dw, dw_num) < 1e-6
        done += 1


def test_conv2d_need_dx_false(backend):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    dy = rng.standard_normal((2, 4, 5, 6))
    dx, dw = backend.conv2d_backward(x, w, dy, (1, 1), (1, 1), need_dx=False)
    assert dx is None
    dx2, dw2 = backend.conv2d_backward(x, w, dy, (1, 1), (1, 1), need_dx=True)
    np.testing.assert_array_equal(dw, dw2)


def test_maxpool_forward_matches_naive(backend):
    rng = np.random.default_rng(5)
    for _ in range(25):
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        h = int(rng.integers(kh, kh + 8))
        w = int(rng.integers(kw, kw + 9))
        sh, sw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.standard_normal((n, c, h, w))
        out, idx = backend.maxpool2d_forward(x, (kh, kw), (sh, sw))
        np.testing.assert_array_equal(out, maxpool2d_naive(x, (kh, kw), (sh, sw)))
        # idx really points at the max value
        flat = x.reshape(n, c, h * w)
        np.testing.assert_array_equal(
            np.take_along_axis(flat, idx.reshape(n, c, -1), axis=2).reshape(out.shape), out)


def test_maxpool_tie_breaks_to_first_rowmajor_cell(backend):
    x = np.zeros((1, 1, 2, 4))  # all ties
    out, idx = backend.maxpool2d_forward(x, (2, 4), (2, 4))
    assert idx[0, 0, 0, 0] == 0
    x[0, 0, 1, 1] = 5.0
    x[0, 0, 0, 2] = 5.0  # row-major earlier
    out, idx = backend.maxpool2d_forward(x, (2, 4), (2, 4))
    assert idx[0, 0, 0, 0] == 2


def test_maxpool_backward_scatters_to_argmax(backend):
    rng = np.random.default_rng(13)
    x = rng.standard_normal((2, 3, 5, 9))
    out, idx = backend.maxpool2d_forward(x, (2, 4), (2, 4))
    dy = rng.standard_normal(out.shape)
    dx = backend.maxpool2d_backward(x.shape, idx, dy)
    assert dx.shape == x.shape
    # every dy value lands exactly once (non-overlapping windows)
    assert np.isclose(dx.sum(), dy.sum())
    flat = dx.reshape(2, 3, -1)
    np.testing.assert_allclose(
        np.take_along_axis(flat, idx.reshape(2, 3, -1), axis=2).reshape(dy.shape), dy)


def test_maxpool_backward_overlapping_accumulates(backend):
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 1.0  # center wins every 2x2 window
    out, idx = backend.maxpool2d_forward(x, (2, 2), (1, 1))
    dy = np.ones_like(out)
    dx = backend.maxpool2d_backward(x.shape, idx, dy)
    assert dx[0, 0, 1, 1] == 4.0


def test_backends_agree():
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("only one backend built")
    rng = np.random.default_rng(23)
    x = rng.standard_normal((3, 2, 21, 40))
    w = rng.standard_normal((8, 2, 3, 3))
    b = rng.standard_normal(8)
    outs, dxs, dws = [], [], []
    for mod in backends.values():
        out = mod.conv2d_forward(x, w, b, (1, 1), (1, 1))
        dy = np.ones_like(out)
        dx, dw = mod.conv2d_backward(x, w, dy, (1, 1), (1, 1))
        outs.append(out)
        dxs.append(dx)
        dws.append(dw)
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dxs[0], dxs[1], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dws[0], dws[1], rtol=1e-10, atol=1e-10)


def test_determinism_repeated_calls(backend):
    rng = np.random.default_rng(29)
    x = rng.standard_normal((2, 3, 10, 12))
    w = rng.standard_normal((5, 3, 3, 3))
    b = rng.standard_normal(5)
    a1 = backend.conv2d_forward(x, w, b, (1, 1), (1, 1))
    a2 = backend.conv2d_forward(x, w, b, (1, 1), (1, 1))
    assert np.array_equal(a1, a2)
