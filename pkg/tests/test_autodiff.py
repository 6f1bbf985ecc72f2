import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survseq import autodiff as ad
from survseq.autodiff import AttentionMemory, ShapeError, Tape, Tensor, forward_backward
from survseq.gradcheck import grad_check


def _params(rng, **shapes):
    return {k: Tensor(rng.normal(size=s)) for k, s in shapes.items()}


UNARY = {
    "exp": ad.exp,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "square": ad.square,
    "log": lambda a: ad.log(ad.square(a) + 1.0),
    "relu": lambda a: ad.relu(a + 0.05),  # keep entries off the kink
    "softmax": lambda a: ad.softmax(a, axis=-1),
    "cumsum": lambda a: ad.cumsum(a, axis=-1),
    "cumsum_rev": lambda a: ad.cumsum(a, axis=0, reverse=True),
    "transpose": lambda a: ad.transpose(a, (1, 0)),
    "reshape": lambda a: ad.reshape(a, (4, 3)),
    "getitem_basic": lambda a: a[1:, ::2],
    "getitem_fancy": lambda a: a[np.array([0, 2, 2]), np.array([1, 0, 1])],
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(0)
    p = _params(rng, a=(3, 4))
    w = rng.normal(size=UNARY[name](p["a"]).shape)
    report = grad_check(lambda: ad.sum(UNARY[name](p["a"]) * w), p)
    assert report.passed, report.summary()


@pytest.mark.parametrize(
    "op,sa,sb",
    [
        (ad.add, (3, 4), (4,)),
        (ad.sub, (2, 1, 4), (3, 1)),
        (ad.mul, (3, 4), (3, 1)),
        (ad.div, (3, 4), (1, 4)),
        (ad.matmul, (3, 4), (4, 2)),
        (ad.matmul, (2, 3, 4), (4, 5)),
        (ad.matmul, (2, 1, 3, 4), (1, 5, 4, 2)),
    ],
)
def test_binary_gradients_with_broadcasting(op, sa, sb):
    rng = np.random.default_rng(1)
    p = _params(rng, a=sa, b=sb)
    if op is ad.div:
        p["b"].data = np.abs(p["b"].data) + 1.0
    w = rng.normal(size=op(p["a"], p["b"]).shape)
    report = grad_check(lambda: ad.sum(op(p["a"], p["b"]) * w), p)
    assert report.passed, report.summary()


def test_concat_stack_gradients():
    rng = np.random.default_rng(2)
    p = _params(rng, a=(2, 3), b=(2, 2), c=(2, 3))
    w1 = rng.normal(size=(2, 5))
    w2 = rng.normal(size=(2, 2, 3))
    fn = lambda: ad.sum(ad.concat([p["a"], p["b"]], axis=1) * w1) + ad.sum(ad.stack([p["a"], p["c"]], axis=1) * w2)
    assert grad_check(fn, p).passed


def test_reused_node_accumulates():
    x = Tensor(np.array([1.5, -2.0]))
    out, g = forward_backward(lambda: ad.sum(x * x * x), {"x": x})
    np.testing.assert_allclose(g["x"], 3 * x.data**2)


def test_unused_parameter_gets_zero_gradient():
    x, y = Tensor(np.ones(3)), Tensor(np.ones(2))
    _, g = forward_backward(lambda: ad.sum(x), {"x": x, "y": y})
    np.testing.assert_array_equal(g["y"], np.zeros(2))


def test_nothing_recorded_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.exp(x)
    assert y._backward is None
    with Tape() as tape:
        ad.exp(x)
        ad.exp(Tensor(np.ones(3)))  # no grad-requiring parent: not recorded
    assert len(tape) == 1


def test_scalar_seed_required():
    x = Tensor(np.ones(3))
    with Tape() as tape:
        y = x * 2.0
        with pytest.raises(ValueError):
            tape.backward(y)


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_float32_is_preserved_through_scalars():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    y = ad.log(x + 1e-12) * 0.5 - 1.0
    assert y.dtype == np.float32
    assert (2.0 * x).dtype == np.float32


def test_ndarray_left_operand_defers_to_tensor():
    x = Tensor(np.ones(3))
    y = np.arange(3.0) * x
    assert isinstance(y, Tensor)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    a = np.random.default_rng(seed).normal(scale=50, size=(rows, cols))
    s = ad.softmax(Tensor(a), axis=-1).data
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.booleans(), st.integers(0, 10_000))
def test_cumsum_matches_numpy(n, reverse, seed):
    a = np.random.default_rng(seed).normal(size=(2, n))
    got = ad.cumsum(Tensor(a), axis=-1, reverse=reverse).data
    want = np.cumsum(a[:, ::-1], axis=-1)[:, ::-1] if reverse else np.cumsum(a, axis=-1)
    np.testing.assert_allclose(got, want)


def test_attention_memory_matches_unfused_reference():
    rng = np.random.default_rng(3)
    B, S, H, K = 3, 4, 5, 2
    p = _params(rng, H=(B, S, H), q=(K, B, H))
    mask = np.zeros((B, S))
    mask[0, 3] = -1e9
    w = rng.normal(size=(K, B, H))

    def fused():
        ctx, _ = AttentionMemory(p["H"], mask).attend(p["q"])
        return ad.sum(ctx * w)

    def unfused():
        H4 = ad.reshape(p["H"], (1, B, S, H))
        scores = ad.reshape(ad.matmul(H4, ad.reshape(p["q"], (K, B, H, 1))), (K, B, S)) + mask
        wts = ad.softmax(scores, axis=-1)
        ctx = ad.reshape(ad.matmul(ad.reshape(wts, (K, B, 1, S)), H4), (K, B, H))
        return ad.sum(ctx * w)

    out_f, g_f = forward_backward(fused, p)
    out_u, g_u = forward_backward(unfused, p)
    np.testing.assert_allclose(out_f.data, out_u.data, rtol=1e-12)
    for k in p:
        np.testing.assert_allclose(g_f[k], g_u[k], rtol=1e-10, atol=1e-12)


def test_attention_memory_gradcheck_multiple_queries():
    rng = np.random.default_rng(4)
    p = _params(rng, H=(2, 3, 4), q1=(1, 2, 4), q2=(1, 2, 4))

    def fn():
        mem = AttentionMemory(p["H"])
        c1, _ = mem.attend(p["q1"])
        c2, _ = mem.attend(c1 * p["q2"])
        return ad.sum(ad.square(c2)) + ad.sum(c1)

    assert grad_check(fn, p).passed


def test_masked_steps_get_zero_weight():
    H = Tensor(np.random.default_rng(5).normal(size=(1, 3, 2)))
    mask = np.array([[0.0, 0.0, -1e9]])
    _, w = AttentionMemory(H, mask).attend(Tensor(np.ones((1, 1, 2))))
    assert w[0, 0, 2] == 0.0
    np.testing.assert_allclose(w.sum(), 1.0)
