import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sproutlab import autodiff as ad
from sproutlab.errors import DomainError, GraphError, NumericError, ShapeError

from gradcases import composite_cases, primitive_cases

finite = st.floats(-5, 5, allow_nan=False)


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(ad.matmul(np.eye(3), a).data, a)


def test_relu_definition():
    np.testing.assert_array_equal(ad.relu(np.array([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(np.zeros(3)).data, np.full(3, 1 / 3), rtol=0, atol=1e-15)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        ad.add(np.ones(3), np.ones(4))


def test_log_of_nonpositive_raises():
    with pytest.raises(DomainError):
        ad.log(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.log(np.array([-1.0]))


def test_backward_square():
    tape = ad.Tape()
    x = tape.watch(np.array([3.0]))
    g = ad.backward(ad.reduce_sum(x * x), [x])
    np.testing.assert_array_equal(g[x], [6.0])


def test_backward_repeatable_and_keyed_by_id():
    tape = ad.Tape()
    x = tape.watch(np.array([1.0, -2.0]))
    loss = ad.reduce_sum(ad.exp(x))
    g1, g2 = ad.backward(loss, [x]), ad.backward(loss, [x.node_id])
    np.testing.assert_array_equal(g1[x], g2[x.node_id])


def test_constant_subexpression_contributes_zero():
    tape = ad.Tape()
    x = tape.watch(np.array([2.0]))
    const = ad.exp(np.array([5.0]))  # never touched the tape
    assert not const.recorded
    g = ad.backward(ad.reduce_sum(x * const + const), [x])
    np.testing.assert_allclose(g[x], np.exp(5.0))


def test_unreachable_target_gets_zero():
    tape = ad.Tape()
    x, y = tape.watch(np.ones(2)), tape.watch(np.ones(3))
    g = ad.backward(ad.reduce_sum(x), [x, y])
    np.testing.assert_array_equal(g[y], np.zeros(3))


def test_backward_errors():
    tape = ad.Tape()
    x = tape.watch(np.ones(2))
    with pytest.raises(GraphError):
        ad.backward(x * 2.0, [x])  # non-scalar
    with pytest.raises(GraphError):
        ad.backward(ad.reduce_sum(x), [99])
    with pytest.raises(GraphError):
        ad.backward(ad.Tensor(1.0), [x])


def test_mixing_tapes_rejected():
    a, b = ad.Tape().watch(np.ones(2)), ad.Tape().watch(np.ones(2))
    with pytest.raises(GraphError):
        ad.add(a, b)


def test_record_topological_and_replay_bit_exact(rng):
    tape = ad.Tape()
    x = tape.watch(rng.normal(size=(2, 1, 5, 5)))
    w = tape.watch(rng.normal(size=(2, 1, 3, 3)))
    h = ad.relu(ad.conv2d(x, w, pad=1))
    ad.reduce_mean(ad.log_softmax(ad.reshape(h, (2, 50))))
    for node in tape.nodes:
        assert all(i is None or i < node.id for i in node.input_ids)
    for node, value in zip(tape.nodes, tape.replay()):
        assert np.array_equal(node.value, value)


def test_conv_chain_matches_finite_differences(rng):
    y = np.eye(3)[[1]]
    w1 = rng.normal(size=(2, 1, 3, 3))
    wd = rng.normal(size=(32, 3))

    def f(x):
        h = ad.relu(ad.conv2d(x, w1, pad=1))
        z = ad.matmul(ad.reshape(h, (1, 32)), wd)
        return ad.reduce_mean(ad.multiply(ad.log_softmax(z), y))

    assert ad.finite_diff_check(f, rng.normal(size=(1, 1, 4, 4))) < 1e-5


def test_finite_diff_linear_exact(rng):
    assert ad.finite_diff_check(ad.reduce_sum, rng.normal(size=7)) < 1e-10


def test_finite_diff_skips_relu_kink():
    x = np.array([0.0, 1.0, -1.0])
    assert ad.finite_diff_check(lambda t: ad.reduce_sum(ad.relu(t)), x) < 1e-10


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(NumericError):
        ad.finite_diff_check(lambda t: ad.reduce_sum(ad.scalar_multiply(t, np.inf)), np.ones(2))


def test_cnn_model_loss_gradcheck(rng):
    from sproutlab.models import ModelSpec, build_model, forward
    from sproutlab.vicinity import gce_loss

    spec = ModelSpec("cnn", (1, 8, 8), 10, 1, pool=4)
    params = build_model(spec, 0)
    y = np.eye(10)[rng.integers(0, 10, 8)]

    def f(x):
        return gce_loss(forward(spec, params, x), y)

    assert ad.finite_diff_check(f, rng.uniform(0, 1, (8, 1, 8, 8))) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_every_primitive_gradcheck(seed):
    rng = np.random.default_rng(seed)
    for name, f, x in primitive_cases(rng):
        assert ad.finite_diff_check(f, x) < 1e-4, name


def test_composite_gradcheck():
    for name, f, x in composite_cases(np.random.default_rng(0)):
        assert ad.finite_diff_check(f, x) < 1e-4, name


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=finite),
       arrays(np.float64, st.integers(1, 6), elements=finite))
def test_chain_rule_composition(a, b):
    # d/dx sum(exp(x) * c) computed in one pass equals exp(x) * c by hand
    tape = ad.Tape()
    x = tape.watch(a)
    c = np.resize(b, a.shape)
    g = ad.backward(ad.reduce_sum(ad.multiply(ad.exp(x), c)), [x])[x]
    assert np.allclose(g, np.exp(a) * c, rtol=0, atol=1e-12 * max(1.0, np.abs(np.exp(a) * c).max()))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 5)), elements=finite))
def test_softmax_rows_on_simplex(z):
    s = ad.softmax(z).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(ad.log_softmax(z).data), s, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.integers(0, 2),
       st.integers(0, 2**31 - 1))
def test_conv_forward_matches_direct_loop(cin, cout, size, pad, seed):
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(1, cin, size, size)), rng.normal(size=(cout, cin, 3, 3))
    out = ad.conv2d(x, w, pad=pad).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = size + 2 * pad - 2
    ref = np.zeros((1, cout, ho, ho))
    for o in range(cout):
        for i in range(ho):
            for j in range(ho):
                ref[0, o, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)
