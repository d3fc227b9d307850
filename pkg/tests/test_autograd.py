import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nsfkit import autograd as ag
from nsfkit.autograd import OpKind
from nsfkit.gradcheck import OP_CASES, check_op
from nsfkit.nn import DilatedConv, Linear, Module


def test_tanh_of_zero():
    assert ag.tanh(ag.constant([0.0])).value.tolist() == [0.0]


def test_exp_of_zero():
    assert ag.exp(ag.constant([0.0])).value.tolist() == [1.0]


def test_zero_weight_conv_outputs_bias():
    rng = np.random.default_rng(0)
    x = ag.constant(rng.normal(size=(30, 4)))
    w = ag.parameter(np.zeros((3, 4, 2)))
    b = ag.parameter(np.full(2, 0.5))
    out = ag.conv1d(x, w, b, dilation=2)
    np.testing.assert_array_equal(out.value, np.full((30, 2), 0.5, dtype=np.float32))


def test_linear_backward():
    x = ag.variable([3.0])
    y = ag.mul(x, 2.0)
    ag.backward(y)
    assert x.grad.tolist() == [2.0]


def test_tanh_backward_at_zero():
    x = ag.variable([0.0])
    ag.backward(ag.tanh(x))
    assert x.grad.tolist() == [1.0]


def test_shape_mismatch_names_op():
    with pytest.raises(ValueError, match="matmul.*\\(3, 2\\).*\\(3, 2\\)"):
        ag.matmul(ag.constant(np.ones((3, 2))), ag.constant(np.ones((3, 2))))
    with pytest.raises(ValueError, match="dilated-causal-conv1d"):
        ag.conv1d(ag.constant(np.ones((5, 2))), ag.constant(np.ones((3, 4, 1))))


def test_backward_before_forward_fails():
    w = ag.parameter(np.ones((2, 1)))
    graph = ag.Graph(lambda x: ag.sum_all(ag.matmul(ag.constant(x), w)), [w])
    with pytest.raises(ag.GraphError):
        graph.backward()
    graph.forward(x=np.ones((4, 2)))
    grads = graph.backward()
    np.testing.assert_allclose(list(grads.values())[0], [[4.0], [4.0]])


def test_backward_without_trainable_ancestry_fails():
    with pytest.raises(ag.GraphError):
        ag.backward(ag.tanh(ag.constant([1.0])))


def test_exp_overflow_is_reported():
    with ag.double_precision():
        with pytest.raises(FloatingPointError, match="exp"):
            ag.exp(ag.constant([1000.0]))


@pytest.mark.parametrize("kind", list(OP_CASES))
def test_every_op_matches_finite_differences(kind):
    res = check_op(kind, instances=100, seed=7)
    assert res.ok, res.line()


def test_every_opkind_is_covered():
    covered = set(OP_CASES.values()) | {OpKind.LEAF}
    assert covered == set(OpKind)


def test_grad_check_tanh_scalar():
    with ag.double_precision():
        x = ag.variable([0.3])
        err = ag.grad_check(lambda: ag.sum_all(ag.tanh(x)), [x])
    assert err <= 1e-7


def test_grad_check_two_layer_conv_stack():
    rng = np.random.default_rng(3)
    with ag.double_precision():
        c1 = DilatedConv(2, 4, 3, 1, rng)
        c2 = DilatedConv(4, 1, 3, 2, rng)
        x = ag.constant(rng.normal(size=(64, 2)))
        proj = rng.normal(size=(64, 1))
        params = [p for m in (c1, c2) for p in m.parameters()]
        for p in params:
            p.value = rng.normal(size=p.shape) * 0.5
        err = ag.grad_check(lambda: ag.sum_all(ag.mul(c2(ag.tanh(c1(x))), proj)), params)
    assert err <= 1e-5


def test_grad_check_requires_double():
    x = ag.variable([1.0])
    with pytest.raises(TypeError):
        ag.grad_check(lambda: ag.sum_all(x), [x])


def test_grad_check_names_non_finite_op():
    with ag.double_precision():
        x = ag.variable([1.0, 2.0])
        big = ag.constant([1e308, 1e308])
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="multiply"):
            ag.grad_check(lambda: ag.sum_all(ag.mul(ag.mul(x, big), 10.0)), [x])


def _composite(rng):
    w1 = ag.parameter(rng.normal(size=(3, 4)))
    w2 = ag.parameter(rng.normal(size=(4, 1)))
    x = ag.constant(rng.normal(size=(6, 3)))

    def build():
        h = ag.tanh(ag.matmul(x, w1))
        a = ag.matmul(h, w2)
        b = ag.matmul(ag.sigmoid(h), w2)
        return ag.sum_all(ag.add(ag.mul(a, b), ag.tanh(a)))
    return build, [w1, w2]


def test_backward_order_independent():
    rng = np.random.default_rng(5)
    with ag.double_precision():
        build, params = _composite(rng)
        root = build()
        order = ag.topological_order(root)
        ag.backward(root, order=order)
        first = [p.grad.copy() for p in params]

        # a different valid order: stable sort by depth from the leaves
        depth = {}
        for node in order:
            depth[node.uid] = 1 + max((depth.get(p.uid, 0) for p in node.parents), default=0)
        alt = sorted(reversed(order), key=lambda n: depth[n.uid])
        assert [n.uid for n in alt] != [n.uid for n in order]
        for p in params:
            p.zero_grad()
        ag.backward(root, order=alt)
        for g, p in zip(first, params):
            np.testing.assert_array_equal(g, p.grad)


def test_zero_seed_gives_zero_gradients():
    rng = np.random.default_rng(6)
    with ag.double_precision():
        build, params = _composite(rng)
        root = build()
        ag.backward(root, seed=np.zeros(()))
    for p in params:
        assert not np.any(p.grad)


def test_gradients_accumulate_until_zeroed():
    w = ag.parameter([2.0])
    ag.backward(ag.mul(w, 3.0))
    ag.backward(ag.mul(w, 3.0))
    assert w.grad.tolist() == [6.0]
    w.zero_grad()
    assert w.grad.tolist() == [0.0]


def test_no_grad_builds_no_graph():
    w = ag.parameter(np.ones((2, 2)))
    with ag.no_grad():
        y = ag.tanh(ag.matmul(ag.constant(np.ones((3, 2))), w))
    assert y.parents == () and not y.requires_grad


def test_checkpoint_matches_plain_graph():
    rng = np.random.default_rng(8)
    with ag.double_precision():
        lin = Linear(3, 3, rng)
        x = ag.variable(rng.normal(size=(5, 3)))
        fn = lambda t: ag.tanh(lin(ag.tanh(lin(t))))  # noqa: E731
        ag.backward(ag.sum_all(fn(x)))
        plain = [p.grad.copy() for p in lin.parameters()] + [x.grad.copy()]
        lin.zero_grad()
        ag.backward(ag.sum_all(ag.checkpoint(fn, [x], lin.parameters())))
        ckpt = [p.grad.copy() for p in lin.parameters()] + [x.grad.copy()]
    for a, b in zip(plain, ckpt):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_double_precision_flag_is_scoped():
    assert ag.get_dtype() == np.float32
    with ag.double_precision():
        assert ag.constant([1.0]).value.dtype == np.float64
    assert ag.constant([1.0]).value.dtype == np.float32


def test_module_registry_and_state_roundtrip():
    rng = np.random.default_rng(0)

    class Two(Module):
        def __init__(self):
            super().__init__()
            self.a = self.add_module("a", Linear(1, 64, rng))
            self.b = self.add_module("b", Linear(64, 1, rng, bias=False))

    m = Two()
    assert [n for n, _ in m.named_parameters()] == ["a.weight", "a.bias", "b.weight"]
    assert sum(p.value.size for p in m.a.parameters()) == 128
    state = m.state_dict()
    m.fill_zero()
    m.load_state_dict(state)
    np.testing.assert_array_equal(m.a.weight.value, state["a.weight"])
    with pytest.raises(KeyError):
        m.load_state_dict({"a.weight": state["a.weight"]})


def test_uniform_init_bound_and_zero_bias():
    rng = np.random.default_rng(0)
    lin = Linear(16, 8, rng)
    assert np.all(np.abs(lin.weight.value) <= np.sqrt(1 / 16))
    assert not np.any(lin.bias.value)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(-3, 3)))
def test_add_broadcast_gradient_sums(x):
    with ag.double_precision():
        a = ag.variable(x)
        b = ag.variable(np.zeros(x.shape[1]))
        ag.backward(ag.sum_all(ag.add(a, b)))
        np.testing.assert_array_equal(b.grad, np.full(x.shape[1], x.shape[0], dtype=float))
        np.testing.assert_array_equal(a.grad, np.ones_like(x))


@given(st.integers(2, 40), st.integers(1, 6), st.booleans())
def test_conv_causality(T, dilation, causal):
    rng = np.random.default_rng(T * 7 + dilation)
    x = rng.normal(size=(T, 2))
    w = ag.constant(rng.normal(size=(3, 2, 2)))
    base = ag.conv1d(ag.constant(x), w, None, dilation, causal).value
    t0 = T // 2
    x2 = x.copy()
    x2[t0] += 1.0
    pert = ag.conv1d(ag.constant(x2), w, None, dilation, causal).value
    reach = 0 if causal else dilation
    np.testing.assert_array_equal(base[:max(t0 - reach, 0)], pert[:max(t0 - reach, 0)])
