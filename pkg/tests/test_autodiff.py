import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sfcad import autodiff as ad
from sfcad.errors import ContractError, DimensionError

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(np.eye(2), a).data, a)
    np.testing.assert_array_equal(ad.matmul(a, np.array([[5.0], [6.0]])).data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_examples():
    assert ad.sigmoid(0.0).item() == 0.5
    assert ad.tanh(0.0).item() == 0.0
    out = ad.elementwise("concat", np.ones((1, 2)), np.zeros((1, 3)), axis=-1)
    assert out.shape == (1, 5)


def test_broadcast_only_exact_or_scalar():
    assert ad.add(np.ones((2, 3)), 1.0).shape == (2, 3)
    with pytest.raises(DimensionError):
        ad.add(np.ones((2, 3)), np.ones(3))


def test_sigmoid_stable_at_extremes():
    y = ad.sigmoid(np.array([-800.0, 800.0])).data
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 and y[1] == 1.0


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ad.softmax(np.array([1000.0, 1000.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ad.softmax(np.array([0.0, math.log(3)])).data, [0.25, 0.75], rtol=1e-15)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite),
       st.floats(-1e3, 1e3, allow_nan=False))
def test_softmax_normalized_and_shift_invariant(x, c):
    s = ad.softmax(x, axis=-1).data
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12, rtol=0)
    np.testing.assert_allclose(ad.softmax(x + c, axis=-1).data, s, atol=1e-12, rtol=0)


def test_backward_examples():
    with ad.GradientTape() as tape:
        x = tape.watch(np.array(3.0), "x")
        loss = ad.mul(x, x)
    assert ad.backward(tape, loss)["x"] == pytest.approx(6.0)

    with ad.GradientTape() as tape:
        w = tape.watch(np.array(0.0), "w")
        loss = ad.sigmoid(ad.mul(w, 1.0))
    assert ad.backward(tape, loss)["w"] == pytest.approx(0.25)


def test_backward_rejects_non_scalar_loss():
    with ad.GradientTape() as tape:
        x = tape.watch(np.ones(3), "x")
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        ad.backward(tape, y)


def test_unused_parameter_gets_zero_gradient():
    with ad.GradientTape() as tape:
        p = tape.watch_all({"a": np.ones((2, 2)), "b": np.ones(3)})
        loss = ad.sum(ad.mul(p["a"], p["a"]))
    g = ad.backward(tape, loss)
    np.testing.assert_array_equal(g["b"], np.zeros(3))
    assert g["a"].shape == (2, 2)


def test_tape_replays_in_reverse_order():
    with ad.GradientTape() as tape:
        x = tape.watch(np.array([1.0, 2.0]), "x")
        y = ad.tanh(ad.mul(ad.exp(x), x))
        loss = ad.sum(y)
    ad.backward(tape, loss)
    assert tape.last_replay == sorted(tape.last_replay, reverse=True)
    assert tape.op_names[-1] == "sum"


def test_grad_check_quadratic_bowl():
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(3, 4))}
    A = rng.normal(size=(3, 4))

    def f(p):
        d = ad.sub(p["w"], A)
        return ad.sum(ad.mul(d, d))

    assert ad.grad_check(f, params) < 1e-7


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "exp", "softmax", "layer"])
def test_grad_check_primitives(op):
    rng = np.random.default_rng(1)
    params = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 2))}

    def f(p):
        if op == "softmax":
            y = ad.softmax(p["x"], axis=-1)
        elif op == "layer":
            y = ad.matmul(ad.tanh(p["x"]), p["w"])
            y = ad.max(y, axis=0)
        else:
            y = getattr(ad, op)(p["x"])
        return ad.sum(ad.mul(y, y))

    assert ad.grad_check(f, params) < 1e-6


def test_operations_are_deterministic():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    r1 = ad.softmax(ad.matmul(a, b)).data
    r2 = ad.softmax(ad.matmul(a, b)).data
    assert r1.tobytes() == r2.tobytes()
