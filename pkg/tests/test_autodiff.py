import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clsl import autodiff as ad
from clsl.autodiff import Tape, Tensor, gradcheck
from clsl.errors import ConfigError, NumericDomainError, ShapeError

from oracles import central_difference


def leaf(x, name=None):
    return Tensor(x, requires_grad=True, name=name)


def grads_of(f, *inputs):
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        tape.backward(f(*inputs))
    return [t.grad.copy() for t in inputs]


# --- matmul -----------------------------------------------------------------


def test_matmul_identity():
    x = np.arange(6.0).reshape(2, 3)
    out = ad.matmul(Tensor(np.eye(2)), Tensor(x))
    np.testing.assert_array_equal(out.value, x)


def test_matmul_hand_sum():
    out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    assert out.value.tolist() == [[3.0], [7.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_against_differences():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(3, 4)), "a"), leaf(rng.normal(size=(4, 2)), "b")
    report = gradcheck(lambda a, b: ad.reduce(ad.tanh(a @ b), None, "sum"), [a, b], h=1e-5, tol=1e-6)
    assert report.passed, report


def test_matmul_batched_backward_sums_over_batch():
    rng = np.random.default_rng(1)
    a, w = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
    ga, gw = grads_of(lambda a, w: ad.reduce(a @ w, None, "sum"), a, w)
    np.testing.assert_allclose(gw, a.value.sum(axis=(0, 1))[:, None] * np.ones((1, 5)))
    np.testing.assert_allclose(ga, np.broadcast_to(w.value.sum(axis=1), (2, 3, 4)))


# --- elementwise / unary -------------------------------------------------------


def test_unary_values():
    assert ad.tanh(Tensor(0.0)).value == 0.0
    assert ad.sigmoid(Tensor(0.0)).value == 0.5
    x = leaf(0.25)
    with Tape() as tape:
        y = ad.unary(x, "pow", exponent=2)
        tape.backward(y)
    assert y.value == 0.0625
    assert x.grad == 0.5


def test_sigmoid_extremes_are_finite():
    y = ad.sigmoid(Tensor([-800.0, 800.0])).value
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 and y[1] == 1.0


def test_log_domain_error_names_operation():
    with pytest.raises(NumericDomainError, match="log"):
        ad.log(Tensor([1.0, 0.0]))


def test_pow_negative_base_fractional_exponent():
    with pytest.raises(NumericDomainError, match="pow"):
        ad.power(Tensor([-1.0]), 0.5)


def test_unknown_kinds_rejected():
    with pytest.raises(ConfigError):
        ad.elementwise(Tensor(1.0), Tensor(1.0), "div")
    with pytest.raises(ConfigError):
        ad.unary(Tensor(1.0), "relu")


def test_broadcast_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


@pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (1, 4)), ((3, 4), (3, 1)), ((2, 3, 4), (4,))])
def test_broadcast_backward_sums_over_broadcast_axis(shape_a, shape_b):
    rng = np.random.default_rng(2)
    a, b = leaf(rng.normal(size=shape_a)), leaf(rng.normal(size=shape_b))
    ga, gb = grads_of(lambda a, b: ad.reduce(a * b, None, "sum"), a, b)
    # unbroadcast gradient is a.value, summed down to b's shape
    expect = np.broadcast_to(a.value, np.broadcast_shapes(shape_a, shape_b))
    while expect.ndim > len(shape_b):
        expect = expect.sum(axis=0)
    for ax, n in enumerate(shape_b):
        if n == 1:
            expect = expect.sum(axis=ax, keepdims=True)
    np.testing.assert_allclose(gb, expect, rtol=1e-13)
    np.testing.assert_allclose(ga, np.broadcast_to(b.value, shape_a), rtol=1e-13)


# --- softmax ----------------------------------------------------------------


@pytest.mark.parametrize("t", [0.1, 1.0, 7.0])
def test_softmax_uniform_on_equal_logits(t):
    y = ad.softmax(Tensor(np.full((2, 5), 3.0)), axis=-1, temperature=t).value
    np.testing.assert_allclose(y, 0.2, rtol=0, atol=1e-15)


def test_softmax_ratio():
    y = ad.softmax(Tensor([0.0, math.log(3.0)]), axis=0).value
    np.testing.assert_allclose(y, [0.25, 0.75], rtol=1e-14)


def test_softmax_rejects_bad_temperature():
    with pytest.raises(ConfigError):
        ad.softmax(Tensor([1.0, 2.0]), temperature=0.0)


def test_softmax_gradient():
    rng = np.random.default_rng(3)
    x = leaf(rng.normal(size=(5, 7)))
    weights = Tensor(rng.normal(size=(5, 7)))
    report = gradcheck(lambda x: ad.reduce(ad.softmax(x, axis=1, temperature=0.7) * weights, None, "sum"), [x], tol=1e-5)
    assert report.passed, report


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=9), st.floats(0.05, 20))
def test_softmax_slices_sum_to_one(logits, t):
    y = ad.softmax(Tensor(logits), axis=0, temperature=t).value
    assert abs(y.sum() - 1.0) <= 1e-12
    assert np.all((y >= 0) & (y <= 1))


def test_softmax_entries_strictly_inside_unit_interval():
    rng = np.random.default_rng(4)
    y = ad.softmax(Tensor(rng.normal(size=(50, 6)) * 3), axis=1).value
    assert np.all((y > 0) & (y < 1))
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12, rtol=0)


# --- reductions -------------------------------------------------------------


def test_mean_of_constant_rows():
    v = np.array([1.0, -2.0, 3.5])
    out = ad.reduce(Tensor(np.tile(v, (4, 1))), 0, "mean")
    np.testing.assert_array_equal(out.value, v)


def test_max_routes_gradient():
    x = leaf([1.0, 4.0, 2.0])
    with Tape() as tape:
        y = ad.reduce(x, 0, "max")
        tape.backward(y)
    assert y.value == 4.0
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_max_tie_goes_to_first_in_row_major_order():
    x = leaf([[2.0, 5.0, 5.0], [5.0, 1.0, 0.0]])
    with Tape() as tape:
        tape.backward(ad.reduce(x, None, "max"))
    assert x.grad.tolist() == [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]
    x.zero_grad()
    with Tape() as tape:
        tape.backward(ad.reduce(ad.reduce(x, 0, "max"), None, "sum"))
    assert x.grad.tolist() == [[0.0, 1.0, 1.0], [1.0, 0.0, 0.0]]


def test_sum_gradient_is_all_ones():
    x = leaf(np.arange(12.0).reshape(3, 4))
    with Tape() as tape:
        tape.backward(ad.reduce(x, None, "sum"))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_reduce_axis_validation():
    with pytest.raises(ShapeError):
        ad.reduce(Tensor(np.ones((2, 2))), 2, "sum")


# --- concat / split ---------------------------------------------------------


@pytest.mark.parametrize(
    "sa,sb,axis", [((2, 3), (2, 4), 1), ((1, 5), (3, 5), 0), ((2, 2, 3), (2, 2, 1), -1)]
)
def test_concat_split_round_trip(sa, sb, axis):
    rng = np.random.default_rng(5)
    a, b = Tensor(rng.normal(size=sa)), Tensor(rng.normal(size=sb))
    joined = ad.concat(a, b, axis)
    ra, rb = ad.split(joined, [sa[axis], sb[axis]], axis)
    np.testing.assert_array_equal(ra.value, a.value)
    np.testing.assert_array_equal(rb.value, b.value)


def test_concat_backward_splits_gradient():
    a, b = leaf(np.ones((2, 2))), leaf(np.ones((2, 3)))
    w = Tensor(np.arange(10.0).reshape(2, 5))
    ga, gb = grads_of(lambda a, b: ad.reduce(ad.concat(a, b, 1) * w, None, "sum"), a, b)
    np.testing.assert_array_equal(ga, w.value[:, :2])
    np.testing.assert_array_equal(gb, w.value[:, 2:])


def test_concat_mismatch():
    with pytest.raises(ShapeError):
        ad.concat(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), axis=1)


# --- tensors and tapes ------------------------------------------------------


def test_extents_must_be_positive():
    with pytest.raises(ShapeError):
        Tensor(np.ones((0, 3)))


def test_rank_limit():
    with pytest.raises(ShapeError):
        Tensor(np.ones((1,) * (ad.MAX_RANK + 1)))


def test_grad_matches_value_shape_and_zeroes_on_reset():
    x = leaf(np.ones((2, 3)))
    with Tape() as tape:
        y = ad.reduce(ad.tanh(x) * x, None, "sum")
        tape.backward(y)
        assert x.grad.shape == x.shape
        assert np.any(x.grad != 0)
        tape.reset()
    assert np.all(x.grad == 0)
    assert np.all(y.grad == 0)
    assert tape.records == []


def test_tape_order_is_topological():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = ad.tanh(x)
        z = ad.reduce(y * x, None, "sum")
    ids = {}
    for rec in tape.records:
        for inp in rec.inputs:
            if inp.tape_id is not None:
                assert inp.tape_id < rec.output.tape_id
        ids[rec.output.tape_id] = rec
    assert len(ids) == len(tape.records)
    assert x.tape_id is None and z.tape_id is not None


def test_no_recording_outside_tape():
    x = leaf([1.0])
    y = ad.tanh(x)
    assert y.tape_id is None


def test_backward_is_deterministic():
    rng = np.random.default_rng(6)
    x, w = leaf(rng.normal(size=(4, 3))), leaf(rng.normal(size=(3, 5)))
    with Tape() as tape:
        loss = ad.reduce(ad.softmax(ad.tanh(x @ w), axis=1) * (x @ w), None, "sum")
        tape.backward(loss)
        first = (x.grad.copy(), w.grad.copy())
        tape.zero_grad()
        tape.backward(loss)
    assert np.array_equal(first[0], x.grad) and np.array_equal(first[1], w.grad)


def test_detach_blocks_gradient():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = ad.reduce(ad.detach(x * x) * x, None, "sum")
        tape.backward(y)
    assert x.grad.tolist() == [1.0, 4.0]


# --- gradcheck --------------------------------------------------------------


def test_gradcheck_polynomial():
    x = leaf([1.0, 2.0], "x")
    report = gradcheck(lambda x: ad.reduce(x * x, None, "sum"), [x], tol=1e-8)
    assert report.passed, report
    assert x.grad.tolist() == [2.0, 4.0]


def test_gradcheck_softmax_log_composite():
    rng = np.random.default_rng(7)
    x = leaf(rng.normal(size=(3, 4)), "x")
    target = Tensor(np.eye(3, 4))
    report = gradcheck(
        lambda x: ad.neg(ad.reduce(ad.log(ad.softmax(x, axis=1)) * target, None, "sum")), [x], tol=1e-5
    )
    assert report.passed, report


def test_gradcheck_rejects_bad_step():
    with pytest.raises(ConfigError):
        gradcheck(lambda x: x, [leaf([1.0])], h=1e-2)


def test_gradcheck_flags_nonfinite_input():
    from clsl.errors import NumericError

    with pytest.raises(NumericError, match="bad"):
        gradcheck(lambda x: ad.reduce(x, None, "sum"), [leaf([np.nan], "bad")])


def test_gradcheck_detects_a_wrong_rule():
    def broken(x):
        # a custom op whose backward is off by a factor of two
        return ad.custom_op("bad", (x,), x.value * 3.0, lambda g: (g * 6.0,))

    report = gradcheck(lambda x: ad.reduce(broken(x), None, "sum"), [leaf([1.0, 2.0])])
    assert not report.passed


# --- every primitive at 100 random points -----------------------------------

PRIMITIVES = {
    "matmul": ([(3, 4), (4, 2)], lambda a, b: a @ b),
    "add": ([(3, 4), (1, 4)], lambda a, b: a + b),
    "mul": ([(3, 4), (3, 1)], lambda a, b: a * b),
    "tanh": ([(3, 4)], ad.tanh),
    "sigmoid": ([(3, 4)], ad.sigmoid),
    "exp": ([(3, 4)], ad.exp),
    "log": ([(3, 4)], lambda a: ad.log(ad.exp(a))),
    "neg": ([(3, 4)], ad.neg),
    "pow": ([(3, 4)], lambda a: ad.power(ad.exp(a), 2.5)),
    "softmax": ([(3, 4)], lambda a: ad.softmax(a, axis=0, temperature=1.3)),
    "mean": ([(3, 4)], lambda a: ad.reduce(a, 1, "mean")),
    "max": ([(3, 4)], lambda a: ad.reduce(a, 0, "max")),
    "sum": ([(3, 4)], lambda a: ad.reduce(a, 0, "sum")),
    "concat": ([(3, 4), (3, 2)], lambda a, b: ad.concat(a, b, 1)),
    "slice": ([(3, 4)], lambda a: ad.slice_axis(a, 1, 3, 1)),
    "reshape": ([(3, 4)], lambda a: ad.reshape(a, (2, 6))),
    "swapaxes": ([(3, 4)], lambda a: ad.swapaxes(a)),
    "broadcast": ([(1, 4)], lambda a: ad.broadcast_to(a, (3, 4))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_finite_differences_at_100_points(name):
    shapes, op = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        inputs = [leaf(rng.uniform(-1.5, 1.5, size=s)) for s in shapes]
        probe = Tensor(rng.normal(size=op(*inputs).shape))

        def f(*xs):
            return ad.reduce(op(*xs) * probe, None, "sum")

        report = gradcheck(f, inputs, h=1e-5, tol=1e-5)
        worst = max(worst, report.max_rel_err)
    assert worst < 1e-5, f"{name}: {worst:.2e}"


def test_oracle_central_difference_agrees_with_tape():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=(2, 3))

    def f(arr):
        return float(ad.reduce(ad.tanh(Tensor(arr)) * Tensor(arr), None, "sum").value)

    x = leaf(x0.copy())
    with Tape() as tape:
        tape.backward(ad.reduce(ad.tanh(x) * x, None, "sum"))
    np.testing.assert_allclose(x.grad, central_difference(f, x0.copy()), rtol=1e-7)


def test_custom_op_with_misshaped_gradient_is_rejected():
    from clsl.errors import ShapeError

    x = leaf([1.0, 2.0, 3.0])
    with pytest.raises(ShapeError, match="bad"):
        with Tape() as tape:
            y = ad.custom_op("bad", (x,), x.value * 2.0, lambda g: (np.ones(4),))
            tape.backward(ad.reduce(y, None, "sum"))
