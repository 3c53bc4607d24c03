import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clsl import autodiff as ad
from clsl.autodiff import Tensor, gradcheck
from clsl.errors import DataError
from clsl.recovery import (
    aggregate,
    coarse_scores,
    fill_pseudo,
    location_scores,
    max_pool,
    read_pseudo_csv,
    write_pseudo_csv,
)

from oracles import aggregate_loops


def test_location_scores_trivial_cases():
    rng = np.random.default_rng(0)
    E = Tensor(rng.normal(size=(3, 6)))
    assert np.all(location_scores(E, Tensor(np.zeros((6, 2)))).value == 0)
    cls1 = rng.normal(size=(6, 4))
    e = np.zeros((1, 6))
    e[0, 2] = 1.0
    assert np.array_equal(location_scores(Tensor(e), Tensor(cls1)).value[0], cls1[2])


def test_location_scores_gradcheck():
    rng = np.random.default_rng(1)
    E = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    W = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    report = gradcheck(lambda e, w: ad.reduce(ad.tanh(location_scores(e, w)), None, "sum"), [E, W], tol=1e-6)
    assert report.passed, report


def test_aggregate_constant_column_is_fixed_point():
    M = np.array([[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]])
    np.testing.assert_allclose(aggregate(Tensor(M)).value, [1.5, -2.0], rtol=1e-15)


def test_aggregate_dominant_patch():
    y = aggregate(Tensor([[0.0], [10.0]])).value[0]
    assert y == pytest.approx(9.999546021312977, abs=1e-12)


def test_aggregate_single_patch():
    row = np.array([[0.3, -1.0, 7.0]])
    assert np.array_equal(aggregate(Tensor(row)).value, row[0])


def test_aggregate_matches_loops_on_50_instances():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        P, C = rng.integers(1, 8, size=2)
        M = rng.normal(size=(P, C)) * 3
        got = aggregate(Tensor(M)).value
        worst = max(worst, float(np.max(np.abs(got - np.array(aggregate_loops(M.tolist()))))))
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_aggregate_shift_bounds_and_permutation(seed, k):
    rng = np.random.default_rng(seed)
    P, C = rng.integers(1, 7, size=2)
    M = rng.normal(size=(P, C)) * 4
    y = aggregate(Tensor(M)).value
    assert np.all(y >= M.min(axis=0) - 1e-12) and np.all(y <= M.max(axis=0) + 1e-12)
    c = int(rng.integers(C))
    shifted = M.copy()
    shifted[:, c] += k
    ys = aggregate(Tensor(shifted)).value
    assert abs(ys[c] - (y[c] + k)) <= 1e-12 * max(1.0, abs(k))
    perm = rng.permutation(P)
    np.testing.assert_allclose(aggregate(Tensor(M[perm])).value, y, rtol=1e-13, atol=1e-13)


def test_aggregate_gradcheck():
    rng = np.random.default_rng(3)
    M = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    report = gradcheck(lambda m: ad.reduce(ad.sigmoid(aggregate(m)), None, "sum"), [M], tol=1e-6)
    assert report.passed, report


def test_coarse_scores():
    rng = np.random.default_rng(4)
    F, W = rng.normal(size=(1, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(coarse_scores(Tensor(F), Tensor(W)).value, (F @ W)[0], rtol=1e-15)
    F = rng.normal(size=(4, 4))
    best = int(np.argmax((F @ W)[:, 0]))
    dup = np.vstack([F, F[best : best + 1]])
    assert np.array_equal(coarse_scores(Tensor(dup), Tensor(W)).value, coarse_scores(Tensor(F), Tensor(W)).value)


def test_coarse_scores_gradcheck_unique_maxima():
    rng = np.random.default_rng(5)
    F = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    report = gradcheck(lambda f, w: ad.reduce(coarse_scores(f, w), None, "sum"), [F, W], tol=1e-5)
    assert report.passed, report


def test_max_pool_batched():
    M = np.arange(24.0).reshape(2, 4, 3)
    assert np.array_equal(max_pool(Tensor(M)).value, M.max(axis=1))


# --- pseudo-label fill -----------------------------------------------------


def test_fill_direct_substitution():
    out = fill_pseudo(np.array([1, -1, 0]), np.array([0.9, 0.7, 0.4]))
    assert out.tolist() == [1.0, 0.7, 0.0]


def test_fill_all_known_ignores_probabilities():
    y = np.array([[1, 0, 0, 1]])
    for prob in (np.full((1, 4), 0.3), np.full((1, 4), 0.99)):
        assert np.array_equal(fill_pseudo(y, prob), (y + np.abs(y)) / 2)


def test_fill_all_unknown_returns_probabilities():
    prob = np.random.default_rng(6).random((3, 5))
    assert np.array_equal(fill_pseudo(np.full((3, 5), -1), prob), prob)


def test_fill_rejects_out_of_alphabet_with_class_index():
    with pytest.raises(DataError, match="class index 2"):
        fill_pseudo(np.array([1, 0, 2]), np.array([0.5, 0.5, 0.5]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_fill_never_alters_known_entries(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(-1, 2, size=(6, 7))
    prob = rng.uniform(1e-6, 1 - 1e-6, size=y.shape)
    out = fill_pseudo(y, prob)
    known = y != -1
    assert np.array_equal(out[known], y[known].astype(float))
    assert np.array_equal(out[~known], prob[~known])
    assert np.all((out[~known] > 0) & (out[~known] < 1))


def test_pseudo_csv_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    y = rng.integers(-1, 2, size=(3, 4))
    yt = fill_pseudo(y, rng.random((3, 4)))
    path = tmp_path / "pseudo.csv"
    write_pseudo_csv(path, ["a", "b", "c"], y, yt)
    assert path.read_text().splitlines()[0] == "image_id,class,known,ytilde"
    ids, known, back = read_pseudo_csv(path)
    assert ids == ["a", "b", "c"]
    assert np.array_equal(known, (y != -1).astype(np.int8))
    assert np.array_equal(back, yt)
