import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpcausal import kernels
from gpcausal.errors import ConfigError, ContractViolation, InputError, InsufficientDataError
from gpcausal.kernels import (
    Gaussian,
    Linear,
    Periodic,
    Polynomial,
    Sum,
    bandwidth_grid,
    cross_gram,
    evaluate,
    format_kernel,
    gram,
    parse_kernel,
    select_bandwidth,
)

KERNELS = [
    Gaussian(1.0),
    Gaussian(0.3),
    Linear(),
    Periodic(1.5, 0.8),
    Polynomial(2, 1.0),
    Polynomial(3, 0.5),
    Sum.equal(Gaussian(1.0), Linear()),
    Sum(((0.2, Linear()), (0.5, Periodic(2.0)), (0.3, Gaussian(2.0)))),
]


def loop_gram(k, A, B):
    return np.array([[evaluate(k, a, b) for b in B] for a in A])


# -- eval ------------------------------------------------------------------------

def test_gaussian_zero_distance():
    assert evaluate(Gaussian(0.5), [0.3], [0.3]) == 1.0


def test_gaussian_small_bandwidth_example():
    v = evaluate(Gaussian(0.005), [0.50], [0.52])
    assert v == pytest.approx(math.exp(-0.0004 / 0.005), rel=1e-12)
    assert v == pytest.approx(0.9231, abs=1e-4)


def test_weighted_sum_hand_value():
    k = Sum(((0.5, Gaussian(1.0)), (0.5, Linear())))
    assert evaluate(k, [1.0], [1.0]) == pytest.approx(1.0, abs=1e-15)


def test_closed_forms():
    x, x2 = np.array([0.4, -1.0]), np.array([1.2, 0.5])
    r = np.linalg.norm(x - x2)
    assert evaluate(Linear(), x, x2) == pytest.approx(x @ x2)
    assert evaluate(Periodic(1.7, 0.6), x, x2) == pytest.approx(
        math.exp(-2 * math.sin(math.pi * r / 1.7) ** 2 / 0.36))
    assert evaluate(Polynomial(3, 0.5), x, x2) == pytest.approx((x @ x2 + 0.5) ** 3)


def test_eval_dimension_mismatch():
    with pytest.raises(ContractViolation):
        evaluate(Gaussian(1.0), [1.0, 2.0], [1.0])


def test_eval_non_finite():
    with pytest.raises(InputError):
        evaluate(Linear(), [np.nan], [1.0])


def test_unresolved_bandwidth_cannot_evaluate():
    with pytest.raises((ConfigError, ContractViolation, InputError)):
        gram(Gaussian(None), np.zeros((3, 1)))


# -- gram ------------------------------------------------------------------------

def test_gram_single_point():
    np.testing.assert_array_equal(gram(Gaussian(1.0), [[0.7]]), [[1.0]])


def test_gram_far_points_decouple():
    K = gram(Gaussian(1.0), [[0.0], [1e6]])
    assert K[0, 1] == 0.0 and K[0, 0] == 1.0


@pytest.mark.parametrize("k", KERNELS, ids=format_kernel)
def test_gram_matches_entrywise_loop(k):
    X = np.random.default_rng(3).normal(size=(5, 1))
    np.testing.assert_allclose(gram(k, X), loop_gram(k, X, X), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("k", KERNELS, ids=format_kernel)
def test_cross_gram_matches_entrywise_loop(k):
    rng = np.random.default_rng(4)
    A, B = rng.normal(size=(3, 1)), rng.normal(size=(4, 1))
    np.testing.assert_allclose(cross_gram(k, A, B), loop_gram(k, A, B), rtol=1e-12, atol=1e-14)


def test_cross_gram_self_consistency():
    X = np.random.default_rng(5).normal(size=(6, 2))
    k = Gaussian(2.0)
    np.testing.assert_allclose(cross_gram(k, X, X), gram(k, X), atol=1e-15)
    np.testing.assert_allclose(cross_gram(k, X[2:3], X)[0], gram(k, X)[2], atol=1e-15)


def test_gram_rejects_non_finite():
    with pytest.raises(InputError):
        gram(Linear(), [[1.0], [np.inf]])


def test_sum_is_weighted_sum_of_components():
    X = np.random.default_rng(6).normal(size=(8, 1))
    k = Sum(((0.2, Linear()), (0.5, Periodic(2.0)), (0.3, Gaussian(2.0))))
    expect = sum(w * gram(c, X) for w, c in k.components)
    np.testing.assert_allclose(gram(k, X), expect, atol=1e-12)


def test_sum_validation():
    with pytest.raises(ConfigError):
        Sum(())
    with pytest.raises(ConfigError):
        Sum.equal(Linear(), Gaussian(1.0), Periodic(1.0), Polynomial())
    with pytest.raises(ConfigError):
        Sum(((0.5, Linear()), (0.5, Linear())))
    with pytest.raises(ConfigError):
        Sum(((-0.1, Linear()), (1.1, Gaussian(1.0))))


# -- bandwidth ---------------------------------------------------------------------

def _offdiag_var_oracle(X, b):
    K = np.exp(-np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1) / b)
    return np.var(K[~np.eye(len(X), dtype=bool)], ddof=1)


def test_bandwidth_grid_shape():
    g = bandwidth_grid(3)
    assert g[0] == 3 * 2.0**-6 and g[-1] == 3 * 2.0**6 and g.size == 13


def test_identical_rows_tie_to_smallest():
    assert select_bandwidth(np.zeros((6, 2))) == 2 * 2.0**-6


def test_two_clusters_match_grid_scan():
    rng = np.random.default_rng(7)
    X = np.concatenate([rng.normal(-2, 0.1, 20), rng.normal(2, 0.1, 20)])[:, None]
    X = (X - X.mean()) / X.std(ddof=1)
    scores = [_offdiag_var_oracle(X, b) for b in bandwidth_grid(1)]
    assert select_bandwidth(X) == bandwidth_grid(1)[int(np.argmax(scores))]


def test_selected_bandwidth_within_factor_64_of_dimension():
    X = np.random.default_rng(8).normal(size=(40, 3))
    b = select_bandwidth(X)
    assert 3 / 64 <= b <= 3 * 64


def test_select_bandwidth_needs_two_rows():
    with pytest.raises(InsufficientDataError):
        select_bandwidth(np.zeros((1, 1)))


# -- parser ---------------------------------------------------------------------------

@pytest.mark.parametrize("text, expect", [
    ("gaussian(0.5)", Gaussian(0.5)),
    ("rbf(b=2)", Gaussian(2.0)),
    ("gaussian(auto)", Gaussian(None)),
    ("linear", Linear()),
    ("periodic(period=12)", Periodic(12.0)),
    ("poly(degree=3, offset=0.5)", Polynomial(3, 0.5)),
    ("linear + periodic(12)", Sum.equal(Linear(), Periodic(12.0))),
    ("0.3*linear + 0.7*gaussian(1)", Sum(((0.3, Linear()), (0.7, Gaussian(1.0))))),
])
def test_parse_kernel(text, expect):
    assert parse_kernel(text) == expect


@pytest.mark.parametrize("k", KERNELS + [Gaussian(None)], ids=format_kernel)
def test_format_parse_round_trip(k):
    assert parse_kernel(format_kernel(k)) == k


@pytest.mark.parametrize("bad", ["", "laplace(1)", "gaussian(", "linear +", "periodic()", "gaussian(-1)"])
def test_parse_kernel_rejects(bad):
    with pytest.raises(ConfigError):
        parse_kernel(bad)


# -- properties ---------------------------------------------------------------------

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
kernel_st = st.sampled_from(KERNELS)


@settings(max_examples=60, deadline=None)
@given(kernel_st, arrays(np.float64, st.tuples(st.integers(1, 50), st.just(1)), elements=finite))
def test_gram_psd(k, X):
    K = gram(k, X)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


@settings(max_examples=60, deadline=None)
@given(kernel_st, finite, finite)
def test_eval_symmetric(k, a, b):
    assert evaluate(k, [a], [b]) == evaluate(k, [b], [a])


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 10), st.floats(0, 5), st.floats(1e-3, 5))
def test_gaussian_strictly_decreasing(b, r, dr):
    near, far = evaluate(Gaussian(b), [0.0], [r]), evaluate(Gaussian(b), [0.0], [r + dr])
    assert far < near or near == 0.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 3)), elements=finite),
       st.randoms(use_true_random=False))
def test_select_bandwidth_permutation_invariant(X, rnd):
    perm = list(range(X.shape[0]))
    rnd.shuffle(perm)
    assert select_bandwidth(X) == select_bandwidth(X[perm])


def test_chunked_offdiag_variance_matches_exact(monkeypatch):
    X = np.random.default_rng(9).normal(size=(700, 2))
    grid = bandwidth_grid(2)
    exact = kernels._offdiag_variances(X, grid)
    monkeypatch.setattr(kernels, "_EXACT_PAIR_LIMIT", 10)
    np.testing.assert_allclose(kernels._offdiag_variances(X, grid), exact, rtol=1e-9)
