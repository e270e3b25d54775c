import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsms import scheduler
from dsms.errors import InsufficientBandwidthError, InvalidTemperatureError
from dsms.nn import Trace, backward
from oracles import budgets_by_hand, central_diff, grad_rel_err


def test_uniform_utilities_give_uniform_weights():
    for tau in (0.1, 1.0, 7.0):
        np.testing.assert_allclose(scheduler.gumbel_softmax(np.ones(4), tau), np.full(4, 0.25), atol=1e-15)


def test_zero_utilities_zero_noise():
    np.testing.assert_allclose(scheduler.gumbel_softmax(np.zeros(2), 1.0, np.zeros(2)), [0.5, 0.5])


def test_softmax_matches_formula():
    rng = np.random.default_rng(0)
    u, g = rng.normal(size=5), rng.normal(size=5)
    e = np.exp((u + g) / 0.7)
    np.testing.assert_allclose(scheduler.gumbel_softmax(u, 0.7, g), e / e.sum(), rtol=1e-12)


def test_large_utilities_are_stable():
    w = scheduler.gumbel_softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.isfinite(w).all() and (w > 0).all()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_non_positive_temperature_rejected(tau):
    with pytest.raises(InvalidTemperatureError):
        scheduler.gumbel_softmax(np.zeros(3), tau)


def test_gumbel_softmax_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    u, g = rng.normal(size=5), scheduler.sample_gumbel(rng, 5)
    for j in range(5):
        tr = Trace()
        ut = tr.leaf(u.copy(), "u")
        w = scheduler.gumbel_softmax(ut, 1.0, g)
        backward(tr, w[j])
        num = central_diff(lambda: scheduler.gumbel_softmax(u, 1.0, g)[j], u)
        assert grad_rel_err(ut.grad, num) <= 1e-4


@pytest.mark.parametrize("x,up", [(2.3, 3.0), (7.0, 7.0), (-1.2, -1.0)])
def test_soft_ceil_forward_and_straight_through(x, up):
    assert scheduler.soft_ceil(x) == up
    tr = Trace()
    xt = tr.leaf(np.array(x), "x")
    y = scheduler.soft_ceil(xt)
    assert float(y.value) == up
    backward(tr, y)
    assert float(xt.grad) == 1.0


def test_reference_allocation_examples():
    np.testing.assert_array_equal(scheduler.allocate(np.full(4, 0.25), 64, 4), [14, 14, 14, 14])
    np.testing.assert_array_equal(scheduler.allocate(np.array([0.97, 0.01, 0.01, 0.01]), 64, 4), [56, 2, 2, 2])


@pytest.mark.parametrize("B,n", [(7, 2), (6, 3), (4, 2), (0, 1)])
def test_insufficient_bandwidth(B, n):
    with pytest.raises(InsufficientBandwidthError):
        scheduler.allocate(np.full(n, 1 / n), B, n)


def test_allocation_rejects_non_simplex():
    with pytest.raises(ValueError):
        scheduler.allocate(np.array([0.5, 0.6]), 10, 2)
    with pytest.raises(ValueError):
        scheduler.allocate(np.array([1.0, 0.0]), 10, 2)


@st.composite
def rounds(draw):
    n = draw(st.integers(2, 16))
    B = 2 * draw(st.integers(n + 1, 512))
    u = np.array(draw(st.lists(st.floats(-50, 50), min_size=n, max_size=n)))
    tau = draw(st.floats(0.05, 10))
    seed = draw(st.integers(0, 2**32 - 1))
    return u, tau, scheduler.sample_gumbel(np.random.default_rng(seed), n), n, B


@settings(max_examples=300, deadline=None)
@given(rounds())
def test_conservation_minimum_and_parity(r):
    u, tau, g, n, B = r
    w = scheduler.gumbel_softmax(u, tau, g)
    assert (w > 0).all() and abs(w.sum() - 1) <= 1e-9
    b = scheduler.allocate(w, B, n)
    assert b.sum() <= B and (b >= 2).all() and (b % 2 == 0).all()
    assert b.tolist() == budgets_by_hand(w, B)
    scheduler.check_allocation(b, B)


@settings(max_examples=200, deadline=None)
@given(rounds(), st.floats(0.0, 0.99), st.integers(0, 15))
def test_growing_own_weight_never_shrinks_budget(r, frac, i):
    u, tau, g, n, B = r
    i %= n
    w = scheduler.gumbel_softmax(u, tau, g)
    # move a fraction of everyone else's mass to agent i, keeping the rest proportional
    w2 = w * (1 - frac)
    w2[i] = w[i] + frac * (1 - w[i])
    w2 /= w2.sum()
    if (w2 <= 0).any():
        return
    assert scheduler.allocate(w2, B, n)[i] >= scheduler.allocate(w, B, n)[i]


def test_allocation_derivative_is_straight_through():
    tr = Trace()
    w = tr.leaf(np.array([0.1, 0.2, 0.3, 0.4]), "w")
    b = scheduler.allocate(w, 64, 4)
    np.testing.assert_array_equal(b.value, scheduler.allocate(w.value, 64, 4))
    backward(tr, b[2])
    np.testing.assert_array_equal(w.grad, [0, 0, 2 * (32 - 4), 0])


def test_check_allocation_flags_violations():
    for bad in ([14, 14, 14, 24], [1, 2, 2, 2], [3, 2, 2, 2]):
        with pytest.raises(AssertionError):
            scheduler.check_allocation(np.array(bad), 64)
    scheduler.check_allocation(np.array([[14, 14, 14, 14], [56, 2, 2, 2]]), 64)


def test_fixed_equal_budgets():
    np.testing.assert_array_equal(scheduler.fixed_equal_budgets(38, 3), [12, 12, 12])
    np.testing.assert_array_equal(scheduler.fixed_equal_budgets(104, 4, cap=34), [26] * 4)
    np.testing.assert_array_equal(scheduler.fixed_equal_budgets(200, 2, cap=34), [34, 34])
    with pytest.raises(InsufficientBandwidthError):
        scheduler.fixed_equal_budgets(5, 3)
