import numpy as np
import pytest
from hypothesis import given, strategies as st

from tapgrid.errors import PreconditionError
from tapgrid.metrics import bound_check, delusion_frequency, feasibility_errors, hop_product_value, mean_ci


def test_perfect_evaluator_has_zero_error():
    rep = feasibility_errors([3.0, 16.0, 16.0], ["G0", "G1", "G2"], [3.0, 0.0, 0.0])
    assert (rep.e0, rep.e1, rep.e2) == (0.0, 0.0, 0.0)


def test_uniform_histogram_error_on_unit_distances():
    # uniform mass over 1..16 has mean 8.5, so every distance-1 pair is off by 7.5
    est = np.full(5, np.arange(1, 17).mean())
    rep = feasibility_errors(est, ["G0"] * 5, np.ones(5))
    assert rep.e0 == pytest.approx(7.5)
    assert rep.e1 is None and rep.e2 is None
    assert rep.e0_by_distance["1-2"] == pytest.approx(7.5)
    assert rep.e0_by_distance["9-15"] is None


def test_delusion_frequency():
    assert delusion_frequency([]) == (0.0, 0.0)
    assert delusion_frequency(["G0", "G1", "G2", "G2"]) == (0.25, 0.5)
    assert delusion_frequency(["G1"] * 3) == (1.0, 0.0)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
def test_ci_contains_mean(xs):
    m, lo, hi = mean_ci(xs)
    assert lo <= m + 1e-12 and m <= hi + 1e-12


def test_hop_product():
    assert hop_product_value([1.0, 2.0, 3.0], [0.5, 0.5, 0.5]) == pytest.approx(1 + 1 + 0.75)


def test_zero_error_bound_check_is_exact():
    trials = bound_check(20, 0.9, 0.0, 0.0, seed=3)
    assert max(t.error for t in trials) <= 1e-9


def test_bound_check_refuses_large_errors():
    with pytest.raises(PreconditionError):
        bound_check(1, 0.9, 1e-2, 0.0)
    with pytest.raises(PreconditionError):
        bound_check(1, 1.0, 0.0, 0.0)


def test_adversarial_perturbation_stays_within_bound():
    assert all(t.ok for t in bound_check(30, 0.9, 1e-4, 1e-4, seed=1, adversarial=True))
