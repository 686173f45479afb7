import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbsdc.geometry import Box, Intersection, OrderCut, OrderMap, PointPattern
from gibbsdc.models import InteractionModel, kappa
from gibbsdc.rng import RngStream
from gibbsdc.sampler import (BudgetExceeded, RetentionMode, PoissonCarrier, f_one, gnz_balance, no_neighbour,
                             rejection_sample_gibbs, retention_probability, sample_marked_poisson,
                             standard_thinning, thinning_sample)

HS = InteractionModel("hard_sphere", alpha0=1.0, r0=0.3)
STRAUSS = InteractionModel("strauss", alpha0=2.0, r0=0.3, beta=1.0)


def test_retention_mode_parse():
    assert RetentionMode.parse("thinning-exact").kind == "exact_recursive"
    assert RetentionMode.parse("thinning-plugin:8") == RetentionMode("plugin_estimate", 8)
    assert RetentionMode.parse("terminal").kind == "terminal_only"
    with pytest.raises(ValueError):
        RetentionMode.parse("plugin:0")
    with pytest.raises(ValueError):
        RetentionMode.parse("nonsense")


@given(seed=st.integers(0, 2**32))
def test_poisson_model_keeps_whole_carrier(seed):
    m = InteractionModel("poisson", alpha0=3.0)
    Q = Box.cube(2)
    s = RngStream(seed)
    carrier = sample_marked_poisson(Q, m.kappa_max, s.child("carrier"))
    out = standard_thinning(m, Q, None, OrderMap(), carrier, rng=s.child("aux"))
    assert out.same_points(carrier.unmarked())


@given(seed=st.integers(0, 2**32))
def test_hard_sphere_output_respects_hard_core(seed):
    X = thinning_sample(HS, Box.cube(2), None, seed)
    if len(X) > 1:
        d = np.sqrt(((X.coords[:, None] - X.coords[None]) ** 2).sum(-1))
        assert d[np.triu_indices(len(X), 1)].min() > HS.r0


@given(seed=st.integers(0, 2**32), t=st.floats(0.1, 1.3))
@settings(max_examples=25)
def test_restart_from_downward_closed_cut(seed, t):
    """Thinning on Q, restricted past a cut, equals thinning past the cut with the
    pre-cut output appended to the boundary."""
    Q = Box.cube(2)
    iota = OrderMap()
    s = RngStream(seed)
    carrier = sample_marked_poisson(Q, STRAUSS.kappa_max, s.child("carrier"))
    full = standard_thinning(STRAUSS, Q, None, iota, carrier, rng=s.child("aux"))
    before = full.restrict(OrderCut(iota, t, "upto"))
    after_region = Intersection(Q, OrderCut(iota, t, "after"))
    rest = standard_thinning(STRAUSS, after_region, before, iota, carrier.restrict(after_region), rng=s.child("aux"))
    assert rest.same_points(full.restrict(after_region))


def test_poisson_carrier_is_window_consistent():
    c = PoissonCarrier(RngStream(5).child("c"), 2.0)
    a = c.sample(Box([-1.3, -0.2], [2.1, 1.7]))
    c2 = PoissonCarrier(RngStream(5).child("c"), 2.0)
    b = c2.sample(Box([0.0, 0.0], [1.0, 1.0]))
    assert a.restrict(Box([0.0, 0.0], [1.0, 1.0])).same_points(b)
    assert np.all(b.marks <= 2.0)


def test_carrier_intensity():
    counts = [len(sample_marked_poisson(Box.cube(3), 1.5, RngStream(1).child(i))) for i in range(400)]
    assert np.mean(counts) == pytest.approx(13.5, abs=3 * math.sqrt(13.5 / 400))


def test_retention_probability_matches_rejection_oracle():
    """E[kappa(x, Y)] with Y ~ X(R) estimated two independent ways."""
    m = InteractionModel("hard_sphere", alpha0=4.0, r0=0.3)
    R = Box([0.0, 0.0], [0.5, 0.6])
    x = np.array([-0.1, 0.3])
    N = 6000
    est = np.array([retention_probability(m, x, R, None, rng=RngStream(11).child(i)) for i in range(N)])
    ora = np.array([kappa(m, x, rejection_sample_gibbs(m, R, None, RngStream(12).child(i), warn_iter=None))
                    for i in range(N)])
    se = math.sqrt(est.var() / N + ora.var() / N)
    assert abs(est.mean() - ora.mean()) <= 3.5 * se


def test_terminal_mode_requires_empty_remainder():
    with pytest.raises(ValueError):
        retention_probability(HS, [0, 0], Box.cube(1), None, RetentionMode("terminal_only"))
    assert retention_probability(HS, [0, 0], None, PointPattern([[0.1, 0.0]]), RetentionMode("terminal_only")) == 0


def test_work_budget_raises():
    m = InteractionModel("strauss", alpha0=40.0, r0=0.5, beta=0.2)
    with pytest.raises(BudgetExceeded):
        for i in range(50):
            retention_probability(m, [0, 0], Box.cube(4), None, rng=i, work_budget=3)


def test_rejection_budget_raises():
    m = InteractionModel("hard_sphere", alpha0=30.0, r0=0.3)
    with pytest.raises(BudgetExceeded):
        rejection_sample_gibbs(m, Box.cube(3), None, 0, max_iter=5, warn_iter=None)


def test_boundary_condition_suppresses_points():
    psi = PointPattern(np.array([[x, y] for x in np.arange(-0.6, 0.61, 0.1) for y in (-0.55, 0.55)]))
    X = thinning_sample(HS, Box.cube(1), psi, 3)
    if len(X):
        d = np.sqrt(((X.coords[:, None] - psi.coords[None]) ** 2).sum(-1))
        assert d.min() > HS.r0


def test_gnz_balance_small_hard_sphere():
    res = gnz_balance(HS, Box.cube(1), no_neighbour(HS.r0), 1500, rng=3)
    assert abs(res.z) <= 3.5
    res1 = gnz_balance(HS, Box.cube(1), f_one, 1500, rng=4)
    assert abs(res1.z) <= 3.5
