import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from gibbsdc.models import InteractionModel, ModelError, configuration_density, kappa

MODELS = [
    InteractionModel("poisson", alpha0=2.0, r0=0.3),
    InteractionModel("strauss", alpha0=1.5, r0=0.3, beta=0.7),
    InteractionModel("hard_sphere", alpha0=1.0, r0=0.3),
    InteractionModel("area_interaction", alpha0=1.0, r0=0.4, gamma=0.3, grid_resolution=0.01),
]


def pattern(seed, n, side=1.0):
    return np.random.default_rng(seed).uniform(0, side, size=(n, 2))


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
@given(seed=st.integers(0, 10**6), n=st.integers(0, 8))
def test_kappa_is_energy_difference(model, seed, n):
    """kappa(x, psi) = exp(-(E(psi + x) - E(psi))) against direct energy summation."""
    pts = pattern(seed, n + 1)
    x, psi = pts[0], pts[1:]
    e1, e0 = model.energy(pts), model.energy(psi)
    assume(math.isfinite(e0))
    k = kappa(model, x, psi)
    if math.isinf(e1):
        assert k == 0.0
    else:
        assert k == pytest.approx(math.exp(-(e1 - e0)), rel=1e-9)


@pytest.mark.parametrize("model", MODELS[1:], ids=lambda m: m.kind)
@given(seed=st.integers(0, 10**6), n=st.integers(0, 8))
def test_repulsive_and_dominated(model, seed, n):
    pts = pattern(seed, n + 2)
    x, y, psi = pts[0], pts[1], pts[2:]
    k_psi = kappa(model, x, psi)
    assert kappa(model, x, np.vstack([psi, y[None]])) <= k_psi <= model.kappa_max


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_finite_range(model):
    x = np.array([0.0, 0.0])
    far = np.array([[model.r0 * 1.0001, 0.0], [0.0, -2.0], [5.0, 5.0]])
    assert kappa(model, x, far) == kappa(model, x, np.zeros((0, 2)))
    if model.kind != "area_interaction":
        assert kappa(model, x, far) == model.alpha0


def test_strauss_and_hard_sphere_values():
    s = InteractionModel("strauss", alpha0=2.0, r0=1.0, beta=0.5)
    nb = np.array([[0.5, 0.0], [0.0, 0.9], [3.0, 0.0]])
    assert kappa(s, [0, 0], nb) == pytest.approx(2.0 * math.exp(-1.0))
    h = InteractionModel("hard_sphere", alpha0=2.0, r0=1.0)
    assert kappa(h, [0, 0], nb) == 0.0
    assert kappa(h, [0, 0], nb[2:]) == 2.0


def test_area_uncovered_measure_converges_to_disk_area():
    m = InteractionModel("area_interaction", alpha0=1.0, r0=0.6, gamma=0.5, grid_resolution=0.002)
    x = np.array([0.1234, -0.567])
    assert m.uncovered_area(x, np.zeros((0, 2))) == pytest.approx(math.pi * 0.09, rel=2e-3)
    # a neighbour at distance r0/2 covers the lens of two r0/2 disks
    y = x + np.array([0.3, 0.0])
    rho, dd = 0.3, 0.3
    lens = 2 * rho**2 * math.acos(dd / (2 * rho)) - dd / 2 * math.sqrt(4 * rho**2 - dd**2)
    assert m.uncovered_area(x, y[None]) == pytest.approx(math.pi * rho**2 - lens, rel=5e-3)


def test_area_kappa_max_bounds_every_value():
    m = InteractionModel("area_interaction", alpha0=1.0, r0=0.6, gamma=0.1, grid_resolution=0.05)
    g = np.random.default_rng(3)
    for _ in range(200):
        x = g.uniform(-1, 1, size=2)
        assert kappa(m, x, np.zeros((0, 2))) <= m.kappa_max
    assert m.kappa_max >= 1.0 * 0.1 ** (-math.pi * 0.09)


@pytest.mark.parametrize("kw", [dict(kind="bogus"), dict(alpha0=0), dict(r0=-1), dict(kind="strauss", beta=-1),
                                dict(kind="area", gamma=0.0), dict(kind="area", gamma=1.5), dict(dim=4)])
def test_validation_errors(kw):
    with pytest.raises(ModelError):
        InteractionModel(**kw)


def test_aliases():
    assert InteractionModel("hard-sphere").kind == "hard_sphere"
    assert InteractionModel("area").kind == "area_interaction"


@given(seed=st.integers(0, 10**6), n=st.integers(0, 6))
def test_configuration_density_is_order_free(seed, n):
    """The product of conditional intensities equals exp(-E) for every enumeration."""
    m = InteractionModel("strauss", alpha0=1.3, r0=0.4, beta=0.8)
    pts = pattern(seed, n)
    a = configuration_density(m, pts)
    b = configuration_density(m, pts[::-1])
    assert a == pytest.approx(b, rel=1e-12)
    assert a == pytest.approx(math.exp(-m.energy(pts)), rel=1e-9)
