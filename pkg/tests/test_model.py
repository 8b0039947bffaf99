"""Profile algebra, frame maps, and the hat/check split."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cglblow.model import (
    ComplexSplit,
    GridFunction,
    Parameters,
    delta_decompose,
    delta_recompose,
    from_similarity,
    profile_e,
    profile_f,
    profile_well,
    scaling_factor,
    similarity_time,
    to_similarity,
)

P = Parameters()
P0 = Parameters(delta=0.0)

finite = dict(allow_nan=False, allow_infinity=False)


def test_scaling_factor_values():
    assert scaling_factor(0.0, 2) == 1.0
    # e^{(s/2)(1 - 1/k)} at s=2, k=2
    assert scaling_factor(2.0, 2) == pytest.approx(1.6487212707001282, rel=1e-15)


@given(st.floats(min_value=-20, max_value=20, **finite))
@settings(max_examples=50, deadline=None)
def test_scaling_factor_exponential_law(s):
    ratio = scaling_factor(s + 1.0, 2) / scaling_factor(s, 2)
    assert ratio == pytest.approx(math.exp(0.25), rel=1e-12)


def test_profile_f_values():
    y = np.array([0.0, 1.0])
    vals = profile_f(1.0, y, P0)
    assert vals[0] == pytest.approx(2.0**-0.5, rel=1e-14)
    assert vals[1] == pytest.approx(3.0**-0.5, rel=1e-14)


@given(
    st.floats(min_value=0.1, max_value=3.0, **finite),
    st.floats(min_value=-4.0, max_value=4.0, **finite),
    st.floats(min_value=-2.0, max_value=2.0, **finite),
)
@settings(max_examples=80, deadline=None)
def test_profile_f_phase(b, y, delta):
    par = Parameters(delta=delta)
    val = complex(profile_f(b, np.array([y]), par)[0])
    expected = -(delta / (par.p - 1.0)) * math.log(par.p - 1.0 + b * y ** (2 * par.k))
    wrapped = (np.angle(val) - expected + math.pi) % (2.0 * math.pi) - math.pi
    assert abs(wrapped) < 1e-10


def test_profile_e_values():
    y = np.array([0.0, 1.0])
    vals = profile_e(1.0, y, P0)
    assert vals[0] == pytest.approx(0.5, rel=1e-14)
    assert vals[1] == pytest.approx(1.0 / 3.0, rel=1e-14)


@given(
    st.floats(min_value=0.05, max_value=4.0, **finite),
    st.floats(min_value=-6.0, max_value=6.0, **finite),
)
@settings(max_examples=80, deadline=None)
def test_well_identity(b, y):
    # (p-1) e_b - 1 = -b y^{2k} e_b, the cancellation the potential term
    # inherits its hat-exactness from
    ya = np.array([y])
    eb = profile_e(b, ya, P)[0]
    lhs = (P.p - 1.0) * eb - 1.0
    rhs = -b * y ** (2 * P.k) * eb
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_profile_well_is_shared_base():
    y = np.linspace(-3, 3, 101)
    well = profile_well(0.7, y, P)
    assert np.allclose(well, P.p - 1.0 + 0.7 * y ** (2 * P.k))
    assert np.allclose(profile_e(0.7, y, P), 1.0 / well)


def test_constant_blowup_maps_to_constant_profile():
    # spatially flat exact solution at delta = 0: kappa (T-t)^{-1/(p-1)}
    T = 1.0
    kappa = (P0.p - 1.0) ** (-1.0 / (P0.p - 1.0))
    for t in (0.0, 0.5, 0.9):
        x = np.linspace(-2.0, 2.0, 64)
        u = GridFunction(x, np.full(64, kappa * (T - t) ** (-0.5) + 0j))
        w = to_similarity(u, t, T, P0)
        assert np.max(np.abs(w.values - kappa)) < 1e-12


def test_similarity_round_trip():
    x = np.linspace(-1.0, 1.0, 257)
    u = GridFunction(x, np.exp(-(x**2)) * (1.0 + 0.3j))
    t, T = 0.6, 1.0
    w = to_similarity(u, t, T, P)
    back = from_similarity(w, similarity_time(t, T), T, P, target_mesh=x)
    assert np.max(np.abs(back.values - u.values)) < 1e-10


def test_similarity_time_monotone_and_divergent():
    T = 2.0
    ts = np.linspace(0.0, T - 1e-9, 50)
    ss = [similarity_time(t, T) for t in ts]
    assert np.all(np.diff(ss) > 0)
    assert ss[-1] > 20.0
    with pytest.raises(ValueError):
        similarity_time(T, T)


def test_delta_decompose_basis_vectors():
    for delta in (0.0, 1.0, -2.3):
        one = delta_decompose(1.0 + 1j * delta, delta)
        assert one.hat == pytest.approx(1.0) and one.check == pytest.approx(0.0)
        imag = delta_decompose(1j, delta)
        assert imag.hat == pytest.approx(0.0) and imag.check == pytest.approx(1.0)


def test_delta_decompose_example():
    split = delta_decompose(3.0 + 4.0j, 2.0)
    assert split.hat == pytest.approx(3.0)
    assert split.check == pytest.approx(-2.0)


@given(
    st.floats(min_value=-50, max_value=50, **finite),
    st.floats(min_value=-50, max_value=50, **finite),
    st.floats(min_value=-3, max_value=3, **finite),
)
@settings(max_examples=100, deadline=None)
def test_delta_split_round_trip(re, im, delta):
    z = re + 1j * im
    split = delta_decompose(z, delta)
    assert delta_recompose(split, delta) == pytest.approx(z, rel=1e-12, abs=1e-12)
    # the split is the unique solution of z = hat (1 + i delta) + i check
    assert delta_recompose(ComplexSplit(split.hat, split.check), delta) == pytest.approx(z, abs=1e-9)


def test_grid_function_guards():
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 1.0, 1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(np.linspace(0, 1, 4), np.zeros(4))
    g = GridFunction(np.linspace(-1, 1, 33), np.linspace(-1, 1, 33) ** 2 + 0j)
    assert g.sample(np.array([0.5]))[0] == pytest.approx(0.25, abs=1e-6)
