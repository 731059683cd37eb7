import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import brentq

from densim import theory

nonneg_vec = arrays(np.float64, st.integers(1, 64),
                    elements=st.floats(0, 100, allow_nan=False, allow_infinity=False))


def test_project_examples():
    phi = np.array([1.0, 2.0, 3.0])
    assert np.allclose(theory.project(phi, phi), phi)
    assert np.allclose(theory.project(2 * phi, phi), phi)
    assert np.allclose(theory.project([1, 1], [2, 0]), [1, 1])
    assert np.array_equal(theory.project([0, 0], [1, 2]), [0, 0])
    with pytest.raises(ValueError):
        theory.project([1, 2], [1, 2, 3])


def test_normalized_error_examples():
    phi = np.array([0.5, 2.0, 1.0])
    assert theory.normalized_error(3.7 * phi, phi) == pytest.approx(0, abs=1e-12)
    assert theory.normalized_error(np.zeros(3), phi) == 1.0
    assert theory.normalized_error(np.zeros(3), np.zeros(3)) == 0.0
    expect = math.sqrt(2) / (math.sqrt(2) + 2)
    assert theory.normalized_error([1, 1], [2, 0]) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.41421, abs=1e-5)


def two_level_phi(c_target: float, r: int, h: float) -> np.ndarray:
    """(1, ..., 1, t) rescaled to mean h, with t solved so that the shape equals c_target."""
    def shape(t):
        v = np.ones(r)
        v[-1] = t
        return np.linalg.norm(v) * math.sqrt(r) / v.sum() - c_target
    t = brentq(shape, 1.0, 1e6)
    v = np.ones(r)
    v[-1] = t
    return v * (h / v.mean())


def test_closed_form_examples():
    for p, s in [(0.3, 0.5), (1.0, 2.0), (0.05, 0.01)]:
        assert theory.closed_form_error(p, s, 1.0) == 0.0
    assert theory.closed_form_error(0.4, 0.0, 2.5) == 0.0
    with pytest.raises(ValueError):
        theory.closed_form_error(0.0, 0.3, 1.2)


def test_closed_form_matches_exact_expectation():
    p, s, c, h = 0.5, 0.2, 1.5, 0.8
    phi = two_level_phi(c, 10, h)
    assert theory.shape_c(phi) == pytest.approx(c, abs=1e-12)
    lam = s * h
    direct = theory.normalized_error(p * phi + lam, phi)
    assert theory.closed_form_error(p, s, c) == pytest.approx(direct, abs=1e-12)


def test_bound_examples():
    assert theory.bound_tight(0.4, 0.3, 1.0, 1.0) == 0.0
    assert theory.bound_tight(0.4, 0.3, 1.2, math.sqrt(2)) == pytest.approx(theory.bound_loose(0.4, 0.3, 1.2))
    assert theory.bound_loose(0.7, 0.0, 1.0) == 0.0
    h = (0.587 - 0.117) / 0.54
    assert theory.bound_loose(0.54, 0.117, h) == pytest.approx(0.0622, abs=5e-5)


def test_tight_bound_maximised_at_sqrt2():
    cs = np.linspace(1, 20, 200_001)
    f = np.sqrt(cs**2 - 1) / cs**2
    assert cs[np.argmax(f)] == pytest.approx(math.sqrt(2), abs=1e-4)
    assert f.max() == pytest.approx(0.5, abs=1e-9)


def test_sampled_density_bound():
    assert theory.bound_from_sampled_density(0.117, 0.587) == pytest.approx(0.06223, abs=5e-6)
    assert theory.bound_from_sampled_density(0.0, 0.5) == 0.0
    with pytest.raises(theory.UninformativeBound):
        theory.bound_from_sampled_density(0.3, 0.3)


def test_shape_and_mean_examples():
    assert theory.shape_c(np.full(7, 2.0)) == pytest.approx(1.0)
    onehot = np.zeros(16)
    onehot[3] = 5
    assert theory.shape_c(onehot) == pytest.approx(4.0)
    assert theory.shape_c([3, 1]) == pytest.approx(math.sqrt(10) * math.sqrt(2) / 4)
    assert theory.shape_c([3, 1]) == pytest.approx(1.1180, abs=1e-4)
    with pytest.raises(ValueError):
        theory.shape_c(np.zeros(3))
    assert theory.mean_density([2, 2, 2]) == 2
    assert theory.mean_density([3, 1]) == 2
    assert theory.mean_density(np.full(50, 120 / 50)) == pytest.approx(120 / 50)


def test_unbiased_h():
    assert theory.unbiased_h(0.587, 0.54, 0.117) == pytest.approx(0.8704, abs=5e-5)
    assert theory.unbiased_h(0.9, 1.0, 0.0) == 0.9
    assert theory.unbiased_h(0.2, 0.5, 0.2) == 0.0


@settings(max_examples=200, deadline=None)
@given(nonneg_vec, nonneg_vec, st.floats(1e-3, 1e3))
def test_scale_invariance(psi, phi, a):
    n = min(len(psi), len(phi))
    psi, phi = psi[:n], phi[:n]
    e1 = theory.normalized_error(psi, phi)
    e2 = theory.normalized_error(a * psi, phi)
    assert abs(e1 - e2) <= 1e-12
    assert 0.0 <= e1 <= 1.0


@settings(max_examples=100, deadline=None)
@given(nonneg_vec, st.integers(0, 2**32 - 1))
def test_projection_is_optimal(psi, seed):
    rng = np.random.default_rng(seed)
    phi = rng.random(len(psi)) * 10
    best = np.linalg.norm(theory.project(psi, phi) - phi)
    for a in rng.normal(0, 5, 100):
        assert best <= np.linalg.norm(a * psi - phi) + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 64), st.floats(0.05, 1.0), st.floats(0.0, 5.0), st.integers(0, 2**32 - 1))
def test_exact_expectation_equivalence(r, p, lam, seed):
    rng = np.random.default_rng(seed)
    phi = rng.exponential(1.0, r) * (rng.random(r) < 0.7)
    assume(phi.sum() > 0)
    h, c = theory.mean_density(phi), theory.shape_c(phi)
    direct = theory.normalized_error(p * phi + lam, phi)
    assert abs(direct - theory.closed_form_error(p, lam / h, c)) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.01, 2.0), st.floats(1.001, 8.0), st.floats(0.1, 10))
def test_bound_chain(p, s, c, h):
    lam = s * h
    cf = theory.closed_form_error(p, s, c)
    tight = theory.bound_tight(p, lam, h, c)
    assert cf <= tight
    assert tight <= theory.bound_loose(p, lam, h) + 1e-12


@settings(max_examples=200, deadline=None)
@given(nonneg_vec)
def test_shape_bounds(phi):
    assume(phi.sum() > 0)
    c = theory.shape_c(phi)
    assert 1.0 <= c <= math.sqrt(len(phi))
