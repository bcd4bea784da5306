import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from orbiqe import qe, spectral, symbols as S


def _beta(s):
    return mpmath.dirichlet(s, [0, 1, 0, -1])


def test_cutoff_shape():
    r = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 3.0])
    th = S.smooth_cutoff(r)
    assert np.array_equal(th[[0, 1, 2]], [0, 0, 0])
    assert np.array_equal(th[[4, 5]], [1, 1])
    assert th[3] == pytest.approx(0.5)


def test_circle_points_antipodal():
    u = S.circle_points(64)
    assert np.array_equal(u[32:], -u[:32])
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-6, 1), st.floats(0.1, 30), st.floats(-3, 3), st.floats(0.2, 5))
def test_homogeneity(deg, a, phi, r):
    t = S.HomogeneousTerm(deg, lambda u: 2 + u[:, 0] * u[:, 1])
    xi = r * np.array([[math.cos(phi), math.sin(phi)]])
    assert t(a * xi)[0] == pytest.approx(a**deg * t(xi)[0], rel=1e-12)


@pytest.mark.parametrize("s", [2.0, 1.5, 3.0])
def test_epstein_radial_closed_form(s):
    # sum over m != 0 of |m|^-2s = 4 zeta(s) beta(s)
    ref = float(4 * mpmath.zeta(s) * _beta(s))
    assert S.epstein_harmonic(0, -2 * s) == pytest.approx(ref, rel=1e-13)


def test_epstein_continued_values():
    assert S.epstein_harmonic(0, 0.0) == pytest.approx(-1.0, abs=1e-14)
    # zeta(-1) beta(-1) = 0
    assert S.epstein_harmonic(0, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert S.epstein_harmonic(0, -1.0) == pytest.approx(float(4 * mpmath.zeta(0.5) * _beta(0.5)), rel=1e-12)
    for nu in (1, 2, 3, 5, 6):
        assert S.epstein_harmonic(nu, -3.0) == 0.0
    with pytest.raises(S.PoleError):
        S.epstein_harmonic(0, -2.0)


def test_epstein_harmonic_brute_force():
    R = 1500
    r = np.arange(-R, R + 1, dtype=float)
    M1, M2 = np.meshgrid(r, r, indexing="ij")
    rr = M1**2 + M2**2
    rr[R, R] = 1.0
    c4 = ((M1**4 - 6 * M1**2 * M2**2 + M2**4) / rr**2)
    vals = c4 * rr ** -2.5
    vals[R, R] = 0.0
    # the angular mean of cos 4 phi vanishes, so the square-box tail is tiny
    assert S.epstein_harmonic(4, -5.0) == pytest.approx(float(vals.sum()), rel=1e-7)


def test_finite_part_of_integrable_symbol():
    sym = S.japanese_bracket_symbol(-2.0, 4)
    # (2 pi)^-2 int (1+|xi|^2)^-2 dxi = pi / (2 pi)^2
    assert S.finite_part(sym) == pytest.approx(1 / (4 * math.pi), rel=1e-9)


def test_finite_part_convergent_power():
    sym = S.power_symbol(-3.0, lambda u: 1 + u[:, 0] ** 2)
    radial = integrate.quad(lambda r: float(S.smooth_cutoff(r)) * r**-2, 0, np.inf, limit=200)[0]
    direct = 1.5 * 2 * math.pi * radial / (2 * math.pi) ** 2
    assert S.finite_part(sym) == pytest.approx(direct, rel=1e-9)
    with pytest.raises(S.PoleError):
        S.finite_part(S.power_symbol(-2.0))


def test_canonical_trace_pure_power():
    # theta = 1 at every nonzero lattice point, so TR is half the Epstein value
    tr = S.canonical_trace(S.power_symbol(-3.0))
    assert tr == pytest.approx(float(2 * mpmath.zeta(1.5) * _beta(1.5)), rel=1e-12)


def test_canonical_trace_matches_usual_trace():
    tr = S.canonical_trace(S.japanese_bracket_symbol(-2.0, 4))
    R = 600
    r = np.arange(-R, R + 1.0)
    direct = np.sum((1 + r[:, None] ** 2 + r[None, :] ** 2) ** -2.0)
    a = R + 0.5
    box = integrate.dblquad(lambda y, x: (1 + x * x + y * y) ** -2, -a, a, -a, a, epsabs=1e-13)[0]
    assert tr == pytest.approx(0.5 * (direct + math.pi - box), rel=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_canonical_trace_linear(alpha, beta):
    A = S.power_symbol(-3.5, lambda u: 1 + u[:, 0] ** 2)
    B = S.power_symbol(-2.5, lambda u: u[:, 0] ** 4 - u[:, 1] ** 2)
    lhs = S.canonical_trace(A.scale(alpha) + B.scale(beta))
    rhs = alpha * S.canonical_trace(A) + beta * S.canonical_trace(B)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_canonical_trace_poles():
    with pytest.raises(S.PoleError):
        S.canonical_trace(S.power_symbol(-2.0))
    with pytest.raises(S.PoleError):
        S.canonical_trace(S.power_symbol(0.0))


def test_product_is_order_independent():
    A = S.power_symbol(-1.5, lambda u: u[:, 0] ** 2) + S.power_symbol(-2.5)
    B = S.power_symbol(-0.5, lambda u: 1 + u[:, 1]) + S.power_symbol(-1.5, lambda u: u[:, 0])
    xi = np.random.default_rng(0).normal(size=(50, 2)) * 5
    assert np.array_equal((A * B)(xi), (B * A)(xi))
    assert [t.degree for t in (A * B).terms] == [-2.0, -3.0, -4.0]


def test_residue_trace_values():
    assert S.residue_trace(S.power_symbol(-2.0)) == pytest.approx(math.pi, rel=1e-14)
    assert S.residue_trace(S.power_symbol(-2.0, lambda u: u[:, 0] ** 2)) == pytest.approx(math.pi / 2, rel=1e-14)
    assert S.residue_trace(S.power_symbol(-3.0)) == 0.0


def test_obstruction_coefficients():
    t = S.HomogeneousTerm(-3.0, lambda u: u[:, 0])
    c = S.obstruction_coefficients(t, 1)
    assert c == pytest.approx([math.pi, 0.0], abs=1e-13)
    # odd densities cancel to the last bit
    assert S.obstruction_coefficients(S.HomogeneousTerm(-3.0, lambda u: np.ones(len(u))), 1) == [0.0, 0.0]
    with pytest.raises(S.DegreeError):
        S.obstruction_coefficients(t, 2)


def test_zeta_residue_identity():
    probe = S.zeta_residue(spectral.pillowcase_spectrum(200))
    assert abs(probe.residue) == pytest.approx(math.pi, rel=0.01)
    assert probe.sign == -1.0
    assert abs(probe.residue) == pytest.approx(probe.tauberian, rel=0.02)


def test_zeta_residue_needs_exact_backend():
    with pytest.raises(ValueError):
        S.zeta_residue("sphere")
    f = qe.Observable.position(lambda x: x[:, 2] ** 2, "z2", exact_average=1 / 3)
    probe = S.zeta_residue(spectral.sphere_quotient_spectrum(1, 120), f)
    # Weyl constant 1 on the round sphere, omega = 1/3
    assert abs(probe.residue) == pytest.approx(2 / 3, rel=0.02)
