import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbiqe import geom, qe, spectral
from orbiqe.qe import Observable


@pytest.fixture(scope="module")
def pillow():
    return spectral.pillowcase_spectrum(60)


@pytest.fixture(scope="module")
def sphere2():
    return spectral.sphere_quotient_spectrum(2, 60)


def test_constant_matrix_elements_are_one(pillow, sphere2):
    for eig in (pillow, sphere2):
        s = qe.matrix_elements(eig, Observable.constant())
        assert np.allclose(s.values, 1.0, atol=1e-12)


def test_weyl_constants():
    assert qe.weyl_constant(geom.sphere_quotient(3)) == pytest.approx(1 / 3)
    assert qe.weyl_constant(geom.pillowcase()) == pytest.approx(math.pi / 2)
    assert qe.weyl_constant(geom.hyperbolic_triangle(2, 3, 7)) == pytest.approx(1 / 84)


def test_identity_weyl_fit(pillow, sphere2):
    fit = qe.local_weyl_fit(qe.matrix_elements(pillow, Observable.constant()), pillow)
    assert fit.relative_error < 0.03 and fit.exponent == pytest.approx(2, abs=0.05)
    fit = qe.local_weyl_fit(qe.matrix_elements(sphere2, Observable.constant()), sphere2)
    assert fit.C == pytest.approx(0.5, rel=0.05)


def test_local_weyl_position_and_direction(pillow, sphere2):
    f = Observable.position(lambda x: 1 + 0.5 * np.cos(x[:, 0]) + np.sin(x[:, 1]) ** 2, "f", exact_average=1.5)
    fit = qe.local_weyl_fit(qe.matrix_elements(pillow, f), pillow)
    assert fit.relative_error < 0.05
    a = Observable.direction(lambda t: np.cos(t) ** 2, "xi1sq")
    assert qe.liouville_average(a, pillow) == pytest.approx(0.5)
    fit = qe.local_weyl_fit(qe.matrix_elements(pillow, a), pillow)
    assert fit.relative_error < 0.05
    g = Observable.position(lambda x: x[:, 2] ** 2, "z2")
    assert qe.liouville_average(g, sphere2) == pytest.approx(1 / 3, abs=1e-12)
    assert qe.local_weyl_fit(qe.matrix_elements(sphere2, g), sphere2).relative_error < 0.05


def test_counting_additivity(pillow):
    f = Observable.position(lambda x: np.cos(x[:, 0]) ** 2, "f")
    g = Observable.position(lambda x: np.exp(np.sin(x[:, 1])), "g")
    _, nf = qe.counting_profile(qe.matrix_elements(pillow, f))
    _, ng = qe.counting_profile(qe.matrix_elements(pillow, g))
    _, nfg = qe.counting_profile(qe.matrix_elements(pillow, f + g))
    assert np.allclose(nfg, nf + ng, rtol=1e-12, atol=1e-9)


def test_direction_plus_position_rejected():
    with pytest.raises(qe.UnsupportedObservableError):
        Observable.constant() + Observable.direction(np.cos)
    with pytest.raises(qe.UnsupportedObservableError):
        qe.matrix_elements(spectral.sphere_quotient_spectrum(1, 5), Observable.direction(np.cos))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_pointwise_cone_closed_form(n):
    L = 40
    eig = spectral.sphere_quotient_spectrum(n, L)
    lam = math.sqrt(L * (L + 1))
    measured, predicted, ratio = qe.pointwise_weyl_at_cone(eig, n, lam)
    # only m = 0 harmonics are nonzero at the pole, each with |Y|^2 = (2l+1)/(4 pi)
    assert measured == pytest.approx(n * (L + 1) ** 2 / (4 * math.pi), rel=1e-12)
    assert predicted == pytest.approx(n * lam**2 / (4 * math.pi))
    with pytest.raises(ValueError):
        qe.pointwise_weyl_at_cone(eig, n + 1, lam)


def test_chebyshev_bound(pillow):
    f = Observable.position(lambda x: np.cos(x[:, 0]) + np.cos(x[:, 0] + x[:, 1]), "f", exact_average=0.0)
    for eps in (0.01, 0.1, 0.5):
        prof = qe.qe_variance_and_density(qe.matrix_elements(pillow, f), 0.0, eps)
        assert np.all(prof.excluded <= prof.variance / eps**2 + 1e-15)
    with pytest.raises(ValueError):
        qe.qe_variance_and_density(qe.matrix_elements(pillow, f), 0.0, 0.0)


def test_negative_control_variance(pillow):
    a = Observable.direction(lambda t: np.cos(t) ** 2, "xi1sq", exact_average=0.5)
    prof = qe.qe_variance_and_density(qe.matrix_elements(pillow, a), 0.5, 0.1)
    # cos^2 on the circle has variance 1/8
    assert prof.at(60)[0] == pytest.approx(1 / 8, rel=0.2)


def test_defect_brute_force(pillow):
    f = Observable.position(lambda x: np.cos(2 * x[:, 0]) + np.cos(x[:, 0] + x[:, 1]), "f", exact_average=0.0)
    lam = math.sqrt(50)
    res = qe.operator_average_defect(pillow, f, lam)
    g = (np.arange(64) + 0.5) * 2 * math.pi / 64
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    w = 0.5 * (2 * math.pi / 64) ** 2
    norms = []
    for grp in pillow.clusters():
        if grp[-1] >= res.count:
            break
        psi = np.atleast_2d(pillow.evaluate(grp, pts))
        B = (psi * f.func(pts)) @ psi.T * w
        norms.append(np.linalg.norm(B, 2))
    assert np.allclose(res.block_norms, norms, atol=1e-10)
    assert res.norm == pytest.approx(max(norms), abs=1e-10)


def test_egorov_rate():
    e1 = qe.egorov_phase_check((1, 0), (200, 400))
    e2 = qe.egorov_phase_check((1, 0), (400, 800))
    # second-order Taylor remainder: sin^2 / (2|k|) at most
    assert e1 <= 1 / 400 + 1e-12
    assert e1 / e2 >= 1.6
    with pytest.raises(ValueError):
        qe.egorov_phase_check((1, 0), np.array([[0.0, 0.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.floats(50, 500))
def test_egorov_single_mode_bound(m1, m2, kn):
    k = np.array([[kn * 0.6, kn * 0.8]])
    m2n = m1 * m1 + m2 * m2
    assert qe.egorov_phase_check((m1, m2), k) <= m2n / (2 * (kn - math.sqrt(m2n))) + 1e-12


def test_triangle_observable_average():
    be = geom.hyperbolic_triangle(2, 3, 7)
    one = Observable.constant()
    assert qe.liouville_average(one, be) == pytest.approx(1.0)
    # odd under the mirror: Im w averages to zero on X
    assert abs(qe.liouville_average(Observable.position(lambda w: np.imag(w), "im"), be)) < 1e-14
