import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbiqe import geom
from orbiqe.geom import MobiusTransform


def test_signature_classes():
    assert geom.classify_signature(2, 3, 7).geometry == "hyperbolic"
    assert geom.classify_signature(2, 3, 6).geometry == "euclidean"
    assert geom.classify_signature(2, 3, 5).geometry == "spherical"
    # orbifold area 2 pi (1 - 1/2 - 1/3 - 1/7) = pi / 21
    assert geom.classify_signature(2, 3, 7).area == pytest.approx(math.pi / 21, rel=1e-14)
    with pytest.raises(geom.GeometryError):
        geom.classify_signature(1, 3, 7)


@pytest.mark.parametrize("pqr", [(2, 3, 7), (2, 4, 5), (3, 3, 4), (2, 3, 8)])
def test_triangle_angles_and_area(pqr):
    orb = geom.build_triangle_group(*pqr)
    assert np.allclose(orb.angles, [math.pi / v for v in pqr], atol=1e-12)
    assert orb.numeric_area == pytest.approx(geom.classify_signature(*pqr).area, rel=1e-10)


def test_mobius_normalization_and_sign():
    M = MobiusTransform(2.0, 1.0, 0.0, 2.0)
    assert M.a * M.d - M.b * M.c == pytest.approx(1.0)
    assert M == MobiusTransform(-2.0, -1.0, 0.0, -2.0)
    with pytest.raises(geom.GeometryError):
        MobiusTransform(0.0, 1.0, 1.0, 0.0)


def test_rotation_order():
    R = MobiusTransform.rotation(1j, 2 * math.pi / 7)
    assert (R ** 7).isclose(MobiusTransform.identity(), 1e-12)
    assert R(1j) == pytest.approx(1j)


mobius = st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)).map(
    lambda v: MobiusTransform.rotation(complex(v[0], math.exp(v[1])), v[2]))
uhp = st.tuples(st.floats(-3, 3), st.floats(0.1, 3)).map(lambda v: complex(*v))


@settings(max_examples=60, deadline=None)
@given(mobius, uhp, uhp)
def test_mobius_preserves_distance(M, z, w):
    assert geom.hyperbolic_distance(M(z), M(w)) == pytest.approx(geom.hyperbolic_distance(z, w), rel=1e-8, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(mobius, mobius, uhp)
def test_mobius_group_law(A, B, z):
    assert (A @ B)(z) == pytest.approx(A(B(z)), rel=1e-9, abs=1e-9)
    assert (A @ A.inverse()).isclose(MobiusTransform.identity(), 1e-9)


@settings(max_examples=60, deadline=None)
@given(uhp)
def test_disk_roundtrip(z):
    w = geom.to_disk(z)
    assert abs(w) < 1
    assert geom.to_half_plane(w) == pytest.approx(z, rel=1e-10)
    assert geom.klein_to_disk(geom.disk_to_klein(w)) == pytest.approx(w, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(uhp)
def test_fold_lands_in_domain(z):
    orb = geom.build_triangle_group(2, 3, 7)
    zf, g = geom.fold_to_domain(z, orb)
    assert orb.contains(zf, 1e-9)
    assert g(z) == pytest.approx(zf, rel=1e-8, abs=1e-8)


def test_fold_is_idempotent_inside():
    orb = geom.build_triangle_group(2, 3, 7)
    z = orb.interior_point()
    zf, g = geom.fold_to_domain(z, orb)
    assert zf == pytest.approx(z)


@pytest.mark.parametrize("backend", [geom.sphere_quotient(3), geom.pillowcase(), geom.hyperbolic_triangle(2, 3, 7)],
                         ids=lambda b: b.tag)
def test_backend_frames_roundtrip(backend):
    rng = np.random.default_rng(5)
    F = backend.sample_frames(rng, 200)
    base, direction = backend.base_and_direction(F)
    F2 = backend.frames(base, direction)
    b2, d2 = backend.base_and_direction(F2)
    assert np.allclose(np.asarray(b2), np.asarray(base), atol=1e-10)
    assert np.allclose(np.exp(1j * d2), np.exp(1j * direction), atol=1e-10)
    # folding a sample is a no-op up to rounding
    Ff, _ = backend.fold_frames(F)
    bf, _ = backend.base_and_direction(Ff)
    assert np.max(backend.base_distance(bf, base)) < 1e-9


def test_backend_volumes():
    assert geom.sphere_quotient(3).volume == pytest.approx(4 * math.pi / 3)
    assert geom.pillowcase().volume == pytest.approx(2 * math.pi**2)
    assert geom.hyperbolic_triangle(2, 3, 7).volume == pytest.approx(math.pi / 21)


def test_triangle_samples_inside():
    be = geom.hyperbolic_triangle(2, 3, 7)
    z = be.sample_points(np.random.default_rng(0), 2000)
    assert np.all(be.contains(z, 1e-12))
