import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbiqe import flow, geom, qe
from orbiqe.flow import UnitPhasePoint, geodesic_advance

SPHERE = geom.sphere_quotient(1)
PILLOW = geom.pillowcase()
TRI = geom.hyperbolic_triangle(2, 3, 7)


def _start(backend, seed):
    F = flow.sample_liouville(backend, 1, seed)
    b, a = backend.base_and_direction(F)
    return UnitPhasePoint(b[0], float(a[0]))


def test_sphere_great_circle_period():
    s = UnitPhasePoint(np.array([1.0, 0.0, 0.0]), 0.7)
    s2 = geodesic_advance(s, 2 * math.pi, SPHERE)
    assert np.allclose(s2.base, s.base, atol=1e-12)
    assert s2.direction == pytest.approx(s.direction, abs=1e-12)
    # half way round lands on the antipode
    assert np.allclose(geodesic_advance(s, math.pi, SPHERE).base, -s.base, atol=1e-12)


def test_pillowcase_matches_unfolded_line():
    x0, a, t = np.array([1.0, 0.5]), 0.3, 17.0
    s = geodesic_advance(UnitPhasePoint(x0, a), t, PILLOW)
    y = np.mod(x0 + t * np.array([math.cos(a), math.sin(a)]), 2 * math.pi)
    if y[1] > math.pi:
        y = 2 * math.pi - y
    assert np.allclose(s.base, np.mod(y, 2 * math.pi), atol=1e-11)


def test_hyperbolic_unfolded_distance_is_time():
    s = UnitPhasePoint(1j, 0.4)
    for t in (0.5, 2.0, 7.0):
        s2 = geodesic_advance(s, t, TRI, fold=False)
        assert geom.hyperbolic_distance(s.base, s2.base) == pytest.approx(t, rel=1e-12)


def test_hyperbolic_folded_stays_in_domain():
    s = _start(TRI, 3)
    for t in (1.0, 10.0, 50.0):
        z = geodesic_advance(s, t, TRI).base
        assert TRI.contains(z, 1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 40.0), st.sampled_from([SPHERE, PILLOW, TRI]))
def test_reversibility(seed, t, backend):
    s = _start(backend, seed)
    s1 = geodesic_advance(s, t, backend)
    back = geodesic_advance(s1, -t, backend)
    assert float(backend.base_distance(back.base, s.base)) < 1e-9


def test_direction_flip_retraces_short_paths():
    # from a rounded state the retrace error grows like e^t, so keep t short
    s = _start(TRI, 8)
    s1 = geodesic_advance(s, 3.0, TRI)
    back = geodesic_advance(UnitPhasePoint(s1.base, s1.direction + math.pi), 3.0, TRI)
    assert float(TRI.base_distance(back.base, s.base)) < 1e-12


def test_sampling_is_seeded():
    assert np.array_equal(flow.sample_liouville(TRI, 50, 11), flow.sample_liouville(TRI, 50, 11))
    assert not np.array_equal(flow.sample_liouville(TRI, 50, 11), flow.sample_liouville(TRI, 50, 12))


def test_liouville_sampling_moments():
    # cos(theta) is uniform on [-1, 1] under area measure on the sphere
    F = flow.sample_liouville(geom.sphere_quotient(2), 40000, 1)
    z = geom.sphere_quotient(2).observable_coords(F)[:, 2]
    assert abs(np.mean(z)) < 0.02
    assert np.mean(z**2) == pytest.approx(1 / 3, abs=0.01)
    # on the pillowcase x2 is uniform on [0, pi]
    x = PILLOW.observable_coords(flow.sample_liouville(PILLOW, 40000, 2))
    assert np.mean(x[:, 1]) == pytest.approx(math.pi / 2, abs=0.03)


def test_triangle_monte_carlo_matches_fem_quadrature():
    f = qe.Observable.position(lambda w: 50 * np.abs(w) ** 2, "r2")
    mc, err = flow.monte_carlo_average(f, TRI, n=200_000, seed=0)
    ref = qe.liouville_average(f, TRI)
    assert abs(mc - ref) < 5 * err + 1e-3


def test_birkhoff_constant_and_flat_circle():
    one = qe.Observable.constant()
    assert flow.birkhoff_average(one, _start(TRI, 0), 20.0, 0.5, TRI) == pytest.approx(1.0)
    # horizontal line at height x2: cos x1 averages to 0 over whole periods
    cos1 = qe.Observable.position(lambda x: np.cos(x[:, 0]), "cos")
    s = UnitPhasePoint(np.array([0.0, 1.0]), 0.0)
    assert abs(flow.birkhoff_average(cos1, s, 200 * math.pi, math.pi / 64, PILLOW)) < 1e-3


def test_lyapunov_values():
    rep = flow.lyapunov_exponent(_start(TRI, 0), 200.0, TRI)
    assert rep.exponent == pytest.approx(1.0, abs=0.05)
    assert len(rep.batch_exponents) == 20
    rep = flow.lyapunov_exponent(_start(SPHERE, 0), 200.0, SPHERE)
    assert abs(rep.exponent) < 1e-3


def test_ergodicity_report_shape():
    f = qe.Observable.position(lambda x: np.cos(x[:, 0]), "cos_x1", exact_average=0.0)
    rep = flow.ergodicity_report([f], 6, 20.0, PILLOW, seed=4)
    o = rep.observables[0]
    assert len(o.averages) == 6 and o.liouville_reference == 0.0
    assert rep.variance("cos_x1") == pytest.approx(np.var([a for _, a in o.averages], ddof=1))
    with pytest.raises(ValueError):
        flow.ergodicity_report([f], 1, 20.0, PILLOW)
