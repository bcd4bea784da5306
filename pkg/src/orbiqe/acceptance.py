"""Acceptance checks, shared by the ``report`` command and the test suite.

Each check returns a :class:`CheckResult` with the measured numbers, so a
failure explains itself.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import jn_zeros

from . import flow, geom, qe, spectral, symbols

FEM_SIGNATURE = (2, 3, 7)
FEM_LEVELS = (6, 7)
FEM_K = 180


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items())
        return f"[{status}] {self.number:2d} {self.title} ({self.seconds:.1f}s) {info}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(number, title):
    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, details = fn(*args, **kwargs)
            return CheckResult(number, title, bool(passed), details, time.perf_counter() - t0)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


# ---------------------------------------------------------------------------
# Observables used by the checks


def sphere_observables():
    return [
        qe.Observable.position(lambda x: 1 + 0.5 * x[:, 2] ** 2, "1+cos^2/2", exact_average=1 + 0.5 / 3),
        qe.Observable.position(lambda x: 2 + np.real((x[:, 0] + 1j * x[:, 1]) ** 6), "2+Re(x+iy)^6", exact_average=2.0),
        qe.Observable.position(lambda x: np.exp(x[:, 2]), "exp(cos)", exact_average=math.sinh(1.0)),
    ]


def pillowcase_observables():
    return [
        qe.Observable.position(lambda x: 1 + 0.5 * np.cos(x[:, 0]), "1+cos(x1)/2", exact_average=1.0),
        qe.Observable.position(lambda x: 2 + np.sin(x[:, 0]) * np.sin(x[:, 1]), "2+sin sin", exact_average=2.0),
        qe.Observable.direction(lambda t: np.cos(t) ** 2, "xi1^2/|xi|^2", exact_average=0.5),
    ]


def triangle_observables():
    return [
        qe.Observable.position(lambda w: 10 * np.real(w), "10 Re w"),
        qe.Observable.position(lambda w: 50 * np.abs(w) ** 2, "50|w|^2"),
        qe.Observable.position(lambda w: np.exp(-np.abs(w - 0.15) ** 2 / 0.005), "bump(0.15)"),
    ]


def ball_indicator(backend: geom.HyperbolicTriangle, fraction: float = 0.1):
    """Indicator of a hyperbolic ball whose area is ``fraction`` of vol(X).

    The ball is centered on the symmetry axis of X (the real diameter of the
    disk) at the point of the axis farthest from the other sides.
    """
    area = fraction * backend.volume
    rho = math.acosh(1 + area / (2 * math.pi))
    orb = backend.orbifold
    wA, wB, _ = orb.disk_vertices()
    xs = np.linspace(wA.real, wB.real, 2001)[1:-1]
    z = geom.to_half_plane(xs + 0j)
    # distance from the axis point to the two other geodesic sides (and their mirrors)
    dist = np.full(len(xs), np.inf)
    for side in orb.sides[1:]:
        foot = geom.hyperbolic_distance(z, side_reflect(side, z)) / 2
        dist = np.minimum(dist, foot)
    i = int(np.argmax(dist))
    center = complex(xs[i])
    c_uhp = geom.to_half_plane(center)

    def f(w):
        return (geom.hyperbolic_distance(geom.to_half_plane(np.asarray(w)), c_uhp) <= rho).astype(float)

    return f, center, rho, float(dist[i])


def side_reflect(side, z):
    S = side.reflection
    zc = np.conj(z)
    return (S[0, 0] * zc + S[0, 1]) / (S[1, 0] * zc + S[1, 1])


@lru_cache(maxsize=4)
def fem_system(level: int, k: int = FEM_K) -> spectral.TriangleEigenSystem:
    return spectral.triangle_orbifold_spectrum(*FEM_SIGNATURE, k, level)


# ---------------------------------------------------------------------------
# Checks


@_timed(1, "Weyl law on exact backends")
def check_weyl_exact():
    d = {}
    ok = True
    t0 = time.perf_counter()
    for n in (1, 2, 3):
        eig = spectral.sphere_quotient_spectrum(n, 60)
        fit = qe.local_weyl_fit(qe.matrix_elements(eig, qe.Observable.constant()), eig)
        d[f"C_sphere{n}"] = fit.C
        ok &= abs(fit.C - 1 / n) <= 0.05 / n and abs(fit.exponent - 2) <= 0.1
    eig = spectral.pillowcase_spectrum(200)
    fit = qe.local_weyl_fit(qe.matrix_elements(eig, qe.Observable.constant()), eig)
    d["C_pillowcase"] = fit.C
    ok &= abs(fit.C - math.pi / 2) <= 0.03 * math.pi / 2 and abs(fit.exponent - 2) <= 0.1
    d["runtime_s"] = time.perf_counter() - t0
    return ok and d["runtime_s"] < 5, d


@_timed(2, "pointwise Weyl at a cone point")
def check_pointwise_cone():
    d = {}
    ok = True
    for n in (1, 2, 3):
        eig = spectral.sphere_quotient_spectrum(n, 60)
        lam = 60.0
        L = int(eig.degrees[eig.counting(lam) - 1])
        measured, predicted, ratio = qe.pointwise_weyl_at_cone(eig, n, lam)
        exact = n * (L + 1) ** 2 / (4 * math.pi)
        d[f"relerr_n{n}"] = abs(measured / exact - 1)
        d[f"ratio_n{n}"] = ratio
        ok &= d[f"relerr_n{n}"] <= 1e-10 and 0.9 <= ratio <= 1.1
    return ok, d


@_timed(3, "local Weyl law and additivity")
def check_local_weyl():
    d = {}
    ok = True
    cases = [(f"sphere{n}", spectral.sphere_quotient_spectrum(n, 60), sphere_observables()) for n in (1, 3)]
    cases.append(("pillowcase", spectral.pillowcase_spectrum(200), pillowcase_observables()))
    worst_add = 0.0
    for label, eig, observables in cases:
        series = []
        for obs in observables:
            s = qe.matrix_elements(eig, obs)
            series.append(s)
            fit = qe.local_weyl_fit(s, eig)
            d[f"{label}:{obs.name}"] = fit.relative_error
            ok &= fit.relative_error <= 0.05 and abs(fit.exponent - 2) <= 0.1
        a, b = observables[0], observables[1]
        both = qe.matrix_elements(eig, a + b).values
        worst_add = max(worst_add, float(np.max(np.abs(both - (series[0].values + series[1].values)))))
    d["additivity_maxdiff"] = worst_add
    return ok and worst_add <= 1e-12, d


@_timed(4, "finite-element backend")
def check_fem():
    d = {}
    t0 = time.perf_counter()
    mu = spectral.disk_dirichlet_eigenvalues(3, 1)[0]
    target = jn_zeros(0, 1)[0] ** 2
    d["disk_relerr"] = abs(mu / target - 1)
    coarse, fine = (fem_system(level) for level in FEM_LEVELS)
    a, b = coarse.eigenvalues[:20], fine.eigenvalues[:20]
    pos = b > 1e-3
    d["max_rel_change_first20"] = float(np.max(np.abs(a[pos] / b[pos] - 1)))
    d["zero_mode"] = float(b[~pos].max()) if (~pos).any() else 0.0
    fit = qe.local_weyl_fit(qe.matrix_elements(fine, qe.Observable.constant()), fine)
    d["C"] = fit.C
    d["C_relerr"] = abs(fit.C * 84 - 1)
    d["exponent"] = fit.exponent
    d["pairs"] = len(fine)
    d["runtime_s"] = time.perf_counter() - t0
    ok = (d["disk_relerr"] <= 0.005 and d["max_rel_change_first20"] < 0.01 and d["C_relerr"] <= 0.10
          and abs(fit.exponent - 2) <= 0.1 and len(fine) >= 300 and d["runtime_s"] < 300)
    return ok, d


@_timed(5, "quantum ergodicity on (2,3,7)")
def check_qe_positive():
    eig = fem_system(FEM_LEVELS[-1])
    d = {"pairs": len(eig)}
    ok = len(eig) >= 300
    eps = 0.05
    for obs in triangle_observables():
        omega = qe.liouville_average(obs, eig)
        prof = qe.qe_variance_and_density(qe.matrix_elements(eig, obs), omega, eps)
        v_top, x_top = prof.at(eig.lambda_max)
        v_half, _ = prof.at(eig.lambda_max / 2)
        d[f"{obs.name}:V_top/V_half"] = v_top / v_half
        ok &= v_top < v_half
        # Chebyshev: excluded fraction <= V / eps^2 at every profile point
        ok &= bool(np.all(prof.excluded <= prof.variance / eps**2))
        ok &= x_top <= v_top / eps**2
    return ok, d


@_timed(6, "quantum ergodicity negative control (pillowcase)")
def check_qe_negative():
    eig = spectral.pillowcase_spectrum(200)
    obs = pillowcase_observables()[2]
    prof = qe.qe_variance_and_density(qe.matrix_elements(eig, obs), 0.5, 0.1)
    grid = [25.0, 50.0, 100.0, 200.0]
    V = [prof.at(x)[0] for x in grid]
    d = {"V(200)": V[-1], "relerr_to_1/8": abs(V[-1] * 8 - 1), "V_profile": V}
    no_decrease = all(V[i + 1] >= V[i] * (1 - 1e-3) for i in range(len(V) - 1))
    d["no_decreasing_trend"] = no_decrease
    return d["relerr_to_1/8"] <= 0.2 and no_decrease, d


def _brute_block(modes, f, grid=64):
    t = 2 * math.pi * np.arange(grid) / grid
    X1, X2 = np.meshgrid(t, t, indexing="ij")
    x = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    fx = f(x)
    psi = []
    for m in modes:
        if m[0] == 0 and m[1] == 0:
            psi.append(np.full(len(x), 1 / (math.pi * math.sqrt(2))))
        else:
            psi.append(np.cos(x @ m) / math.pi)
    psi = np.array(psi)
    # integrate over the torus and halve: the integrand is even
    return 0.5 * (psi * fx) @ psi.T * (2 * math.pi / grid) ** 2


@_timed(7, "operator-average defect")
def check_defect():
    d = {}
    eig = spectral.pillowcase_spectrum(math.sqrt(50))
    ok = True
    # cos x1 has no entries inside a shell |m| = const; the second observable does
    cases = [
        qe.Observable.position(lambda x: np.cos(x[:, 0]), "cos x1", exact_average=0.0),
        qe.Observable.position(lambda x: np.cos(2 * x[:, 0]) + np.cos(x[:, 0] + x[:, 1]), "cos 2x1+cos(x1+x2)",
                               exact_average=0.0),
    ]
    for obs in cases:
        res = qe.operator_average_defect(eig, obs, math.sqrt(50), 0.0)
        brute = 0.0
        for g in eig.clusters():
            B = _brute_block(eig.modes[g].astype(float), obs.func)
            brute = max(brute, float(np.linalg.norm(B, 2)))
        d[f"{obs.name}:defect"] = res.norm
        d[f"{obs.name}:absdiff"] = abs(res.norm - brute)
        ok &= abs(res.norm - brute) <= 1e-10
    s = spectral.sphere_quotient_spectrum(3, 40)
    obs = qe.Observable.position(lambda x: x[:, 2] ** 2, "cos^2", exact_average=1 / 3)
    r1 = qe.operator_average_defect(s, obs, 20.0)
    r2 = qe.operator_average_defect(s, obs, 40.0)
    d["sphere_ratio_20"] = r1.ratio
    d["sphere_ratio_40"] = r2.ratio
    return ok and r2.ratio < r1.ratio, d


@_timed(8, "Egorov phase check")
def check_egorov():
    worst = max(qe.egorov_phase_check(m, (200, 400)) for m in [(1, 0), (0, 1)])
    near200 = qe.egorov_phase_check((1, 0), (200, 201))
    near400 = qe.egorov_phase_check((1, 0), (400, 401))
    d = {"max_mismatch": worst, "at200": near200, "at400": near400, "factor": near200 / near400}
    return worst <= 2.5e-3 and near200 / near400 >= 1.6, d


@_timed(9, "classical ergodicity evidence")
def check_classical(seed: int = 2024):
    d = {}
    hyp = geom.hyperbolic_triangle(*FEM_SIGNATURE)
    start = flow.UnitPhasePoint(hyp.orbifold.center, 0.7)
    lyap = flow.lyapunov_exponent(start, 1e4, hyp, seed=seed)
    d["lyapunov"] = lyap.exponent
    d["lyapunov_halfwidth"] = lyap.half_width
    bump = triangle_observables()[2]
    v_short = flow.ergodicity_report([bump], 100, 1e2, hyp, seed=seed).observables[0].variance
    v_long = flow.ergodicity_report([bump], 100, 1e4, hyp, seed=seed).observables[0].variance
    d["var_T1e2"], d["var_T1e4"] = v_short, v_long
    flat = geom.pillowcase()
    a = pillowcase_observables()[2]
    f_short = flow.ergodicity_report([a], 100, 1e2, flat, seed=seed).observables[0].variance
    f_long = flow.ergodicity_report([a], 100, 1e4, flat, seed=seed).observables[0].variance
    d["flat_var_T1e2"], d["flat_var_T1e4"] = f_short, f_long
    rev = 0.0
    rng = np.random.default_rng(seed)
    for be in (hyp, geom.sphere_quotient(3), flat):
        for _ in range(3):
            F = be.sample_frames(rng, 1)[0]
            s = flow.UnitPhasePoint(be.base_and_direction(F[None])[0][0], be.base_and_direction(F[None])[1][0])
            back = flow.geodesic_advance(flow.geodesic_advance(s, 100.0, be), -100.0, be)
            rev = max(rev, float(be.base_distance(s.base, back.base)))
    d["reversibility"] = rev
    ok = (0.95 <= lyap.exponent <= 1.05 and v_long < v_short / 10 and f_long >= f_short * (1 - 1e-9)
          and rev <= 1e-9)
    return ok, d


@_timed(10, "canonical trace")
def check_canonical_trace():
    sym = symbols.japanese_bracket_symbol(-2.0, 4)
    tr = symbols.canonical_trace(sym)
    R = 1000
    r = np.arange(-R, R + 1.0)
    direct = float(np.sum((1 + r[:, None] ** 2 + r[None, :] ** 2) ** -2.0))
    a = R + 0.5
    inner = integrate.dblquad(lambda y, x: (1 + x * x + y * y) ** -2, -a, a, -a, a, epsabs=1e-13, epsrel=1e-13)[0]
    direct = 0.5 * (direct + math.pi - inner)
    d = {"TR": tr, "lattice": direct, "relerr": abs(tr / direct - 1)}
    A = symbols.power_symbol(-3.5, lambda u: 1 + u[:, 0] ** 2)
    B = symbols.power_symbol(-2.5, lambda u: u[:, 0] ** 4 - u[:, 1] ** 2)
    alpha, beta = 0.7, -1.3
    lhs = symbols.canonical_trace(A.scale(alpha) + B.scale(beta))
    rhs = alpha * symbols.canonical_trace(A) + beta * symbols.canonical_trace(B)
    d["linearity_err"] = abs(lhs - rhs) / max(abs(rhs), 1.0)
    return d["relerr"] <= 1e-6 and d["linearity_err"] <= 1e-10, d


@_timed(11, "zeta residue and Tauberian identity")
def check_zeta():
    t0 = time.perf_counter()
    eig = spectral.pillowcase_spectrum(200)
    d = {}
    ok = True
    cases = [
        (qe.Observable.constant(), symbols.residue_trace(symbols.power_symbol(-2.0))),
        (pillowcase_observables()[2], symbols.residue_trace(symbols.power_symbol(-2.0, lambda u: u[:, 0] ** 2))),
    ]
    f = pillowcase_observables()[0]
    # position observable: the residue density is f(x)|xi|^-2, whose trace is pi times the average of f
    cases.append((f, math.pi * qe.liouville_average(f, geom.pillowcase())))
    for obs, tau in cases:
        probe = symbols.zeta_residue(eig, obs)
        R = abs(probe.residue)
        d[f"{obs.name}:|R|"] = R
        d[f"{obs.name}:sign"] = probe.sign
        ok &= abs(R / probe.tauberian - 1) <= 0.02 and abs(R / tau - 1) <= 0.02
        if obs.name.startswith("const"):
            d["identity_relerr_to_pi"] = abs(R / math.pi - 1)
            ok &= d["identity_relerr_to_pi"] <= 0.01
    d["runtime_s"] = time.perf_counter() - t0
    return ok and d["runtime_s"] < 30, d


CHECKS = [check_weyl_exact, check_pointwise_cone, check_local_weyl, check_fem, check_qe_positive,
          check_qe_negative, check_defect, check_egorov, check_classical, check_canonical_trace, check_zeta]


def run_all(verbose: bool = False) -> list:
    out = []
    for check in CHECKS:
        res = check()
        if verbose:
            print(res.line(), flush=True)
        out.append(res)
    return out
