"""Multiplier symbols on R^2: finite parts, canonical and residue traces on
the pillowcase, and zeta-function residues."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import mpmath
import numpy as np
from scipy import integrate

from .spectral import EigenSystem, PillowcaseEigenSystem, SphereEigenSystem, pillowcase_spectrum


class PoleError(ValueError):
    """A degree -2 term makes the regularized integral singular."""


class DegreeError(ValueError):
    pass


class ZetaTailError(RuntimeError):
    pass


N_CIRCLE = 2048


def smooth_cutoff(r):
    """Radial cutoff: 0 for r <= 1/2, 1 for r >= 1, C-infinity in between."""
    r = np.asarray(r, dtype=float)
    s = np.clip(2 * r - 1, 0.0, 1.0)

    def psi(u):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(u > 0, np.exp(-1 / np.where(u > 0, u, 1.0)), 0.0)

    a, b = psi(s), psi(1 - s)
    return a / (a + b)


def circle_points(n: int = N_CIRCLE) -> np.ndarray:
    """``n`` equispaced unit vectors; the second half is the exact negation of the first."""
    phi = 2 * math.pi * np.arange(n // 2) / n
    half = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    return np.concatenate([half, -half])


@dataclass(frozen=True, eq=False)
class HomogeneousTerm:
    """h(xi/|xi|) |xi|^degree, with ``h`` acting on arrays of unit vectors (N, 2)."""

    degree: float
    angular: Callable

    def __call__(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        r = np.linalg.norm(xi, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = xi / r[:, None]
            return np.where(r > 0, self.angular(u) * r**self.degree, 0.0)

    def circle_integral(self, n: int = N_CIRCLE) -> float:
        return float(np.sum(self.angular(circle_points(n))) * 2 * math.pi / n)

    def fourier(self, n: int = 256, tol: float = 1e-15):
        """Fourier coefficients c_nu of h(phi) = sum c_nu e^{i nu phi}, nonzero ones only."""
        phi = 2 * math.pi * np.arange(n) / n
        c = np.fft.fft(self.angular(np.stack([np.cos(phi), np.sin(phi)], axis=-1))) / n
        nus = np.fft.fftfreq(n, 1 / n).astype(int)
        keep = np.abs(c) > tol * max(1.0, np.abs(c).max())
        return {int(v): complex(x) for v, x in zip(nus[keep], c[keep])}

    def scaled(self, a: float) -> "HomogeneousTerm":
        h = self.angular
        return HomogeneousTerm(self.degree, lambda u: a * h(u))


def _sorted_sum(arrays):
    # summing sorted values makes the result independent of the term order
    return np.sum(np.sort(np.stack(arrays), axis=0), axis=0)


@dataclass(frozen=True, eq=False)
class ClassicalSymbol:
    """x-independent symbol sigma ~ sum_j theta(xi) k_j(xi).

    ``exact`` is the full symbol when it differs from the cut-off sum of
    its terms (for example (1+|xi|^2)^-2 against its large-|xi| expansion).
    """

    terms: tuple
    cutoff: Callable = smooth_cutoff
    exact: Callable | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def order(self) -> float:
        return max(t.degree for t in self.terms) if self.terms else -math.inf

    def expansion(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        theta = self.cutoff(np.linalg.norm(xi, axis=1))
        return theta * sum((t(xi) for t in self.terms), np.zeros(len(xi)))

    def __call__(self, xi):
        if self.exact is not None:
            return np.asarray(self.exact(np.atleast_2d(np.asarray(xi, dtype=float))), dtype=float)
        return self.expansion(xi)

    def remainder(self, xi):
        """sigma minus its cut-off homogeneous expansion."""
        if self.exact is None:
            return np.zeros(len(np.atleast_2d(xi)))
        return self(xi) - self.expansion(xi)

    def degree_term(self, degree: float):
        """Sum of all terms of the given degree, or None."""
        sel = [t for t in self.terms if t.degree == degree]
        if not sel:
            return None
        hs = [t.angular for t in sel]
        return HomogeneousTerm(degree, lambda u: _sorted_sum([h(u) for h in hs]))

    def __add__(self, other: "ClassicalSymbol") -> "ClassicalSymbol":
        return self.combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self.combine(other, 1.0, -1.0)

    def scale(self, a: float) -> "ClassicalSymbol":
        ex = None if self.exact is None else (lambda xi, e=self.exact: a * e(xi))
        return ClassicalSymbol(tuple(t.scaled(a) for t in self.terms), self.cutoff, ex, self.name)

    def combine(self, other: "ClassicalSymbol", a: float, b: float) -> "ClassicalSymbol":
        if other.cutoff is not self.cutoff:
            raise ValueError("symbols must share a cutoff")
        terms = tuple(t.scaled(a) for t in self.terms) + tuple(t.scaled(b) for t in other.terms)
        ex = None
        if self.exact is not None or other.exact is not None:
            fa, fb = self, other
            ex = lambda xi: a * fa(xi) + b * fb(xi)  # noqa: E731
        return ClassicalSymbol(terms, self.cutoff, ex)

    def __mul__(self, other: "ClassicalSymbol") -> "ClassicalSymbol":
        if other.cutoff is not self.cutoff:
            raise ValueError("symbols must share a cutoff")
        pairs: dict = {}
        for s in self.terms:
            for t in other.terms:
                pairs.setdefault(s.degree + t.degree, []).append((s.angular, t.angular))
        terms = []
        for deg in sorted(pairs, reverse=True):
            group = pairs[deg]
            terms.append(HomogeneousTerm(deg, lambda u, g=group: _sorted_sum([h1(u) * h2(u) for h1, h2 in g])))
        ex = None
        if self.exact is not None or other.exact is not None:
            fa, fb = self, other
            ex = lambda xi: fa(xi) * fb(xi)  # noqa: E731
        return ClassicalSymbol(tuple(terms), self.cutoff, ex)


def power_symbol(z: float, a: Callable | None = None, cutoff=smooth_cutoff) -> ClassicalSymbol:
    """theta(xi) a(xi/|xi|) |xi|^z."""
    h = a if a is not None else (lambda u: np.ones(len(u)))
    return ClassicalSymbol((HomogeneousTerm(z, h),), cutoff)


def japanese_bracket_symbol(power: float = -2.0, J: int = 4, cutoff=smooth_cutoff) -> ClassicalSymbol:
    """(1 + |xi|^2)^power with its expansion in |xi|^(2 power - 2j), j = 0..J."""
    one = lambda u: np.ones(len(u))  # noqa: E731
    terms = []
    for j in range(J + 1):
        coef = float(mpmath.binomial(power, j))
        terms.append(HomogeneousTerm(2 * power - 2 * j, lambda u, c=coef: c * one(u)))
    return ClassicalSymbol(tuple(terms), cutoff, lambda xi: (1 + np.sum(np.asarray(xi) ** 2, axis=1)) ** power,
                           f"(1+|xi|^2)^{power:g}")


# ---------------------------------------------------------------------------
# Homogeneous pieces


def obstruction_coefficients(term: HomogeneousTerm, k: int, n_circle: int = N_CIRCLE) -> list:
    """S(eta^alpha sigma) for |alpha| = k, ordered alpha = (k, 0), (k-1, 1), ..., (0, k)."""
    if k < 0 or term.degree != -2 - k:
        raise DegreeError(f"term of degree {term.degree} is not of degree -2-{k}")
    u = circle_points(n_circle)
    h = term.angular(u)
    half = n_circle // 2
    out = []
    for a1 in range(k, -1, -1):
        g = u[:, 0] ** a1 * u[:, 1] ** (k - a1) * h
        # pair eta with -eta so parity-odd densities cancel exactly
        out.append(float(np.sum(g[:half] + g[half:]) * 2 * math.pi / n_circle))
    return out


def _radial_part(theta, s):
    """int_0^1 theta(r) r^(s+1) dr - 1/(s+2): regularized radial integral of theta r^(s+1)."""
    val = integrate.quad(lambda r: float(theta(np.array([r]))[0]) * r ** (s + 1), 0.5, 1.0,
                         epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return val - 1 / (s + 2)


def _remainder_integral(symbol: ClassicalSymbol, n_phi: int = 256) -> float:
    """int_{R^2} (sigma - sum theta k_j): polar quadrature, trapezoid in angle."""
    if symbol.exact is None:
        return 0.0
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    u = np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    def ring(r):
        return float(np.mean(symbol.remainder(r * u))) * 2 * math.pi * r

    total = 0.0
    for a, b in ((0.0, 0.5), (0.5, 1.0), (1.0, 4.0), (4.0, np.inf)):
        total += integrate.quad(ring, a, b, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    return total


def finite_part(symbol: ClassicalSymbol) -> float:
    """Regularized integral (2 pi)^-2 ~int sigma(xi) dxi over R^2."""
    for t in symbol.terms:
        if t.degree == -2:
            raise PoleError("degree -2 term: the regularized integral has a pole; use residue_trace")
    total = _remainder_integral(symbol)
    for t in symbol.terms:
        total += t.circle_integral() * _radial_part(symbol.cutoff, t.degree)
    return total / (2 * math.pi) ** 2


# ---------------------------------------------------------------------------
# Generalized Epstein zeta of the square lattice

_DPS = 30


@lru_cache(maxsize=256)
def epstein_harmonic(nu: int, degree: float) -> float:
    """Analytic continuation of sum over m != 0 of e^{i nu arg m} |m|^degree.

    Uses the theta-function split of the Mellin integral; for the square
    lattice only nu divisible by 4 survive, and the result is real.
    """
    nu = abs(int(nu))
    if nu % 4:
        return 0.0
    with mpmath.workdps(_DPS):
        w = (nu - mpmath.mpf(degree)) / 2
        if nu == 0 and w == 1:
            raise PoleError("the lattice zeta has a pole at degree -2")
        R = int(math.ceil(math.sqrt((nu + 80) / math.pi))) + 2
        S = mpmath.mpf(0)
        pi = mpmath.pi
        for m1 in range(-R, R + 1):
            for m2 in range(-R, R + 1):
                if m1 == 0 and m2 == 0:
                    continue
                x = pi * (m1 * m1 + m2 * m2)
                P = mpmath.mpc(m1, m2) ** nu
                term = x ** (-w) * mpmath.gammainc(w, x) + x ** (w - nu - 1) * mpmath.gammainc(nu + 1 - w, x)
                S += P * term
        # Z = pi^w Lambda / Gamma(w); rgamma keeps the nonpositive integers finite
        Z = S * mpmath.rgamma(w)
        if nu == 0:
            Z += mpmath.rgamma(w) / (w - 1) - mpmath.rgamma(w + 1)
        Z *= pi**w
        return float(mpmath.re(Z))


def lattice_zeta(term: HomogeneousTerm) -> float:
    """Continued lattice sum over m != 0 of the homogeneous term."""
    return float(sum((c * epstein_harmonic(nu, term.degree)).real for nu, c in term.fourier().items()))


def _lattice_remainder(symbol: ClassicalSymbol, R: int = 400) -> float:
    """Sum over Z^2 of sigma minus its cut-off expansion (sigma(0) included)."""
    if symbol.exact is None:
        return 0.0
    total = 0.0
    r = np.arange(-R, R + 1)
    for m1 in np.array_split(r, 8):
        M1, M2 = np.meshgrid(m1, r, indexing="ij")
        xi = np.stack([M1.ravel(), M2.ravel()], axis=-1).astype(float)
        xi = xi[np.sum(xi**2, axis=1) <= R * R]
        total += float(np.sum(symbol.remainder(xi)))
    return total


def canonical_trace(symbol: ClassicalSymbol, backend="pillowcase") -> float:
    """Canonical trace of the multiplier sigma(D) on the pillowcase.

    Half the regularized torus sum: the absolutely convergent lattice sum of
    sigma minus its expansion, plus continued lattice sums of each term.
    """
    if getattr(backend, "tag", backend) != "pillowcase":
        raise ValueError("canonical_trace is implemented for the pillowcase only")
    for t in symbol.terms:
        if t.degree == -2:
            raise PoleError("degree -2 term: the canonical trace has a pole; use residue_trace")
        if t.degree > -2 and float(t.degree).is_integer():
            raise PoleError(f"integer order {t.degree} > -2 is outside the canonical trace domain")
    total = _lattice_remainder(symbol)
    for t in symbol.terms:
        total += lattice_zeta(t)
    return 0.5 * total


def residue_trace(symbol: ClassicalSymbol, backend="pillowcase") -> float:
    """Half the circle integral of the degree -2 component (0 if absent)."""
    t = symbol.degree_term(-2)
    return 0.0 if t is None else 0.5 * t.circle_integral()


# ---------------------------------------------------------------------------
# Zeta residues


@dataclass(frozen=True)
class ZetaProbe:
    z0: float
    eps: tuple
    values: tuple
    residue: float
    uncertainty: float
    sign: float
    C_A: float
    weyl_exponent: float
    cutoff: float
    estimates: tuple = field(default=())

    @property
    def tauberian(self) -> float:
        """n C_A with n = 2."""
        return 2 * self.C_A


def zeta_residue(source, obs=None, eps=(0.2, 0.1, 0.05, 0.02), lambda_max: float = 200.0) -> ZetaProbe:
    """R = lim (-eps) zeta_A(-2 - eps) for zeta_A(z) = sum_j <A psi_j, psi_j> lambda_j^z.

    The sum runs over 0 < lambda_j <= Lambda; the tail beyond Lambda is
    replaced by the continuation of the fitted Weyl term C_A lambda^2,
    which contributes 2 C_A Lambda^-eps / eps. R is extrapolated to
    eps = 0 by a quadratic fit; the uncertainty is its distance from the
    linear fit.
    """
    from .qe import Observable, local_weyl_fit, matrix_elements

    if isinstance(source, str):
        if source != "pillowcase":
            raise ValueError(f"unknown zeta source {source!r}")
        source = pillowcase_spectrum(lambda_max)
    if not isinstance(source, (PillowcaseEigenSystem, SphereEigenSystem)):
        raise ValueError("zeta residues need an exact backend")
    obs = obs if obs is not None else Observable.constant()
    series = matrix_elements(source, obs)
    fit = local_weyl_fit(series, source)
    if abs(fit.exponent - 2) > 0.1 or not fit.C > 0:
        raise ZetaTailError(f"Weyl tail model unusable: exponent {fit.exponent:.4f}, C {fit.C:.6g}")
    lam, v = series.eigenvalues, series.values
    pos = lam > 0
    L = float(lam[-1])
    eps = tuple(sorted(eps, reverse=True))
    values, R = [], []
    for e in eps:
        z = float(np.sum(v[pos] * lam[pos] ** (-2 - e))) + 2 * fit.C * L ** (-e) / e
        values.append(z)
        R.append(-e * z)
    x = np.array(eps)
    quad_fit = np.polyfit(x, R, 2)[-1]
    lin_fit = np.polyfit(x, R, 1)[-1]
    return ZetaProbe(-2.0, eps, tuple(values), float(quad_fit), float(abs(quad_fit - lin_fit)),
                     float(np.sign(quad_fit)), fit.C, fit.exponent, L, tuple(R))
