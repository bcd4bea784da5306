"""Matrix elements of zeroth-order observables and the statistics built on them:
Weyl-type fits, quantum-ergodicity variance, eigenspace-averaged defect and
the flat Egorov phase check."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import geom
from .spectral import (
    EigenSystem,
    P2Space,
    PillowcaseEigenSystem,
    SphereEigenSystem,
    TriangleEigenSystem,
    _fold_sphere,
    triangle_mesh,
)


class UnsupportedObservableError(ValueError):
    pass


class WeylFitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Observable:
    """Position observable f(x) or flat direction multiplier a(xi/|xi|).

    Position functions receive arrays in the backend's observable
    coordinates: unit vectors (N, 3) on sphere quotients, points (N, 2) on
    the pillowcase and complex Poincare-disk points (N,) on triangle
    orbifolds. Direction functions receive the angle of xi.
    """

    kind: str
    func: Callable
    name: str = ""
    smoothness: str = "smooth"
    exact_average: float | None = None

    def __post_init__(self):
        if self.kind not in ("position", "direction"):
            raise ValueError(f"unknown observable kind {self.kind!r}")

    @classmethod
    def position(cls, func, name="", smoothness="smooth", exact_average=None):
        return cls("position", func, name, smoothness, exact_average)

    @classmethod
    def direction(cls, func, name="", smoothness="smooth", exact_average=None):
        return cls("direction", func, name, smoothness, exact_average)

    @classmethod
    def constant(cls, c: float = 1.0):
        return cls("position", lambda x: np.full(len(x), float(c)), f"const_{c:g}", "smooth", float(c))

    def __call__(self, coords, direction):
        if self.kind == "position":
            return self.func(coords)
        return self.func(direction)

    def __add__(self, other: "Observable") -> "Observable":
        if self.kind != other.kind:
            raise UnsupportedObservableError("cannot add position and direction observables")
        f, g = self.func, other.func
        avg = None
        if self.exact_average is not None and other.exact_average is not None:
            avg = self.exact_average + other.exact_average
        return Observable(self.kind, lambda x: f(x) + g(x), f"{self.name}+{other.name}", self.smoothness, avg)


@dataclass(frozen=True, eq=False)
class MatrixElementSeries:
    eigenvalues: np.ndarray
    values: np.ndarray
    observable: Observable
    tag: str

    def __len__(self):
        return len(self.values)


def _geometry(backend) -> geom.GeometryBackend:
    if isinstance(backend, geom.GeometryBackend):
        return backend
    if isinstance(backend, SphereEigenSystem):
        return geom.SphereQuotient(backend.n)
    if isinstance(backend, PillowcaseEigenSystem):
        return geom.Pillowcase()
    if isinstance(backend, TriangleEigenSystem):
        o = backend.orbifold
        return geom.HyperbolicTriangle(o.p, o.q, o.r)
    raise TypeError(f"cannot derive a geometry from {type(backend).__name__}")


def _direction_value(a: Callable, angle):
    # cos(m.x) mixes +m and -m, so the multiplier acts through its even part
    return 0.5 * (np.asarray(a(angle), dtype=float) + np.asarray(a(angle + math.pi), dtype=float))


def _circle_mean(a: Callable, n: int = 4096) -> float:
    return float(np.mean(a(2 * math.pi * np.arange(n) / n)))


def matrix_elements(eig: EigenSystem, obs: Observable) -> MatrixElementSeries:
    """Diagonal matrix elements <A psi_j, psi_j> along the spectrum."""
    if obs.kind == "position":
        vals = eig.diagonal(obs.func)
    else:
        if not isinstance(eig, PillowcaseEigenSystem):
            raise UnsupportedObservableError("direction observables need the pillowcase backend")
        m = eig.modes
        vals = _direction_value(obs.func, np.arctan2(m[:, 1], m[:, 0]))
        zero = np.all(m == 0, axis=1)
        vals[zero] = _circle_mean(obs.func)
    return MatrixElementSeries(np.asarray(eig.eigenvalues), np.asarray(vals, dtype=float), obs, eig.tag)


def liouville_average(obs: Observable, backend, quad: int = 5) -> float:
    """Phase-space average of the principal symbol of ``obs``."""
    if obs.kind == "direction":
        return _circle_mean(obs.func)
    g = _geometry(backend)
    f = obs.func
    if isinstance(g, geom.SphereQuotient):
        nt, nphi = 200, 400
        u, w = np.polynomial.legendre.leggauss(nt)
        phi = 2 * math.pi * (np.arange(nphi) + 0.5) / nphi
        st = np.sqrt(1 - u**2)[:, None]
        x = np.stack([st * np.cos(phi), st * np.sin(phi), np.broadcast_to(u[:, None], (nt, nphi))], axis=-1)
        fx = np.asarray(f(_fold_sphere(x.reshape(-1, 3), g.n)))
        return float(np.sum(fx.reshape(nt, nphi) * w[:, None]) / (2 * nphi))
    if isinstance(g, geom.Pillowcase):
        N = 512
        t = 2 * math.pi * (np.arange(N) + 0.5) / N
        X1, X2 = np.meshgrid(t, t[: N // 2], indexing="ij")
        return float(np.mean(f(np.stack([X1.ravel(), X2.ravel()], axis=-1))))
    space = P2Space(triangle_mesh(g.orbifold, quad))
    w = space.disk_points()
    dens = space.wdet * space.density
    a = np.asarray(f(w.ravel())).reshape(w.shape)
    b = np.asarray(f(np.conj(w).ravel())).reshape(w.shape)
    return float(np.sum(dens * (a + b)) / (2 * np.sum(dens)))


def weyl_constant(backend) -> float:
    """Leading coefficient of N(lambda) = C lambda^2: vol(X)/(4 pi)."""
    return float(backend.volume) / (4 * math.pi)


@dataclass(frozen=True)
class WeylFit:
    C: float
    predicted: float
    relative_error: float
    exponent: float
    n_points: int
    window: tuple


def _cluster_values(lam, rel_tol):
    cuts = np.nonzero(np.diff(lam) > rel_tol * np.maximum(lam[1:], 1.0))[0] + 1
    return np.split(np.arange(len(lam)), cuts)


def counting_profile(series: MatrixElementSeries, rel_tol: float = 1e-9):
    """N_A at each distinct eigenvalue, counting that eigenvalue's weight by half."""
    lam, v = series.eigenvalues, series.values
    groups = _cluster_values(lam, rel_tol)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    x = np.array([lam[g].mean() for g in groups])
    y = np.array([csum[g[0]] + 0.5 * (csum[g[-1] + 1] - csum[g[0]]) for g in groups])
    return x, y


def local_weyl_fit(series: MatrixElementSeries, backend, omega: float | None = None,
                   rel_tol: float = 1e-9, min_points: int = 50) -> WeylFit:
    """Fit N_A(lambda) ~ C lambda^2 over the top decade of the series.

    The exponent is the free log-log slope; C is the intercept with the
    slope held at 2.
    """
    lam = series.eigenvalues
    if len(lam) == 0:
        raise WeylFitError("empty series")
    top = lam[-1]
    window = (top / 10, top)
    if np.count_nonzero(lam >= window[0]) < min_points:
        raise WeylFitError(f"top decade holds fewer than {min_points} eigenvalues")
    x, y = counting_profile(series, rel_tol)
    sel = (x >= window[0]) & (x > 0)
    x, y = x[sel], y[sel]
    if np.any(y <= 0):
        raise WeylFitError("N_A is not positive on the fit window")
    lx, ly = np.log(x), np.log(y)
    slope = float(np.polyfit(lx, ly, 1)[0])
    C = float(np.exp(np.mean(ly - 2 * lx)))
    if omega is None:
        omega = series.observable.exact_average
        if omega is None:
            omega = liouville_average(series.observable, backend)
    pred = float(omega) * weyl_constant(backend)
    return WeylFit(C, pred, abs(C - pred) / abs(pred), slope, int(sel.sum()), window)


def pointwise_weyl(eig: SphereEigenSystem, point, lam: float, local_order: int = 1):
    """Sum of |psi_j(x)|^2 over lambda_j <= lam against |G_x| lambda^2/(4 pi)."""
    if not isinstance(eig, SphereEigenSystem):
        raise UnsupportedObservableError("pointwise sums need the sphere-quotient backend")
    N = eig.counting(lam)
    vals = eig.evaluate(np.arange(N), np.asarray(point, dtype=float)[None])
    measured = float(np.sum(np.asarray(vals).reshape(N) ** 2))
    predicted = local_order * lam**2 / (4 * math.pi)
    return measured, predicted, measured / predicted


def pointwise_weyl_at_cone(eig: SphereEigenSystem, n_c: int, lam: float):
    """Pointwise sum at the north-pole cone point of S^2/Z_n."""
    if not isinstance(eig, SphereEigenSystem):
        raise UnsupportedObservableError("pointwise sums need the sphere-quotient backend")
    if n_c != eig.n:
        raise ValueError(f"the pole of S^2/Z_{eig.n} has local group of order {eig.n}, not {n_c}")
    return pointwise_weyl(eig, [0.0, 0.0, 1.0], lam, n_c)


@dataclass(frozen=True)
class QEProfile:
    lambdas: np.ndarray
    variance: np.ndarray
    excluded: np.ndarray
    counts: np.ndarray

    def at(self, lam: float):
        """(V, excluded fraction) at the largest profile point <= lam."""
        i = int(np.searchsorted(self.lambdas, lam * (1 + 1e-12), side="right")) - 1
        if i < 0:
            raise ValueError("lambda below the first eigenvalue")
        return float(self.variance[i]), float(self.excluded[i])


def qe_variance_and_density(series: MatrixElementSeries, omega: float, eps: float) -> QEProfile:
    """Running variance V(lambda) of matrix elements about omega and the
    fraction of indices farther than eps from omega."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    dev = series.values - omega
    n = np.arange(1, len(dev) + 1)
    V = np.cumsum(dev**2) / n
    X = np.cumsum(np.abs(dev) > eps) / n
    # report only at the end of each eigenvalue cluster so N(lambda) is well defined
    ends = np.array([g[-1] for g in _cluster_values(series.eigenvalues, 1e-9)])
    return QEProfile(series.eigenvalues[ends], V[ends], X[ends], n[ends])


def _blocks(eig: EigenSystem, obs: Observable, groups):
    if obs.kind == "direction":
        if not isinstance(eig, PillowcaseEigenSystem):
            raise UnsupportedObservableError("direction observables need the pillowcase backend")
        d = matrix_elements(eig, obs).values
        return [np.diag(d[g]) for g in groups]
    if isinstance(eig, PillowcaseEigenSystem):
        kmax = int(np.abs(eig.modes[np.concatenate(groups)]).max())
        fhat, N = eig.fourier(obs.func, kmax)
        return [eig._entries(fhat, N, eig.modes[g][:, None], eig.modes[g][None, :]) for g in groups]
    return [eig.observable_matrix(obs.func, g) for g in groups]


@dataclass(frozen=True)
class DefectResult:
    norm: float
    ratio: float
    count: int
    block_norms: np.ndarray


def operator_average_defect(eig: EigenSystem, obs: Observable, lam: float, omega: float | None = None) -> DefectResult:
    """Norm of E K E where E<A>E is the eigenspace block compression of A
    and K = E<A>E - omega I, over eigenvalues <= lam."""
    if omega is None:
        omega = obs.exact_average if obs.exact_average is not None else liouville_average(obs, eig)
    N = eig.counting(lam)
    groups = [g for g in eig.clusters() if g[-1] < N]
    blocks = _blocks(eig, obs, groups)
    norms = np.array([np.linalg.norm(B - omega * np.eye(len(B)), 2) for B in blocks])
    top = float(norms.max()) if len(norms) else 0.0
    return DefectResult(top, top / N if N else 0.0, N, norms)


def egorov_phase_check(m, k_range, t: float = 1.0) -> float:
    """Largest gap between the exact phase t(|k| - |k+m|) and the
    transported-symbol phase -t m.k/|k| over the given modes.

    ``k_range`` is either an array of lattice vectors or a pair
    (kmin, kmax) selecting every lattice vector with kmin <= |k| <= kmax.
    """
    m = np.asarray(m, dtype=float)
    if isinstance(k_range, tuple) and len(k_range) == 2 and np.ndim(k_range[0]) == 0:
        lo, hi = k_range
        R = int(math.ceil(hi))
        r = np.arange(-R, R + 1)
        K1, K2 = np.meshgrid(r, r, indexing="ij")
        k = np.stack([K1.ravel(), K2.ravel()], axis=-1).astype(float)
        nk = np.linalg.norm(k, axis=1)
        k = k[(nk >= lo) & (nk <= hi)]
    else:
        k = np.atleast_2d(np.asarray(k_range, dtype=float))
    nk = np.linalg.norm(k, axis=1)
    if np.any(nk == 0):
        raise ValueError("k = 0 is excluded")
    if len(k) == 0:
        raise ValueError("empty k range")
    exact = t * (nk - np.linalg.norm(k + m, axis=1))
    symbol = -t * (k @ m) / nk
    return float(np.max(np.abs(exact - symbol)))
