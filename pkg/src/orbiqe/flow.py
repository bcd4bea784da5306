"""Geodesic flow on S*X with folding, and ergodicity diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import mpmath
import numpy as np
from scipy import linalg, stats

from .geom import (
    FOLD_CAP,
    FoldingError,
    GeometryBackend,
    HyperbolicTriangle,
    mp_triangle_sides,
)

TWO_PI = 2 * math.pi


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class UnitPhasePoint:
    """A point of S*X: base point in the fundamental domain and a direction angle.

    Base points are unit vectors for sphere quotients, pairs (x1, x2) for the
    pillowcase and upper half-plane complex numbers for triangle orbifolds.
    ``frame`` caches the group element the point was produced from, so that
    chained flow calls do not lose precision.
    """

    base: Any
    direction: float
    frame: Any = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "direction", float(self.direction) % TWO_PI)


def _float_frame(s: UnitPhasePoint, backend: GeometryBackend) -> np.ndarray:
    if isinstance(s.frame, np.ndarray):
        return s.frame
    if isinstance(s.frame, tuple):
        return np.array([[float(s.frame[0]), float(s.frame[1])], [float(s.frame[2]), float(s.frame[3])]])
    return backend.frames(np.asarray(s.base)[None] if backend.frame_size == 3 else s.base, s.direction)[0]


def _point_from_frame(F: np.ndarray, backend: GeometryBackend) -> UnitPhasePoint:
    base, a = backend.base_and_direction(F[None])
    return UnitPhasePoint(base[0], float(a[0]), F)


# -- high-precision hyperbolic path -----------------------------------------

def _mp_frame(s: UnitPhasePoint, dps: int):
    if isinstance(s.frame, tuple):
        return s.frame
    with mpmath.workdps(dps):
        z = complex(s.base)
        x, y = mpmath.mpf(z.real), mpmath.mpf(z.imag)
        sy = mpmath.sqrt(y)
        h = (mpmath.mpf(s.direction) - mpmath.pi / 2) / 2
        c, sn = mpmath.cos(h), mpmath.sin(h)
        return (sy * c - x / sy * sn, sy * sn + x / sy * c, -sn / sy, c / sy)


def _mp_fold(M, sides, tol, cap=FOLD_CAP):
    a, b, c, d = M
    parity = False
    for _ in range(cap):
        # an odd number of reflections acts on the conjugate point
        e = -1j if parity else 1j
        z = (a * e + b) / (c * e + d)
        worst, idx = None, -1
        for k, (x0, rad, sign, _) in enumerate(sides):
            if rad is None:
                v = sign * (z.real - x0)
            else:
                v = sign * (abs(z - x0) ** 2 - rad**2) / rad**2
            if worst is None or v < worst:
                worst, idx = v, k
        if worst >= -tol:
            break
        S = sides[idx][3]
        a, b, c, d = (S[0, 0] * a + S[0, 1] * c, S[0, 0] * b + S[0, 1] * d,
                      S[1, 0] * a + S[1, 1] * c, S[1, 0] * b + S[1, 1] * d)
        parity = not parity
    else:
        raise FoldingError(f"folding exceeded {cap} reflections", (a, b, c, d), z)
    if parity:
        a, b = -a, -b
    return (a, b, c, d)


def _advance_hyperbolic(s: UnitPhasePoint, t: float, backend: HyperbolicTriangle, fold: bool):
    dps = 30 + int(math.ceil(0.45 * abs(t)))
    with mpmath.workdps(dps):
        M = _mp_frame(s, dps)
        sides = mp_triangle_sides(backend.orbifold, dps)
        tol = mpmath.mpf(10) ** (-(dps - 8))
        n = max(1, int(math.ceil(abs(t) / 0.5)))
        h = mpmath.mpf(t) / n
        e, ei = mpmath.exp(h / 2), mpmath.exp(-h / 2)
        a, b, c, d = M
        for _ in range(n):
            a, b, c, d = a * e, b * ei, c * e, d * ei
            if fold:
                a, b, c, d = _mp_fold((a, b, c, d), sides, tol)
        det = a * d - b * c
        r = mpmath.sqrt(det)
        M = (a / r, b / r, c / r, d / r)
        z = (M[0] * 1j + M[1]) / (M[2] * 1j + M[3])
        ang = mpmath.pi / 2 - 2 * mpmath.arg(M[2] * 1j + M[3])
        return UnitPhasePoint(complex(z), float(ang % (2 * mpmath.pi)), M)


def geodesic_advance(s: UnitPhasePoint, t: float, backend: GeometryBackend, fold: bool = True) -> UnitPhasePoint:
    """Flow ``s`` by arclength ``t`` with closed-form constant-curvature
    geodesics, folding back into the fundamental domain."""
    if not math.isfinite(t):
        raise ValueError("flow time must be finite")
    if isinstance(backend, HyperbolicTriangle):
        return _advance_hyperbolic(s, t, backend, fold)
    F = _float_frame(s, backend) @ backend.flow_matrix(t)
    if fold:
        F = backend.fold_frames(F[None])[0][0]
    return _point_from_frame(F, backend)


def advance_frames(F: np.ndarray, t: float, backend: GeometryBackend) -> np.ndarray:
    """Vectorized float version of :func:`geodesic_advance` on a frame stack."""
    return backend.fold_frames(F @ backend.flow_matrix(t))[0]


# -- Birkhoff averages -------------------------------------------------------

def _obs_name(f) -> str:
    return getattr(f, "name", None) or getattr(f, "__name__", None) or repr(f)


def birkhoff_frames(observables: Sequence[Callable], F: np.ndarray, T: float, dt: float,
                    backend: GeometryBackend) -> np.ndarray:
    """Time averages for a stack of starting frames; shape (n_obs, n_frames).

    Observables are called as ``f(coords, direction)`` on arrays, with
    ``coords`` in the backend's observable coordinates.
    """
    if not T > 0 or not 0 < dt <= T:
        raise ValueError("need T > 0 and 0 < dt <= T")
    K = int(math.ceil(T / dt - 1e-9))
    step = backend.flow_matrix(dt)
    F, _ = backend.fold_frames(np.array(F, dtype=float))
    acc = np.zeros((len(observables), len(F)))
    for _ in range(K):
        x = backend.observable_coords(F)
        a = backend.base_and_direction(F)[1]
        for i, f in enumerate(observables):
            acc[i] += f(x, a)
        F, _ = backend.fold_frames(F @ step)
    return acc / K


def birkhoff_average(f: Callable, s0: UnitPhasePoint, T: float, dt: float, backend: GeometryBackend) -> float:
    """Time average of ``f`` along the orbit of ``s0`` sampled every ``dt``."""
    F = _float_frame(s0, backend)[None]
    return float(birkhoff_frames([f], F, T, dt, backend)[0, 0])


# -- Liouville sampling ------------------------------------------------------

def sample_liouville(backend: GeometryBackend, n: int, seed: int = 0) -> np.ndarray:
    """``n`` frames drawn from normalized Liouville measure, one sub-seed each."""
    children = np.random.SeedSequence(seed).spawn(n)
    return np.concatenate([backend.sample_frames(np.random.default_rng(c), 1) for c in children])


def monte_carlo_average(f: Callable, backend: GeometryBackend, n: int = 100_000, seed: int = 0):
    """Monte Carlo estimate of the Liouville average of f; returns (mean, standard error)."""
    F = backend.sample_frames(np.random.default_rng(seed), n)
    v = np.asarray(f(backend.observable_coords(F), backend.base_and_direction(F)[1]), dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))


# -- Lyapunov exponent -------------------------------------------------------

@dataclass(frozen=True)
class LyapunovReport:
    exponent: float
    half_width: float
    T: float
    renormalizations: int
    batch_exponents: tuple = ()


def lyapunov_exponent(s0: UnitPhasePoint, T: float, backend: GeometryBackend, *, step: float = 0.5,
                      n_batches: int = 20, delta0: float = 1e-9, threshold: float = 1e-6,
                      seed: int = 0) -> LyapunovReport:
    """Top Lyapunov exponent from a renormalized shadow trajectory.

    The separation of two frames is measured in the frame group as
    ``|F1^-1 F2 - I|``, which is unchanged by the deck transformation both
    trajectories share when folding.
    """
    if T < 100:
        raise ValueError("Lyapunov estimation needs T >= 100")
    rng = np.random.default_rng(seed)
    k = backend.frame_size
    F1 = _float_frame(s0, backend)[None].astype(float)

    def shadow(F, X):
        X = backend.project_algebra(X)
        X = X / np.linalg.norm(X)
        E = linalg.expm(delta0 * X)
        return F @ E, float(np.linalg.norm(E - np.eye(k)))

    F2, d_start = shadow(F1, rng.normal(size=(k, k)))
    n_steps = int(math.ceil(T / step))
    edges = np.linspace(0, n_steps, n_batches + 1).round().astype(int)
    A = backend.flow_matrix(step)
    logs = np.zeros(n_batches)
    count = 0
    batch = 0
    for i in range(1, n_steps + 1):
        F1, G = backend.fold_frames(F1 @ A)
        F2 = G @ (F2 @ A)
        D = backend.inverse(F1) @ F2 - np.eye(k)
        d = float(np.linalg.norm(D))
        if not math.isfinite(d) or d == 0.0:
            raise FlowError("shadow separation became non-finite")
        end_of_batch = i == edges[batch + 1]
        if d > threshold or end_of_batch:
            logs[batch] += math.log(d / d_start)
            F2, d_start = shadow(F1, D[0])
            count += 1
        if end_of_batch:
            batch += 1
    lengths = np.diff(edges) * step
    per_batch = logs / lengths
    exponent = float(logs.sum() / (n_steps * step))
    if not math.isfinite(exponent):
        raise FlowError("Lyapunov estimate is not finite")
    hw = float(stats.t.ppf(0.975, n_batches - 1) * per_batch.std(ddof=1) / math.sqrt(n_batches))
    return LyapunovReport(exponent, hw, float(n_steps * step), count, tuple(per_batch))


# -- multi-start ergodicity --------------------------------------------------

@dataclass(frozen=True)
class ObservableErgodicity:
    name: str
    averages: list  # (UnitPhasePoint, time average)
    variance: float
    mean: float
    liouville_reference: float


@dataclass(frozen=True)
class ErgodicityReport:
    T: float
    dt: float
    n_starts: int
    seed: int
    observables: list

    def variance(self, name: str) -> float:
        for o in self.observables:
            if o.name == name:
                return o.variance
        raise KeyError(name)


def ergodicity_report(observables: Sequence[Callable], n_starts: int, T: float, backend: GeometryBackend,
                      seed: int = 0, dt: float = 0.5) -> ErgodicityReport:
    """Birkhoff averages from Liouville-distributed starts and their spread."""
    if n_starts < 2:
        raise ValueError("need at least two starts")
    F0 = sample_liouville(backend, n_starts, seed)
    avg = birkhoff_frames(observables, F0, T, dt, backend)
    starts = [_point_from_frame(F, backend) for F in F0]
    out = []
    for f, row in zip(observables, avg):
        ref = getattr(f, "exact_average", None)
        if ref is None:
            ref = monte_carlo_average(f, backend, seed=seed)[0]
        out.append(ObservableErgodicity(
            _obs_name(f), list(zip(starts, row.tolist())), float(np.var(row, ddof=1)),
            float(row.mean()), float(ref)))
    return ErgodicityReport(float(T), float(dt), n_starts, seed, out)
