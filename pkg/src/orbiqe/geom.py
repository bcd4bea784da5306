"""Constant-curvature geometry: isometries, triangle groups and folding.

Hyperbolic group algebra lives in the upper half-plane; the Poincare disk
(and the Klein chart derived from it) is used for meshing and for the
coordinates in which observables are written.  The disk is attached to the
half-plane by the Cayley map ``w = (z - i) / (z + i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import mpmath
import numpy as np

DET_TOL = 1e-12
FOLD_CAP = 10_000


class GeometryError(ValueError):
    """Invalid geometric input (bad signature, point off the model space)."""


class FoldingError(RuntimeError):
    """Folding did not reach the fundamental domain within the word cap."""

    def __init__(self, message, partial_word=None, point=None):
        super().__init__(message)
        self.partial_word = partial_word
        self.point = point


# ---------------------------------------------------------------------------
# Mobius transforms


@dataclass(frozen=True, eq=False)
class MobiusTransform:
    """Orientation preserving isometry z -> (az + b)/(cz + d) of the half-plane.

    Entries are renormalized to unit determinant on construction; ``M`` and
    ``-M`` compare equal.
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if not det > 0:
            raise GeometryError(f"Mobius matrix must have positive determinant, got {det}")
        if abs(det - 1.0) > DET_TOL:
            s = math.sqrt(det)
            for name in "abcd":
                object.__setattr__(self, name, float(getattr(self, name)) / s)

    __hash__ = None

    @classmethod
    def identity(cls) -> "MobiusTransform":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_matrix(cls, m) -> "MobiusTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @classmethod
    def rotation(cls, center: complex, angle: float) -> "MobiusTransform":
        """Counterclockwise rotation by ``angle`` about ``center``."""
        x, y = center.real, center.imag
        if y <= 0:
            raise GeometryError("rotation center must lie in the upper half-plane")
        sy = math.sqrt(y)
        translate = np.array([[sy, x / sy], [0.0, 1.0 / sy]])
        h = angle / 2.0
        spin = np.array([[math.cos(h), math.sin(h)], [-math.sin(h), math.cos(h)]])
        return cls.from_matrix(translate @ spin @ np.linalg.inv(translate))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def __call__(self, z):
        return (self.a * z + self.b) / (self.c * z + self.d)

    def derivative(self, z):
        return 1.0 / (self.c * z + self.d) ** 2

    def __matmul__(self, other: "MobiusTransform") -> "MobiusTransform":
        return MobiusTransform.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusTransform":
        return MobiusTransform(self.d, -self.b, -self.c, self.a)

    def __pow__(self, k: int) -> "MobiusTransform":
        if k < 0:
            return self.inverse() ** (-k)
        out = MobiusTransform.identity()
        for _ in range(k):
            out = out @ self
        return out

    def distance_to(self, other: "MobiusTransform") -> float:
        """Matrix-norm distance in PSL(2,R) (sign ambiguity removed)."""
        m, n = self.matrix, other.matrix
        return float(min(np.abs(m - n).max(), np.abs(m + n).max()))

    def isclose(self, other: "MobiusTransform", tol: float = 1e-12) -> bool:
        return self.distance_to(other) <= tol

    def __eq__(self, other):
        if not isinstance(other, MobiusTransform):
            return NotImplemented
        return self.isclose(other)


def to_disk(z):
    """Cayley map from the upper half-plane to the Poincare disk."""
    return (z - 1j) / (z + 1j)


def to_half_plane(w):
    return 1j * (1 + w) / (1 - w)


def disk_to_klein(w):
    w = np.asarray(w)
    return 2 * w / (1 + np.abs(w) ** 2)


def klein_to_disk(k):
    k = np.asarray(k)
    return k / (1 + np.sqrt(1 - np.abs(k) ** 2))


def hyperbolic_distance(z, w):
    """Distance in the upper half-plane model (vectorized)."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if np.any(z.imag <= 0) or np.any(w.imag <= 0):
        raise GeometryError("points must have positive imaginary part")
    d = 2 * np.arcsinh(np.abs(z - w) / (2 * np.sqrt(z.imag * w.imag)))
    return d if d.ndim else float(d)


def disk_distance(w1, w2):
    """Distance in the Poincare disk model (vectorized)."""
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    num = np.abs(w1 - w2) ** 2
    den = (1 - np.abs(w1) ** 2) * (1 - np.abs(w2) ** 2)
    d = np.arccosh(1 + 2 * num / den)
    return d if d.ndim else float(d)


def sphere_distance(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cross = np.linalg.norm(np.cross(x, y), axis=-1)
    dot = np.sum(x * y, axis=-1)
    d = np.arctan2(cross, dot)
    return d if np.ndim(d) else float(d)


# ---------------------------------------------------------------------------
# Triangle groups


class SignatureClass(NamedTuple):
    geometry: str
    area: float
    degenerate: bool


def classify_signature(p: int, q: int, r: int) -> SignatureClass:
    """Geometry class and orbifold area of the rotation triangle group (p,q,r)."""
    for v in (p, q, r):
        if int(v) != v or v < 2:
            raise GeometryError(f"triangle orders must be integers >= 2, got {(p, q, r)}")
    # exact rational comparison of 1/p + 1/q + 1/r against 1
    num = q * r + p * r + p * q
    den = p * q * r
    area = abs(2 * math.pi * (1 - num / den))
    if num < den:
        return SignatureClass("hyperbolic", area, False)
    if num == den:
        return SignatureClass("euclidean", 0.0, True)
    return SignatureClass("spherical", area, False)


@dataclass(frozen=True)
class Side:
    """A geodesic side of the base triangle.

    Hyperbolic sides are vertical lines (``radius is None``) or semicircles
    centred on the real axis; spherical sides are great circles with unit
    normal ``normal`` pointing into the triangle.
    """

    name: str
    reflection: np.ndarray
    center: float = 0.0
    radius: float | None = None
    inside_sign: float = 1.0
    normal: np.ndarray | None = None


@dataclass(frozen=True)
class TriangleOrbifold:
    """Sphere with three cone points, X = (model space) / Delta+(p,q,r).

    The fundamental domain is the doubled geodesic triangle T u J(T), where T
    has vertices A, B, C with angles pi/p, pi/q, pi/r and J is the reflection
    in side AB.  Hyperbolic vertices are half-plane points (A = i, AB on the
    imaginary axis); spherical vertices are unit vectors (A = north pole).
    """

    p: int
    q: int
    r: int
    geometry: str
    area: float
    vertices: tuple
    sides: tuple[Side, ...]
    generators: tuple
    pairings: tuple = field(default=())

    @property
    def orders(self) -> tuple[int, int, int]:
        return (self.p, self.q, self.r)

    @property
    def angles(self) -> np.ndarray:
        """Interior angles of the base triangle measured from its geometry."""
        A, B, C = self.vertices
        return np.array([self._angle(A, B, C), self._angle(B, C, A), self._angle(C, A, B)])

    @property
    def numeric_area(self) -> float:
        """Area of the doubled triangle from the measured angle defect/excess."""
        excess = self.angles.sum() - math.pi
        return float(2 * abs(excess))

    def _angle(self, v, u, w) -> float:
        t1, t2 = self._tangent(v, u), self._tangent(v, w)
        if self.geometry == "spherical":
            return float(np.arccos(np.clip(np.dot(t1, t2), -1, 1)))
        return float(abs(np.angle(t2 / t1)))

    def _tangent(self, v, u):
        """Unit initial tangent of the geodesic from v towards u."""
        if self.geometry == "spherical":
            t = u - np.dot(u, v) * v
            return t / np.linalg.norm(t)
        # move v to i; geodesics through i are diameters in the disk, and the
        # Cayley map has derivative -i/2 at i; the frame's derivative is real
        w0 = complex(to_disk(_half_plane_frame(v).inverse()(u)))
        t = 1j * w0
        return t / abs(t)

    def interior_point(self):
        """A point in the interior of the base triangle T."""
        if self.geometry == "spherical":
            c = sum(self.vertices)
            return c / np.linalg.norm(c)
        k = sum(disk_to_klein(to_disk(v)) for v in self.vertices) / 3
        return complex(to_half_plane(klein_to_disk(k)))

    @property
    def center(self):
        """Interior point of the doubled domain on the axis AB."""
        A, B, _ = self.vertices
        if self.geometry == "spherical":
            c = A + B
            return c / np.linalg.norm(c)
        return complex(to_half_plane(to_disk(B) / 2))

    def side_values(self, z) -> np.ndarray:
        """Signed side functions; all >= 0 exactly on the closed triangle T."""
        return np.array([_side_value(s, z) for s in self.sides])

    def in_triangle(self, z, tol: float = 1e-12) -> bool:
        return bool(np.all(self.side_values(z) >= -tol))

    def contains(self, z, tol: float = 1e-12) -> bool:
        """Membership in the closed fundamental domain T u J(T)."""
        return self.in_triangle(z, tol) or self.in_triangle(self.mirror(z), tol)

    def mirror(self, z):
        """Reflection J in side AB."""
        return _reflect(self.sides[0], z)

    def disk_vertices(self) -> tuple[complex, complex, complex]:
        if self.geometry != "hyperbolic":
            raise GeometryError("disk coordinates exist only for hyperbolic signatures")
        return tuple(complex(to_disk(v)) for v in self.vertices)


def _half_plane_frame(z: complex) -> MobiusTransform:
    sy = math.sqrt(z.imag)
    return MobiusTransform(sy, z.real / sy, 0.0, 1.0 / sy)


def _side_value(side: Side, z):
    if side.normal is not None:
        return side.inside_sign * float(np.dot(side.normal, z))
    if side.radius is None:
        return side.inside_sign * (z.real - side.center)
    return side.inside_sign * (abs(z - side.center) ** 2 - side.radius**2) / side.radius**2


def _reflect(side: Side, z):
    if side.normal is not None:
        return side.reflection @ z
    S = side.reflection
    zc = np.conj(z)
    return (S[0, 0] * zc + S[0, 1]) / (S[1, 0] * zc + S[1, 1])


def _geodesic_through(z1: complex, z2: complex) -> tuple[float, float | None]:
    """(center, radius) of the half-plane geodesic through two points."""
    if abs(z1.real - z2.real) < 1e-14 * max(1.0, abs(z1), abs(z2)):
        return z1.real, None
    x0 = (abs(z2) ** 2 - abs(z1) ** 2) / (2 * (z2.real - z1.real))
    return x0, abs(z1 - x0)


def _half_plane_reflection(center: float, radius: float | None) -> np.ndarray:
    """Real matrix S with det -1 so that the reflection is z -> S . conj(z)."""
    if radius is None:
        return np.array([[-1.0, 2 * center], [0.0, 1.0]])
    return np.array([[center, radius**2 - center**2], [1.0, -center]]) / radius


def _hyperbolic_side_lengths(alpha, beta, gamma, cos=math.cos, sin=math.sin, acosh=math.acosh):
    """Side lengths (BC, CA, AB) opposite to angles (alpha, beta, gamma)."""
    a = acosh((cos(alpha) + cos(beta) * cos(gamma)) / (sin(beta) * sin(gamma)))
    b = acosh((cos(beta) + cos(alpha) * cos(gamma)) / (sin(alpha) * sin(gamma)))
    c = acosh((cos(gamma) + cos(alpha) * cos(beta)) / (sin(alpha) * sin(beta)))
    return a, b, c


def build_triangle_group(p: int, q: int, r: int) -> TriangleOrbifold:
    """Construct Delta+(p,q,r) with its doubled-triangle fundamental domain."""
    sig = classify_signature(p, q, r)
    if sig.geometry == "euclidean":
        raise GeometryError(f"euclidean signature {(p, q, r)} is not supported")
    alpha, beta, gamma = math.pi / p, math.pi / q, math.pi / r
    if sig.geometry == "hyperbolic":
        return _build_hyperbolic(p, q, r, sig.area, alpha, beta, gamma)
    return _build_spherical(p, q, r, sig.area, alpha, beta, gamma)


def _build_hyperbolic(p, q, r, area, alpha, beta, gamma) -> TriangleOrbifold:
    _, b, c = _hyperbolic_side_lengths(alpha, beta, gamma)
    wA, wB, wC = 0.0, math.tanh(c / 2), math.tanh(b / 2) * complex(math.cos(alpha), math.sin(alpha))
    A, B, C = (complex(to_half_plane(w)) for w in (wA, wB, wC))
    k_in = (disk_to_klein(wB) + disk_to_klein(wC)) / 3
    inner = complex(to_half_plane(klein_to_disk(k_in)))
    sides = []
    for name, (u, v) in (("AB", (A, B)), ("BC", (B, C)), ("CA", (C, A))):
        if name == "AB":
            center, radius = 0.0, None
        else:
            center, radius = _geodesic_through(u, v)
        S = _half_plane_reflection(center, radius)
        proto = Side(name, S, center, radius, 1.0)
        sign = 1.0 if _side_value(proto, inner) > 0 else -1.0
        sides.append(Side(name, S, center, radius, sign))
    R_ab, R_bc, R_ca = (s.reflection for s in sides)
    gA = MobiusTransform.from_matrix(R_ca @ R_ab)
    gB = MobiusTransform.from_matrix(R_ab @ R_bc)
    gC = MobiusTransform.from_matrix(R_bc @ R_ca)
    # side pairings of the doubled triangle: gA maps J(CA) onto CA, gB maps
    # BC onto J(BC)
    pairings = (("J(CA)->CA", gA), ("BC->J(BC)", gB))
    return TriangleOrbifold(p, q, r, "hyperbolic", area, (A, B, C), tuple(sides),
                            (gA, gB, gC), pairings)


def _reflection3(n: np.ndarray) -> np.ndarray:
    return np.eye(3) - 2 * np.outer(n, n)


def _build_spherical(p, q, r, area, alpha, beta, gamma) -> TriangleOrbifold:
    cos, sin = math.cos, math.sin
    b = math.acos((cos(beta) + cos(alpha) * cos(gamma)) / (sin(alpha) * sin(gamma)))
    c = math.acos((cos(gamma) + cos(alpha) * cos(beta)) / (sin(alpha) * sin(beta)))
    A = np.array([0.0, 0.0, 1.0])
    B = np.array([sin(c), 0.0, cos(c)])
    C = np.array([sin(b) * cos(alpha), sin(b) * sin(alpha), cos(b)])
    inner = (A + B + C) / np.linalg.norm(A + B + C)
    sides = []
    for name, (u, v) in (("AB", (A, B)), ("BC", (B, C)), ("CA", (C, A))):
        n = np.cross(u, v)
        n /= np.linalg.norm(n)
        if np.dot(n, inner) < 0:
            n = -n
        sides.append(Side(name, _reflection3(n), normal=n))
    R_ab, R_bc, R_ca = (s.reflection for s in sides)
    gA, gB, gC = R_ca @ R_ab, R_ab @ R_bc, R_bc @ R_ca
    pairings = (("J(CA)->CA", gA), ("BC->J(BC)", gB))
    return TriangleOrbifold(p, q, r, "spherical", area, (A, B, C), tuple(sides),
                            (gA, gB, gC), pairings)


def fold_to_domain(z, orb: TriangleOrbifold, cap: int = FOLD_CAP, tol: float = 1e-13):
    """Fold a model-space point into the closed fundamental domain.

    Returns ``(z_folded, g)`` with ``g(z) == z_folded``; ``g`` is a
    :class:`MobiusTransform` (hyperbolic) or a 3x3 rotation (spherical).
    Side reflections are applied greedily, which terminates for the
    reflection group; an odd reflection count is corrected by J so that the
    returned word is orientation preserving.
    """
    spherical = orb.geometry == "spherical"
    if spherical:
        z = np.asarray(z, dtype=float)
        z = z / np.linalg.norm(z)
        word = np.eye(3)
    else:
        z = complex(z)
        if z.imag <= 0:
            raise GeometryError("point must lie in the upper half-plane")
        word = np.eye(2)
    parity = 0
    steps = 0
    while True:
        vals = orb.side_values(z)
        k = int(np.argmin(vals))
        if vals[k] >= -tol:
            break
        if steps >= cap:
            raise FoldingError(f"folding exceeded {cap} reflections", (word, parity), z)
        side = orb.sides[k]
        z = _reflect(side, z)
        word = side.reflection @ word
        parity ^= 1
        steps += 1
    if parity:
        side = orb.sides[0]
        z = _reflect(side, z)
        word = side.reflection @ word
    if spherical:
        return z, word
    return z, MobiusTransform.from_matrix(word)


# ---------------------------------------------------------------------------
# High precision triangle data (used by the exact single-trajectory flow)


def mp_triangle_sides(orb: TriangleOrbifold, dps: int):
    """Side data of a hyperbolic triangle recomputed at ``dps`` digits.

    Returns a list of ``(center, radius_or_None, sign, S)`` with mpmath
    entries, in the order AB, BC, CA.
    """
    with mpmath.workdps(dps):
        pi = mpmath.pi
        alpha, beta, gamma = pi / orb.p, pi / orb.q, pi / orb.r
        _, b, c = _hyperbolic_side_lengths(alpha, beta, gamma, mpmath.cos, mpmath.sin, mpmath.acosh)
        wB = mpmath.tanh(c / 2)
        wC = mpmath.tanh(b / 2) * mpmath.expjpi(alpha / pi)
        to_h = lambda w: 1j * (1 + w) / (1 - w)  # noqa: E731
        A, B, C = mpmath.mpc(0, 1), to_h(wB), to_h(wC)
        out = []
        for name, (u, v) in (("AB", (A, B)), ("BC", (B, C)), ("CA", (C, A))):
            if name == "AB":
                x0, rad = mpmath.mpf(0), None
                S = mpmath.matrix([[-1, 0], [0, 1]])
            else:
                x0 = (abs(v) ** 2 - abs(u) ** 2) / (2 * (v.real - u.real))
                rad = abs(u - x0)
                S = mpmath.matrix([[x0, rad**2 - x0**2], [1, -x0]]) / rad
            float_side = orb.sides[["AB", "BC", "CA"].index(name)]
            out.append((x0, rad, float_side.inside_sign, S))
        return out


# ---------------------------------------------------------------------------
# Geometry backends
#
# The unit tangent bundle of each model space is identified with its
# isometry group acting on itself: a frame F is a k x k matrix, the geodesic
# flow is right multiplication by a one-parameter subgroup, and passing to
# the quotient is left multiplication by a deck transformation.


class GeometryBackend:
    """Compact orbifold X together with the frame model of S*X."""

    tag: str = ""
    curvature: float = 0.0
    volume: float = 0.0
    frame_size: int = 0

    def flow_matrix(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def frames(self, base, direction) -> np.ndarray:
        raise NotImplementedError

    def base_and_direction(self, F: np.ndarray):
        raise NotImplementedError

    def fold_frames(self, F: np.ndarray):
        """Fold frames into the fundamental domain; returns (F', G) with F' = G F."""
        raise NotImplementedError

    def sample_frames(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Frames distributed by the Liouville measure on S*X."""
        raise NotImplementedError

    def observable_coords(self, F: np.ndarray):
        """Base points in the coordinates observables are written in."""
        return self.base_and_direction(F)[0]

    def base_distance(self, b1, b2):
        raise NotImplementedError

    def inverse(self, F: np.ndarray) -> np.ndarray:
        return np.linalg.inv(F)

    def project_algebra(self, X: np.ndarray) -> np.ndarray:
        """Project a matrix onto the Lie algebra of the frame group."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.tag!r})"


class SphereQuotient(GeometryBackend):
    """S^2 / Z_n, rotations about the polar axis; frames are in SO(3)."""

    curvature = 1.0
    frame_size = 3

    def __init__(self, n: int):
        if int(n) != n or n < 1:
            raise GeometryError("sphere quotient order must be a positive integer")
        self.n = int(n)
        self.tag = f"sphere_quotient({self.n})"
        self.volume = 4 * math.pi / self.n

    def flow_matrix(self, t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @staticmethod
    def _local_frame(x):
        x = np.atleast_2d(x)
        theta = np.arccos(np.clip(x[:, 2], -1, 1))
        phi = np.arctan2(x[:, 1], x[:, 0])
        at_pole = np.hypot(x[:, 0], x[:, 1]) < 1e-14
        phi = np.where(at_pole, 0.0, phi)
        ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
        e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
        e_phi = np.stack([-sp, cp, np.zeros_like(cp)], axis=-1)
        return e_theta, e_phi

    def frames(self, base, direction):
        x = np.atleast_2d(np.asarray(base, dtype=float))
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
        a = np.atleast_1d(np.asarray(direction, dtype=float))
        e1, e2 = self._local_frame(x)
        v = np.cos(a)[:, None] * e1 + np.sin(a)[:, None] * e2
        return np.stack([x, v, np.cross(x, v)], axis=-1)

    def base_and_direction(self, F):
        x, v = F[:, :, 0], F[:, :, 1]
        e1, e2 = self._local_frame(x)
        a = np.arctan2(np.sum(v * e2, axis=1), np.sum(v * e1, axis=1)) % (2 * math.pi)
        return x, a

    def fold_frames(self, F):
        x = F[:, :, 0]
        wedge = 2 * math.pi / self.n
        k = np.floor((np.arctan2(x[:, 1], x[:, 0]) % (2 * math.pi)) / wedge)
        ang = -k * wedge
        c, s = np.cos(ang), np.sin(ang)
        G = np.zeros((len(F), 3, 3))
        G[:, 0, 0], G[:, 0, 1], G[:, 1, 0], G[:, 1, 1], G[:, 2, 2] = c, -s, s, c, 1.0
        return G @ F, G

    def sample_frames(self, rng, n):
        u = rng.uniform(-1.0, 1.0, n)
        phi = rng.uniform(0.0, 2 * math.pi / self.n, n)
        st = np.sqrt(1 - u**2)
        x = np.stack([st * np.cos(phi), st * np.sin(phi), u], axis=-1)
        return self.frames(x, rng.uniform(0.0, 2 * math.pi, n))

    def base_distance(self, b1, b2):
        return sphere_distance(b1, b2)

    def inverse(self, F):
        return np.swapaxes(F, -1, -2)

    def project_algebra(self, X):
        return 0.5 * (X - np.swapaxes(X, -1, -2))


class Pillowcase(GeometryBackend):
    """Flat T^2 / {+-1} with torus side 2 pi; frames are in SE(2)."""

    tag = "pillowcase"
    curvature = 0.0
    volume = 2 * math.pi**2
    frame_size = 3

    def flow_matrix(self, t):
        return np.array([[1.0, 0.0, t], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

    def frames(self, base, direction):
        x = np.atleast_2d(np.asarray(base, dtype=float))
        a = np.atleast_1d(np.asarray(direction, dtype=float))
        F = np.zeros((len(x), 3, 3))
        F[:, 0, 0], F[:, 0, 1] = np.cos(a), -np.sin(a)
        F[:, 1, 0], F[:, 1, 1] = np.sin(a), np.cos(a)
        F[:, :2, 2] = x
        F[:, 2, 2] = 1.0
        return F

    def base_and_direction(self, F):
        return F[:, :2, 2].copy(), np.arctan2(F[:, 1, 0], F[:, 0, 0]) % (2 * math.pi)

    def fold_frames(self, F):
        two_pi = 2 * math.pi
        x = F[:, :2, 2]
        shift = -two_pi * np.floor(x / two_pi)
        G = np.zeros((len(F), 3, 3))
        G[:, 0, 0] = G[:, 1, 1] = G[:, 2, 2] = 1.0
        G[:, :2, 2] = shift
        y = x + shift
        flip = y[:, 1] > math.pi
        # x -> (2pi, 2pi) - x is the deck rotation by pi
        H = np.zeros((len(F), 3, 3))
        H[:, 2, 2] = 1.0
        H[:, 0, 0] = H[:, 1, 1] = np.where(flip, -1.0, 1.0)
        H[:, :2, 2] = np.where(flip[:, None], two_pi, 0.0)
        G = H @ G
        y = np.where(flip[:, None], two_pi - y, y)
        wrap = y[:, 0] >= two_pi
        if np.any(wrap):
            W = np.zeros((len(F), 3, 3))
            W[:, 0, 0] = W[:, 1, 1] = W[:, 2, 2] = 1.0
            W[:, 0, 2] = np.where(wrap, -two_pi, 0.0)
            G = W @ G
        return G @ F, G

    def sample_frames(self, rng, n):
        x = np.stack([rng.uniform(0, 2 * math.pi, n), rng.uniform(0, math.pi, n)], axis=-1)
        return self.frames(x, rng.uniform(0.0, 2 * math.pi, n))

    def base_distance(self, b1, b2):
        """Distance on the pillowcase (minimum over the deck group)."""
        b1 = np.atleast_2d(b1)
        b2 = np.atleast_2d(b2)
        two_pi = 2 * math.pi
        best = np.full(len(b1), np.inf)
        for sign in (1.0, -1.0):
            d = sign * b2 - b1
            d = d - two_pi * np.round(d / two_pi)
            best = np.minimum(best, np.linalg.norm(d, axis=1))
        return best if len(best) > 1 else float(best[0])

    def project_algebra(self, X):
        Y = np.zeros_like(X)
        skew = 0.5 * (X[..., 1, 0] - X[..., 0, 1])
        Y[..., 1, 0], Y[..., 0, 1] = skew, -skew
        Y[..., :2, 2] = X[..., :2, 2]
        return Y


class HyperbolicTriangle(GeometryBackend):
    """H^2 / Delta+(p,q,r); frames are unit-determinant 2x2 matrices M with
    M(i) the base point and M'(i) carrying the upward unit vector at i to
    the direction."""

    curvature = -1.0
    frame_size = 2

    def __init__(self, p: int, q: int, r: int, fold_cap: int = FOLD_CAP):
        sig = classify_signature(p, q, r)
        if sig.geometry != "hyperbolic":
            raise GeometryError(f"signature {(p, q, r)} is {sig.geometry}, not hyperbolic")
        self.orbifold = build_triangle_group(p, q, r)
        self.tag = f"hyperbolic_triangle({p},{q},{r})"
        self.volume = sig.area
        self.fold_cap = fold_cap
        sides = self.orbifold.sides
        self._S = np.stack([s.reflection for s in sides])
        self._circle = np.array([s.radius is not None for s in sides])
        self._center = np.array([s.center for s in sides])
        self._radius = np.array([s.radius if s.radius is not None else 1.0 for s in sides])
        self._sign = np.array([s.inside_sign for s in sides])
        self._bbox = self._bounding_box()

    def flow_matrix(self, t):
        return np.array([[math.exp(t / 2), 0.0], [0.0, math.exp(-t / 2)]])

    def frames(self, base, direction):
        z = np.atleast_1d(np.asarray(base, dtype=complex))
        a = np.atleast_1d(np.asarray(direction, dtype=float))
        if np.any(z.imag <= 0):
            raise GeometryError("base points must lie in the upper half-plane")
        sy = np.sqrt(z.imag)
        h = (a - math.pi / 2) / 2
        c, s = np.cos(h), np.sin(h)
        F = np.empty((len(z), 2, 2))
        # [[sy, x/sy], [0, 1/sy]] @ [[c, s], [-s, c]]
        F[:, 0, 0] = sy * c - z.real / sy * s
        F[:, 0, 1] = sy * s + z.real / sy * c
        F[:, 1, 0] = -s / sy
        F[:, 1, 1] = c / sy
        return F

    @staticmethod
    def points(F):
        return (F[:, 0, 0] * 1j + F[:, 0, 1]) / (F[:, 1, 0] * 1j + F[:, 1, 1])

    def base_and_direction(self, F):
        z = self.points(F)
        a = (math.pi / 2 - 2 * np.angle(F[:, 1, 0] * 1j + F[:, 1, 1])) % (2 * math.pi)
        return z, a

    def observable_coords(self, F):
        return to_disk(self.points(F))

    def side_values(self, z):
        z = np.asarray(z, dtype=complex)
        circ = (np.abs(z[None, :] - self._center[:, None]) ** 2 - self._radius[:, None] ** 2) / self._radius[:, None] ** 2
        line = z.real[None, :] - self._center[:, None]
        return self._sign[:, None] * np.where(self._circle[:, None], circ, line)

    def contains(self, z, tol=1e-12):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        inside = np.all(self.side_values(z) >= -tol, axis=0)
        mirrored = np.all(self.side_values(-np.conj(z)) >= -tol, axis=0)
        return inside | mirrored

    def fold_points(self, z, tol=1e-13):
        """Vectorized fold of half-plane points; returns (z', G)."""
        z = np.array(np.atleast_1d(z), dtype=complex)
        G = np.broadcast_to(np.eye(2), (len(z), 2, 2)).copy()
        parity = np.zeros(len(z), dtype=bool)
        for _ in range(self.fold_cap):
            vals = self.side_values(z)
            k = np.argmin(vals, axis=0)
            bad = vals[k, np.arange(len(z))] < -tol
            if not bad.any():
                break
            for s in range(3):
                idx = bad & (k == s)
                if idx.any():
                    S = self._S[s]
                    zc = np.conj(z[idx])
                    z[idx] = (S[0, 0] * zc + S[0, 1]) / (S[1, 0] * zc + S[1, 1])
                    G[idx] = S @ G[idx]
                    parity[idx] ^= True
        else:
            raise FoldingError(f"folding exceeded {self.fold_cap} reflections", G, z)
        if parity.any():
            S = self._S[0]
            z[parity] = -np.conj(z[parity])
            G[parity] = S @ G[parity]
        return z, G

    def fold_frames(self, F):
        _, G = self.fold_points(self.points(F))
        F = G @ F
        det = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
        return F / np.sqrt(det)[:, None, None], G

    def _bounding_box(self):
        verts = [disk_to_klein(to_disk(v)) for v in self.orbifold.vertices]
        t = np.linspace(0, 1, 401)
        pts = []
        for i in range(3):
            k = verts[i] + t * (verts[(i + 1) % 3] - verts[i])
            pts.append(to_half_plane(klein_to_disk(k)))
        pts = np.concatenate(pts)
        pts = np.concatenate([pts, -np.conj(pts)])
        x0, x1 = pts.real.min(), pts.real.max()
        y0, y1 = pts.imag.min(), pts.imag.max()
        mx, my = 0.01 * (x1 - x0), 0.01 * (y1 - y0)
        return x0 - mx, x1 + mx, max(y0 - my, 0.5 * y0), y1 + my

    def sample_points(self, rng, n):
        """Area-uniform points of the fundamental domain (rejection sampling)."""
        x0, x1, y0, y1 = self._bbox
        out = np.empty(0, dtype=complex)
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            u = rng.uniform(0, 1, m)
            y = 1 / (1 / y0 - u * (1 / y0 - 1 / y1))
            z = rng.uniform(x0, x1, m) + 1j * y
            out = np.concatenate([out, z[self.contains(z)]])
        return out[:n]

    def sample_frames(self, rng, n):
        z = self.sample_points(rng, n)
        return self.frames(z, rng.uniform(0, 2 * math.pi, n))

    def base_distance(self, b1, b2):
        return hyperbolic_distance(b1, b2)

    def inverse(self, F):
        inv = np.empty_like(F)
        inv[..., 0, 0], inv[..., 1, 1] = F[..., 1, 1], F[..., 0, 0]
        inv[..., 0, 1], inv[..., 1, 0] = -F[..., 0, 1], -F[..., 1, 0]
        return inv

    def project_algebra(self, X):
        tr = 0.5 * (X[..., 0, 0] + X[..., 1, 1])
        Y = X.copy()
        Y[..., 0, 0] -= tr
        Y[..., 1, 1] -= tr
        return Y


def sphere_quotient(n: int) -> SphereQuotient:
    return SphereQuotient(n)


def pillowcase() -> Pillowcase:
    return Pillowcase()


def hyperbolic_triangle(p: int, q: int, r: int) -> HyperbolicTriangle:
    return HyperbolicTriangle(p, q, r)
