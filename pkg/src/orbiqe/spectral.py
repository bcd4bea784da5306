"""Eigenpairs of P = sqrt(Laplacian) on sphere quotients, the pillowcase and
hyperbolic triangle orbifolds.

The first two are closed form. Triangle orbifolds H^2/Delta+(p,q,r) are the
double of a geodesic triangle T, so their spectrum is the union of the
Neumann (even) and Dirichlet (odd) spectra of T. Those are computed with
quadratic finite elements assembled in the Klein chart, where the geodesic
sides of T are straight and refined meshes are nested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.spatial import cKDTree
from scipy.special import sph_legendre_p_all

from . import geom


class MeshError(ValueError):
    pass


class MassMatrixError(ValueError):
    pass


class EigensolverError(RuntimeError):
    pass


EXACT_TOL = 1e-6
FEM_TOL = 1e-3


# ---------------------------------------------------------------------------
# Eigen systems


@dataclass(eq=False)
class EigenSystem:
    """Ascending eigenvalues of P with L^2(X)-normalized real eigenfunctions."""

    eigenvalues: np.ndarray
    tag: str
    volume: float
    mult_tol: float

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def counting(self, lam: float) -> int:
        return int(np.searchsorted(self.eigenvalues, lam * (1 + 1e-12), side="right"))

    def clusters(self) -> list:
        """Index groups of numerically equal eigenvalues."""
        lam = self.eigenvalues
        if len(lam) == 0:
            return []
        cuts = np.nonzero(np.diff(lam) > self.mult_tol * np.maximum(lam[1:], 1.0))[0] + 1
        return np.split(np.arange(len(lam)), cuts)

    def evaluate(self, j, points) -> np.ndarray:
        raise NotImplementedError

    def diagonal(self, f: Callable) -> np.ndarray:
        """<f psi_j, psi_j> for every j."""
        raise NotImplementedError

    def observable_matrix(self, f: Callable, idx) -> np.ndarray:
        """Dense matrix of <f psi_a, psi_b> for a, b in ``idx``."""
        raise NotImplementedError


# -- sphere quotients --------------------------------------------------------


def _fold_sphere(x, n):
    phi = np.arctan2(x[..., 1], x[..., 0]) % (2 * math.pi)
    ang = -np.floor(phi / (2 * math.pi / n)) * (2 * math.pi / n)
    c, s = np.cos(ang), np.sin(ang)
    return np.stack([c * x[..., 0] - s * x[..., 1], s * x[..., 0] + c * x[..., 1], x[..., 2]], axis=-1)


@dataclass(eq=False)
class SphereEigenSystem(EigenSystem):
    n: int = 1
    degrees: np.ndarray = None
    orders: np.ndarray = None  # signed: m > 0 cosine, m < 0 sine type
    quad_extra: int = 32

    def _trig(self, m, phi):
        m = np.asarray(m)[:, None]
        mm = np.abs(m)
        return np.where(m > 0, math.sqrt(2) * np.cos(mm * phi), np.where(m < 0, math.sqrt(2) * np.sin(mm * phi), 1.0))

    def evaluate(self, j, points):
        """Values of psi_j at unit vectors ``points`` (shape (N, 3))."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        j = np.atleast_1d(j)
        theta = np.arccos(np.clip(x[:, 2], -1, 1))
        phi = np.arctan2(x[:, 1], x[:, 0])
        L = int(self.degrees[j].max())
        P = sph_legendre_p_all(L, L, theta)[0]
        out = P[self.degrees[j], np.abs(self.orders[j])] * self._trig(self.orders[j], phi)
        out = math.sqrt(self.n) * out
        return out[0] if out.shape[0] == 1 else out

    def _grid(self, f, L):
        nt = L + self.quad_extra
        npf = 2 * L + 2 * self.quad_extra
        u, wt = np.polynomial.legendre.leggauss(nt)
        theta = np.arccos(u)
        phi = 2 * math.pi * np.arange(npf) / npf
        st = np.sin(theta)[:, None]
        x = np.stack([st * np.cos(phi), st * np.sin(phi), np.broadcast_to(u[:, None], (nt, npf))], axis=-1)
        fx = np.asarray(f(_fold_sphere(x.reshape(-1, 3), self.n)), dtype=float).reshape(nt, npf)
        return theta, wt, phi, fx * (2 * math.pi / npf)

    def diagonal(self, f):
        L = int(self.degrees.max())
        theta, wt, phi, fw = self._grid(f, L)
        P = sph_legendre_p_all(L, L, theta)[0]
        out = np.empty(len(self))
        for m in np.unique(self.orders):
            sel = np.nonzero(self.orders == m)[0]
            phi_part = fw @ (self._trig([m], phi)[0] ** 2)  # (nt,)
            out[sel] = (P[self.degrees[sel], abs(m)] ** 2 * wt) @ phi_part
        return out

    def observable_matrix(self, f, idx):
        idx = np.atleast_1d(idx)
        L = int(self.degrees[idx].max())
        theta, wt, phi, fw = self._grid(f, L)
        P = sph_legendre_p_all(L, L, theta)[0]
        Pa = P[self.degrees[idx], np.abs(self.orders[idx])]  # (k, nt)
        Ta = self._trig(self.orders[idx], phi)  # (k, nphi)
        Y = Pa[:, :, None] * Ta[:, None, :]
        return np.einsum("atp,tp,btp->ab", Y, fw * wt[:, None], Y)


def sphere_quotient_spectrum(n: int, l_max: int) -> SphereEigenSystem:
    """Z_n-invariant spherical harmonics of degree <= l_max, scaled by sqrt(n)."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    degrees, orders = [], []
    for l in range(l_max + 1):
        for m in range(-l, l + 1):
            if m % n == 0:
                degrees.append(l)
                orders.append(m)
    degrees = np.array(degrees)
    lam = np.sqrt(degrees * (degrees + 1.0))
    return SphereEigenSystem(lam, f"sphere_quotient({n})", 4 * math.pi / n, EXACT_TOL,
                             n=int(n), degrees=degrees, orders=np.array(orders))


# -- pillowcase --------------------------------------------------------------


@dataclass(eq=False)
class PillowcaseEigenSystem(EigenSystem):
    modes: np.ndarray = None  # (N, 2) integer representatives of m ~ -m

    def evaluate(self, j, points):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        m = self.modes[np.atleast_1d(j)]
        out = np.cos(m @ x.T) / math.pi
        out[np.all(m == 0, axis=1)] = 1 / (math.pi * math.sqrt(2))
        return out[0] if out.shape[0] == 1 else out

    def fourier(self, f, kmax):
        """Fourier coefficients of the even extension of f to the torus."""
        N = 1 << max(6, int(math.ceil(math.log2(4 * kmax + 64))))
        t = 2 * math.pi * np.arange(N) / N
        X1, X2 = np.meshgrid(t, t, indexing="ij")
        y = np.stack([X1.ravel(), X2.ravel()], axis=-1)
        flip = y[:, 1] > math.pi
        y[flip] = (2 * math.pi - y[flip]) % (2 * math.pi)
        vals = np.asarray(f(y), dtype=float).reshape(N, N)
        return np.fft.fft2(vals) / N**2, N

    def _entries(self, fhat, N, ma, mb):
        def re(k):
            return fhat[k[..., 0] % N, k[..., 1] % N].real

        za = np.all(ma == 0, axis=-1)
        zb = np.all(mb == 0, axis=-1)
        val = re(ma - mb) + re(ma + mb)
        val = np.where(za ^ zb, math.sqrt(2) * re(ma + mb), val)
        return np.where(za & zb, re(ma - mb), val)

    def diagonal(self, f):
        kmax = int(np.abs(self.modes).max())
        fhat, N = self.fourier(f, kmax)
        return self._entries(fhat, N, self.modes, self.modes)

    def observable_matrix(self, f, idx):
        m = self.modes[np.atleast_1d(idx)]
        fhat, N = self.fourier(f, int(np.abs(m).max()))
        return self._entries(fhat, N, m[:, None, :], m[None, :, :])


def pillowcase_spectrum(lambda_max: float) -> PillowcaseEigenSystem:
    """Modes cos(m.x)/pi with one representative per pair +-m, |m| <= lambda_max."""
    if not lambda_max > 0:
        raise ValueError("lambda_max must be positive")
    K = int(math.floor(lambda_max))
    r = np.arange(-K, K + 1)
    M1, M2 = np.meshgrid(r, r, indexing="ij")
    m = np.stack([M1.ravel(), M2.ravel()], axis=-1)
    keep = (m[:, 0] > 0) | ((m[:, 0] == 0) & (m[:, 1] >= 0))
    m = m[keep]
    norm2 = m[:, 0] ** 2 + m[:, 1] ** 2
    m = m[norm2 <= lambda_max**2 * (1 + 1e-14)]
    lam = np.sqrt((m**2).sum(axis=1).astype(float))
    order = np.lexsort((m[:, 1], m[:, 0], lam))
    return PillowcaseEigenSystem(lam[order], "pillowcase", 2 * math.pi**2, EXACT_TOL, modes=m[order])


# ---------------------------------------------------------------------------
# Meshes


@dataclass(eq=False)
class Mesh:
    """Triangle mesh with vertices in Poincare-disk coordinates.

    ``tags[t]`` packs the side id (0 interior, 1.. boundary side) of the
    three edges (v0 v1), (v1 v2), (v2 v0) as ``s0 + 4 s1 + 16 s2``.
    ``metric`` is ``"hyperbolic"`` (edges are straight in the Klein chart)
    or ``"flat"`` (edges straight in the given coordinates).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    level: int = 0
    metric: str = "hyperbolic"
    n_sides: int = 3

    def edge_sides(self) -> np.ndarray:
        t = np.asarray(self.tags)
        return np.stack([t & 3, (t >> 2) & 3, (t >> 4) & 3], axis=1)

    def chart(self) -> np.ndarray:
        """Vertex coordinates in the chart where edges are straight."""
        if self.metric == "flat":
            return np.asarray(self.vertices, dtype=float)
        k = geom.disk_to_klein(self.vertices[:, 0] + 1j * self.vertices[:, 1])
        return np.stack([k.real, k.imag], axis=-1)

    def validate(self):
        V, T = self.vertices, self.triangles
        if T.min() < 0 or T.max() >= len(V):
            raise MeshError("triangle index out of range")
        P = self.chart()
        d1, d2 = P[T[:, 1]] - P[T[:, 0]], P[T[:, 2]] - P[T[:, 0]]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det <= 0):
            raise MeshError(f"{int(np.sum(det <= 0))} triangles are not positively oriented")
        edges = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        sides = self.edge_sides().T.ravel()
        key = np.sort(edges, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
        # a conforming interior edge appears once in each orientation
        directed = {tuple(e) for e in edges.tolist()}
        if len(directed) != len(edges):
            raise MeshError("non-conforming mesh: inconsistent triangle orientation across an edge")
        on_boundary = counts[inv] == 1
        if np.any(sides[on_boundary] == 0) or np.any(sides[~on_boundary] != 0):
            raise MeshError("boundary tags do not match the mesh boundary")
        present = set(np.unique(sides[on_boundary]).tolist())
        if present != set(range(1, self.n_sides + 1)):
            raise MeshError(f"boundary tags cover sides {sorted(present)}, expected 1..{self.n_sides}")
        return self


def _midpoint(mesh: Mesh, a, b, boundary):
    Va, Vb = mesh.vertices[a], mesh.vertices[b]
    if mesh.metric == "flat":
        mid = 0.5 * (Va + Vb)
        if mesh.n_sides == 1:
            r = np.linalg.norm(mid, axis=1, keepdims=True)
            mid = np.where(boundary[:, None], mid / r, mid)
        return mid
    ka = geom.disk_to_klein(Va[:, 0] + 1j * Va[:, 1])
    kb = geom.disk_to_klein(Vb[:, 0] + 1j * Vb[:, 1])
    w = geom.klein_to_disk(0.5 * (ka + kb))
    return np.stack([w.real, w.imag], axis=-1)


def refine_mesh(mesh: Mesh) -> Mesh:
    """One level of red refinement (each triangle split into four)."""
    T = mesh.triangles
    nT, nV = len(T), len(mesh.vertices)
    S = mesh.edge_sides()
    edges = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    uniq, inv = np.unique(np.sort(edges, axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    side_of = np.zeros(len(uniq), dtype=int)
    side_of[inv] = np.maximum(side_of[inv], S.T.ravel())
    mids = _midpoint(mesh, uniq[:, 0], uniq[:, 1], side_of > 0)
    V = np.concatenate([mesh.vertices, mids])
    m01, m12, m20 = (nV + inv[i * nT:(i + 1) * nT] for i in range(3))
    v0, v1, v2 = T[:, 0], T[:, 1], T[:, 2]
    s0, s1, s2 = S[:, 0], S[:, 1], S[:, 2]
    z = np.zeros_like(s0)
    tri = np.concatenate([
        np.stack([v0, m01, m20], 1), np.stack([m01, v1, m12], 1),
        np.stack([m20, m12, v2], 1), np.stack([m01, m12, m20], 1)])
    tag = np.concatenate([s0 + 16 * s2, s0 + 4 * s1, 4 * s1 + 16 * s2, z])
    return Mesh(V, tri, tag, mesh.level + 1, mesh.metric, mesh.n_sides)


def triangle_mesh(orb: geom.TriangleOrbifold, refinement: int) -> Mesh:
    """Mesh of the geodesic triangle ABC, refined ``refinement`` times."""
    if orb.geometry != "hyperbolic":
        raise MeshError("finite elements are only set up for hyperbolic triangles")
    w = np.array(orb.disk_vertices())
    V = np.stack([w.real, w.imag], axis=-1)
    mesh = Mesh(V, np.array([[0, 1, 2]]), np.array([1 + 4 * 2 + 16 * 3]), 0, "hyperbolic", 3)
    for _ in range(refinement):
        mesh = refine_mesh(mesh)
    return mesh.validate()


def unit_disk_mesh(refinement: int) -> Mesh:
    """Flat unit disk from a hexagon, boundary midpoints pushed onto the circle."""
    ang = np.arange(6) * math.pi / 3
    V = np.concatenate([[[0.0, 0.0]], np.stack([np.cos(ang), np.sin(ang)], axis=-1)])
    T = np.array([[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)])
    mesh = Mesh(V, T, np.full(6, 4), 0, "flat", 1)
    for _ in range(refinement):
        mesh = refine_mesh(mesh)
    return mesh.validate()


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"mesh v={len(mesh.vertices)} t={len(mesh.triangles)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for (i, j, k), tag in zip(mesh.triangles, mesh.tags):
            fh.write(f"{i} {j} {k} {tag}\n")


def read_mesh(path, metric: str = "hyperbolic", n_sides: int = 3, level: int = 0) -> Mesh:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 3 or head[0] != "mesh":
            raise MeshError(f"bad mesh header in {path}")
        nv = int(head[1].removeprefix("v="))
        nt = int(head[2].removeprefix("t="))
        lines = fh.read().split("\n")
    try:
        V = np.array([[float(s) for s in lines[i].split()] for i in range(nv)])
        rows = np.array([[int(s) for s in lines[nv + i].split()] for i in range(nt)])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from None
    if V.shape != (nv, 2) or rows.shape != (nt, 4):
        raise MeshError(f"malformed mesh file {path}")
    return Mesh(V, rows[:, :3], rows[:, 3], level, metric, n_sides).validate()


# ---------------------------------------------------------------------------
# Quadratic finite elements

# 7-point rule on the reference triangle, exact to degree 5 (weights sum to 1/2)
_A = (6 - math.sqrt(15)) / 21
_B = (6 + math.sqrt(15)) / 21
_WA = (155 - math.sqrt(15)) / 2400
_WB = (155 + math.sqrt(15)) / 2400
QUAD_XI = np.array([[1 / 3, 1 / 3], [_A, _A], [1 - 2 * _A, _A], [_A, 1 - 2 * _A],
                    [_B, _B], [1 - 2 * _B, _B], [_B, 1 - 2 * _B]])
QUAD_W = np.array([9 / 80, _WA, _WA, _WA, _WB, _WB, _WB])


def _p2_basis(xi):
    """Values (q, 6) and reference gradients (q, 6, 2); local order v0 v1 v2 e01 e12 e20."""
    L = np.stack([1 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=-1)
    dL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    N = np.concatenate([L * (2 * L - 1), 4 * L[:, [0, 1, 2]] * L[:, [1, 2, 0]]], axis=1)
    G = np.empty((len(xi), 6, 2))
    for i in range(3):
        G[:, i] = (4 * L[:, i:i + 1] - 1) * dL[i]
    for e, (i, j) in enumerate([(0, 1), (1, 2), (2, 0)]):
        G[:, 3 + e] = 4 * (L[:, j:j + 1] * dL[i] + L[:, i:i + 1] * dL[j])
    return N, G


class P2Space:
    """Quadratic Lagrange space on a mesh, with geometric data at quadrature points."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        T = mesh.triangles
        nT, nV = len(T), len(mesh.vertices)
        edges = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        uniq, inv = np.unique(np.sort(edges, axis=1), axis=0, return_inverse=True)
        inv = inv.ravel()
        self.n_dofs = nV + len(uniq)
        self.dofs = np.concatenate([T, (nV + inv).reshape(3, nT).T], axis=1)
        sides = mesh.edge_sides().T.ravel()
        bdofs = np.concatenate([edges[sides > 0].ravel(), nV + inv[sides > 0]])
        self.boundary = np.zeros(self.n_dofs, dtype=bool)
        self.boundary[bdofs] = True

        P = mesh.chart()
        p0 = P[T[:, 0]]
        J = np.stack([P[T[:, 1]] - p0, P[T[:, 2]] - p0], axis=-1)  # columns are edge vectors
        self.det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(self.det <= 0):
            raise MeshError("degenerate or negatively oriented triangle")
        self.N, G = _p2_basis(QUAD_XI)
        Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
        self.grad = np.einsum("tab,qib->tqia", Jinv_T, G)  # (nT, q, 6, 2)
        self.qpts = p0[:, None, :] + np.einsum("tab,qb->tqa", J, QUAD_XI)  # chart coords
        self.wdet = self.det[:, None] * QUAD_W[None, :]

        if mesh.metric == "flat":
            self.density = np.ones(self.wdet.shape)
            self.tensor = np.broadcast_to(np.eye(2), self.wdet.shape + (2, 2))
        else:
            r2 = np.sum(self.qpts**2, axis=-1)
            if np.any(r2 >= 1):
                raise MassMatrixError("quadrature point outside the unit disk")
            self.density = (1 - r2) ** -1.5
            k = self.qpts
            self.tensor = (np.eye(2) - k[..., :, None] * k[..., None, :]) / np.sqrt(1 - r2)[..., None, None]

    def disk_points(self) -> np.ndarray:
        """Quadrature points as complex disk coordinates, shape (nT, q)."""
        k = self.qpts[..., 0] + 1j * self.qpts[..., 1]
        return k if self.mesh.metric == "flat" else geom.klein_to_disk(k)

    def _assemble(self, local):
        rows = np.repeat(self.dofs, 6, axis=1).ravel()
        cols = np.tile(self.dofs, (1, 6)).ravel()
        A = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_dofs,) * 2).tocsr()
        return (A + A.T) * 0.5

    def stiffness(self):
        AG = np.einsum("tqab,tqjb->tqja", self.tensor, self.grad)
        return self._assemble(np.einsum("tq,tqia,tqja->tij", self.wdet, self.grad, AG))

    def mass(self, weight=None):
        w = self.wdet * self.density
        if weight is not None:
            w = w * weight
        elif np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise MassMatrixError("mass density is not positive at every quadrature point")
        return self._assemble(np.einsum("tq,qi,qj->tij", w, self.N, self.N))

    def locate(self, pts):
        """Triangle index and reference coordinates of chart points (or -1)."""
        P = self.mesh.chart()
        T = self.mesh.triangles
        cent = P[T].mean(axis=1)
        tree = cKDTree(cent)
        kq = min(12, len(T))
        _, cand = tree.query(pts, k=kq)
        cand = np.atleast_2d(cand.reshape(len(pts), -1))
        tri = np.full(len(pts), -1)
        ref = np.zeros((len(pts), 2))
        p0 = P[T[:, 0]]
        J = np.stack([P[T[:, 1]] - p0, P[T[:, 2]] - p0], axis=-1)
        Jinv = np.linalg.inv(J)
        for c in range(cand.shape[1]):
            t = cand[:, c]
            xi = np.einsum("nab,nb->na", Jinv[t], pts - p0[t])
            ok = (tri < 0) & (xi.min(axis=1) >= -1e-10) & (xi.sum(axis=1) <= 1 + 1e-10)
            tri[ok], ref[ok] = t[ok], xi[ok]
        missing = np.nonzero(tri < 0)[0]
        for i in missing:  # brute force for points near the hull
            xi = np.einsum("nab,nb->na", Jinv, pts[i] - p0)
            ok = np.nonzero((xi.min(axis=1) >= -1e-9) & (xi.sum(axis=1) <= 1 + 1e-9))[0]
            if len(ok):
                tri[i], ref[i] = ok[0], xi[ok[0]]
        return tri, ref

    def interpolate(self, U, pts):
        """Evaluate coefficient columns ``U`` (n_dofs, k) at chart points."""
        tri, ref = self.locate(pts)
        out = np.full((len(pts), U.shape[1]), np.nan)
        ok = tri >= 0
        if ok.any():
            N, _ = _p2_basis(ref[ok])
            out[ok] = np.einsum("ni,nik->nk", N, U[self.dofs[tri[ok]]])
        return out


def _eigsh(K, M, k, sigma, label):
    n = K.shape[0]
    if k >= n - 1:
        raise EigensolverError(f"{label}: requested {k} eigenpairs from {n} unknowns")
    # fixed start vector: ARPACK otherwise draws a random one and output bytes drift
    v0 = np.random.default_rng(n).standard_normal(n)
    try:
        vals, vecs = splinalg.eigsh(K.tocsc(), k=k, M=M.tocsc(), sigma=sigma, which="LM", v0=v0)
    except splinalg.ArpackNoConvergence as exc:
        raise EigensolverError(f"{label}: eigensolver did not converge ({exc})") from None
    except RuntimeError as exc:
        raise EigensolverError(f"{label}: {exc}") from None
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def solve_mixed(space: P2Space, k: int, kind: str):
    """Smallest ``k`` Laplace eigenpairs with Neumann or Dirichlet conditions.

    Vectors are M-orthonormal on the mesh domain and returned on all dofs.
    """
    K, M = space.stiffness(), space.mass()
    if kind == "neumann":
        # K is singular (constants); a tiny positive shift keeps K - sigma M invertible
        mu, U = _eigsh(K, M, k, 1e-3, "neumann")
        return mu, U
    free = np.nonzero(~space.boundary)[0]
    mu, Uf = _eigsh(K[free][:, free], M[free][:, free], k, 0.0, "dirichlet")
    U = np.zeros((space.n_dofs, k))
    U[free] = Uf
    return mu, U


def disk_dirichlet_eigenvalues(refinement: int = 3, k: int = 1) -> np.ndarray:
    """Lowest Dirichlet Laplace eigenvalues of the flat unit disk."""
    space = P2Space(unit_disk_mesh(refinement))
    return solve_mixed(space, k, "dirichlet")[0]


@dataclass(eq=False)
class TriangleEigenSystem(EigenSystem):
    """Merged even/odd spectrum of H^2/Delta+(p,q,r).

    An even eigenfunction is u/sqrt(2) on both halves of X; an odd one is
    +u/sqrt(2) on the triangle T and -u/sqrt(2) on its mirror image, where u
    solves the Neumann or Dirichlet problem on T.
    """

    orbifold: geom.TriangleOrbifold = None
    space: P2Space = None
    vectors: np.ndarray = None  # (n_dofs, N) M-orthonormal on T
    parity: np.ndarray = None  # +1 even (Neumann), -1 odd (Dirichlet)
    laplace: np.ndarray = None
    neumann: np.ndarray = None
    dirichlet: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def evaluate(self, j, points):
        """psi_j at disk points (complex); points in the mirror half use the parity."""
        w = np.atleast_1d(np.asarray(points, dtype=complex))
        j = np.atleast_1d(j)
        # T sits in the upper half-disk with side AB on the real axis
        mirror = w.imag < 0
        wt = np.where(mirror, np.conj(w), w)
        k = geom.disk_to_klein(wt)
        vals = self.space.interpolate(self.vectors[:, j], np.stack([k.real, k.imag], axis=-1))
        sign = np.where(mirror[:, None], self.parity[j][None, :], 1.0)
        out = (vals * sign / math.sqrt(2)).T
        return out[0] if out.shape[0] == 1 else out

    def weighted_mass(self, f, odd=False):
        """Mass matrix on T weighted by the even (or odd) part of f under w -> conj(w)."""
        key = (id(f), odd)
        if key in self._cache and self._cache[key][0] is f:
            return self._cache[key][1]
        w = self.space.disk_points()
        a = np.asarray(f(w.ravel()), dtype=float).reshape(w.shape)
        b = np.asarray(f(np.conj(w).ravel()), dtype=float).reshape(w.shape)
        M = self.space.mass(0.5 * (a - b) if odd else 0.5 * (a + b))
        self._cache[key] = (f, M)
        return M

    def diagonal(self, f):
        M = self.weighted_mass(f)
        return np.einsum("ij,ij->j", self.vectors, M @ self.vectors)

    def observable_matrix(self, f, idx):
        idx = np.atleast_1d(idx)
        U = self.vectors[:, idx]
        same = U.T @ (self.weighted_mass(f) @ U)
        cross = U.T @ (self.weighted_mass(f, odd=True) @ U)
        equal = self.parity[idx][:, None] == self.parity[idx][None, :]
        return np.where(equal, same, cross)


def triangle_orbifold_spectrum(p: int, q: int, r: int, k: int, refinement: int, mesh: Mesh | None = None,
                               truncate: bool = True) -> TriangleEigenSystem:
    """FEM spectrum of H^2/Delta+(p,q,r) from ``k`` Neumann and ``k`` Dirichlet modes.

    With ``truncate`` the merged list stops at the smaller of the two largest
    computed eigenvalues, so the counting function is not biased toward one
    parity near the top.
    """
    sig = geom.classify_signature(p, q, r)
    if sig.geometry != "hyperbolic":
        raise geom.GeometryError(f"signature {(p, q, r)} is {sig.geometry}; FEM needs a hyperbolic one")
    if k < 1:
        raise ValueError("k must be positive")
    orb = geom.build_triangle_group(p, q, r)
    mesh = triangle_mesh(orb, refinement) if mesh is None else mesh.validate()
    space = P2Space(mesh)
    mu_n, U_n = solve_mixed(space, k, "neumann")
    mu_d, U_d = solve_mixed(space, k, "dirichlet")
    mu = np.concatenate([mu_n, mu_d])
    parity = np.concatenate([np.ones(k), -np.ones(k)])
    U = np.concatenate([U_n, U_d], axis=1)
    order = np.argsort(mu, kind="stable")
    mu, parity, U = mu[order], parity[order], U[:, order]
    if truncate:
        keep = mu <= min(mu_n[-1], mu_d[-1]) * (1 + 1e-12)
        mu, parity, U = mu[keep], parity[keep], U[:, keep]
    lam = np.sqrt(np.clip(mu, 0.0, None))
    return TriangleEigenSystem(lam, f"hyperbolic_triangle({p},{q},{r})", sig.area, FEM_TOL,
                               orbifold=orb, space=space, vectors=U, parity=parity, laplace=mu,
                               neumann=mu_n, dirichlet=mu_d)
