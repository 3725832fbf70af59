"""P1 finite elements for  lam u - div(A grad u) = f  on the slit disk.

Dirichlet data g is imposed on the outer circle; the crack faces carry the
natural condition (A grad u) . nu = 0 because the mesh is cut along them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg
from scipy.spatial import cKDTree

from .geometry import BallSpec, CrackSet
from .mesh import Triangulation

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Coefficients and problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric matrix field x -> A(x).

    ``func`` maps an (n, 2) array of points to an (n, 2, 2) array.
    """

    func: Callable[[np.ndarray], np.ndarray]
    holder_exponent: float = 1.0
    holder_constant: float = 0.0
    gamma: float = 1.0
    Lambda: float = 1.0
    name: str = "custom"
    constant_value: np.ndarray | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.func(x)

    def at(self, x) -> np.ndarray:
        return self(np.asarray(x, dtype=float)[None, :])[0]

    @property
    def is_constant(self) -> bool:
        return self.constant_value is not None

    @classmethod
    def identity(cls) -> "CoefficientField":
        return cls.constant(np.eye(2), name="identity")

    @classmethod
    def constant(cls, M, name: str = "constant") -> "CoefficientField":
        M = np.array(M, dtype=float).reshape(2, 2)
        if not np.allclose(M, M.T, atol=1e-12):
            raise ValueError("coefficient matrix must be symmetric")
        w = np.linalg.eigvalsh(M)
        if w[0] <= 0:
            raise ValueError("coefficient matrix must be positive definite")
        M.setflags(write=False)
        return cls(
            lambda x, M=M: np.broadcast_to(M, (len(x), 2, 2)).copy(),
            1.0,
            0.0,
            float(w[0]),
            float(w[1]),
            name,
            M,
        )

    @classmethod
    def holder(cls, delta: float, alpha: float, M, x0=(0.0, 0.0), radius: float = 1.0):
        """A(x) = Id + delta |x - x0|^alpha M on a disk of the given radius."""
        M = np.array(M, dtype=float).reshape(2, 2)
        if not np.allclose(M, M.T, atol=1e-12):
            raise ValueError("M must be symmetric")
        if not (0 < alpha <= 1):
            raise ValueError("Hölder exponent must lie in (0, 1]")
        x0 = np.asarray(x0, dtype=float)
        nrm = float(np.linalg.norm(M, 2))
        # Points of the disk are within 2 * radius of x0 in the worst case.
        spread = delta * nrm * (2.0 * radius) ** alpha
        gamma = 1.0 - spread
        if gamma <= 0:
            raise ValueError("delta too large: coefficient field is not coercive")

        def func(x, M=M, x0=x0):
            s = np.linalg.norm(x - x0, axis=1) ** alpha
            return np.eye(2)[None] + delta * s[:, None, None] * M[None]

        return cls(func, alpha, delta * nrm, gamma, 1.0 + spread, "holder")

    def check(self, points: np.ndarray) -> list[str]:
        """Symmetry, ellipticity and Hölder bounds on sampled points."""
        pts = np.asarray(points, dtype=float)
        A = self(pts)
        problems = []
        asym = np.abs(A - np.swapaxes(A, 1, 2)).max()
        if asym > 1e-12:
            problems.append(f"asymmetry {asym:.3g}")
        w = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))
        if w.min() < self.gamma * (1 - 1e-12):
            problems.append(f"eigenvalue {w.min():.6g} below gamma {self.gamma:.6g}")
        if w.max() > self.Lambda * (1 + 1e-12):
            problems.append(f"eigenvalue {w.max():.6g} above Lambda {self.Lambda:.6g}")
        if self.holder_constant > 0 and len(pts) > 1:
            i = np.arange(len(pts) - 1)
            d = np.linalg.norm(pts[i] - pts[i + 1], axis=1)
            dA = np.linalg.norm(A[i] - A[i + 1], ord=2, axis=(1, 2))
            ok = d > 0
            ratio = dA[ok] / d[ok] ** self.holder_exponent
            if ratio.size and ratio.max() > self.holder_constant * (1 + 1e-9):
                problems.append(f"Hölder ratio {ratio.max():.6g} above {self.holder_constant:.6g}")
        return problems


@dataclass(frozen=True)
class ProblemSpec:
    """Data of the boundary value problem.

    ``f`` is ``None`` for the zero right-hand side.  ``f_sup`` and ``g_sup``
    are sup-norm bounds; when omitted they are estimated by sampling.
    """

    domain: BallSpec
    crack: CrackSet | None
    A: CoefficientField
    lam: float
    f: Field | None
    g: Field
    f_sup: float | None = None
    g_sup: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.lam == 0 and self.f is not None:
            probe = _disk_samples(self.domain, 257)
            if np.any(np.asarray(self.f(probe)) != 0):
                raise ValueError("lam = 0 requires f = 0")
            object.__setattr__(self, "f", None)

    def f_at(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.f is None:
            return np.zeros(len(x))
        return np.broadcast_to(np.asarray(self.f(x), dtype=float), (len(x),)).copy()

    def sup_f(self) -> float:
        if self.f is None:
            return 0.0
        if self.f_sup is not None:
            return float(self.f_sup)
        return float(np.abs(self.f_at(_disk_samples(self.domain, 4097))).max())

    def sup_g(self) -> float:
        if self.g_sup is not None:
            return float(self.g_sup)
        c = np.asarray(self.domain.center)
        t = np.linspace(-math.pi, math.pi, 8193)
        circ = c + self.domain.radius * np.stack([np.cos(t), np.sin(t)], axis=1)
        pts = np.vstack([circ, _disk_samples(self.domain, 4097)])
        return float(np.abs(np.asarray(self.g(pts), dtype=float)).max())


def _disk_samples(ball: BallSpec, n: int) -> np.ndarray:
    """Deterministic Fibonacci-spiral samples of the closed disk."""
    k = np.arange(n) + 0.5
    r = ball.radius * np.sqrt(k / n)
    th = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.asarray(ball.center) + np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


# ---------------------------------------------------------------------------
# Element quantities
# ---------------------------------------------------------------------------


def basis_gradients(mesh: Triangulation) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the three hat functions per triangle, and the areas."""
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # Rows of the inverse Jacobian give grad(lambda_1), grad(lambda_2).
    g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def element_gradients(mesh: Triangulation, values: np.ndarray) -> np.ndarray:
    G, _ = basis_gradients(mesh)
    return np.einsum("mk,mki->mi", values[mesh.triangles], G)


def edge_midpoints(mesh: Triangulation) -> np.ndarray:
    """(m, 3, 2) midpoints of edges opposite... ordered (01, 12, 20)."""
    p = mesh.vertices[mesh.triangles]
    return 0.5 * (p + np.roll(p, -1, axis=1))


# Midpoint k lies on edge (k, k+1): hat j takes value 1/2 there iff j in {k, k+1}.
_MID_BASIS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _side_points(mesh: Triangulation, ids: np.ndarray) -> np.ndarray:
    """Coordinates of vertices ``ids``, crack vertices nudged a hair into their own face."""
    pts = mesh.vertices[ids].copy()
    crack = np.zeros(mesh.n_vertices, dtype=bool)
    crack[mesh.markers["crack_left"]] = True
    crack[mesh.markers["crack_right"]] = True
    sel = np.nonzero(crack[ids])[0]
    if len(sel):
        cent = mesh.centroids()
        for s in sel:
            v = ids[s]
            touching = np.nonzero((mesh.triangles == v).any(axis=1))[0]
            d = cent[touching].mean(axis=0) - pts[s]
            pts[s] = pts[s] + 1e-10 * mesh.domain.radius * d / np.linalg.norm(d)
    return pts


def dirichlet_values(mesh: Triangulation, g: Field) -> tuple[np.ndarray, np.ndarray]:
    """Outer node ids and g at those nodes.

    Copies of a crack node lying on the circle are evaluated a hair inside
    their own side so that data with a jump across the crack is sampled on
    the correct face.
    """
    ids = np.asarray(mesh.markers["outer"], dtype=np.int64)
    return ids, np.asarray(g(_side_points(mesh, ids)), dtype=float).reshape(len(ids))


def interpolate(mesh: Triangulation, u: Field) -> np.ndarray:
    """Nodal P1 interpolant; each face of the slit samples u on its own side."""
    ids = np.arange(mesh.n_vertices)
    return np.asarray(u(_side_points(mesh, ids)), dtype=float).reshape(mesh.n_vertices)


# ---------------------------------------------------------------------------
# Solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    """Nodal P1 field on a slit mesh with its per-element gradients."""

    mesh: Triangulation
    nodal_values: np.ndarray
    stats: dict = field(default_factory=dict)
    gradients: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.nodal_values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "nodal_values", v)
        grad = element_gradients(self.mesh, v)
        grad.setflags(write=False)
        object.__setattr__(self, "gradients", grad)
        object.__setattr__(self, "_locator", None)

    def locator(self) -> "PointLocator":
        if self._locator is None:
            object.__setattr__(self, "_locator", PointLocator(self.mesh))
        return self._locator

    def evaluate(self, points) -> np.ndarray:
        """Point values (NaN outside the mesh)."""
        tri, bary = self.locator().locate(points)
        out = np.full(len(tri), np.nan)
        ok = tri >= 0
        out[ok] = np.einsum("pk,pk->p", self.nodal_values[self.mesh.triangles[tri[ok]]], bary[ok])
        return out

    def gradient_at(self, points) -> np.ndarray:
        tri, _ = self.locator().locate(points)
        out = np.full((len(tri), 2), np.nan)
        ok = tri >= 0
        out[ok] = self.gradients[tri[ok]]
        return out

    def to_dict(self, mesh_ref: str | None = None) -> dict:
        return {"mesh_ref": mesh_ref, "nodal_values": self.nodal_values.tolist()}


class PointLocator:
    """Triangle lookup through a k-d tree of centroids with a brute-force fallback."""

    def __init__(self, mesh: Triangulation):
        self.mesh = mesh
        self._p = mesh.vertices[mesh.triangles]
        self._tree = cKDTree(mesh.centroids())
        e1 = self._p[:, 1] - self._p[:, 0]
        e2 = self._p[:, 2] - self._p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self._inv = np.stack(
            [np.stack([e2[:, 1], -e2[:, 0]], 1), np.stack([-e1[:, 1], e1[:, 0]], 1)], 1
        ) / det[:, None, None]

    def _bary(self, tri, pts):
        l12 = np.einsum("pij,pj->pi", self._inv[tri], pts - self._p[tri, 0])
        return np.column_stack([1.0 - l12.sum(axis=1), l12])

    def locate(self, points, tol: float = 1e-12):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        tri = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        pending = np.arange(n)
        for k in (8, 32):
            if len(pending) == 0:
                break
            k = min(k, len(self._p))
            _, cand = self._tree.query(pts[pending], k=k)
            cand = cand.reshape(len(pending), k)
            best = np.full(len(pending), -np.inf)
            for j in range(k):
                b = self._bary(cand[:, j], pts[pending])
                score = b.min(axis=1)
                better = score > best
                best = np.where(better, score, best)
                tri[pending[better]] = cand[better, j]
                bary[pending[better]] = b[better]
            done = best >= -tol
            tri[pending[~done]] = -1
            pending = pending[~done]
        for i in pending:
            b = self._bary(np.arange(len(self._p)), np.repeat(pts[i][None], len(self._p), 0))
            j = int(np.argmax(b.min(axis=1)))
            if b[j].min() >= -tol:
                tri[i] = j
                bary[i] = b[j]
        return tri, bary


# ---------------------------------------------------------------------------
# Assembly and solve
# ---------------------------------------------------------------------------


@dataclass
class Assembly:
    K: sp.csr_matrix
    M: sp.csr_matrix
    b: np.ndarray
    areas: np.ndarray
    grads: np.ndarray


def assemble(spec: ProblemSpec, mesh: Triangulation) -> Assembly:
    G, areas = basis_gradients(mesh)
    if np.any(areas <= 0):
        raise SolverError("mesh has non-positive triangle areas")
    A = spec.A(mesh.centroids())
    ke = areas[:, None, None] * np.einsum("mai,mij,mbj->mab", G, A, G)
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    me = areas[:, None, None] * _MASS_REF[None]
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    b = np.zeros(n)
    if spec.f is not None:
        mids = edge_midpoints(mesh)
        fm = spec.f_at(mids.reshape(-1, 2)).reshape(-1, 3)
        be = (areas / 3.0)[:, None] * (fm @ _MID_BASIS)
        b = np.bincount(tris.ravel(), weights=be.ravel(), minlength=n)
    return Assembly(K, M, b, areas, G)


def _check_mesh_matches(spec: ProblemSpec, mesh: Triangulation):
    if spec.domain.center != mesh.domain.center or spec.domain.radius != mesh.domain.radius:
        raise SolverError("mesh domain differs from the problem domain")
    segs = spec.crack.segments if spec.crack is not None else np.zeros((0, 2, 2))
    if segs.shape != mesh.crack_segments.shape or not np.allclose(
        segs, mesh.crack_segments, rtol=0, atol=1e-12 * spec.domain.radius
    ):
        raise SolverError("mesh crack does not match the problem crack")


def assemble_and_solve(
    spec: ProblemSpec, mesh: Triangulation, solver_tol: float = 1e-10
) -> DiscreteSolution:
    """Galerkin P1 solution with u = g at outer nodes."""
    _check_mesh_matches(spec, mesh)
    asm = assemble(spec, mesh)
    S = (asm.K + spec.lam * asm.M).tocsr()
    n = mesh.n_vertices
    d = S.diagonal()
    if np.any(d <= 0):
        raise SolverError(f"non-positive diagonal at nodes {np.nonzero(d <= 0)[0][:5].tolist()}")
    fixed = np.zeros(n, dtype=bool)
    u = np.zeros(n)
    ids, gv = dirichlet_values(mesh, spec.g)
    fixed[ids] = True
    u[ids] = gv
    if spec.lam == 0:
        # A component with no Dirichlet node only determines u up to a constant.
        ncomp, lab = connected_components(S, directed=False)
        has_d = np.zeros(ncomp, dtype=bool)
        has_d[lab[ids]] = True
        for c in np.nonzero(~has_d)[0]:
            pin = int(np.nonzero(lab == c)[0][0])
            fixed[pin] = True
            u[pin] = 0.0
            log.warning("grounding component %d at node %d", c, pin)
    free = np.nonzero(~fixed)[0]
    Sff = S[free][:, free]
    rhs = asm.b[free] - S[free][:, fixed] @ u[fixed]
    cap = int(50 * math.sqrt(max(len(free), 1)))
    stats = {"unknowns": int(len(free)), "iterations": 0, "residual": 0.0}
    if len(free):
        dinv = 1.0 / Sff.diagonal()
        pre = sp.diags(dinv)
        it = [0]

        def count(_):
            it[0] += 1

        bn = np.linalg.norm(rhs)
        if bn == 0:
            x = np.zeros(len(free))
        else:
            x, info = cg(Sff, rhs, rtol=solver_tol, atol=0.0, maxiter=cap, M=pre, callback=count)
            if info > 0:
                raise SolverError(f"CG did not converge within {cap} iterations")
            if info < 0:
                raise SolverError("CG breakdown: system is not positive definite")
        u[free] = x
        res = np.linalg.norm(Sff @ x - rhs) / max(bn, 1e-300)
        stats.update(iterations=it[0], residual=float(res))
    log.info("solve: %d unknowns, %d CG iterations", stats["unknowns"], stats["iterations"])
    return DiscreteSolution(mesh, u, stats)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _nodal(mesh: Triangulation, phi) -> np.ndarray:
    if callable(phi):
        return np.asarray(phi(mesh.vertices), dtype=float).reshape(mesh.n_vertices)
    return np.asarray(phi, dtype=float).reshape(mesh.n_vertices)


def weak_residual(sol: DiscreteSolution, spec: ProblemSpec, phi) -> float:
    """∫ A grad u . grad phi - ∫ (f - lam u) phi for a test field vanishing on the circle.

    ``phi`` is a callable evaluated at the vertices (P1 interpolation) or a
    nodal array.
    """
    mesh = sol.mesh
    ph = _nodal(mesh, phi)
    outer = mesh.markers["outer"]
    if np.any(np.abs(ph[outer]) > 1e-14):
        raise ValueError("test field must vanish on the outer boundary")
    G, areas = basis_gradients(mesh)
    A = spec.A(mesh.centroids())
    gphi = np.einsum("mk,mki->mi", ph[mesh.triangles], G)
    stiff = np.sum(areas * np.einsum("mi,mij,mj->m", sol.gradients, A, gphi))
    mids = edge_midpoints(mesh).reshape(-1, 2)
    um = (sol.nodal_values[mesh.triangles] @ _MID_BASIS.T).reshape(-1)
    pm = (ph[mesh.triangles] @ _MID_BASIS.T).reshape(-1)
    src = spec.f_at(mids) - spec.lam * um
    load = np.sum(np.repeat(areas / 3.0, 3) * src * pm)
    return float(stiff - load)


def discrete_functional(sol: DiscreteSolution, spec: ProblemSpec, values=None) -> float:
    """∫ |grad u|_A^2 + (1/lam) ∫ (lam u - f)^2 for the P1 field ``values``."""
    mesh = sol.mesh
    u = sol.nodal_values if values is None else np.asarray(values, dtype=float)
    G, areas = basis_gradients(mesh)
    A = spec.A(mesh.centroids())
    gu = np.einsum("mk,mki->mi", u[mesh.triangles], G)
    out = float(np.sum(areas * np.einsum("mi,mij,mj->m", gu, A, gu)))
    if spec.lam > 0:
        mids = edge_midpoints(mesh).reshape(-1, 2)
        um = (u[mesh.triangles] @ _MID_BASIS.T).reshape(-1)
        w = np.repeat(areas / 3.0, 3)
        out += float(np.sum(w * (spec.lam * um - spec.f_at(mids)) ** 2)) / spec.lam
    return out


@dataclass(frozen=True)
class SupBound:
    passed: bool
    max_abs: float
    bound: float
    margin: float


def sup_bound_check(sol: DiscreteSolution, spec: ProblemSpec, slack: float = 1e-6) -> SupBound:
    """max |u| against max(|f|_inf, |g|_inf) / min(1, lam) (|g|_inf when lam = 0)."""
    if spec.lam > 0:
        bound = max(spec.sup_f(), spec.sup_g()) / min(1.0, spec.lam)
    else:
        bound = spec.sup_g()
    m = float(np.abs(sol.nodal_values).max())
    return SupBound(m <= bound + slack, m, bound, bound + slack - m)
