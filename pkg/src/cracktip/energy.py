"""Energies in balls, normalised profiles and the checks built on them."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import kernels
from .geometry import CrackSet, circle_crossings, primitive_of_crossings
from .mesh import Triangulation
from .solver import CoefficientField, DiscreteSolution, ProblemSpec

MODES = ("harmonic", "holder", "second_member")


class EnergyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Quadrature on mesh ∩ disk
# ---------------------------------------------------------------------------


def _check_inside(mesh: Triangulation, x0, reach: float):
    c = np.asarray(mesh.domain.center)
    if np.linalg.norm(np.asarray(x0) - c) + reach > mesh.domain.radius * (1 + 1e-12):
        raise EnergyError(
            f"ball of radius {reach:.6g} around {list(x0)} exceeds the domain"
        )


def energy_density(sol: DiscreteSolution, A: CoefficientField) -> np.ndarray:
    """|grad u|_A^2 per triangle with A at the centroid."""
    Ac = A(sol.mesh.centroids())
    return np.einsum("mi,mij,mj->m", sol.gradients, Ac, sol.gradients)


def energy_in_ball(sol: DiscreteSolution, A: CoefficientField, x0, r: float, impl=None) -> float:
    """∫_{B(x0, r)} |grad u|_A^2 with exact triangle/disk clipping."""
    _check_inside(sol.mesh, x0, r)
    w = kernels.tri_disk_areas(sol.mesh.vertices, sol.mesh.triangles, x0, r, impl=impl)
    return float(np.dot(energy_density(sol, A), w))


def sqrtm_spd(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] <= 0:
        raise EnergyError("matrix is not positive definite")
    return (V * np.sqrt(w)) @ V.T


def energy_in_ellipse(
    sol: DiscreteSolution, A: CoefficientField, x0, r: float, impl=None
) -> float:
    """∫ over x0 + sqrt(A(x0)) B(0, r) of |grad u|_A^2.

    The mesh is pulled back by the affine map, clipped against B(0, r) and
    the areas are pushed forward with det(sqrt(A(x0))).
    """
    x0 = np.asarray(x0, dtype=float)
    S = sqrtm_spd(A.at(x0))
    _check_inside(sol.mesh, x0, r * float(np.linalg.eigvalsh(S).max()))
    y = (sol.mesh.vertices - x0) @ np.linalg.inv(S).T
    w = kernels.tri_disk_areas(y, sol.mesh.triangles, (0.0, 0.0), r, impl=impl)
    return float(np.linalg.det(S) * np.dot(energy_density(sol, A), w))


@dataclass(frozen=True)
class BallRule:
    """Quadrature rule for ∫_{B ∩ mesh}: points, weights and owning triangle."""

    points: np.ndarray
    weights: np.ndarray
    parent: np.ndarray


_SUB = np.array(
    [
        [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
        [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
        [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
        [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
    ]
)


def _midpoint_rule(p: np.ndarray):
    """Edge-midpoint rule (exact for quadratics) on triangles p (k, 3, 2)."""
    area = 0.5 * np.abs(
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )
    mids = 0.5 * (p + np.roll(p, -1, axis=1))
    return mids.reshape(-1, 2), np.repeat(area / 3.0, 3), area


def ball_rule(mesh: Triangulation, x0, r: float, depth: int = 6, impl=None) -> BallRule:
    """Quadrature on mesh ∩ B(x0, r).

    Triangles inside the disk use the edge-midpoint rule.  Cut triangles are
    split into four children ``depth`` times; children still cut at the last
    level are weighted by their exact clipped area fraction.
    """
    x0 = np.asarray(x0, dtype=float)
    v, t = mesh.vertices, mesh.triangles
    clip = kernels.tri_disk_areas(v, t, x0, r, impl=impl)
    full = np.abs(mesh.areas())
    inside = clip >= full * (1 - 1e-14)
    cut = np.nonzero((clip > 0) & ~inside)[0]
    pts, wts, par = [], [], []
    q, w, _ = _midpoint_rule(v[t[inside]])
    pts.append(q)
    wts.append(w)
    par.append(np.repeat(np.nonzero(inside)[0], 3))
    tri = v[t[cut]]
    owner = cut
    for level in range(depth + 1):
        if len(tri) == 0:
            break
        d = np.linalg.norm(tri - x0, axis=2)
        c_in = np.all(d <= r, axis=1)
        if np.any(c_in):
            q, w, _ = _midpoint_rule(tri[c_in])
            pts.append(q)
            wts.append(w)
            par.append(np.repeat(owner[c_in], 3))
        rest = ~c_in
        tri, owner = tri[rest], owner[rest]
        if len(tri) == 0:
            break
        flat = tri.reshape(-1, 2)
        ids = np.arange(len(flat)).reshape(-1, 3)
        a = kernels.tri_disk_areas(flat, ids, x0, r, impl=impl)
        keep = a > 0
        tri, owner, a = tri[keep], owner[keep], a[keep]
        if level == depth:
            q, w, area = _midpoint_rule(tri)
            frac = np.repeat(np.where(area > 0, a / area, 0.0), 3)
            pts.append(q)
            wts.append(w * frac)
            par.append(np.repeat(owner, 3))
            break
        tri = np.einsum("sak,mkd->msad", _SUB, tri).reshape(-1, 3, 2)
        owner = np.repeat(owner, 4)
    return BallRule(
        np.vstack(pts) if pts else np.zeros((0, 2)),
        np.concatenate(wts) if wts else np.zeros(0),
        np.concatenate(par).astype(np.int64) if par else np.zeros(0, dtype=np.int64),
    )


def linear_values(sol: DiscreteSolution, points: np.ndarray, parent: np.ndarray) -> np.ndarray:
    """Values of the P1 field at points using the parent triangle's linear map."""
    v0 = sol.mesh.vertices[sol.mesh.triangles[parent, 0]]
    u0 = sol.nodal_values[sol.mesh.triangles[parent, 0]]
    return u0 + np.einsum("pi,pi->p", sol.gradients[parent], points - v0)


# ---------------------------------------------------------------------------
# Circle integrals
# ---------------------------------------------------------------------------


def _abs_cos_primitive(t):
    k = np.floor((t + 0.5 * math.pi) / math.pi)
    return 2.0 * k + np.sin(t - k * math.pi)


def _arc_moments(phi0, phi1):
    """∫ nu, ∫ nu nu^T over [phi0, phi1] with nu = (cos, sin)."""
    d = phi1 - phi0
    c1 = np.sin(phi1) - np.sin(phi0)
    s1 = np.cos(phi0) - np.cos(phi1)
    s2 = 0.25 * (np.sin(2 * phi1) - np.sin(2 * phi0))
    cc = 0.5 * d + s2
    ss = 0.5 * d - s2
    cs = 0.5 * (np.sin(phi1) ** 2 - np.sin(phi0) ** 2)
    return np.stack([c1, s1], axis=1), np.stack(
        [np.stack([cc, cs], axis=1), np.stack([cs, ss], axis=1)], axis=1
    )


def circle_arcs(sol: DiscreteSolution, x0, r: float, impl=None):
    """Triangle-wise arcs of ∂B(x0, r): (owner, phi0, phi1)."""
    return kernels.tri_circle_arcs(sol.mesh.vertices, sol.mesh.triangles, x0, r, impl=impl)


def _avoid_vertices(mesh: Triangulation, x0, r: float) -> float:
    d = np.abs(np.linalg.norm(mesh.vertices - np.asarray(x0), axis=1) - r)
    while d.min() <= 1e-9 * r:
        r *= 1 + 1e-6
        d = np.abs(np.linalg.norm(mesh.vertices - np.asarray(x0), axis=1) - r)
    return r


def boundary_flux_terms(sol: DiscreteSolution, A: CoefficientField, x0, r: float, impl=None):
    """Per-arc-piece ∫ u (A grad u).nu, ∫ (A grad u).nu and ∫ |(A grad u).nu| (outward nu)."""
    x0 = np.asarray(x0, dtype=float)
    owner, p0, p1 = circle_arcs(sol, x0, r, impl=impl)
    mesh = sol.mesh
    w = np.einsum("mij,mj->mi", A(mesh.centroids()[owner]), sol.gradients[owner])
    g = sol.gradients[owner]
    a = linear_values(sol, np.repeat(x0[None], len(owner), 0), owner)
    m1, m2 = _arc_moments(p0, p1)
    flux = r * np.einsum("pi,pi->p", w, m1)
    u_flux = r * (a * flux / r + r * np.einsum("pi,pij,pj->p", g, m2, w))
    nw = np.linalg.norm(w, axis=1)
    psi = np.arctan2(w[:, 1], w[:, 0])
    absflux = r * nw * (_abs_cos_primitive(p1 - psi) - _abs_cos_primitive(p0 - psi))
    return owner, p0, p1, u_flux, flux, absflux


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrectionParams:
    mode: str = "harmonic"
    C: float = 0.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown correction mode {self.mode!r}")
        if self.C < 0:
            raise ValueError("correction constant must be nonnegative")
        if self.mode == "holder" and not (0 < self.alpha < 1):
            raise ValueError("holder correction requires 0 < alpha < 1")

    def factor(self, r):
        r = np.asarray(r, dtype=float)
        if self.mode != "holder" or self.C == 0:
            return np.ones_like(r)
        a = 0.5 * self.alpha
        return (1.0 + self.C * r**a) ** (1.0 / a)


@dataclass(frozen=True)
class EnergyProfile:
    """Energy profile on a decreasing radius schedule.

    ``det_sqrtA`` is det(sqrt(A(x0))) when the ellipses B_A were used
    (1 otherwise); energy densities are E / (det_sqrtA r).
    """

    radii: np.ndarray
    E: np.ndarray
    E_over_r: np.ndarray
    corrected: np.ndarray
    N: np.ndarray
    P: np.ndarray
    correction: CorrectionParams = field(default_factory=CorrectionParams)
    det_sqrtA: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.radii)
        if len(r) > 1 and np.any(np.diff(r) >= 0):
            raise EnergyError("profile radii must be strictly decreasing")

    def rows(self):
        for k in range(len(self.radii)):
            yield (
                float(self.radii[k]),
                float(self.E[k]),
                float(self.E_over_r[k]),
                float(self.corrected[k]),
                int(self.N[k]),
                float(self.P[k]),
            )

    def to_csv(self) -> str:
        lines = ["r,E,E_over_r,corrected,N,P"]
        for row in self.rows():
            lines.append(",".join(repr(x) for x in row))
        return "\n".join(lines) + "\n"


def default_schedule(domain_radius: float, tip_size: float, ratio: float = 2 ** -0.5):
    """Geometric radii from 0.5 R down to 5 x tip element size."""
    out = []
    r = 0.5 * domain_radius
    while r >= 5.0 * tip_size * (1 - 1e-12):
        out.append(r)
        r *= ratio
    return np.asarray(out)


def profile(
    sol: DiscreteSolution,
    spec: ProblemSpec,
    x0,
    schedule,
    correction: CorrectionParams | None = None,
    threads: int = 1,
    impl=None,
) -> EnergyProfile:
    """E(r), E/r and the corrected values on the schedule."""
    correction = correction or CorrectionParams()
    radii = np.asarray(schedule, dtype=float)
    if np.any(radii <= 0):
        raise EnergyError("radii must be positive")
    x0 = np.asarray(x0, dtype=float)
    K = spec.crack
    A0 = spec.A.at(x0)
    # balls adapted to A(x0); round balls when A(x0) = Id
    ellipse = correction.mode == "holder" or not np.allclose(A0, np.eye(2), rtol=0, atol=1e-14)
    det = float(np.linalg.det(sqrtm_spd(A0))) if ellipse else 1.0

    def one(r):
        if ellipse:
            e = energy_in_ellipse(sol, spec.A, x0, r, impl=impl)
        else:
            e = energy_in_ball(sol, spec.A, x0, r, impl=impl)
        n = circle_crossings(K, x0, r) if K is not None else 0
        p = primitive_of_crossings(K, x0, r) if K is not None else 0.0
        return e, n, p

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            res = list(ex.map(one, radii))
    else:
        res = [one(r) for r in radii]
    E = np.array([x[0] for x in res])
    N = np.array([x[1] for x in res], dtype=np.int64)
    P = np.array([x[2] for x in res])
    eor = E / radii
    if correction.mode == "second_member":
        corr = eor + correction.C * P
    else:
        corr = eor * correction.factor(radii)
    return EnergyProfile(radii, E, eor, corr, N, P, correction, det)


def monotone_check(prof: EnergyProfile, slack: float = 0.01) -> list[int]:
    """Indices i where the value at the next (smaller) radius exceeds the one at r_i beyond slack.

    A nondecreasing function of r decreases along a decreasing schedule, so
    any increase beyond ``slack`` (relative) is a violation.
    """
    c = np.asarray(prof.corrected, dtype=float)
    if len(c) < 2:
        raise EnergyError("monotone_check needs at least two radii")
    return [i for i in range(len(c) - 1) if c[i + 1] - c[i] > slack * abs(c[i])]


@dataclass(frozen=True)
class SIFEstimate:
    C0: float
    lower_bound: float
    fit_window: tuple[float, float]
    uncertainty: float
    slope: float


def sif_estimate(prof: EnergyProfile, mesh_tip_size: float) -> SIFEstimate:
    """Intercept of a linear fit of corrected / det_sqrtA against r.

    The fit uses the admissible radii (r >= 5 x tip size) within one decade
    of the smallest admissible radius, extended to at least four points.
    """
    r = np.asarray(prof.radii)
    y = np.asarray(prof.corrected) / prof.det_sqrtA
    adm = np.nonzero(r >= 5.0 * mesh_tip_size * (1 - 1e-12))[0]
    if len(adm) < 4:
        raise EnergyError(f"only {len(adm)} admissible radii; need 4")
    ra, ya = r[adm], y[adm]
    order = np.argsort(ra)
    ra, ya = ra[order], ya[order]
    win = ra <= 10.0 * ra[0] * (1 + 1e-12)
    if win.sum() < 4:
        win = np.arange(len(ra)) < 4
    X = np.column_stack([np.ones(win.sum()), ra[win]])
    coef, *_ = np.linalg.lstsq(X, ya[win], rcond=None)
    resid = ya[win] - X @ coef
    return SIFEstimate(
        C0=float(coef[0]),
        lower_bound=float(ya[0]),
        fit_window=(float(ra[win][0]), float(ra[win][-1])),
        uncertainty=float(np.abs(resid).max()),
        slope=float(coef[1]),
    )


# ---------------------------------------------------------------------------
# Integration-by-parts checks
# ---------------------------------------------------------------------------


def gauss_green_terms(sol: DiscreteSolution, spec: ProblemSpec, x0, r: float, impl=None):
    """(∫_B |grad u|_A^2, ∫_B (f - lam u) u, ∫_{∂B} u (A grad u).nu, source scale), r nudged off vertices."""
    x0 = np.asarray(x0, dtype=float)
    r = _avoid_vertices(sol.mesh, x0, r)
    E = energy_in_ball(sol, spec.A, x0, r, impl=impl)
    src = scale = 0.0
    if spec.lam > 0 or spec.f is not None:
        rule = ball_rule(sol.mesh, x0, r, impl=impl)
        u = linear_values(sol, rule.points, rule.parent)
        fx = spec.f_at(rule.points)
        src = float(np.dot(rule.weights, (fx - spec.lam * u) * u))
        scale = float(np.dot(rule.weights, (np.abs(fx) + spec.lam * np.abs(u)) * np.abs(u)))
    *_, u_flux, _, _ = boundary_flux_terms(sol, spec.A, x0, r, impl=impl)
    return E, src, float(np.sum(u_flux)), scale


def gauss_green_residual(sol: DiscreteSolution, spec: ProblemSpec, x0, r: float, impl=None) -> float:
    """|∫_B |grad u|_A^2 - ∫_B (f - lam u) u - ∫_{∂B} u (A grad u).nu| normalised."""
    E, src, bnd, scale = gauss_green_terms(sol, spec, x0, r, impl=impl)
    # when every term vanishes, measure the roundoff against the source scale instead
    return abs(E - src - bnd) / max(E + abs(src), 1e-8 * (E + scale), 1e-300)


@dataclass(frozen=True)
class ArcFlux:
    phi0: float
    phi1: float
    flux: float
    source: float
    scale: float
    residual: float


def _triangle_components(mesh: Triangulation, tris: np.ndarray, x0, r) -> np.ndarray:
    """Connected components of the given triangles through edges meeting the open disk."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    local = {int(t): k for k, t in enumerate(tris)}
    e = np.vstack([mesh.triangles[tris][:, [0, 1]], mesh.triangles[tris][:, [1, 2]],
                   mesh.triangles[tris][:, [2, 0]]])
    owner = np.tile(np.arange(len(tris)), 3)
    e = np.sort(e, axis=1)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    i = np.nonzero(same)[0]
    a, b = mesh.vertices[e[i, 0]], mesh.vertices[e[i, 1]]
    d = b - a
    t = np.clip(np.einsum("ij,ij->i", np.asarray(x0) - a, d) / np.einsum("ij,ij->i", d, d), 0, 1)
    near = np.linalg.norm(a + t[:, None] * d - x0, axis=1) < r
    i = i[near]
    n = len(tris)
    g = coo_matrix((np.ones(len(i)), (owner[i], owner[i + 1])), shape=(n, n))
    _, lab = connected_components(g, directed=False)
    del local
    return lab


def arc_flux_residual(
    sol: DiscreteSolution, spec: ProblemSpec, x0, r: float, impl=None
) -> list[ArcFlux]:
    """Per arc I_j of ∂B(x0, r) \\ K: ∫_{I_j} (A grad u).nu_out against ∫_{U_j} (lam u - f).

    U_j is the part of B \\ K bordered by I_j, found by flood fill over the
    triangles meeting the disk; crack edges are not shared on the slit mesh,
    so the fill cannot cross the crack.
    """
    x0 = np.asarray(x0, dtype=float)
    r = _avoid_vertices(sol.mesh, x0, r)
    mesh = sol.mesh
    owner, p0, p1, _, flux, absflux = boundary_flux_terms(sol, spec.A, x0, r, impl=impl)
    K = spec.crack
    from .geometry import crossing_points

    cross = crossing_points(K, x0, r) if K is not None else np.zeros((0, 2))
    cang = np.sort(np.arctan2(cross[:, 1] - x0[1], cross[:, 0] - x0[0]))
    mid = 0.5 * (p0 + p1)
    if len(cang) == 0:
        arc_id = np.zeros(len(mid), dtype=int)
        bounds = [(-math.pi, math.pi)]
    else:
        # Arc j runs from cang[j] to cang[j+1] (the last one wraps around).
        rel = np.mod(mid - cang[0], 2 * math.pi)
        arc_id = np.searchsorted(np.mod(cang - cang[0], 2 * math.pi), rel, side="right") - 1
        bounds = [
            (float(cang[j]), float(cang[j + 1]) if j + 1 < len(cang) else float(cang[0] + 2 * math.pi))
            for j in range(len(cang))
        ]
    rule = None
    if spec.lam > 0 or spec.f is not None:
        rule = ball_rule(mesh, x0, r, impl=impl)
        srcv = spec.lam * linear_values(sol, rule.points, rule.parent) - spec.f_at(rule.points)
        tri_src = np.bincount(rule.parent, weights=rule.weights * srcv, minlength=mesh.n_triangles)
    clip = kernels.tri_disk_areas(mesh.vertices, mesh.triangles, x0, r, impl=impl)
    tris = np.nonzero(clip > 0)[0]
    lab = _triangle_components(mesh, tris, x0, r)
    pos = -np.ones(mesh.n_triangles, dtype=np.int64)
    pos[tris] = np.arange(len(tris))
    out = []
    for j, (b0, b1) in enumerate(bounds):
        sel = arc_id == j
        if not np.any(sel):
            continue
        comps = np.unique(lab[pos[owner[sel]]])
        if np.any(pos[owner[sel]] < 0) or len(comps) != 1:
            raise EnergyError(f"arc {j} borders {len(comps)} regions; region identification failed")
        src = 0.0
        if rule is not None:
            src = float(np.sum(tri_src[tris[lab == comps[0]]]))
        fl = float(np.sum(flux[sel]))
        sc = float(np.sum(absflux[sel]))
        out.append(ArcFlux(b0, b1, fl, src, sc, abs(fl - src) / (sc + 1e-30)))
    return out


# ---------------------------------------------------------------------------
# Wirtinger and Gronwall
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WirtingerResult:
    lhs: float
    rhs: float
    rtol: float = 1e-9

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + self.rtol) + 1e-12


def wirtinger_check(samples, arc_length: float) -> WirtingerResult:
    """lhs = ∫|g - mean|^2, rhs = (|I|/pi)^2 ∫|g'|^2 on uniformly spaced samples (endpoints included)."""
    g = np.asarray(samples, dtype=float)
    if len(g) < 16:
        raise ValueError("wirtinger_check needs at least 16 samples")
    h = arc_length / (len(g) - 1)
    mean = integrate.trapezoid(g, dx=h) / arc_length
    lhs = integrate.trapezoid((g - mean) ** 2, dx=h)
    dg = np.gradient(g, h, edge_order=2)
    rhs = (arc_length / math.pi) ** 2 * integrate.trapezoid(dg**2, dx=h)
    # second-order quadrature and differences: allow their O(h^2) error at equality
    rtol = max(1e-9, 10.0 * (math.pi * h / arc_length) ** 2)
    return WirtingerResult(float(lhs), float(rhs), rtol)


@dataclass(frozen=True)
class GronwallResult:
    r: np.ndarray
    v1: np.ndarray
    G: np.ndarray
    v2: np.ndarray
    v2_corrected: np.ndarray
    G_over_r: np.ndarray
    G_limit_ok: bool


def gronwall_transforms(r, E, C: float, alpha: float, N=None) -> GronwallResult:
    """Corrections making E/r monotone under the two Gronwall-type inequalities.

    ``v1 = (E/r)(1 + C r^alpha)^(1/alpha)`` is nondecreasing when
    E <= (r + C r^(1+alpha)) E'.  With N, G is the particular solution of
    G = (r + C r^(1+alpha)) G' + C N r^2 and ``v2 = (E - G)/r``; its
    corrected form ``v2 (1 + C r^alpha)^(1/alpha)`` is nondecreasing when
    E <= (r + C r^(1+alpha)) E' + C N r^2.  N is taken piecewise constant,
    equal on (r_{k-1}, r_k] to its sample at r_k.
    """
    r = np.asarray(r, dtype=float)
    E = np.asarray(E, dtype=float)
    if np.any(r <= 0):
        raise ValueError("grid must be positive")
    order = np.argsort(r)
    rs = r[order]
    factor = (1.0 + C * rs**alpha) ** (1.0 / alpha)
    v1 = E[order] / rs * factor
    if N is None:
        Ns = np.zeros_like(rs)
    else:
        Ns = np.asarray(N, dtype=float)[order]
    w = lambda t: (C * t**alpha + 1.0) ** ((1.0 - alpha) / alpha)  # noqa: E731
    lam = np.zeros_like(rs)
    acc = 0.0
    lo = 0.0
    for k, hi in enumerate(rs):
        if Ns[k] != 0 and C != 0:
            acc += Ns[k] * integrate.quad(w, lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
        lam[k] = -C * acc
        lo = hi
    G = lam * rs / factor
    v2 = (E[order] - G) / rs
    Gr = G / rs
    bound = C * rs * (np.maximum.accumulate(np.abs(Ns)) if len(Ns) else 0) * w(rs)
    ok = bool(np.all(np.abs(Gr) <= bound * (1 + 1e-9) + 1e-300))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return GronwallResult(r, v1[inv], G[inv], v2[inv], (v2 * factor)[inv], Gr[inv], ok)
