"""Tip value, blow-up rescalings and their distance to the cracktip function."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .energy import _arc_moments, ball_rule, circle_arcs, energy_in_ellipse, linear_values, sqrtm_spd
from .geometry import BallSpec, CrackSet, Rotation, crossing_points, length_in_ball, tip_rotation
from .mesh import MeshConfig, Triangulation, mesh_disk_with_crack
from .solver import CoefficientField, DiscreteSolution, ProblemSpec, PointLocator

log = logging.getLogger(__name__)


class BlowupError(ValueError):
    pass


def sif_coefficient(C0: float) -> float:
    """C = sqrt(2 C0 / pi)."""
    if C0 < 0:
        raise BlowupError("C0 must be nonnegative")
    return math.sqrt(2.0 * C0 / math.pi)


@dataclass(frozen=True)
class CracktipField:
    """v0 = C sqrt(rho) sin(theta/2), C = sqrt(2 C0 / pi).

    Evaluated at x through z = sqrt(A0)^-1 frame(x - tip); theta in (-pi, pi]
    is the argument of z, so the cut lies along the negative first axis of z.
    """

    C0: float
    tip: tuple[float, float] = (0.0, 0.0)
    frame: Rotation = field(default_factory=lambda: Rotation(0.0))
    A0: np.ndarray | None = None

    def __post_init__(self):
        if self.C0 < 0:
            raise BlowupError("C0 must be nonnegative")

    @property
    def C(self) -> float:
        return sif_coefficient(self.C0)

    def _sinv(self) -> np.ndarray:
        if self.A0 is None:
            return np.eye(2)
        return np.linalg.inv(sqrtm_spd(self.A0))

    def _z(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.frame.apply(x - np.asarray(self.tip)) @ self._sinv().T

    def __call__(self, x) -> np.ndarray:
        z = self._z(x)
        rho = np.hypot(z[:, 0], z[:, 1])
        th = np.arctan2(z[:, 1], z[:, 0])
        return self.C * np.sqrt(rho) * np.sin(0.5 * th)

    def gradient(self, x) -> np.ndarray:
        z = self._z(x)
        rho = np.hypot(z[:, 0], z[:, 1])
        th = np.arctan2(z[:, 1], z[:, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            k = self.C / (2.0 * np.sqrt(rho))
        gz = np.stack([-k * np.sin(0.5 * th), k * np.cos(0.5 * th)], axis=1)
        # d/dx = frame^T Sinv^T d/dz
        return gz @ self._sinv() @ self.frame.matrix


# ---------------------------------------------------------------------------
# Tip value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TipValue:
    radii: np.ndarray
    m: np.ndarray
    m_tilde: np.ndarray
    u0: float
    increments: np.ndarray
    skipped: tuple[float, ...] = ()
    fit_exponent: float | None = None
    fit_constant: float | None = None


def _arc_average(sol: DiscreteSolution, x0, r, lo, hi, impl=None) -> float:
    """Average of u over the arc {x0 + r e^{i phi}: lo <= phi <= hi}."""
    owner, p0, p1 = circle_arcs(sol, x0, r, impl=impl)
    total = 0.0
    x0 = np.asarray(x0, dtype=float)
    a = linear_values(sol, np.repeat(x0[None], len(owner), 0), owner)
    g = sol.gradients[owner]
    for shift in (-2 * math.pi, 0.0, 2 * math.pi):
        q0 = np.maximum(p0 + shift, lo)
        q1 = np.minimum(p1 + shift, hi)
        ok = q1 > q0
        if not np.any(ok):
            continue
        m1, _ = _arc_moments(q0[ok], q1[ok])
        total += float(np.sum(r * (a[ok] * (q1[ok] - q0[ok]) + r * np.einsum("pi,pi->p", g[ok], m1))))
    return total / (r * (hi - lo))


def tip_value(sol: DiscreteSolution, K: CrackSet, x0, schedule, impl=None) -> TipValue:
    """Ball averages m_r over R_r^-1 B((r/2, 0), r/4) and arc averages m~_r.

    Radii whose averaging ball meets K are skipped.  u(0) is m at the
    smallest admissible radius.
    """
    x0 = np.asarray(x0, dtype=float)
    half = 2.0 * math.asin(1.0 / 8.0)
    radii, ms, mts, skipped = [], [], [], []
    for r in np.asarray(schedule, dtype=float):
        rot = tip_rotation(K, x0, r)
        inv = rot.inverse()
        c = x0 + inv.apply(np.array([[0.5 * r, 0.0]]))[0]
        if length_in_ball(K, BallSpec(tuple(c), 0.25 * r)) > 0:
            log.debug("tip_value: averaging ball at r=%.4g meets the crack; skipped", r)
            skipped.append(float(r))
            continue
        rule = ball_rule(sol.mesh, c, 0.25 * r, impl=impl)
        u = linear_values(sol, rule.points, rule.parent)
        m = float(np.dot(rule.weights, u) / np.sum(rule.weights))
        psi = -rot.angle
        cr = crossing_points(K, x0, r)
        ang = np.arctan2(cr[:, 1] - x0[1], cr[:, 0] - x0[0])
        blocked = np.abs(np.angle(np.exp(1j * (ang - psi)))) <= half
        mt = np.nan if np.any(blocked) else _arc_average(sol, x0, r, psi - half, psi + half, impl)
        radii.append(float(r))
        ms.append(m)
        mts.append(mt)
    if skipped:
        log.warning("tip_value: %d of %d averaging balls meet the crack; skipped",
                    len(skipped), len(skipped) + len(radii))
    if not radii:
        raise BlowupError("every averaging window meets the crack")
    radii = np.asarray(radii)
    ms = np.asarray(ms)
    order = np.argsort(-radii)
    radii, ms, mts = radii[order], ms[order], np.asarray(mts)[order]
    inc = np.abs(np.diff(ms))
    p = c_fit = None
    good = inc > 0
    if good.sum() >= 2:
        X = np.column_stack([np.ones(good.sum()), np.log(radii[:-1][good])])
        coef, *_ = np.linalg.lstsq(X, np.log(inc[good]), rcond=None)
        p = float(coef[1])
    if len(inc):
        c_fit = float(np.max(inc / np.sqrt(radii[:-1])))
    return TipValue(radii, ms, mts, float(ms[-1]), inc, tuple(skipped), p, c_fit)


# ---------------------------------------------------------------------------
# Rescaled fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RescaledField:
    """u_r(y) = r^-1/2 (u(x0 + r R^-1 y) - u0).

    Mesh-based fields carry the rescaled vertices; analytic ones wrap a
    value/gradient pair defined in the original coordinates.
    """

    r: float
    x0: np.ndarray
    rotation: Rotation
    u0: float
    vertices: np.ndarray | None = None
    triangles: np.ndarray | None = None
    values: np.ndarray | None = None
    gradients: np.ndarray | None = None
    func: object = None

    @property
    def is_mesh(self) -> bool:
        return self.vertices is not None

    def _to_original(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.x0 + self.r * self.rotation.inverse().apply(y)

    def value(self, y) -> np.ndarray:
        if self.is_mesh:
            tri, bary = self._locator().locate(y)
            out = np.full(len(tri), np.nan)
            ok = tri >= 0
            out[ok] = np.einsum("pk,pk->p", self.values[self.triangles[tri[ok]]], bary[ok])
            return out
        return (np.asarray(self.func(self._to_original(y))) - self.u0) / math.sqrt(self.r)

    def gradient(self, y) -> np.ndarray:
        if self.is_mesh:
            tri, _ = self._locator().locate(y)
            out = np.full((len(tri), 2), np.nan)
            out[tri >= 0] = self.gradients[tri[tri >= 0]]
            return out
        gx = self.func.gradient(self._to_original(y))
        return math.sqrt(self.r) * self.rotation.apply(gx)

    def _locator(self):
        loc = getattr(self, "_loc", None)
        if loc is None:
            T = Triangulation(
                self.vertices, self.triangles,
                {"outer": np.zeros(0, dtype=np.int64), "crack_left": np.zeros(0, dtype=np.int64),
                 "crack_right": np.zeros(0, dtype=np.int64), "tip": None},
                np.zeros((0, 2), dtype=np.int64), np.zeros((0, 2, 2)), BallSpec((0.0, 0.0), 1.0),
            )
            loc = PointLocator(T)
            object.__setattr__(self, "_loc", loc)
        return loc

    def rotated(self, Q: Rotation) -> "RescaledField":
        """Same field expressed in coordinates rotated by Q (y' = Q y)."""
        if not self.is_mesh:
            return RescaledField(self.r, self.x0, Q.compose(self.rotation), self.u0, func=self.func)
        return RescaledField(
            self.r, self.x0, Q.compose(self.rotation), self.u0,
            Q.apply(self.vertices), self.triangles, self.values, Q.apply(self.gradients),
        )


def blowup_rescale(
    sol, x0, r: float, tip: TipValue | float, K: CrackSet | None = None,
    rotation: Rotation | None = None,
) -> RescaledField:
    """Rescaled field on B(0, 1) in the tip frame.

    ``sol`` is a DiscreteSolution or any object with ``__call__`` and
    ``gradient`` in original coordinates (e.g. a CracktipField).
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = tip.u0 if isinstance(tip, TipValue) else float(tip)
    if rotation is None:
        if K is None:
            raise BlowupError("a crack or an explicit rotation is required")
        rotation = tip_rotation(K, x0, r)
    if isinstance(sol, DiscreteSolution):
        mesh = sol.mesh
        c = np.asarray(mesh.domain.center)
        if np.linalg.norm(x0 - c) + r > mesh.domain.radius * (1 + 1e-12):
            raise BlowupError("B(x0, r) exceeds the domain")
        # Keep only triangles meeting B(x0, 2r): enough for B(0, 1) queries.
        near = kernels.tri_disk_areas(mesh.vertices, mesh.triangles, x0, min(2 * r, 2 * mesh.domain.radius)) > 0
        tris = mesh.triangles[near]
        used, local = np.unique(tris, return_inverse=True)
        y = rotation.apply((mesh.vertices[used] - x0) / r)
        vals = (sol.nodal_values[used] - u0) / math.sqrt(r)
        grads = math.sqrt(r) * rotation.apply(sol.gradients[near])
        return RescaledField(r, x0, rotation, u0, y, local.reshape(-1, 3).astype(np.int64), vals, grads)
    return RescaledField(r, x0, rotation, u0, func=sol)


# ---------------------------------------------------------------------------
# Distance to the cracktip function
# ---------------------------------------------------------------------------

# Degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1).
_S15 = math.sqrt(15.0)
_A1, _B1 = (9 - 2 * _S15) / 21, (6 + _S15) / 21
_A2, _B2 = (9 + 2 * _S15) / 21, (6 - _S15) / 21
_D5_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
    ]
)
_D5_W = np.array([0.225] + [(155 + _S15) / 1200] * 3 + [(155 - _S15) / 1200] * 3)

_SPLIT = np.array(
    [
        [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
        [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
        [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
        [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
    ]
)

_REF_CACHE: dict = {}


def _reference_disk() -> Triangulation:
    """Slit triangulation of the unit disk used for analytic fields."""
    if "disk" not in _REF_CACHE:
        from .geometry import make_crack

        # Slightly larger than B(0, 1) so the polygonal boundary covers it.
        K = make_crack("segment", endpoints=[(-1.05, 0.0), (0.0, 0.0)])
        cfg = MeshConfig(target_h=0.1, domain=BallSpec((0.0, 0.0), 1.05))
        _REF_CACHE["disk"] = mesh_disk_with_crack(K, cfg)
    return _REF_CACHE["disk"]


def _tri_area(p):
    return 0.5 * np.abs(
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )


def unit_disk_rule(verts, tris, tip_depth: int = 14, rim_depth: int = 5, impl=None):
    """Quadrature on (triangles) ∩ B(0, 1): points, weights, parent triangle.

    Leaves closer to the origin than their diameter are split up to
    ``tip_depth`` times; leaves cut by the unit circle up to ``rim_depth``
    times and then weighted by their exact clipped area fraction.
    """
    verts = np.asarray(verts, dtype=float)
    clip = kernels.tri_disk_areas(verts, tris, (0.0, 0.0), 1.0, impl=impl)
    sel = np.nonzero(clip > 0)[0]
    leaf = verts[tris[sel]]
    owner = sel
    depth = np.zeros(len(sel), dtype=int)
    pts, wts, par = [], [], []
    while len(leaf):
        d = np.linalg.norm(leaf, axis=2)
        inside = np.all(d <= 1.0, axis=1)
        diam = np.linalg.norm(leaf - np.roll(leaf, -1, axis=1), axis=2).max(axis=1)
        # distance from origin to the leaf (0 if it contains the origin)
        dist = _dist_to_origin(leaf)
        near = (dist < diam) & (depth < tip_depth)
        rim = ~inside & (depth < rim_depth)
        split = near | rim
        stop = ~split
        if np.any(stop):
            lp = leaf[stop]
            area = _tri_area(lp)
            frac = np.ones(len(lp))
            cut = ~inside[stop]
            if np.any(cut):
                flat = lp[cut].reshape(-1, 2)
                a = kernels.tri_disk_areas(flat, np.arange(len(flat)).reshape(-1, 3), (0.0, 0.0), 1.0, impl=impl)
                frac[cut] = np.where(area[cut] > 0, a / area[cut], 0.0)
            q = np.einsum("qk,mkd->mqd", _D5_BARY, lp).reshape(-1, 2)
            pts.append(q)
            wts.append((area * frac)[:, None] * _D5_W[None, :])
            par.append(np.repeat(owner[stop], len(_D5_W)))
        leaf = leaf[split]
        owner = owner[split]
        depth = depth[split]
        if len(leaf):
            kids = np.einsum("sak,mkd->msad", _SPLIT, leaf).reshape(-1, 3, 2)
            kid_owner = np.repeat(owner, 4)
            kid_depth = np.repeat(depth + 1, 4)
            flat = kids.reshape(-1, 2)
            a = kernels.tri_disk_areas(flat, np.arange(len(flat)).reshape(-1, 3), (0.0, 0.0), 1.0, impl=impl)
            keep = a > 0
            leaf, owner, depth = kids[keep], kid_owner[keep], kid_depth[keep]
    return np.vstack(pts), np.concatenate([w.ravel() for w in wts]), np.concatenate(par)


def _dist_to_origin(p):
    dmin = np.full(len(p), np.inf)
    for k in range(3):
        a = p[:, k]
        e = p[:, (k + 1) % 3] - a
        ee = np.einsum("mi,mi->m", e, e)
        t = np.clip(-np.einsum("mi,mi->m", a, e) / np.where(ee > 0, ee, 1.0), 0, 1)
        c = a + t[:, None] * e
        dmin = np.minimum(dmin, np.linalg.norm(c, axis=1))
    cr = [p[:, k, 0] * p[:, (k + 1) % 3, 1] - p[:, k, 1] * p[:, (k + 1) % 3, 0] for k in range(3)]
    inside = ((cr[0] >= 0) & (cr[1] >= 0) & (cr[2] >= 0)) | ((cr[0] <= 0) & (cr[1] <= 0) & (cr[2] <= 0))
    return np.where(inside, 0.0, dmin)


@dataclass(frozen=True)
class CracktipDistance:
    value_distance: float
    gradient_distance: float
    v0_norm: float
    grad_v0_norm: float


def cracktip_distance(u_r: RescaledField, C0: float, reference: CracktipField | None = None,
                      impl=None) -> CracktipDistance:
    """L2(B(0,1)) distances of u_r and grad u_r to v0 and grad v0."""
    ref = reference if reference is not None else CracktipField(C0)
    if u_r.is_mesh:
        pts, w, par = unit_disk_rule(u_r.vertices, u_r.triangles, impl=impl)
        v0p = u_r.vertices[u_r.triangles[par, 0]]
        val = u_r.values[u_r.triangles[par, 0]] + np.einsum("pi,pi->p", u_r.gradients[par], pts - v0p)
        grad = u_r.gradients[par]
    else:
        disk = _reference_disk()
        pts, w, _ = unit_disk_rule(disk.vertices, disk.triangles, impl=impl)
        val = u_r.value(pts)
        grad = u_r.gradient(pts)
    rv = ref(pts)
    rg = ref.gradient(pts)
    dv = math.sqrt(max(float(np.dot(w, (val - rv) ** 2)), 0.0))
    dg = math.sqrt(max(float(np.dot(w, np.sum((grad - rg) ** 2, axis=1))), 0.0))
    nv = math.sqrt(float(np.dot(w, rv**2)))
    ng = math.sqrt(float(np.dot(w, np.sum(rg**2, axis=1))))
    return CracktipDistance(dv, dg, nv, ng)


# ---------------------------------------------------------------------------
# Change of variable
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChangeOfVariable:
    """v = u o (x0 + S .), S = sqrt(A(x0)), with A~(y) = S^-1 A(x0 + S y) S^-1."""

    S: np.ndarray
    A_tilde: CoefficientField
    crack: CrackSet | None
    solution: DiscreteSolution
    r: float
    lhs: float
    rhs: float

    @property
    def relative_gap(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.rhs), 1e-300)


def change_of_variable(spec: ProblemSpec, sol: DiscreteSolution, x0=None, r: float = 0.3,
                       n_radial: int = 128, n_angular: int = 1024) -> ChangeOfVariable:
    """Transform to A~(x0) = Id and compare both sides of the energy identity.

    The left side ∫_{B(0,r)} |grad v|^2_{A~} is computed by polar Gauss
    quadrature with point evaluation of the transformed field; the right side
    det(S)^-1 ∫_{B_A(x0,r)} |grad u|_A^2 by ellipse clipping on the original mesh.
    """
    x0 = np.asarray(spec.crack.tip if (x0 is None and spec.crack is not None) else
                    (x0 if x0 is not None else spec.domain.center), dtype=float)
    A0 = spec.A.at(x0)
    S = sqrtm_spd(A0)
    Sinv = np.linalg.inv(S)

    def a_tilde(y, A=spec.A, S=S, Sinv=Sinv, x0=x0):
        return Sinv[None] @ A(x0 + y @ S.T) @ Sinv[None]

    if spec.A.is_constant:
        At = CoefficientField.constant(Sinv @ spec.A.constant_value @ Sinv, name="transformed")
    else:
        At = CoefficientField(a_tilde, spec.A.holder_exponent, spec.A.holder_constant
                              * float(np.linalg.norm(Sinv, 2) ** 2 * np.linalg.norm(S, 2) ** spec.A.holder_exponent),
                              spec.A.gamma / float(np.linalg.eigvalsh(A0).max()),
                              spec.A.Lambda / float(np.linalg.eigvalsh(A0).min()), "transformed")
    mesh = sol.mesh
    yv = (mesh.vertices - x0) @ Sinv.T
    yc = Sinv @ (np.asarray(mesh.domain.center) - x0)
    tmesh = Triangulation(
        yv, mesh.triangles, mesh.markers, mesh.slit_pairs,
        (mesh.crack_segments - x0) @ Sinv.T if len(mesh.crack_segments) else mesh.crack_segments,
        BallSpec(tuple(yc), mesh.domain.radius / float(np.linalg.eigvalsh(S).max())),
    )
    if np.linalg.det(Sinv) < 0:
        raise BlowupError("unexpected orientation reversal")
    tsol = DiscreteSolution(tmesh, sol.nodal_values, dict(sol.stats))
    tK = spec.crack.transformed(lambda p: (p - x0) @ Sinv.T) if spec.crack is not None else None
    # Left side: polar rule on B(0, r) in the transformed frame.
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * r * (xg + 1.0)
    wr = 0.5 * r * wg * rho
    th = -math.pi + (np.arange(n_angular) + 0.5) * 2 * math.pi / n_angular
    P = np.stack(np.meshgrid(rho, th, indexing="ij"), -1).reshape(-1, 2)
    pts = np.stack([P[:, 0] * np.cos(P[:, 1]), P[:, 0] * np.sin(P[:, 1])], 1)
    wts = np.repeat(wr, n_angular) * (2 * math.pi / n_angular)
    grad = tsol.gradient_at(pts)
    if np.any(np.isnan(grad)):
        raise BlowupError("transformed ball leaves the mesh")
    At_pts = At(pts)
    lhs = float(np.dot(wts, np.einsum("pi,pij,pj->p", grad, At_pts, grad)))
    rhs = energy_in_ellipse(sol, spec.A, x0, r) / float(np.linalg.det(S))
    return ChangeOfVariable(S, At, tK, tsol, r, lhs, rhs)


def _polar_rule(n_radial: int, n_angular: int):
    """Gauss-Legendre in the radius on [0, 1], midpoint in the angle on (-pi, pi)."""
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    s = 0.5 * (xg + 1.0)
    th = -math.pi + (np.arange(n_angular) + 0.5) * 2 * math.pi / n_angular
    return s, 0.5 * wg, th, 2 * math.pi / n_angular


def change_of_variable_field(u, A: CoefficientField, x0, r: float,
                             n_radial: int = 64, n_angular: int = 512) -> tuple[float, float]:
    """Both sides of the energy identity for a field given by value and gradient.

    ``u.gradient(x)`` must return the gradient at points x (n, 2). The
    left side uses polar coordinates on B(0, r) in the transformed frame, the
    right side polar coordinates on the ellipse x0 + S B(0, r) in the original
    frame, so the two sides share no quadrature nodes.
    """
    x0 = np.asarray(x0, dtype=float)
    S = sqrtm_spd(A.at(x0))
    Sinv = np.linalg.inv(S)
    s, ws, th, wt = _polar_rule(n_radial, n_angular)
    e = np.stack([np.cos(th), np.sin(th)], 1)

    rho = r * s
    y = (rho[:, None, None] * e[None]).reshape(-1, 2)
    w = (np.outer(r * ws * rho, np.full(n_angular, wt))).ravel()
    x = x0 + y @ S.T
    gv = u.gradient(x) @ S.T
    At = Sinv[None] @ A(x) @ Sinv[None]
    lhs = float(np.dot(w, np.einsum("pi,pij,pj->p", gv, At, gv)))

    # ellipse boundary along direction e: rho_max = r / |S^-1 e|
    rmax = r / np.linalg.norm(e @ Sinv.T, axis=1)
    rho2 = s[:, None] * rmax[None, :]
    xx = x0 + (rho2[..., None] * e[None]).reshape(-1, 2)
    w2 = (ws[:, None] * rmax[None, :] * rho2 * wt).ravel()
    gu = u.gradient(xx)
    rhs = float(np.dot(w2, np.einsum("pi,pij,pj->p", gu, A(xx), gu))) / float(np.linalg.det(S))
    return lhs, rhs
