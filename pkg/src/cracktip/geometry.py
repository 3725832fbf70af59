"""Polyline cracks and the length-based geometry used around a crack tip.

A crack is a connected union of planar polylines with one distinguished
vertex, the tip.  Everything here is exact for straight segments: lengths
in balls come from segment/disk clipping, circle crossings from the
segment/circle quadratic, geodesics from Dijkstra on the polyline graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

NODE_TOL = 1e-12


class CrackGeometryError(ValueError):
    """Raised for invalid crack definitions or undefined geometric queries."""


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise CrackGeometryError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class Rotation:
    """Planar rotation by ``angle`` radians, normalised to (-pi, pi]."""

    angle: float

    def __post_init__(self):
        a = math.remainder(float(self.angle), 2.0 * math.pi)
        if a <= -math.pi:
            a += 2.0 * math.pi
        object.__setattr__(self, "angle", a)

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.matrix.T

    def inverse(self) -> "Rotation":
        return Rotation(-self.angle)

    def compose(self, other: "Rotation") -> "Rotation":
        """Rotation equal to ``self`` applied after ``other``."""
        return Rotation(self.angle + other.angle)


class CrackSet:
    """Connected union of polylines with a distinguished tip vertex.

    Parameters
    ----------
    polylines : sequence of (n_i, 2) arrays
        Vertex chains; consecutive vertices are joined by straight segments.
    tip : (2,) array
        Must coincide (within ``node_tol``) with a polyline vertex.
    check : bool
        Validate connectivity, simplicity and non-degeneracy.
    """

    def __init__(self, polylines: Sequence, tip, check: bool = True):
        lines = []
        for pl in polylines:
            a = np.array(pl, dtype=float).reshape(-1, 2)
            a.setflags(write=False)
            lines.append(a)
        self.polylines: tuple[np.ndarray, ...] = tuple(lines)
        t = np.array(tip, dtype=float).reshape(2)
        t.setflags(write=False)
        self.tip = t
        self._graph = None
        if check:
            self._validate()

    # -- construction helpers -------------------------------------------
    def _validate(self):
        if not self.polylines:
            raise CrackGeometryError("crack has no polylines")
        for i, pl in enumerate(self.polylines):
            if len(pl) < 2:
                raise CrackGeometryError(f"polyline {i} has fewer than 2 vertices")
            seg = np.linalg.norm(np.diff(pl, axis=0), axis=1)
            if np.any(seg == 0):
                raise CrackGeometryError(f"polyline {i} has a zero-length segment")
        if not np.isfinite(self.length) or self.length <= 0:
            raise CrackGeometryError("total crack length must be finite and positive")
        verts = np.vstack(self.polylines)
        if np.min(np.linalg.norm(verts - self.tip, axis=1)) > self.node_tol:
            raise CrackGeometryError("tip is not a vertex of any polyline")
        self._check_connected()
        for i, pl in enumerate(self.polylines):
            bad = _self_intersections(pl)
            if bad:
                raise CrackGeometryError(
                    f"polyline {i} self-intersects at segment pair {bad[0]}"
                )

    def _check_connected(self):
        nodes, owner = self._node_ids()
        n_lines = len(self.polylines)
        # Bipartite graph polyline <-> node; connected iff one component.
        rows = owner
        cols = n_lines + nodes
        m = n_lines + nodes.max() + 1
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
        ncomp, _ = connected_components(g, directed=False)
        if ncomp != 1:
            raise CrackGeometryError(f"crack is not connected ({ncomp} components)")

    def _node_ids(self):
        verts = np.vstack(self.polylines)
        owner = np.concatenate([np.full(len(pl), i) for i, pl in enumerate(self.polylines)])
        ids = _merge_points(verts, self.node_tol)
        return ids, owner

    # -- basic queries ---------------------------------------------------
    @property
    def node_tol(self) -> float:
        """Vertex identification tolerance: NODE_TOL, shrunk for cracks with tiny features."""
        s = self.segments
        L = np.linalg.norm(s[:, 1] - s[:, 0], axis=1)
        L = L[L > 0]
        return min(NODE_TOL, 1e-6 * float(L.min())) if len(L) else NODE_TOL

    @property
    def segments(self) -> np.ndarray:
        """All segments as a (k, 2, 2) array."""
        return np.concatenate(
            [np.stack([pl[:-1], pl[1:]], axis=1) for pl in self.polylines], axis=0
        )

    @property
    def length(self) -> float:
        s = self.segments
        return float(np.sum(np.linalg.norm(s[:, 1] - s[:, 0], axis=1)))

    @property
    def adjacency(self) -> dict[int, set[int]]:
        """Polylines sharing at least one vertex."""
        ids, owner = self._node_ids()
        by_node: dict[int, set[int]] = {}
        for n, o in zip(ids.tolist(), owner.tolist()):
            by_node.setdefault(n, set()).add(o)
        adj: dict[int, set[int]] = {i: set() for i in range(len(self.polylines))}
        for owners in by_node.values():
            for o in owners:
                adj[o] |= owners - {o}
        return adj

    def graph(self):
        """Node coordinates and a symmetric sparse length-weighted adjacency."""
        if self._graph is None:
            verts = np.vstack(self.polylines)
            ids = _merge_points(verts, self.node_tol)
            n = ids.max() + 1
            coords = np.zeros((n, 2))
            coords[ids] = verts
            starts = np.cumsum([0] + [len(pl) for pl in self.polylines])
            ea, eb = [], []
            for k, pl in enumerate(self.polylines):
                idx = ids[starts[k] : starts[k + 1]]
                ea.append(idx[:-1])
                eb.append(idx[1:])
            ea = np.concatenate(ea)
            eb = np.concatenate(eb)
            self._graph = (coords, ea, eb)
        return self._graph

    def transformed(self, fn: Callable[[np.ndarray], np.ndarray], check=False) -> "CrackSet":
        return CrackSet([fn(pl) for pl in self.polylines], fn(self.tip[None, :])[0], check=check)

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "polylines": [pl.tolist() for pl in self.polylines],
            "tip": self.tip.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CrackSet":
        return cls(doc["polylines"], doc["tip"])

    def __repr__(self):
        return (
            f"CrackSet(polylines={len(self.polylines)}, vertices="
            f"{sum(len(p) for p in self.polylines)}, length={self.length:.6g}, "
            f"tip={self.tip.tolist()})"
        )


def _merge_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Label points so that points closer than ``tol`` share a label."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(points)
    if len(pairs):
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = connected_components(g, directed=False)
    else:
        labels = np.arange(n)
    # Relabel in order of first appearance for determinism.
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inv]


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(a, b, c):
        return (
            abs(orient(a, b, c)) <= 1e-15 * max(1.0, np.abs(np.r_[a, b, c]).max())
            and min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15
            and min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15
        )

    return on_seg(q1, q2, p1) or on_seg(q1, q2, p2) or on_seg(p1, p2, q1) or on_seg(p1, p2, q2)


def _self_intersections(pl: np.ndarray) -> list[tuple[int, int]]:
    """Pairs of non-adjacent segments of one polyline that intersect."""
    n = len(pl) - 1
    if n < 2:
        return []
    a, b = pl[:-1], pl[1:]
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    tree = cKDTree(mid)
    # each pair is found from its longer segment, so graded polylines stay near-linear
    near = tree.query_ball_point(mid, 2.0 * half + 1e-12)
    pairs = set()
    for i, js in enumerate(near):
        for j in js:
            if half[j] <= half[i] and j != i:
                pairs.add((min(i, j), max(i, j)))
    closed = np.linalg.norm(pl[0] - pl[-1]) <= NODE_TOL
    bad = []
    for i, j in sorted(pairs):
        if j - i <= 1 or (closed and i == 0 and j == n - 1):
            continue
        if np.linalg.norm(mid[i] - mid[j]) > half[i] + half[j] + 1e-12:
            continue
        if _segments_intersect(a[i], b[i], a[j], b[j]):
            bad.append((int(i), int(j)))
    return bad


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _spiral_point(t):
    t = np.asarray(t, dtype=float)
    th = np.sqrt(-np.log(t))
    return np.stack([t * np.cos(th), t * np.sin(th)], axis=-1)


def spiral_vertex_count(t_min: float, t_max: float, chord_tol: float = 1e-6) -> int:
    """Log-spaced vertex count keeping the chord (sagitta) error below chord_tol * t."""
    # curvature ~ 1/(2 t sqrt(-ln t)); sagitta = l^2 kappa / 8 with l ~ t (q - 1).
    ts = np.geomspace(t_min, t_max, 64)
    kappa_t = 1.0 / (2.0 * np.sqrt(np.maximum(-np.log(ts), 1e-3)))
    step = np.sqrt(8.0 * chord_tol / kappa_t.max())
    return int(math.ceil(math.log(t_max / t_min) / math.log1p(step))) + 1


def make_spiral(t_min: float, t_max: float, vertex_count: int | None = None) -> CrackSet:
    """Discretised spiral t * exp(i sqrt(-ln t)) joined straight to the origin."""
    if not t_min > 0:
        raise CrackGeometryError("spiral requires t_min > 0")
    if not (t_min < t_max <= 1.0):
        raise CrackGeometryError("spiral requires t_min < t_max <= 1")
    n = vertex_count if vertex_count is not None else spiral_vertex_count(t_min, t_max)
    if n < 2:
        raise CrackGeometryError("spiral needs at least 2 vertices")
    pts = _spiral_point(np.geomspace(t_min, t_max, n))
    return CrackSet([np.vstack([[0.0, 0.0], pts])], (0.0, 0.0))


def make_two_scale(
    q, depth: int, radius_ratio: float | None = None, axis_length: float = 1.0
) -> CrackSet:
    """Crack that looks like a radius at odd scales and a diameter at even ones.

    The negative first axis carries, for n = 1..depth, a horizontal segment
    at height 4/3 q[2n+1] joined to the axis by a vertical connector at its
    left end.  The segment half-length is ``q[2n]`` by default; with
    ``radius_ratio`` it is ``radius_ratio * 4/3 * q[2n+1]`` instead.
    """
    if callable(q):
        q = [q(n) for n in range(2 * depth + 2)]
    q = np.asarray(q, dtype=float)
    if len(q) < 2 * depth + 2:
        raise CrackGeometryError(f"two_scale with depth {depth} needs {2 * depth + 2} terms of q")
    if np.any(q <= 0):
        raise CrackGeometryError("q must be positive")
    ratios = q[1:] / q[:-1]
    if np.any(ratios >= 1.0):
        raise CrackGeometryError("q must be strictly decreasing")
    if np.any(ratios > 0.25):
        raise CrackGeometryError("two_scale requires q[n+1]/q[n] <= 1/4")
    feet = []
    lines = []
    for n in range(1, depth + 1):
        height = 4.0 / 3.0 * q[2 * n + 1]
        half = q[2 * n] if radius_ratio is None else radius_ratio * height
        if half >= axis_length:
            raise CrackGeometryError("two_scale segment exceeds the axis length")
        z = (-half, height)
        lines.append(np.array([z, (half, height)]))
        lines.append(np.array([(-half, 0.0), z]))
        feet.append(-half)
    axis_x = np.unique(np.r_[-axis_length, feet, 0.0])
    axis = np.stack([axis_x, np.zeros_like(axis_x)], axis=1)
    return CrackSet([axis] + lines, (0.0, 0.0))


def make_crack(generator: str, **params) -> CrackSet:
    """Build a crack from a generator name and its parameters.

    Generators: ``segment(endpoints, tip=None)``, ``polyline(vertices, tip=None)``,
    ``diameter(radius=1)``, ``spiral(t_min, t_max, vertex_count=None)``,
    ``two_scale(q, depth, radius_ratio=None, axis_length=1)``.
    """
    if generator == "segment":
        ends = np.asarray(params["endpoints"], dtype=float)
        tip = params.get("tip")
        return CrackSet([ends], ends[-1] if tip is None else tip)
    if generator == "polyline":
        verts = np.asarray(params["vertices"], dtype=float)
        tip = params.get("tip")
        return CrackSet([verts], verts[-1] if tip is None else tip)
    if generator == "diameter":
        r = float(params.get("radius", 1.0))
        return CrackSet([[(-r, 0.0), (0.0, 0.0), (r, 0.0)]], (0.0, 0.0))
    if generator == "spiral":
        return make_spiral(params["t_min"], params["t_max"], params.get("vertex_count"))
    if generator == "two_scale":
        q = params["q"]
        if isinstance(q, dict):
            base, power = float(q.get("base", 4.0)), float(q.get("power", 2.0))
            scale = float(q.get("scale", 1.0))
            q = lambda n, b=base, p=power, s=scale: s * b ** (-(n**p))  # noqa: E731
        return make_two_scale(
            q,
            int(params["depth"]),
            params.get("radius_ratio"),
            float(params.get("axis_length", 1.0)),
        )
    raise CrackGeometryError(f"unknown crack generator {generator!r}")


# ---------------------------------------------------------------------------
# Length-based queries
# ---------------------------------------------------------------------------


def _segment_disk_params(p, q, center, r):
    """Interval [t0, t1] of each segment lying in the closed disk (t0 > t1 if empty)."""
    p = np.asarray(p, dtype=float) - center
    d = np.asarray(q, dtype=float) - center - p
    a = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        # foot of the perpendicular and squared distance of the line, no cancellation
        tc = -np.einsum("ij,ij->i", p, d) / a
        cross = p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]
        gap = r * r - cross * cross / a
        w = np.sqrt(np.maximum(gap, 0.0) / a)
        t0 = np.where(gap > 0, tc - w, 1.0)
        t1 = np.where(gap > 0, tc + w, 0.0)
    return np.maximum(t0, 0.0), np.minimum(t1, 1.0)


def _segment_disk_fraction(p, q, center, r):
    """Fraction of each segment inside the closed disk, accurate for tiny disks."""
    p = np.asarray(p, dtype=float) - center
    qq = np.asarray(q, dtype=float) - center
    d = qq - p
    a = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = -np.einsum("ij,ij->i", p, d) / a
        u = np.einsum("ij,ij->i", qq, d) / a
        cross = p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]
        gap = r * r - cross * cross / a
        w = np.sqrt(np.maximum(gap, 0.0) / a)
    # min(tc + w, 1) - max(tc - w, 0) written without differences of nearby numbers
    f = np.minimum(np.minimum(2.0 * w, tc + w), np.minimum(u + w, 1.0))
    return np.where(gap > 0, np.maximum(f, 0.0), 0.0)


def _as_segments(S) -> np.ndarray:
    if isinstance(S, CrackSet):
        return S.segments
    s = np.asarray(S, dtype=float)
    return s.reshape(-1, 2, 2)


def segments_in_ball(K, ball: BallSpec) -> np.ndarray:
    """Clipped pieces of the crack inside the closed ball, as (k, 2, 2)."""
    s = _as_segments(K)
    c = np.asarray(ball.center)
    t0, t1 = _segment_disk_params(s[:, 0], s[:, 1], c, ball.radius)
    keep = t1 > t0
    d = s[:, 1] - s[:, 0]
    a = s[keep, 0] + t0[keep, None] * d[keep]
    b = s[keep, 0] + t1[keep, None] * d[keep]
    return np.stack([a, b], axis=1)


def length_in_ball(K, ball: BallSpec) -> float:
    """One-dimensional measure of K ∩ B by exact segment/disk clipping."""
    s = _as_segments(K)
    frac = _segment_disk_fraction(s[:, 0], s[:, 1], np.asarray(ball.center, dtype=float), ball.radius)
    lens = np.linalg.norm(s[:, 1] - s[:, 0], axis=1)
    return float(np.sum(lens * frac))


def density_ratio(K, x0, r: float) -> float:
    """H^1(K ∩ B(x0, r)) / (2r)."""
    return length_in_ball(K, BallSpec(tuple(x0), r)) / (2.0 * r)


def _crossing_raw(K, x0, r):
    """Raw circle/segment intersections: points, segment index, parameter."""
    s = _as_segments(K)
    c = np.asarray(x0, dtype=float)
    p = s[:, 0] - c
    d = s[:, 1] - s[:, 0]
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * np.einsum("ij,ij->i", p, d)
    cc = np.einsum("ij,ij->i", p, p) - r * r
    disc = b * b - 4.0 * a * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    ts, idx = [], []
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2.0 * a)
        m = ok & (t >= 0.0) & (t <= 1.0)
        if sign > 0:
            m &= sq > 0  # tangential touch already counted once
        ts.append(t[m])
        idx.append(np.nonzero(m)[0])
    t = np.concatenate(ts)
    idx = np.concatenate(idx)
    pts = s[idx, 0] + t[:, None] * d[idx]
    return pts, idx, t


def _cluster_on_circle(pts, x0, tol):
    """Cluster labels for points on a circle closer than tol (angle sort)."""
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=int), 0
    ang = np.arctan2(pts[:, 1] - x0[1], pts[:, 0] - x0[0])
    order = np.argsort(ang, kind="stable")
    labels = np.empty(n, dtype=int)
    cur = 0
    labels[order[0]] = 0
    for k in range(1, n):
        if np.linalg.norm(pts[order[k]] - pts[order[k - 1]]) > tol:
            cur += 1
        labels[order[k]] = cur
    ncl = cur + 1
    if ncl > 1 and np.linalg.norm(pts[order[0]] - pts[order[-1]]) <= tol:
        labels[labels == cur] = 0
        ncl -= 1
    return labels, ncl


def crossing_points(K, x0, r: float) -> np.ndarray:
    """Points of K ∩ ∂B(x0, r), merged within 1e-9 r, sorted by angle."""
    c = np.asarray(x0, dtype=float)
    pts, _, _ = _crossing_raw(K, c, r)
    labels, ncl = _cluster_on_circle(pts, c, 1e-9 * r)
    out = np.array([pts[labels == k][0] for k in range(ncl)]).reshape(-1, 2)
    ang = np.arctan2(out[:, 1] - c[1], out[:, 0] - c[0])
    return out[np.argsort(ang, kind="stable")]


def circle_crossings(K, x0, r: float) -> int:
    """N(r): number of points of K on the circle of radius r around x0."""
    return len(crossing_points(K, x0, r))


def primitive_of_crossings(K, x0, r: float, samples: int = 1000) -> float:
    """P(r) = ∫_0^r N(s) ds by the midpoint rule."""
    h = r / samples
    s = (np.arange(samples) + 0.5) * h
    return float(h * sum(circle_crossings(K, x0, si) for si in s))


# ---------------------------------------------------------------------------
# Hausdorff distance
# ---------------------------------------------------------------------------


def sample_set(S, spacing: float) -> np.ndarray:
    s = _as_segments(S)
    if len(s) == 0:
        raise CrackGeometryError("cannot sample an empty set")
    out = []
    for a, b in s:
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        t = np.linspace(0.0, 1.0, n + 1)
        out.append(a + t[:, None] * (b - a))
    return np.vstack(out)


def hausdorff_distance(S1, S2, spacing: float | None = None) -> float:
    """Sampled Hausdorff distance between two segment sets.

    Each set is sampled every ``spacing`` (default: 1e-3 of the larger
    bounding-box diagonal); the error is at most ``spacing / 2``.
    """
    s1, s2 = _as_segments(S1), _as_segments(S2)
    if len(s1) == 0 or len(s2) == 0:
        raise CrackGeometryError("Hausdorff distance of an empty set")
    if spacing is None:
        ext = max(np.ptp(s1.reshape(-1, 2), axis=0).max(), np.ptp(s2.reshape(-1, 2), axis=0).max())
        spacing = 1e-3 * max(ext, 1e-300)
    p1 = sample_set(s1, spacing)
    p2 = sample_set(s2, spacing)
    d12, _ = cKDTree(p2).query(p1)
    d21, _ = cKDTree(p1).query(p2)
    return float(max(d12.max(), d21.max()))


# ---------------------------------------------------------------------------
# Geodesics, rotations, blow-ups
# ---------------------------------------------------------------------------


def _augmented_graph(K: CrackSet, extra: np.ndarray, tol: float):
    """Polyline graph with ``extra`` points snapped onto their nearest segments."""
    coords, ea, eb = K.graph()
    coords = coords.copy()
    n0 = len(coords)
    a, b = coords[ea], coords[eb]
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    split: dict[int, list[tuple[float, int]]] = {}
    new_ids = []
    extra_coords = []
    for k, y in enumerate(np.asarray(extra, dtype=float).reshape(-1, 2)):
        t = np.clip(np.einsum("ij,ij->i", y - a, d) / dd, 0.0, 1.0)
        proj = a + t[:, None] * d
        dist = np.linalg.norm(proj - y, axis=1)
        j = int(np.argmin(dist))
        if dist[j] > tol:
            raise CrackGeometryError(f"point {y.tolist()} is {dist[j]:.3g} away from the crack")
        nid = n0 + k
        new_ids.append(nid)
        extra_coords.append(proj[j])
        split.setdefault(j, []).append((float(t[j]), nid))
    if extra_coords:
        coords = np.vstack([coords, np.asarray(extra_coords)])
    rows, cols = [], []
    for j in range(len(ea)):
        chain = [int(ea[j])] + [nid for _, nid in sorted(split.get(j, []))] + [int(eb[j])]
        rows.extend(chain[:-1])
        cols.extend(chain[1:])
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    w = np.linalg.norm(coords[rows] - coords[cols], axis=1)
    # Zero-length edges (snapped onto a vertex) still need to connect.
    w = np.maximum(w, 1e-300)
    n = len(coords)
    g = coo_matrix((np.r_[w, w], (np.r_[rows, cols], np.r_[cols, rows])), shape=(n, n)).tocsr()
    return g, new_ids


def geodesic_distance(K: CrackSet, y, z, tol: float = 1e-9) -> float:
    """Length of the shortest path inside K between two points of K."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.linalg.norm(y - z) == 0.0:
        _augmented_graph(K, y[None, :], tol)
        return 0.0
    g, (iy, iz) = _augmented_graph(K, np.vstack([y, z]), tol)
    d = dijkstra(g, directed=False, indices=iy)
    return float(d[iz])


def chord_arc_constant(K: CrackSet, x0, radii: Iterable[float], tol: float = 1e-9) -> float:
    """max over radii and crossing pairs of geodesic(y, z) / r."""
    best = 0.0
    for r in radii:
        pts = crossing_points(K, x0, r)
        if len(pts) < 2:
            continue
        g, ids = _augmented_graph(K, pts, tol)
        d = dijkstra(g, directed=False, indices=ids)
        dd = d[:, ids]
        best = max(best, float(dd.max()) / r)
    return best


def first_crossing(K: CrackSet, x0, r: float) -> np.ndarray:
    """Crossing of ∂B(x0, r) closest to the tip along K (ties: first by angle)."""
    pts = crossing_points(K, x0, r)
    if len(pts) == 0:
        raise CrackGeometryError(f"no crossing of the crack with the circle of radius {r}")
    if len(pts) == 1:
        return pts[0]
    g, ids = _augmented_graph(K, np.vstack([K.tip, pts]), max(1e-9, 1e-9 * r))
    d = dijkstra(g, directed=False, indices=ids[0])[ids[1:]]
    return pts[int(np.argmin(d))]


def tip_rotation(K: CrackSet, x0, r: float) -> Rotation:
    """Rotation sending the selected crossing x_r - x0 onto the negative first axis."""
    xr = first_crossing(K, x0, r) - np.asarray(x0, dtype=float)
    return Rotation(math.pi - math.atan2(xr[1], xr[0]))


def clip_polyline_to_ball(pl: np.ndarray, center, r: float) -> list[np.ndarray]:
    """Maximal runs of a polyline inside the closed disk."""
    t0, t1 = _segment_disk_params(pl[:-1], pl[1:], np.asarray(center, dtype=float), r)
    pieces: list[list[np.ndarray]] = []
    open_run = False
    for k in range(len(pl) - 1):
        if t1[k] <= t0[k]:
            open_run = False
            continue
        a = pl[k] + t0[k] * (pl[k + 1] - pl[k])
        b = pl[k] + t1[k] * (pl[k + 1] - pl[k])
        if open_run and t0[k] == 0.0:
            pieces[-1].append(b)
        else:
            pieces.append([a, b])
        open_run = t1[k] == 1.0
    return [np.asarray(p) for p in pieces if np.linalg.norm(p[-1] - p[0]) > 0 or len(p) > 2]


def blowup_set(K: CrackSet, x0, r: float, clip_radius: float = 2.0) -> CrackSet:
    """(1/r) R_r (K - x0) clipped to B(0, clip_radius), component of the tip."""
    rot = tip_rotation(K, x0, r)
    x0 = np.asarray(x0, dtype=float)
    pieces = []
    for pl in K.polylines:
        y = rot.apply((pl - x0) / r)
        pieces.extend(clip_polyline_to_ball(y, (0.0, 0.0), clip_radius))
    pieces = [p for p in pieces if np.all(np.linalg.norm(np.diff(p, axis=0), axis=1) > 0)]
    loose = CrackSet(pieces, (0.0, 0.0), check=False)
    ids, owner = loose._node_ids()
    n_lines = len(pieces)
    g = coo_matrix(
        (np.ones(len(owner)), (owner, n_lines + ids)), shape=(n_lines + ids.max() + 1,) * 2
    )
    _, lab = connected_components(g, directed=False)
    verts = np.vstack(pieces)
    tip_node = ids[int(np.argmin(np.linalg.norm(verts, axis=1)))]
    keep = [i for i in range(n_lines) if lab[i] == lab[n_lines + tip_node]]
    return CrackSet([pieces[i] for i in keep], (0.0, 0.0), check=False)


def pythagoras_bound(curve: np.ndarray, x0, y) -> tuple[float, float]:
    """For a curve from x0 to y: (2 sqrt((|y-x0|/2)^2 + h^2), length), h = max distance to [x0, y]."""
    curve = np.asarray(curve, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x0
    t = np.clip((curve - x0) @ d / (d @ d), 0.0, 1.0)
    h = float(np.max(np.linalg.norm(curve - (x0 + t[:, None] * d), axis=1)))
    r = float(np.linalg.norm(d))
    L = float(np.sum(np.linalg.norm(np.diff(curve, axis=0), axis=1)))
    return 2.0 * math.sqrt((r / 2.0) ** 2 + h * h), L
