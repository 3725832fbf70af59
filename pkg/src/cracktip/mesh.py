"""Crack-conforming triangulations of a disk with the crack opened into a slit.

The crack polylines are inserted as constrained segments, the mesh is graded
towards the tip, and every crack vertex is then split into one copy per side
so that no triangle edge couples the two faces of the crack.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import triangle as tr

from .geometry import BallSpec, CrackSet, _merge_points
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

OUTER, CRACK = 1, 2
MIN_ANGLE = 28.0
MAX_ROUNDS = 60


class MeshError(RuntimeError):
    """Mesh generation failed; the message names the offending feature."""


@dataclass(frozen=True)
class MeshConfig:
    """Mesh size controls.

    The local element size is ``target_h * max(min_h / target_h, (d / R) ** beta)``
    with ``d`` the distance to the tip.  ``boundary_h`` is the edge length
    of the inscribed boundary polygon (default ``target_h / 2``).
    """

    target_h: float = 0.1
    tip_grading_exponent: float = 0.5
    min_h: float | None = None
    domain: BallSpec = field(default_factory=lambda: BallSpec((0.0, 0.0), 1.0))
    boundary_h: float | None = None

    def __post_init__(self):
        if self.min_h is None:
            object.__setattr__(self, "min_h", self.target_h / 64.0)
        if not self.target_h > 0:
            raise ValueError("target_h must be positive")
        if not (0 < self.min_h <= self.target_h):
            raise ValueError("min_h must satisfy 0 < min_h <= target_h")
        if not (0.0 <= self.tip_grading_exponent <= 1.0):
            raise ValueError("tip_grading_exponent must lie in [0, 1]")
        if self.boundary_h is not None and not self.boundary_h > 0:
            raise ValueError("boundary_h must be positive")

    @property
    def beta(self) -> float:
        return self.tip_grading_exponent

    def size_at(self, d):
        """Target element size at distance ``d`` from the tip."""
        R = self.domain.radius
        rel = np.power(np.maximum(np.asarray(d, dtype=float), 0.0) / R, self.beta)
        return self.target_h * np.maximum(self.min_h / self.target_h, rel)

    def to_dict(self):
        return {
            "target_h": self.target_h,
            "tip_grading_exponent": self.tip_grading_exponent,
            "min_h": self.min_h,
            "domain": {"center": list(self.domain.center), "radius": self.domain.radius},
            "boundary_h": self.boundary_h,
        }


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Slit triangulation.

    Attributes
    ----------
    vertices : (n, 2) array
    triangles : (m, 3) int array, counter-clockwise
    markers : dict
        ``outer`` (Dirichlet vertex ids), ``crack_left`` (original crack
        vertex ids), ``crack_right`` (duplicated copies) and ``tip``.
    slit_pairs : (k, 2) int array of (original id, copy id)
    crack_segments : (s, 2, 2) array, the crack geometry the mesh conforms to
    domain : BallSpec
    """

    vertices: np.ndarray
    triangles: np.ndarray
    markers: dict
    slit_pairs: np.ndarray
    crack_segments: np.ndarray
    domain: BallSpec

    def __post_init__(self):
        for a in (self.vertices, self.triangles, self.slit_pairs, self.crack_segments):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def tip(self) -> int | None:
        return self.markers.get("tip")

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)

    def tip_size(self) -> float:
        """Longest edge among the triangles touching the tip (or the centre)."""
        if self.tip is None:
            c = np.asarray(self.domain.center)
            t = int(np.argmin(np.linalg.norm(self.vertices - c, axis=1)))
        else:
            t = self.tip
        tip_ids = {t} | {int(b) for a, b in self.slit_pairs if a == t}
        mask = np.isin(self.triangles, list(tip_ids)).any(axis=1)
        return float(self.edge_lengths()[mask].max())

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of each triangle, degrees."""
        L = self.edge_lengths()
        a, b, c = L[:, 0], L[:, 1], L[:, 2]
        cosines = np.stack(
            [
                (b * b + c * c - a * a) / (2 * b * c),
                (a * a + c * c - b * b) / (2 * a * c),
                (a * a + b * b - c * c) / (2 * a * b),
            ],
            axis=1,
        )
        return np.degrees(np.arccos(np.clip(cosines, -1, 1))).min(axis=1)

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "markers": {
                k: (v if isinstance(v, int) or v is None else [int(i) for i in v])
                for k, v in self.markers.items()
            },
            "slit_pairs": self.slit_pairs.tolist(),
            "crack_segments": self.crack_segments.tolist(),
            "domain": {"center": list(self.domain.center), "radius": self.domain.radius},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Triangulation":
        m = doc["markers"]
        markers = {
            "outer": np.asarray(m["outer"], dtype=np.int64),
            "crack_left": np.asarray(m["crack_left"], dtype=np.int64),
            "crack_right": np.asarray(m["crack_right"], dtype=np.int64),
            "tip": m.get("tip"),
        }
        return cls(
            np.asarray(doc["vertices"], dtype=float),
            np.asarray(doc["triangles"], dtype=np.int64).reshape(-1, 3),
            markers,
            np.asarray(doc["slit_pairs"], dtype=np.int64).reshape(-1, 2),
            np.asarray(doc.get("crack_segments", []), dtype=float).reshape(-1, 2, 2),
            BallSpec(tuple(doc["domain"]["center"]), doc["domain"]["radius"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


# ---------------------------------------------------------------------------
# PSLG construction
# ---------------------------------------------------------------------------


def _boundary_angles(n: int, pinned: list[float]) -> np.ndarray:
    """n uniform angles with the pinned ones inserted (uniform ones nearby dropped)."""
    base = -math.pi + 2.0 * math.pi * np.arange(n) / n
    step = 2.0 * math.pi / n
    keep = np.ones(n, dtype=bool)
    for a in pinned:
        gap = np.abs(np.angle(np.exp(1j * (base - a))))
        keep &= gap > 0.3 * step
    return np.sort(np.r_[base[keep], pinned])


def _pslg(K: CrackSet | None, cfg: MeshConfig):
    c = np.asarray(cfg.domain.center)
    R = cfg.domain.radius
    verts, segs, vmark, smark = [], [], [], []
    pinned = []
    crack_nodes = np.zeros((0, 2))
    crack_edges = np.zeros((0, 2), dtype=int)
    if K is not None:
        allv = np.vstack(K.polylines)
        ids = _merge_points(allv, 1e-12 * max(R, 1.0))
        nn = ids.max() + 1
        crack_nodes = np.zeros((nn, 2))
        crack_nodes[ids] = allv
        rel = np.linalg.norm(crack_nodes - c, axis=1)
        if np.any(rel > R * (1 + 1e-9)):
            bad = int(np.argmax(rel))
            raise MeshError(f"crack vertex {crack_nodes[bad].tolist()} lies outside the domain")
        on_circle = np.abs(rel - R) <= 1e-9 * R
        crack_nodes[on_circle] = c + R * (crack_nodes[on_circle] - c) / rel[on_circle, None]
        pinned = [float(math.atan2(*(p - c)[::-1])) for p in crack_nodes[on_circle]]
        # Vertex spacing must be resolvable by the smallest elements.
        pairs = cKDTree(crack_nodes).query_pairs(cfg.min_h / 4.0, output_type="ndarray")
        if len(pairs):
            a, b = pairs[0]
            raise MeshError(
                f"crack vertices {crack_nodes[a].tolist()} and {crack_nodes[b].tolist()} are "
                f"closer than min_h/4 = {cfg.min_h / 4:.3g}"
            )
        start = np.cumsum([0] + [len(pl) for pl in K.polylines])
        e = []
        for k in range(len(K.polylines)):
            idx = ids[start[k] : start[k + 1]]
            e.append(np.stack([idx[:-1], idx[1:]], axis=1))
        crack_edges = np.unique(np.sort(np.vstack(e), axis=1), axis=0)
        # Segments crossing each other away from shared vertices cannot be meshed.
        _check_crossings(crack_nodes, crack_edges)
    bh = cfg.boundary_h if cfg.boundary_h is not None else cfg.target_h / 2.0
    n_b = max(8, int(math.ceil(2 * math.pi * R / bh)))
    ang = _boundary_angles(n_b, pinned)
    bpts = c + R * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # Replace boundary points by the coincident crack nodes.
    nb = len(bpts)
    verts = np.vstack([bpts, crack_nodes]) if len(crack_nodes) else bpts
    index = np.arange(len(verts))
    if len(crack_nodes):
        d, j = cKDTree(bpts).query(crack_nodes)
        hit = d <= 1e-9 * R
        index[nb + np.nonzero(hit)[0]] = j[hit]
    segs = [np.stack([np.arange(nb), np.roll(np.arange(nb), -1)], axis=1)]
    smark = [np.full(nb, OUTER)]
    if len(crack_edges):
        segs.append(index[nb + crack_edges])
        smark.append(np.full(len(crack_edges), CRACK))
    keep = np.unique(index)
    remap = -np.ones(len(verts), dtype=int)
    remap[keep] = np.arange(len(keep))
    seg = remap[index[np.vstack(segs)]]
    vmark = np.zeros(len(keep), dtype=int)
    return {
        "vertices": verts[keep],
        "segments": seg,
        "segment_markers": np.concatenate(smark)[:, None],
        "vertex_markers": vmark[:, None],
    }


def _check_crossings(nodes, edges):
    from .geometry import _segments_intersect

    a = nodes[edges[:, 0]]
    b = nodes[edges[:, 1]]
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    pairs = cKDTree(mid).query_pairs(2 * half.max() + 1e-12, output_type="ndarray")
    for i, j in pairs:
        if len({*edges[i], *edges[j]}) < 4:
            continue
        if _segments_intersect(a[i], b[i], a[j], b[j]):
            raise MeshError(f"crack self-intersection between segments {a[i].tolist()}-{b[i].tolist()} "
                            f"and {a[j].tolist()}-{b[j].tolist()}")


# ---------------------------------------------------------------------------
# Meshing
# ---------------------------------------------------------------------------


def _grading_center(K, cfg):
    return np.asarray(K.tip if K is not None else cfg.domain.center, dtype=float)


def _refine(pslg: dict, cfg: MeshConfig, center: np.ndarray) -> dict:
    try:
        out = tr.triangulate(pslg, f"pq{MIN_ANGLE:g}")
    except Exception as exc:  # triangle raises plain RuntimeError
        raise MeshError(f"initial triangulation failed: {exc}") from exc
    for _ in range(MAX_ROUNDS):
        v, t = out["vertices"], out["triangles"]
        p = v[t]
        d = np.linalg.norm(p - center, axis=2).min(axis=1)
        h = cfg.size_at(d)
        longest = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2).max(axis=1)
        bad = longest > h
        if not np.any(bad):
            return out
        area = 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )
        # Shrink at most 4x per round so large tip triangles do not flood
        # their whole extent with the floor size.
        goal = np.minimum(0.5 * area, np.maximum(0.25 * area, math.sqrt(3) / 4 * h * h))
        target = np.where(bad, goal, -1.0)
        out["triangle_max_area"] = target[:, None]
        try:
            out = tr.triangulate(out, f"rpq{MIN_ANGLE:g}a")
        except Exception as exc:
            raise MeshError(f"refinement failed: {exc}") from exc
    raise MeshError("mesh refinement did not converge to the size function")


def _duplicate(vertices, triangles, crack_edge_set, crack_vertices):
    """Split crack vertices into one copy per side; returns new arrays and pairs."""
    tris = triangles.copy()
    n = len(vertices)
    order = np.argsort(tris.ravel(), kind="stable")
    owners = order // 3
    counts = np.bincount(tris.ravel(), minlength=n)
    starts = np.r_[0, np.cumsum(counts)]
    new_verts = [vertices]
    pairs = []
    nxt = n
    for v in sorted(crack_vertices):
        fan = owners[starts[v] : starts[v + 1]]
        parent = {int(f): int(f) for f in fan}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        by_edge: dict[int, list[int]] = {}
        for f in fan:
            for w in triangles[f]:
                if w != v:
                    by_edge.setdefault(int(w), []).append(int(f))
        for w, fs in by_edge.items():
            if len(fs) == 2 and (min(v, w), max(v, w)) not in crack_edge_set:
                ra, rb = find(fs[0]), find(fs[1])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for f in sorted(parent):
            groups.setdefault(find(f), []).append(f)
        for root in sorted(groups)[1:]:
            for f in groups[root]:
                tris[f][tris[f] == v] = nxt
            pairs.append((v, nxt))
            new_verts.append(vertices[v][None, :])
            nxt += 1
    return np.vstack(new_verts), tris, np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def mesh_disk_with_crack(K: CrackSet | None, cfg: MeshConfig) -> Triangulation:
    """Triangulate the disk ``cfg.domain`` with ``K`` opened into a slit."""
    center = _grading_center(K, cfg)
    pslg = _pslg(K, cfg)
    out = _refine(pslg, cfg, center)
    v = np.array(out["vertices"], dtype=float)
    t = np.array(out["triangles"], dtype=np.int64)
    segs = np.sort(np.asarray(out["segments"], dtype=np.int64), axis=1)
    smark = np.asarray(out["segment_markers"]).ravel()
    # Project outer boundary vertices onto the circle.
    c = np.asarray(cfg.domain.center)
    R = cfg.domain.radius
    outer = np.unique(segs[smark == OUTER])
    rel = v[outer] - c
    v[outer] = c + R * rel / np.linalg.norm(rel, axis=1)[:, None]
    # Orientation
    p = v[t]
    sa = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (
        p[:, 2, 0] - p[:, 0, 0]
    )
    t[sa < 0] = t[sa < 0][:, [0, 2, 1]]
    crack_segments = np.zeros((0, 2, 2))
    tip = None
    pairs = np.zeros((0, 2), dtype=np.int64)
    crack_v = np.zeros(0, dtype=np.int64)
    if K is not None:
        cedges = segs[smark == CRACK]
        crack_v = np.unique(cedges)
        edge_set = {(int(a), int(b)) for a, b in cedges}
        tip = int(np.argmin(np.linalg.norm(v - K.tip, axis=1)))
        v, t, pairs = _duplicate(v, t, edge_set, crack_v.tolist())
        crack_segments = K.segments
    # Duplicated copies of outer vertices are Dirichlet nodes too.
    outer_all = np.unique(np.r_[outer, pairs[np.isin(pairs[:, 0], outer), 1]]).astype(np.int64)
    markers = {
        "outer": outer_all,
        "crack_left": crack_v.astype(np.int64),
        "crack_right": pairs[:, 1].copy(),
        "tip": tip,
    }
    T = Triangulation(v, t, markers, pairs, np.asarray(crack_segments, dtype=float), cfg.domain)
    log.info(
        "mesh: %d vertices, %d triangles, %d slit pairs, tip size %.3g",
        T.n_vertices,
        T.n_triangles,
        len(pairs),
        T.tip_size(),
    )
    return T


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Per-invariant offending indices; empty lists mean the check passed."""

    checks: dict

    @property
    def passed(self) -> bool:
        return all(len(v) == 0 for v in self.checks.values())

    def failures(self) -> dict:
        return {k: v for k, v in self.checks.items() if len(v)}

    def __str__(self):
        lines = []
        for k, v in self.checks.items():
            status = "ok" if not len(v) else f"FAIL {list(v)[:10]}"
            lines.append(f"{k}: {status}")
        return "\n".join(lines)


def _point_segment_distance(pts, segs):
    """Distance from each point to the nearest segment of ``segs``."""
    if len(segs) == 0:
        return np.full(len(pts), np.inf)
    a = segs[:, 0]
    d = segs[:, 1] - a
    dd = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
    out = np.full(len(pts), np.inf)
    for k in range(0, len(pts), 512):
        p = pts[k : k + 512, None, :]
        t = np.clip(np.einsum("pij,ij->pi", p - a, d) / dd, 0, 1)
        q = a + t[..., None] * d
        out[k : k + 512] = np.linalg.norm(p - q, axis=2).min(axis=1)
    return out


def crack_edge_mask(T: Triangulation, edges: np.ndarray) -> np.ndarray:
    """True for edges lying on the crack geometry."""
    tol = 1e-10 * T.domain.radius
    crack_set = set(T.markers["crack_left"].tolist()) | set(T.markers["crack_right"].tolist())
    cand = np.array([a in crack_set and b in crack_set for a, b in edges], dtype=bool)
    mask = np.zeros(len(edges), dtype=bool)
    if np.any(cand):
        mid = 0.5 * (T.vertices[edges[cand, 0]] + T.vertices[edges[cand, 1]])
        mask[cand] = _point_segment_distance(mid, T.crack_segments) <= tol
    return mask


def validate(T: Triangulation) -> ValidationReport:
    """Check the structural invariants of a slit triangulation."""
    checks: dict[str, list] = {}
    areas = T.areas()
    checks["orientation"] = np.nonzero(areas <= 0)[0].tolist()
    e = np.sort(
        np.vstack([T.triangles[:, [0, 1]], T.triangles[:, [1, 2]], T.triangles[:, [2, 0]]]), axis=1
    )
    edges, counts = np.unique(e, axis=0, return_counts=True)
    checks["edge_multiplicity"] = np.nonzero(counts > 2)[0].tolist()
    on_crack = crack_edge_mask(T, edges)
    checks["slit_connectivity"] = np.nonzero(on_crack & (counts != 1))[0].tolist()
    outer = set(T.markers["outer"].tolist())
    is_outer = np.array([a in outer and b in outer for a, b in edges], dtype=bool)
    checks["open_edges"] = np.nonzero((counts == 1) & ~on_crack & ~is_outer)[0].tolist()
    tip = T.tip
    dup = set(T.slit_pairs[:, 1].tolist())
    # Crack vertices with two or more crack edges must be split; free ends need not.
    orig = np.arange(T.n_vertices)
    orig[T.slit_pairs[:, 1]] = T.slit_pairs[:, 0]
    ce = np.unique(np.sort(orig[edges[on_crack]], axis=1), axis=0)
    degree = np.bincount(ce.ravel(), minlength=T.n_vertices)
    interior_crack = [
        i
        for i in T.markers["crack_left"].tolist()
        if i != tip and i not in outer and degree[i] >= 2
    ]
    paired = T.slit_pairs[:, 0].tolist()
    checks["tip_unique"] = [tip] if tip is not None and tip in dup else []
    checks["slit_pairs_missing"] = [i for i in interior_crack if i not in paired]
    gap = np.linalg.norm(
        T.vertices[T.slit_pairs[:, 0]] - T.vertices[T.slit_pairs[:, 1]], axis=1
    )
    checks["slit_pairs_geometry"] = np.nonzero(gap > 0)[0].tolist()
    # Area against the inscribed boundary polygon.
    c = np.asarray(T.domain.center)
    ob = np.array(sorted(outer - dup)) if outer else np.zeros(0, dtype=int)
    if len(ob) >= 3:
        ang = np.arctan2(T.vertices[ob, 1] - c[1], T.vertices[ob, 0] - c[0])
        poly = T.vertices[ob[np.argsort(ang)]]
        x, y = poly[:, 0], poly[:, 1]
        poly_area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        rel = abs(areas.sum() - poly_area) / poly_area
        checks["area"] = [float(rel)] if rel > 1e-8 else []
    else:
        checks["area"] = ["no outer boundary"]
    return ValidationReport(checks)


def refine_uniform(T: Triangulation) -> Triangulation:
    """Split every triangle into four through its edge midpoints.

    Midpoints of outer boundary edges are projected onto the circle.  Each
    face of the crack gets its own midpoint so the slit stays open; this
    halves the whole size function, including the floor at the tip.
    """
    tris = T.triangles
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T
    n = T.n_vertices
    mid = 0.5 * (T.vertices[edges[:, 0]] + T.vertices[edges[:, 1]])
    outer = np.zeros(n, dtype=bool)
    outer[T.markers["outer"]] = True
    counts = np.bincount(inv.ravel(), minlength=len(edges))
    on_outer = outer[edges[:, 0]] & outer[edges[:, 1]] & (counts == 1)
    on_crack = crack_edge_mask(T, edges)
    on_outer &= ~on_crack
    c = np.asarray(T.domain.center)
    R = T.domain.radius
    rel = mid[on_outer] - c
    mid[on_outer] = c + R * rel / np.linalg.norm(rel, axis=1)[:, None]
    verts = np.vstack([T.vertices, mid])
    m = n + inv
    a, b, cc = tris[:, 0], tris[:, 1], tris[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    new_t = np.concatenate(
        [
            np.stack([a, m01, m20], 1),
            np.stack([m01, b, m12], 1),
            np.stack([m20, m12, cc], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    orig = np.arange(n)
    orig[T.slit_pairs[:, 1]] = T.slit_pairs[:, 0]
    crack_mids = np.nonzero(on_crack)[0]
    okey = np.sort(orig[edges[crack_mids]], axis=1)
    order = np.lexsort((okey[:, 1], okey[:, 0]))
    new_pairs = []
    left_new = []
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and np.all(okey[order[j + 1]] == okey[order[i]]):
            j += 1
        group = [n + int(crack_mids[order[k]]) for k in range(i, j + 1)]
        left_new.append(group[0])
        new_pairs.extend((group[0], g) for g in group[1:])
        i = j + 1
    markers = {
        "outer": np.unique(np.r_[T.markers["outer"], n + np.nonzero(on_outer)[0]]).astype(np.int64),
        "crack_left": np.r_[T.markers["crack_left"], left_new].astype(np.int64),
        "crack_right": np.r_[T.markers["crack_right"], [p[1] for p in new_pairs]].astype(np.int64),
        "tip": T.tip,
    }
    pairs = np.vstack([T.slit_pairs, np.asarray(new_pairs, dtype=np.int64).reshape(-1, 2)])
    return Triangulation(verts, new_t.astype(np.int64), markers, pairs, T.crack_segments, T.domain)
