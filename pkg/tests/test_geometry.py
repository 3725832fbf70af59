import json
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cracktip.geometry import (
    BallSpec,
    CrackGeometryError,
    CrackSet,
    Rotation,
    blowup_set,
    chord_arc_constant,
    circle_crossings,
    crossing_points,
    density_ratio,
    geodesic_distance,
    hausdorff_distance,
    length_in_ball,
    make_crack,
    make_spiral,
    primitive_of_crossings,
    pythagoras_bound,
    tip_rotation,
)


def spiral_length_oracle(a, b):
    # |gamma'(t)| = sqrt(1 + t^2 theta'(t)^2) with theta = sqrt(-ln t)
    f = lambda t: math.sqrt(1.0 + 1.0 / (4.0 * -math.log(t)))  # noqa: E731
    return integrate.quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]


def random_monotone_polyline(rng, n):
    x = np.sort(rng.uniform(-0.9, 0.9, n))
    x = x + np.arange(n) * 1e-6
    y = rng.uniform(-0.6, 0.6, n)
    return np.stack([x, y], axis=1)


class TestConstruction:
    def test_segment_crack(self):
        K = make_crack("segment", endpoints=[(-1, 0), (0, 0)])
        assert len(K.polylines) == 1 and len(K.polylines[0]) == 2
        assert K.length == pytest.approx(1.0)
        assert tuple(K.tip) == (0.0, 0.0)

    def test_tip_must_be_vertex(self):
        with pytest.raises(CrackGeometryError, match="tip"):
            CrackSet([[(0, 0), (1, 0)]], (0.5, 0.0))

    def test_disconnected_rejected(self):
        with pytest.raises(CrackGeometryError, match="connected"):
            CrackSet([[(0, 0), (1, 0)], [(0, 1), (1, 1)]], (0, 0))

    def test_self_intersection_rejected(self):
        with pytest.raises(CrackGeometryError):
            CrackSet([[(0, 0), (1, 0), (1, 1), (0.5, -1)]], (0, 0))

    def test_zero_length_segment_rejected(self):
        with pytest.raises(CrackGeometryError, match="zero-length"):
            CrackSet([[(0, 0), (0, 0), (1, 0)]], (0, 0))

    def test_unknown_generator(self):
        with pytest.raises(CrackGeometryError, match="unknown"):
            make_crack("zigzag")

    @pytest.mark.parametrize("t_min,t_max", [(0.0, 0.5), (-1.0, 0.5), (0.5, 0.1), (0.1, 1.5)])
    def test_spiral_bad_parameters(self, t_min, t_max):
        with pytest.raises(CrackGeometryError):
            make_spiral(t_min, t_max, 32)

    def test_two_scale_rejects_slow_sequence(self):
        with pytest.raises(CrackGeometryError):
            make_crack("two_scale", q=[1.0, 0.5, 0.25, 0.125], depth=1)
        with pytest.raises(CrackGeometryError):
            make_crack("two_scale", q=[1.0, 1.0, 0.1, 0.01], depth=1)

    def test_two_scale_structure(self):
        K = make_crack("two_scale", q={"base": 4.0, "power": 2.0}, depth=3)
        # axis + 3 horizontal segments + 3 connectors
        assert len(K.polylines) == 7
        assert np.allclose(K.tip, 0.0)
        horizontal = [pl for pl in K.polylines[1:] if pl[0, 1] == pl[-1, 1]]
        vertical = [pl for pl in K.polylines[1:] if pl[0, 0] == pl[-1, 0]]
        assert len(vertical) == 3
        assert len(horizontal) == 3
        for pl in horizontal:
            # horizontal diameters of their little ball, centred on the second axis
            assert pl[0, 0] == pytest.approx(-pl[-1, 0])

    def test_serialization_round_trip(self, straight_crack):
        K = make_crack("two_scale", q={"base": 4.0, "power": 1.0}, depth=2)
        doc = json.loads(json.dumps(K.to_dict()))
        assert set(doc) == {"polylines", "tip"}
        K2 = CrackSet.from_dict(doc)
        assert K2.length == pytest.approx(K.length, rel=1e-15)
        assert np.array_equal(K2.segments, K.segments)


class TestLengths:
    def test_half_line_through_center(self, straight_crack):
        assert length_in_ball(straight_crack, BallSpec((0, 0), 0.3)) == pytest.approx(0.3, abs=1e-15)
        for r in (1e-4, 0.1, 0.7, 1.0):
            assert density_ratio(straight_crack, (0, 0), r) == pytest.approx(0.5, abs=1e-14)

    def test_diameter(self, diameter_crack):
        assert length_in_ball(diameter_crack, BallSpec((0, 0), 0.3)) == pytest.approx(0.6, abs=1e-15)
        assert density_ratio(diameter_crack, (0, 0), 0.3) == pytest.approx(1.0, abs=1e-14)

    def test_spiral_length_in_ball(self):
        K = make_spiral(1e-4, 0.5, 4096)
        r = 1e-3
        L = length_in_ball(K, BallSpec((0, 0), r))
        assert 1.0 <= L / r <= 1.05
        oracle = 1e-4 + spiral_length_oracle(1e-4, r)
        assert abs(L - oracle) / oracle < 0.02

    def test_spiral_density_decreases_toward_half(self):
        K = make_spiral(1e-6, 0.5, 8192)
        d = [density_ratio(K, (0, 0), r) for r in (1e-2, 1e-3, 1e-4)]
        assert d[0] > d[1] > d[2] > 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_length_monotone_and_additive(self, seed):
        rng = np.random.default_rng(seed)
        pl = random_monotone_polyline(rng, 8)
        K = CrackSet([pl], pl[0])
        c = rng.uniform(-0.3, 0.3, 2)
        r1, r2 = sorted(rng.uniform(0.05, 1.0, 2))
        l1 = length_in_ball(K, BallSpec(tuple(c), r1))
        l2 = length_in_ball(K, BallSpec(tuple(c), r2))
        assert 0 <= l1 <= l2 + 1e-15
        # additivity over the two halves of the polyline
        a = CrackSet([pl[:5]], pl[0])
        b = CrackSet([pl[4:]], pl[4])
        lab = length_in_ball(a, BallSpec(tuple(c), r2)) + length_in_ball(b, BallSpec(tuple(c), r2))
        assert lab == pytest.approx(l2, abs=1e-13)


class TestCrossings:
    def test_half_line_and_diameter(self, straight_crack, diameter_crack):
        assert circle_crossings(straight_crack, (0, 0), 0.4) == 1
        assert circle_crossings(diameter_crack, (0, 0), 0.4) == 2

    def test_tangent_counts_once(self):
        K = CrackSet([[(-1.0, 0.5), (1.0, 0.5)]], (-1.0, 0.5))
        assert circle_crossings(K, (0, 0), 0.5) == 1

    def test_two_scale_hand_count(self):
        q = [4.0 ** (-n) for n in range(8)]
        K = make_crack("two_scale", q=q, depth=2)
        # ring through the inner horizontal segment at scale n = 1:
        # height h = 4/3 q3, half-length q2; a radius just above h cuts the axis,
        # the connector and the segment twice.
        h, half = 4.0 / 3.0 * q[3], q[2]
        r = 0.5 * (h + math.hypot(h, half))
        # brute-force oracle: dense sampling of every segment
        count = 0
        for a, b in K.segments:
            t = np.linspace(0, 1, 200001)
            p = a + t[:, None] * (b - a)
            s = np.sign(np.linalg.norm(p, axis=1) - r)
            count += int(np.sum(s[1:] != s[:-1]))
        assert circle_crossings(K, (0, 0), r) == count

    def test_merge_tolerance(self):
        K = CrackSet([[(-1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]], (0.0, 0.0))
        # a circle through the corner vertex hits two segments at one point
        assert circle_crossings(K, (0.0, 0.5), 0.5) == 2
        pts = crossing_points(K, (0.0, 0.5), 0.5)
        assert len(pts) == 2


class TestHausdorff:
    def test_zero_on_itself(self, straight_crack):
        assert hausdorff_distance(straight_crack, straight_crack) == 0.0

    def test_parallel_segments(self):
        h = 0.037
        a = np.array([[[0.0, 0.0], [1.0, 0.0]]])
        b = np.array([[[0.0, h], [1.0, h]]])
        assert hausdorff_distance(a, b) == pytest.approx(h, abs=1e-12)

    def test_spiral_flattening(self):
        K = make_spiral(1e-6, 0.5, 8192)
        ratios = []
        for r in (1e-1, 1e-2, 1e-3, 1e-4):
            B = blowup_set(K, (0, 0), r, clip_radius=1.0)
            ref = np.array([[[-1.0, 0.0], [0.0, 0.0]]])
            ratios.append(hausdorff_distance(B, ref, spacing=1e-3))
        assert all(ratios[k + 1] < ratios[k] for k in range(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_symmetry_and_triangle(self, seed):
        rng = np.random.default_rng(seed)
        sets = [random_monotone_polyline(rng, 5) for _ in range(3)]
        segs = [np.stack([s[:-1], s[1:]], axis=1) for s in sets]
        sp = 1e-3
        d = lambda i, j: hausdorff_distance(segs[i], segs[j], spacing=sp)  # noqa: E731
        assert d(0, 1) == pytest.approx(d(1, 0), abs=1e-15)
        assert d(0, 2) <= d(0, 1) + d(1, 2) + 2 * sp


class TestGeodesic:
    def test_diameter(self, diameter_crack):
        r = 0.4
        assert geodesic_distance(diameter_crack, (-r, 0), (r, 0)) == pytest.approx(2 * r, abs=1e-14)
        assert geodesic_distance(diameter_crack, (0.1, 0), (0.1, 0)) == 0.0

    def test_off_crack_point_rejected(self, diameter_crack):
        with pytest.raises(CrackGeometryError):
            geodesic_distance(diameter_crack, (0.0, 0.1), (0.3, 0.0))

    def test_chord_arc_diameter(self, diameter_crack):
        c = chord_arc_constant(diameter_crack, (0, 0), [0.5, 0.1, 0.01])
        assert abs(c - 2.0) <= 1e-9

    def test_two_scale_against_networkx(self):
        q = [4.0 ** (-n) for n in range(8)]
        K = make_crack("two_scale", q=q, depth=2)
        h, half = 4.0 / 3.0 * q[3], q[2]
        r = 0.5 * (h + math.hypot(h, half))
        pts = crossing_points(K, (0, 0), r)
        assert len(pts) >= 2
        G = nx.Graph()
        # dense oracle: every segment split into many nodes, crossings inserted exactly
        key = lambda p: (round(float(p[0]), 13), round(float(p[1]), 13))  # noqa: E731
        for a, b in K.segments:
            t = list(np.linspace(0, 1, 51))
            d = b - a
            for p in pts:
                s = float(np.dot(p - a, d) / np.dot(d, d))
                if 0 <= s <= 1 and np.linalg.norm(a + s * d - p) < 1e-12:
                    t.append(s)
            t = sorted(t)
            nodes = [key(a + s * d) for s in t]
            for u, v in zip(nodes[:-1], nodes[1:]):
                if u != v:
                    G.add_edge(u, v, weight=math.dist(u, v))
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                ref = nx.dijkstra_path_length(G, key(pts[i]), key(pts[j]))
                got = geodesic_distance(K, pts[i], pts[j])
                assert got == pytest.approx(ref, rel=1e-10)
                assert got >= np.linalg.norm(pts[i] - pts[j]) - 1e-15


class TestRotation:
    def test_inverse_identity(self, rng):
        for a in rng.uniform(-10, 10, 20):
            R = Rotation(a)
            p = rng.normal(size=(5, 2))
            assert np.abs(R.inverse().apply(R.apply(p)) - p).max() < 1e-14
            assert -math.pi < R.angle <= math.pi

    @pytest.mark.parametrize(
        "direction,angle", [((-1.0, 0.0), 0.0), ((0.0, -1.0), -math.pi / 2), ((1.0, 0.0), math.pi)]
    )
    def test_axis_cases(self, direction, angle):
        r = 0.3
        K = CrackSet([[(0.0, 0.0), (2 * r * direction[0], 2 * r * direction[1])]], (0.0, 0.0))
        R = tip_rotation(K, (0, 0), r)
        assert R.angle == angle
        xr = R.apply(np.array([[r * direction[0], r * direction[1]]]))[0]
        assert abs(xr[1]) < 1e-10 and xr[0] < 0

    def test_no_crossing(self, straight_crack):
        with pytest.raises(CrackGeometryError):
            tip_rotation(straight_crack, (0, 0), 2.0)

    def test_blowup_normalization(self):
        K = make_crack("polyline", vertices=[(-0.8, -0.6), (-0.3, 0.0), (0.0, 0.0)])
        for r in (0.5, 0.2, 0.05):
            B = blowup_set(K, (0, 0), r)
            pts = crossing_points(B, (0, 0), 1.0)
            assert np.min(np.linalg.norm(pts - [-1.0, 0.0], axis=1)) < 1e-12

    def test_blowup_segment(self, straight_crack):
        B = blowup_set(straight_crack, (0, 0), 0.25)
        assert hausdorff_distance(B, np.array([[[-2.0, 0.0], [0.0, 0.0]]])) < 1e-12

    def test_two_scale_diameter_scale(self):
        q = [4.0 ** (-n) for n in range(10)]
        K = make_crack("two_scale", q=q, depth=3)
        n = 1
        r = q[2 * n]
        B = blowup_set(K, (0, 0), r)
        # at r = q_{2n} the picture is a radius plus a parallel diameter above it
        assert circle_crossings(B, (0, 0), 0.999) == 3


def test_coarea_inequality_random_polylines():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        pl = random_monotone_polyline(rng, int(rng.integers(3, 9)))
        K = CrackSet([pl], pl[0])
        x0 = rng.uniform(-0.3, 0.3, 2)
        t = float(rng.uniform(0.1, 1.2))
        P = primitive_of_crossings(K, x0, t, samples=1000)
        L = length_in_ball(K, BallSpec(tuple(x0), t))
        assert P <= L + 2 * t / 1000 * 8


def test_pythagoras_bound_on_sampled_curves():
    rng = np.random.default_rng(7)
    for _ in range(30):
        r = 1.0
        y = np.array([-r, 0.0])
        s = np.linspace(0, 1, 400)
        bump = rng.uniform(0.0, 0.2) * np.sin(math.pi * s) * rng.choice([-1, 1])
        curve = np.stack([-r * s, bump], axis=1)
        lhs, L = pythagoras_bound(curve, (0.0, 0.0), y)
        assert lhs <= L * (1 + 1e-12)
