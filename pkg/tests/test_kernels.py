import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cracktip import kernels

IMPLS = kernels.implementations()


def random_triangles(rng, n):
    p = rng.uniform(-1, 1, (n, 3, 2))
    # counter-clockwise and not degenerate
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    p[area < 0] = p[area < 0][:, [0, 2, 1]]
    p = p[np.abs(area) > 1e-3]
    return p.reshape(-1, 2), np.arange(len(p) * 3).reshape(-1, 3)


def test_cython_backend_built():
    assert "cython" in IMPLS
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_known_areas(name):
    impl = IMPLS[name]
    v = np.array([[-10.0, -10.0], [10.0, -10.0], [0.0, 10.0], [3.0, 3.0], [4.0, 3.0], [3.0, 4.0]])
    t = np.array([[0, 1, 2], [3, 4, 5]])
    a = kernels.tri_disk_areas(v, t, (0.0, 0.0), 0.5, impl=impl)
    assert a[0] == pytest.approx(math.pi * 0.25, rel=1e-13)
    assert a[1] == 0.0
    big = kernels.tri_disk_areas(v, t, (3.2, 3.2), 50.0, impl=impl)
    assert big[1] == pytest.approx(0.5, rel=1e-13)


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_far_triangles_are_exact_zero(name, rng):
    v, t = random_triangles(rng, 200)
    a = kernels.tri_disk_areas(v + 100.0, t, (0.0, 0.0), 1e-3, impl=IMPLS[name])
    assert np.all(a == 0.0)


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_arcs_cover_circle(name):
    # a fan of triangles around the centre covers the whole circle
    n = 12
    ang = 2 * math.pi * np.arange(n) / n
    v = np.vstack([[0.0, 0.0], np.stack([np.cos(ang), np.sin(ang)], 1) * 2.0])
    t = np.array([[0, 1 + k, 1 + (k + 1) % n] for k in range(n)])
    owner, p0, p1 = kernels.tri_circle_arcs(v, t, (0.0, 0.0), 1.0, impl=IMPLS[name])
    assert np.sum(p1 - p0) == pytest.approx(2 * math.pi, rel=1e-13)
    assert np.all(p1 > p0) and np.all(p0 > -math.pi - 1e-15) and np.all(p0 <= math.pi)
    assert sorted(set(owner.tolist())) == list(range(n))


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(0.05, 1.5), st.floats(-0.5, 0.5))
def test_backends_agree(seed, r, cx):
    if len(IMPLS) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(seed)
    v, t = random_triangles(rng, 40)
    c = (cx, 0.3 * cx)
    a_py = kernels.tri_disk_areas(v, t, c, r, impl=IMPLS["python"])
    a_cy = kernels.tri_disk_areas(v, t, c, r, impl=IMPLS["cython"])
    assert np.abs(a_py - a_cy).max() <= 1e-14
    e1, e2 = v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert np.all(a_py >= -1e-15) and np.all(a_py <= area * (1 + 1e-12))
    o1, s1, e1 = kernels.tri_circle_arcs(v, t, c, r, impl=IMPLS["python"])
    o2, s2, e2 = kernels.tri_circle_arcs(v, t, c, r, impl=IMPLS["cython"])
    assert np.array_equal(o1, o2)
    assert np.abs(s1 - s2).max(initial=0) <= 1e-14 and np.abs(e1 - e2).max(initial=0) <= 1e-14


def test_area_additivity_on_mesh(straight_mesh):
    a = kernels.tri_disk_areas(straight_mesh.vertices, straight_mesh.triangles, (0.05, -0.02), 0.37)
    assert a.sum() == pytest.approx(math.pi * 0.37**2, rel=1e-13)
