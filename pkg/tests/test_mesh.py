import json

import networkx as nx
import numpy as np
import pytest

from cracktip.geometry import BallSpec, make_crack
from cracktip.mesh import MeshConfig, MeshError, Triangulation, mesh_disk_with_crack, refine_uniform, validate


def dual_graph(T: Triangulation) -> nx.Graph:
    """Triangles joined across shared edges (slit faces are not shared)."""
    G = nx.Graph()
    G.add_nodes_from(range(T.n_triangles))
    owner = {}
    for t, tri in enumerate(T.triangles.tolist()):
        for k in range(3):
            e = tuple(sorted((tri[k], tri[(k + 1) % 3])))
            if e in owner:
                G.add_edge(owner[e], t)
            else:
                owner[e] = t
    return G


@pytest.fixture(scope="module")
def diameter_mesh(diameter_crack):
    return mesh_disk_with_crack(diameter_crack, MeshConfig(target_h=0.15))


def test_straight_mesh_valid(straight_mesh):
    rep = validate(straight_mesh)
    assert rep.passed, str(rep)
    assert straight_mesh.min_angles().min() >= 20.0
    assert straight_mesh.tip is not None


@pytest.mark.parametrize(
    "generator,params",
    [
        ("polyline", {"vertices": [(-0.8, -0.6), (-0.3, 0.0), (0.0, 0.0)]}),
        ("spiral", {"t_min": 0.01, "t_max": 0.6, "vertex_count": 64}),
        ("two_scale", {"q": {"base": 4.0, "power": 1.0, "scale": 0.5}, "depth": 1}),
    ],
)
def test_generators_mesh_valid(generator, params):
    K = make_crack(generator, **params)
    T = mesh_disk_with_crack(K, MeshConfig(target_h=0.15))
    assert validate(T).passed, str(validate(T))


def test_no_crack_mesh():
    T = mesh_disk_with_crack(None, MeshConfig(target_h=0.2))
    assert validate(T).passed
    assert len(T.slit_pairs) == 0


def test_swapped_orientation_detected(straight_mesh):
    tris = straight_mesh.triangles.copy()
    tris[5] = tris[5, [0, 2, 1]]
    bad = Triangulation(straight_mesh.vertices.copy(), tris, straight_mesh.markers,
                        straight_mesh.slit_pairs.copy(), straight_mesh.crack_segments.copy(),
                        straight_mesh.domain)
    rep = validate(bad)
    assert rep.failures()["orientation"] == [5]


def test_merged_slit_detected(straight_mesh):
    T = straight_mesh
    tris = T.triangles.copy()
    remap = np.arange(T.n_vertices)
    remap[T.slit_pairs[:, 1]] = T.slit_pairs[:, 0]
    bad = Triangulation(T.vertices.copy(), remap[tris], T.markers, T.slit_pairs.copy(),
                        T.crack_segments.copy(), T.domain)
    assert "slit_connectivity" in validate(bad).failures()


def test_grading_toward_tip(straight_crack):
    cfg = MeshConfig(target_h=0.1, tip_grading_exponent=0.7, min_h=2e-5)
    T = mesh_disk_with_crack(straight_crack, cfg)
    assert T.tip_size() <= 4 * cfg.min_h
    d = np.linalg.norm(T.centroids(), axis=1)
    L = T.edge_lengths().max(axis=1)
    far = d > 0.5
    assert L[far].max() <= 2.0 * cfg.target_h


def test_refinement_growth(graded_meshes):
    T0, T1 = graded_meshes
    ratio = T1.n_vertices / T0.n_vertices
    assert 3.0 <= ratio <= 5.0
    assert T1.n_triangles == 4 * T0.n_triangles
    assert validate(T1).passed
    assert T1.tip_size() == pytest.approx(T0.tip_size() / 2, rel=1e-9)
    # boundary vertices stay on the circle
    R = np.linalg.norm(T1.vertices[T1.markers["outer"]], axis=1)
    assert np.abs(R - 1.0).max() < 1e-14


def test_diameter_separates_disk(diameter_mesh):
    assert validate(diameter_mesh).passed
    G = dual_graph(diameter_mesh)
    assert nx.number_connected_components(G) == 2
    # the two components are the upper and lower half disks
    for comp in nx.connected_components(G):
        y = diameter_mesh.centroids()[list(comp), 1]
        assert np.all(y > 0) or np.all(y < 0)


def test_straight_crack_dual_connected(straight_mesh):
    assert nx.number_connected_components(dual_graph(straight_mesh)) == 1


def test_deterministic_and_json_round_trip(straight_crack):
    cfg = MeshConfig(target_h=0.2)
    a = mesh_disk_with_crack(straight_crack, cfg)
    b = mesh_disk_with_crack(straight_crack, cfg)
    assert a.to_json() == b.to_json()
    c = Triangulation.from_dict(json.loads(a.to_json()))
    assert np.array_equal(c.vertices, a.vertices)
    assert np.array_equal(c.triangles, a.triangles)
    assert c.to_json() == a.to_json()


def test_crack_outside_domain_rejected():
    K = make_crack("segment", endpoints=[(-0.2, 0.0), (0.0, 0.0)])
    cfg = MeshConfig(target_h=0.1, domain=BallSpec((3.0, 0.0), 1.0))
    with pytest.raises((MeshError, ValueError)):
        mesh_disk_with_crack(K, cfg)


@pytest.mark.parametrize("kw", [{"target_h": 0.0}, {"target_h": 0.1, "min_h": 0.5},
                                {"target_h": 0.1, "tip_grading_exponent": 1.5}])
def test_bad_config(kw):
    with pytest.raises(ValueError):
        MeshConfig(**kw)


def test_empty_crack_area():
    T = mesh_disk_with_crack(None, MeshConfig(target_h=0.1))
    assert abs(T.areas().sum() - np.pi) / np.pi <= 1e-3
    fine = mesh_disk_with_crack(None, MeshConfig(target_h=0.1, boundary_h=1e-3))
    assert abs(fine.areas().sum() - np.pi) / np.pi <= 1e-6


def test_straight_crack_slit_structure(straight_mesh):
    T = straight_mesh
    crack = T.markers["crack_left"]
    outer = set(T.markers["outer"].tolist())
    interior = [i for i in crack.tolist() if i != T.tip and i not in outer]
    assert len(T.slit_pairs) >= len(interior)
    assert set(interior) <= set(T.slit_pairs[:, 0].tolist())
    assert T.tip not in T.slit_pairs[:, 1].tolist()
    assert np.allclose(T.vertices[T.tip], 0.0)


def test_halving_target_h_growth(straight_crack):
    a = mesh_disk_with_crack(straight_crack, MeshConfig(target_h=0.1))
    b = mesh_disk_with_crack(straight_crack, MeshConfig(target_h=0.05))
    assert 3.0 <= b.n_vertices / a.n_vertices <= 5.0
