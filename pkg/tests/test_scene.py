import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lodsplat as L
from lodsplat.errors import InvariantError, ParameterError, SceneFormatError
from lodsplat.scene import (
    Aabb,
    Camera,
    Gaussian,
    LodNode,
    LodTree,
    Visibility,
    evaluate_view,
    frustum_planes,
    look_at_quat,
    mat_to_quat,
    quat_to_mat,
)

from conftest import chain_tree, fanout_tree, scene_views, trees

unit_quats = st.builds(
    lambda v: v / np.linalg.norm(v),
    st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=4, max_size=4)
    .map(np.array)
    .filter(lambda v: np.linalg.norm(v) > 1e-3),
)


def axis_camera(pos=(0.0, 0.0, 0.0), width=64, height=64, focal=50.0, near=0.1, far=100.0):
    """Camera at ``pos`` looking down +z with identity orientation."""
    return Camera(
        position=np.array(pos),
        orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        focal=focal,
        width=width,
        height=height,
        near=near,
        far=far,
    )


def box(lo, hi) -> Aabb:
    return Aabb(np.array(lo, dtype=np.float64), np.array(hi, dtype=np.float64))


# --- rotations ---------------------------------------------------------------


@given(unit_quats)
def test_quat_mat_round_trip(q):
    m = quat_to_mat(q)
    q2 = mat_to_quat(m)
    # q and -q encode the same rotation; compare matrices
    assert np.allclose(quat_to_mat(q2), m, atol=1e-9)


@given(unit_quats)
def test_quat_to_mat_is_orthonormal(q):
    m = quat_to_mat(q)
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-9)


# --- tree construction -------------------------------------------------------


def test_tree_rejects_sparse_nids():
    g = Gaussian(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]), 0.5, np.zeros(3))
    with pytest.raises(InvariantError, match="dense"):
        LodTree([LodNode(1, g, None, ())])


def test_tree_rejects_unreachable_node():
    g = Gaussian(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]), 0.5, np.zeros(3))
    nodes = [
        LodNode(0, g, None, ()),
        LodNode(1, Gaussian(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]), 0.5, np.zeros(3)), 0, ()),
    ]
    # node 1 claims parent 0 but 0 does not list it
    with pytest.raises(InvariantError):
        LodTree(nodes)


def test_tree_rejects_bad_opacity():
    g = Gaussian(np.zeros(3), np.ones(3), np.array([1.0, 0, 0, 0]), 1.5, np.zeros(3))
    with pytest.raises(InvariantError, match="opacity"):
        LodTree([LodNode(0, g, None, ())])


def test_tree_rejects_denormalized_rotation():
    g = Gaussian(np.zeros(3), np.ones(3), np.array([2.0, 0, 0, 0]), 0.5, np.zeros(3))
    with pytest.raises(InvariantError, match="rotation norm"):
        LodTree([LodNode(0, g, None, ())])


def test_tree_rejects_nonpositive_scale():
    g = Gaussian(np.zeros(3), np.array([1.0, 0.0, 1.0]), np.array([1.0, 0, 0, 0]), 0.5, np.zeros(3))
    with pytest.raises(InvariantError, match="scale"):
        LodTree([LodNode(0, g, None, ())])


@given(trees(max_budget=200))
@settings(max_examples=30, deadline=None)
def test_child_boxes_nest_inside_parents(tree):
    lo, hi = tree._aabb_lo, tree._aabb_hi
    for nd in tree.nodes:
        for c in nd.children:
            assert (lo[nd.nid] <= lo[c] + 1e-12).all()
            assert (hi[nd.nid] >= hi[c] - 1e-12).all()


def test_generator_is_deterministic():
    a = L.gen_synthetic_tree(seed=9, node_budget=150)
    b = L.gen_synthetic_tree(seed=9, node_budget=150)
    assert a.node_count == b.node_count
    assert np.array_equal(a._means, b._means)
    assert np.array_equal(a._quats, b._quats)
    assert [nd.children for nd in a.nodes] == [nd.children for nd in b.nodes]


def test_generator_rejects_bad_params():
    with pytest.raises(ParameterError):
        L.gen_synthetic_tree(seed=0, node_budget=0)
    with pytest.raises(ParameterError):
        L.gen_synthetic_tree(seed=0, node_budget=10, shrink_factor=1.0)
    with pytest.raises(ParameterError):
        L.gen_synthetic_tree(seed=0, node_budget=10, max_children=0)


# --- view math ---------------------------------------------------------------


def test_frustum_axis_aligned_cases():
    cam = axis_camera()
    # squarely in front
    assert L.frustum_test(box([-0.1, -0.1, 5.0], [0.1, 0.1, 6.0]), cam) == Visibility.VISIBLE
    # behind the camera
    assert L.frustum_test(box([-0.1, -0.1, -6.0], [0.1, 0.1, -5.0]), cam) == Visibility.OUTSIDE
    # far off to the side
    assert L.frustum_test(box([500.0, -0.1, 5.0], [501.0, 0.1, 6.0]), cam) == Visibility.OUTSIDE
    # past the far plane
    assert L.frustum_test(box([-0.1, -0.1, 150.0], [0.1, 0.1, 160.0]), cam) == Visibility.OUTSIDE
    # straddling the near plane still counts as visible
    assert L.frustum_test(box([-0.1, -0.1, -1.0], [0.1, 0.1, 1.0]), cam) == Visibility.VISIBLE


def test_frustum_planes_point_inward():
    cam = axis_camera(pos=(3.0, -2.0, 1.0))
    planes = frustum_planes(cam)
    # a point straight ahead of the camera is inside all six planes
    p = cam.position + np.array([0.0, 0.0, 10.0])
    assert (planes[:, :3] @ p + planes[:, 3] >= 0).all()


def test_projected_size_formula():
    cam = axis_camera(focal=100.0)
    tree = chain_tree(1)
    tree.nodes[0].gaussian.mean = np.array([0.0, 0.0, 10.0])
    tree.nodes[0].gaussian.scale = np.array([0.5, 0.2, 0.1])
    tree._build_columns()
    # 6 * max_scale * focal / depth
    assert L.projected_size(tree.nodes[0], cam) == pytest.approx(6 * 0.5 * 100.0 / 10.0)


def test_projected_size_clamps_at_near():
    cam = axis_camera(focal=100.0, near=0.5)
    tree = chain_tree(1)
    tree.nodes[0].gaussian.mean = np.array([0.0, 0.0, 0.01])
    tree._build_columns()
    expected = 6 * float(tree._max_scale[0]) * 100.0 / 0.5
    assert L.projected_size(tree.nodes[0], cam) == pytest.approx(expected)


def test_visible_node_behind_camera_gets_infinite_size():
    # center behind the camera but the box straddles the origin, so it
    # still intersects the frustum; selection must refuse to stop here
    cam = axis_camera()
    tree = chain_tree(1)
    tree.nodes[0].gaussian.mean = np.array([0.0, 0.0, -1.0])
    tree._build_columns()
    ve = evaluate_view(tree, cam)
    assert not ve.outside[0]
    assert np.isinf(ve.proj[0])


# --- oracle cut --------------------------------------------------------------


def test_oracle_requires_positive_epsilon(small_tree, small_camera):
    with pytest.raises(ParameterError):
        L.oracle_cut(small_tree, small_camera, 0.0)


def test_oracle_single_leaf_root():
    tree = chain_tree(1)
    cam = L.orbit_camera(tree, 0.5, 0.2, 2.0)
    assert L.oracle_cut(tree, cam, 1e-6) == [0]


def test_oracle_coarse_epsilon_selects_root(small_tree, small_camera):
    assert L.oracle_cut(small_tree, small_camera, 1e9) == [small_tree.root]


def test_oracle_culled_scene_is_empty():
    tree = chain_tree(3)
    cam = axis_camera()
    # whole scene behind the camera
    for nd in tree.nodes:
        nd.gaussian.mean = np.array([0.0, 0.0, -10.0 - nd.nid])
    tree._build_columns()
    assert L.oracle_cut(tree, cam, 4.0) == []


@given(scene_views())
@settings(max_examples=40, deadline=None)
def test_oracle_cut_is_an_antichain(view):
    tree, cam, eps = view
    cut = set(L.oracle_cut(tree, cam, eps))
    for nid in cut:
        p = tree.nodes[nid].parent
        while p is not None:
            assert p not in cut, f"{nid} and its ancestor {p} both selected"
            p = tree.nodes[p].parent


@given(scene_views())
@settings(max_examples=40, deadline=None)
def test_oracle_selects_refined_visible_nodes(view):
    tree, cam, eps = view
    ev = evaluate_view(tree, cam)
    for nid in L.oracle_cut(tree, cam, eps):
        assert not ev.outside[nid]
        # selected nodes either meet the threshold or are true leaves,
        # and every ancestor was too coarse to stop at
        assert ev.proj[nid] <= eps or not tree.nodes[nid].children
        p = tree.nodes[nid].parent
        while p is not None:
            assert ev.proj[p] > eps
            p = tree.nodes[p].parent


# --- scene and camera serialization ------------------------------------------


@given(tree=trees(max_budget=120))
@settings(max_examples=15, deadline=None)
def test_scene_json_round_trip(tmp_path_factory, tree):
    path = tmp_path_factory.mktemp("scene") / "s.json"
    L.save_scene(tree, str(path))
    back = L.load_scene(str(path))
    assert back.root == tree.root
    assert back.node_count == tree.node_count
    assert np.array_equal(back._means, tree._means)
    assert np.array_equal(back._scales, tree._scales)
    assert np.array_equal(back._quats, tree._quats)
    assert np.array_equal(back._opacity, tree._opacity)
    assert [nd.children for nd in back.nodes] == [nd.children for nd in tree.nodes]


def test_load_scene_rejects_bad_format(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"format": "other/9", "root": 0, "nodes": [{}]}))
    with pytest.raises(SceneFormatError, match="format"):
        L.load_scene(str(p))


def test_load_scene_rejects_missing_keys(tmp_path):
    p = tmp_path / "bad.json"
    doc = {"format": "lodscene/1", "root": 0, "nodes": [{"nid": 0}]}
    p.write_text(json.dumps(doc))
    with pytest.raises(SceneFormatError, match="missing"):
        L.load_scene(str(p))


def test_load_scene_rejects_duplicate_nid(tmp_path, small_tree):
    p = tmp_path / "s.json"
    L.save_scene(small_tree, str(p))
    doc = json.loads(p.read_text())
    doc["nodes"][1]["nid"] = 0
    p.write_text(json.dumps(doc))
    with pytest.raises(InvariantError, match="twice"):
        L.load_scene(str(p))


def test_load_scene_rejects_dangling_parent(tmp_path, small_tree):
    p = tmp_path / "s.json"
    L.save_scene(small_tree, str(p))
    doc = json.loads(p.read_text())
    doc["nodes"][1]["parent"] = 10_000
    p.write_text(json.dumps(doc))
    with pytest.raises(InvariantError, match="parent"):
        L.load_scene(str(p))


def test_load_scene_rejects_garbage(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{not json")
    with pytest.raises(SceneFormatError, match="line"):
        L.load_scene(str(p))


def test_camera_round_trip(tmp_path, small_camera):
    p = tmp_path / "cam.json"
    L.save_camera(small_camera, str(p))
    back = L.load_camera(str(p))
    assert np.array_equal(back.position, small_camera.position)
    assert np.array_equal(back.orientation, small_camera.orientation)
    assert back.focal == small_camera.focal
    assert (back.width, back.height) == (small_camera.width, small_camera.height)
    assert (back.near, back.far) == (small_camera.near, small_camera.far)


def test_camera_validation():
    with pytest.raises(InvariantError):
        axis_camera(near=0.0)
    with pytest.raises(InvariantError):
        Camera(np.zeros(3), np.array([1.0, 0, 0, 0]), -1.0, 64, 64, 0.1, 10.0)


def test_look_at_points_camera_at_target():
    eye = np.array([1.0, 2.0, 3.0])
    target = np.array([-4.0, 0.5, 7.0])
    q = look_at_quat(eye, target)
    fwd = quat_to_mat(q)[2]
    expect = (target - eye) / np.linalg.norm(target - eye)
    assert np.allclose(fwd, expect, atol=1e-12)


def test_orbit_camera_faces_scene_center(small_tree):
    cam = L.orbit_camera(small_tree, 1.1, 0.4, 2.5)
    center = (small_tree._aabb_lo[small_tree.root] + small_tree._aabb_hi[small_tree.root]) / 2
    fwd = cam.rotation()[2]
    to_center = center - cam.position
    to_center /= np.linalg.norm(to_center)
    assert np.allclose(fwd, to_center, atol=1e-9)


def test_fanout_tree_helper_builds():
    tree = fanout_tree([3, 2])
    assert tree.node_count == 1 + 3 + 6
    assert len(tree.nodes[0].children) == 3
