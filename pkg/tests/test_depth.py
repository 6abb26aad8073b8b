import numpy as np
import pytest

from regkit.depth import (
    DepthImage,
    PinholeIntrinsics,
    depth_to_pointcloud,
    mask_visibility_ratio,
    read_depth_png,
    read_intrinsics_json,
    render_depth,
    write_depth_png,
    write_intrinsics_json,
)
from regkit.geometry import RigidTransform, rotation_about_axis
from regkit.mesh import TriangleMesh, make_box, make_widget

K = PinholeIntrinsics(fx=300.0, fy=300.0, cx=32.0, cy=24.0, depth_scale=0.001)


def image_with(pixels, width=65, height=49):
    data = np.zeros((height, width), dtype=np.uint16)
    for (v, u), d in pixels.items():
        data[v, u] = d
    return DepthImage(data)


def square_mesh(side=1.0, z=0.0):
    h = side / 2.0
    verts = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    return TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))


# ---------------------------------------------------------------------------
# back-projection
# ---------------------------------------------------------------------------

def test_principal_point_backprojection():
    img = image_with({(24, 32): 1000})
    pc = depth_to_pointcloud(img, K)
    assert len(pc) == 1
    assert np.allclose(pc.points[0], [0.0, 0.0, 1.0])


def test_all_invalid_gives_empty_cloud():
    img = image_with({})
    assert len(depth_to_pointcloud(img, K)) == 0


def test_projection_formula_one_focal_length_off_axis():
    # pixel one focal length right of the principal point at 1 m depth
    k = PinholeIntrinsics(fx=10.0, fy=10.0, cx=5.0, cy=5.0, depth_scale=0.001)
    img = DepthImage(np.zeros((20, 20), dtype=np.uint16))
    data = np.array(img.data)
    data[5, 15] = 1000  # u - cx = 10 = fx
    pc = depth_to_pointcloud(DepthImage(data), k)
    assert np.allclose(pc.points[0], [1.0, 0.0, 1.0])


def test_mask_filters_pixels():
    img = image_with({(24, 32): 1000, (10, 10): 500})
    mask = np.zeros((49, 65), dtype=bool)
    mask[24, 32] = True
    pc = depth_to_pointcloud(img, K, mask)
    assert len(pc) == 1


def test_mask_dimension_mismatch():
    img = image_with({(24, 32): 1000})
    with pytest.raises(ValueError):
        depth_to_pointcloud(img, K, np.ones((2, 2), dtype=bool))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def test_render_square_center_depth():
    mesh = square_mesh(side=1.0)
    pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, 2.0]))
    img = render_depth(mesh, pose, K, width=65, height=49)
    center = img.data[24, 32]
    assert abs(int(center) - 2000) <= 1  # within one depth unit of 2 m


def test_render_mesh_behind_camera():
    mesh = square_mesh(z=-3.0)
    pose = RigidTransform.identity()
    img = render_depth(mesh, pose, K, width=65, height=49)
    assert np.all(img.data == 0)


def test_render_nearest_surface_wins():
    near = square_mesh(side=2.0, z=0.0)
    far = square_mesh(side=2.0, z=0.5)
    mesh = TriangleMesh(
        np.vstack([near.vertices, far.vertices]),
        np.vstack([near.faces, far.faces + 4]),
    )
    pose = RigidTransform(np.eye(3), np.array([0.0, 0.0, 2.0]))
    img = render_depth(mesh, pose, K, width=65, height=49)
    assert abs(int(img.data[24, 32]) - 2000) <= 1


def test_render_backproject_round_trip_on_surface():
    # every reconstructed point must lie within half a quantization step of
    # the posed surface (paraxial camera, fronto-parallel planes)
    mesh = make_box((0.8, 0.6, 0.4))
    pose = RigidTransform(rotation_about_axis(2, 0.0), np.array([0.0, 0.0, 2.5]))
    k = PinholeIntrinsics(fx=400.0, fy=400.0, cx=32.0, cy=32.0, depth_scale=0.001)
    img = render_depth(mesh, pose, k, width=65, height=65)
    assert np.any(img.data > 0)
    pc = depth_to_pointcloud(img, k)

    tri = mesh.triangles() @ pose.rotation.T + pose.translation
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    normals = normals[norms > 0] / norms[norms > 0, None]
    offsets = np.einsum("fi,fi->f", normals, tri[norms > 0, 0])
    plane_dist = np.abs(pc.points @ normals.T - offsets).min(axis=1)
    assert plane_dist.max() <= 0.5 * k.depth_scale + 1e-12


def test_render_rotated_widget_has_hits_and_valid_round_trip():
    mesh = make_widget(3)
    pose = RigidTransform(rotation_about_axis(1, 30.0), np.array([0.0, 0.0, 4.0]))
    k = PinholeIntrinsics(fx=200.0, fy=200.0, cx=48.0, cy=48.0, depth_scale=0.001)
    img = render_depth(mesh, pose, k, width=97, height=97)
    pc = depth_to_pointcloud(img, k)
    assert len(pc) > 100
    assert pc.points[:, 2].min() > 2.0


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def test_depth_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.integers(0, 50_000, size=(24, 32), dtype=np.uint16)
    img = DepthImage(data)
    path = tmp_path / "depth.png"
    write_depth_png(img, path)
    back = read_depth_png(path)
    assert np.array_equal(back.data, data)


def test_intrinsics_json_round_trip(tmp_path):
    path = tmp_path / "depth.json"
    write_intrinsics_json(K, path)
    back = read_intrinsics_json(path)
    assert back == K


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        PinholeIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)
    with pytest.raises(ValueError):
        PinholeIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, depth_scale=0.0)


def test_visibility_ratio():
    full = np.zeros((4, 4), dtype=bool)
    full[:2, :2] = True
    visible = np.zeros((4, 4), dtype=bool)
    visible[0, :2] = True
    assert mask_visibility_ratio(visible, full) == pytest.approx(0.5)
    assert mask_visibility_ratio(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 0.0
