import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import raymarch_shadow
from relightkit.geometry import (
    CameraIntrinsics,
    GeometryError,
    ShadowConfig,
    cast_shadow_mask,
    degrade_depth,
    grid_triangles,
    light_frame,
    normals_from_depth,
    project,
    shadow_encode,
    silhouette_band,
    to_light_space,
    unproject,
)

unit_vec = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_unproject_project_round_trip():
    K = CameraIntrinsics.default(16, 12, 0.8)
    d = np.random.default_rng(0).uniform(0.3, 1.0, (12, 16))
    p = unproject(d, K)
    assert np.allclose(p[2], d)
    u, v = project(p, K)
    vv, uu = np.mgrid[0:12, 0:16]
    assert np.allclose(u, uu) and np.allclose(v, vv)
    assert np.allclose(p[:, 6, 7], [(7 - 7.5) / 12.8 * d[6, 7], (6 - 5.5) / 12.8 * d[6, 7], d[6, 7]])


def test_camera_validation():
    with pytest.raises(GeometryError):
        CameraIntrinsics(0, 1, 1, 1, 4, 4)
    with pytest.raises(GeometryError):
        CameraIntrinsics(1, 1, 5, 1, 4, 4)
    with pytest.raises(GeometryError):
        unproject(-np.ones((4, 4)), CameraIntrinsics.default(4))


def test_normals_of_planes():
    K = CameraIntrinsics.default(32)
    p = unproject(np.full((32, 32), 0.7), K)
    n = normals_from_depth(p)
    assert np.allclose(n, np.array([0, 0, -1.0])[:, None, None])
    # tilted plane n.p = c with unit normal facing the camera
    true_n = np.array([0.3, -0.2, -1.0])
    true_n /= np.linalg.norm(true_n)
    rays = K.rays()
    depth = -0.6 / np.einsum("i,ihw->hw", true_n, rays)
    n = normals_from_depth(unproject(depth, K))
    assert np.allclose(n, true_n[:, None, None], atol=1e-9)


def test_normals_near_invalid():
    K = CameraIntrinsics.default(16)
    d = np.full((16, 16), 0.5)
    d[5:8, 5:8] = 0
    n = normals_from_depth(unproject(d, K))
    assert np.isfinite(n).all()
    assert np.allclose(np.linalg.norm(n, axis=0), 1)


@settings(max_examples=200)
@given(unit_vec)
def test_light_frame_properties(w):
    w = np.array(w) / np.linalg.norm(w)
    R = light_frame(w)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert np.allclose(R[:, 2], w, atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    assert np.array_equal(R, light_frame(w.copy()))


def test_light_frame_axes():
    for w in np.eye(3):
        R = light_frame(w)
        assert np.allclose(R.T @ R, np.eye(3)) and np.allclose(R[:, 2], w)
    with pytest.raises(GeometryError):
        light_frame((0, 0, 0))


def test_shadow_encode_isometry():
    rng = np.random.default_rng(1)
    p = rng.uniform(-1, 1, (3, 10, 10))
    p[2] = np.abs(p[2]) + 0.1
    w = rng.standard_normal(3)
    e = shadow_encode(p, w)
    a, b = p.reshape(3, -1), e.reshape(3, -1)
    da = np.linalg.norm(a[:, :, None] - a[:, None, :], axis=0)
    db = np.linalg.norm(b[:, :, None] - b[:, None, :], axis=0)
    assert np.abs(da - db).max() < 1e-9
    ls = to_light_space(p, w)
    assert np.allclose(ls[2], np.einsum("i,ihw->hw", w / np.linalg.norm(w), p))
    assert np.allclose(e - ls, np.array([0, 0, 1.0])[:, None, None])
    p[:, 2, 3] = 0
    assert not shadow_encode(p, w)[:, 2, 3].any()


def test_grid_triangles():
    valid = np.ones((3, 3), bool)
    assert len(grid_triangles(valid)) == 8
    valid[1, 1] = False
    assert len(grid_triangles(valid)) == 2
    tris = grid_triangles(np.ones((2, 2), bool))
    assert sorted(map(sorted, tris.tolist())) == [[0, 1, 3], [0, 2, 3]]


def test_plane_is_fully_lit():
    K = CameraIntrinsics.default(32)
    p = unproject(np.full((32, 32), 0.8), K)
    for w in [(0, 0, 1), (0.5, 0.3, 0.8), (-0.6, 0.1, 0.3)]:
        assert cast_shadow_mask(p, w).all()


def test_plane_lit_from_behind_is_dark():
    K = CameraIntrinsics.default(16)
    p = unproject(np.full((16, 16), 0.8), K)
    assert not cast_shadow_mask(p, (0.2, 0.1, -0.9)).any()


def test_step_shadow_matches_raymarch():
    # a raised block casts a shadow onto the floor on the far side from the light
    K = CameraIntrinsics.default(48)
    d = np.full((48, 48), 0.9)
    d[16:32, 16:32] = 0.6
    w = np.array([0.6, 0.0, 0.8])
    m = cast_shadow_mask(unproject(d, K), w)[0]
    ref = raymarch_shadow(d, K.fx, K.fy, K.cx, K.cy, w)
    band = silhouette_band(d)
    assert (m == ref)[~band].mean() > 0.99
    assert not m[24, 34:40].all() and m[24, 5:12].all()


def test_shadow_mask_invalid_pixels_and_shape():
    K = CameraIntrinsics.default(16)
    d = np.full((16, 16), 0.5)
    d[:, :3] = 0
    m = cast_shadow_mask(unproject(d, K), (0, 0, 1))
    assert m.shape == (1, 16, 16) and m.dtype.kind == "f"
    assert not m[0, :, :3].any()


def test_shadow_mask_resolution_insensitive_on_smooth_terrain():
    K = CameraIntrinsics.default(48)
    v, u = np.mgrid[0:48, 0:48] / 48
    d = 0.9 - 0.25 * np.exp(-((u - 0.5) ** 2 + (v - 0.5) ** 2) / 0.02)
    p = unproject(d, K)
    w = (0.7, 0.2, 0.5)
    a = cast_shadow_mask(p, w, ShadowConfig(resolution_multiplier=1.0))
    b = cast_shadow_mask(p, w, ShadowConfig(resolution_multiplier=4.0))
    assert (a == b).mean() > 0.99


def test_silhouette_band():
    d = np.full((8, 8), 0.5)
    d[:, 4:] = 0.8
    band = silhouette_band(d)
    assert band[:, 3:5].all() and not band[:, :3].any() and not band[:, 5:].any()


def test_degrade_depth():
    d = np.full((32, 32), 0.5)
    d[0, 0] = 0
    a = degrade_depth(d, 7)
    assert np.array_equal(a, degrade_depth(d, 7))
    assert not np.array_equal(a, degrade_depth(d, 8))
    assert a[0, 0] == 0 and (a >= 0).all() and (a <= 1).all()
    # the blur shrinks per-pixel noise well below sigma
    assert 0.005 < a[2:-2, 2:-2].std() < 0.0625
    assert np.array_equal(degrade_depth(d, 7, sigma=0, blur_sigma=0), d)
