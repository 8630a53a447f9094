"""Camera model, point images, the light-aligned frame and cast shadows.

Point images are ``(3, H, W)`` arrays of camera-space coordinates (x right,
y down, z along the optical axis). A pixel with depth 0 is invalid; its point
is stored as the origin and stays zero through every transform.

A depth map is interpreted as a triangle mesh over the pixel grid: each
2x2 block of valid pixels forms two triangles split along the diagonal from
the top-left to the bottom-right pixel. Cast shadows are computed against
this surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import ShapeError

NOISE_SIGMA = 6.25e-2
BLUR_SIGMA = 1.0
ENCODE_SHIFT = np.array([0.0, 0.0, 1.0])


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @classmethod
    def default(cls, width, height=None, focal_ratio=1.0):
        """Centered principal point and square pixels, ``fx = focal_ratio * width``."""
        height = width if height is None else height
        f = focal_ratio * width
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    def rays(self):
        """Per-pixel ray directions scaled to unit z, shape ``(3, H, W)``."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)])


def _depth_plane(depth):
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        d = d[0]
    if d.ndim != 2:
        raise ShapeError(f"depth must be (H, W) or (1, H, W), got {d.shape}")
    return d


def valid_mask(points) -> np.ndarray:
    return np.asarray(points)[2] > 0


def unproject(depth, K: CameraIntrinsics) -> np.ndarray:
    """Lift a z-depth map to camera-space points; invalid pixels map to the origin."""
    d = _depth_plane(depth)
    if d.shape != (K.height, K.width):
        raise ShapeError(f"depth {d.shape} does not match camera {K.height}x{K.width}")
    if np.any(d < 0):
        raise GeometryError("negative depth")
    return K.rays() * d


def project(points, K: CameraIntrinsics):
    """Pixel coordinates ``(u, v)`` of camera-space points."""
    p = np.asarray(points, dtype=np.float64)
    return K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy


def _fill_invalid(field, bad):
    if not bad.any():
        return field
    if bad.all():
        raise GeometryError("no valid normals")
    _, (iy, ix) = ndimage.distance_transform_edt(bad, return_indices=True)
    return field[:, iy, ix]


def normals_from_depth(points) -> np.ndarray:
    """Unit normals from central-difference tangents, oriented toward the camera."""
    p = np.asarray(points, dtype=np.float64)
    valid = valid_mask(p)
    tu = np.gradient(p, axis=2)
    tv = np.gradient(p, axis=1)
    # one-sided differences next to invalid pixels
    n = np.cross(tu, tv, axis=0)
    norm = np.linalg.norm(n, axis=0)
    near_invalid = ~ndimage.binary_erosion(valid, np.ones((3, 3), bool), border_value=1)
    bad = (norm < 1e-12) | near_invalid
    n = n / np.where(bad, 1.0, norm)
    n = _fill_invalid(n, bad)
    flip = (n * -p).sum(axis=0) < 0
    n = np.where(flip, -n, n)
    return n / np.linalg.norm(n, axis=0)


def check_direction(omega) -> np.ndarray:
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(w)
    if not np.isfinite(norm) or norm < 1e-12:
        raise GeometryError("light direction must be non-zero")
    return w / norm


def light_frame(omega) -> np.ndarray:
    """Rotation ``R`` whose third column is ``omega``.

    The other two columns come from Gram-Schmidt on the two standard basis
    vectors least aligned with ``omega`` (ties broken by index), so equal
    inputs give bit-identical frames.
    """
    w = check_direction(omega)
    order = sorted(range(3), key=lambda i: (abs(w[i]), i))[:2]
    basis = np.eye(3)
    u1 = basis[order[0]] - basis[order[0]].dot(w) * w
    u1 /= np.linalg.norm(u1)
    u2 = basis[order[1]] - basis[order[1]].dot(w) * w - basis[order[1]].dot(u1) * u1
    u2 /= np.linalg.norm(u2)
    R = np.stack([u1, u2, w], axis=1)
    if np.linalg.det(R) < 0:
        R[:, 0] = -R[:, 0]
    return R


def to_light_space(points, omega) -> np.ndarray:
    """``R^T p`` per pixel; the third coordinate is depth along the light's travel."""
    R = light_frame(omega)
    return np.einsum("ji,jhw->ihw", R, np.asarray(points, dtype=np.float64))


def shadow_encode(points, omega) -> np.ndarray:
    """Shadow-encoding transform ``R^T p + (0, 0, 1)``; invalid pixels stay zero."""
    p = np.asarray(points, dtype=np.float64)
    out = to_light_space(p, omega) + ENCODE_SHIFT.reshape(3, 1, 1)
    return np.where(valid_mask(p), out, 0.0)


@dataclass
class ShadowConfig:
    resolution_multiplier: float = 2.0
    bias: float = 1e-3
    splat_radius: int = 0


def grid_triangles(valid: np.ndarray) -> np.ndarray:
    """Vertex indices ``(T, 3)`` of the pixel-grid mesh over valid pixels."""
    h, w = valid.shape
    idx = np.arange(h * w).reshape(h, w)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return tris[valid.ravel()[tris].all(axis=1)]


def _cell_ranges(lo, hi, origin, cell, n, pad):
    i0 = np.floor((lo - origin) / cell).astype(np.int64) - pad
    i1 = np.floor((hi - origin) / cell).astype(np.int64) + pad
    return np.clip(i0, 0, n - 1), np.clip(i1, 0, n - 1)


def cast_shadow_mask(points, omega, cfg: ShadowConfig | None = None) -> np.ndarray:
    """Hard cast-shadow mask ``(1, H, W)`` (1 = lit) for a directional light.

    Points and surface triangles are moved into the light frame, where the
    light is an orthographic camera looking along +z. Triangles are binned into
    a light-space grid (``resolution_multiplier * W`` cells across the
    footprint, footprints dilated by ``splat_radius`` cells). Each pixel then
    looks up the smallest light depth rendered at its own light-space position
    among the triangles sharing its cell, and is lit iff its own depth is no
    more than ``bias`` behind it.
    """
    cfg = cfg or ShadowConfig()
    p = np.asarray(points, dtype=np.float64)
    valid = valid_mask(p)
    if not valid.any():
        raise GeometryError("no valid points")
    h, w = valid.shape
    q = to_light_space(p, omega).reshape(3, -1)
    qx, qy, qz = q
    vid = np.flatnonzero(valid.ravel())

    tris = grid_triangles(valid)
    lit = np.ones(h * w, dtype=bool)
    if len(tris) == 0:
        return np.where(valid, 1.0, 0.0)[None]
    tx, ty, tz = qx[tris], qy[tris], qz[tris]
    # signed doubled area of the light-space projection
    det = (ty[:, 1] - ty[:, 2]) * (tx[:, 0] - tx[:, 2]) + (tx[:, 2] - tx[:, 1]) * (ty[:, 0] - ty[:, 2])

    x0, y0 = qx[vid].min(), qy[vid].min()
    ext = max(qx[vid].max() - x0, qy[vid].max() - y0, 1e-12)
    res = max(int(math.ceil(cfg.resolution_multiplier * w)), 1)
    cell = ext / res
    nx = int((qx[vid].max() - x0) / cell) + 1
    ny = int((qy[vid].max() - y0) / cell) + 1
    scale = float(np.abs(det).max()) if len(det) else 1.0
    keep = np.abs(det) > 1e-12 * scale
    tris, tx, ty, tz, det = tris[keep], tx[keep], ty[keep], tz[keep], det[keep]

    ix0, ix1 = _cell_ranges(tx.min(1), tx.max(1), x0, cell, nx, cfg.splat_radius)
    iy0, iy1 = _cell_ranges(ty.min(1), ty.max(1), y0, cell, ny, cfg.splat_radius)
    spans_x = ix1 - ix0 + 1
    counts = spans_x * (iy1 - iy0 + 1)
    tri_of = np.repeat(np.arange(len(tris)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cx = ix0[tri_of] + local % spans_x[tri_of]
    cy = iy0[tri_of] + local // spans_x[tri_of]
    tri_cell = cy * nx + cx

    px = np.clip(((qx[vid] - x0) / cell).astype(np.int64), 0, nx - 1)
    py = np.clip(((qy[vid] - y0) / cell).astype(np.int64), 0, ny - 1)
    pt_cell = py * nx + px
    order = np.argsort(pt_cell, kind="stable")
    per_cell = np.bincount(pt_cell, minlength=nx * ny)
    cell_start = np.cumsum(per_cell) - per_cell
    start = cell_start[tri_cell]
    n_pts = per_cell[tri_cell]
    pair_tri = np.repeat(tri_of, n_pts)
    offs = np.arange(n_pts.sum()) - np.repeat(np.cumsum(n_pts) - n_pts, n_pts)
    pair_pt = vid[order[np.repeat(start, n_pts) + offs]]

    own = (tris[pair_tri] == pair_pt[:, None]).any(axis=1)
    pair_tri, pair_pt = pair_tri[~own], pair_pt[~own]
    ax, ay, az = tx[pair_tri].T, ty[pair_tri].T, tz[pair_tri].T
    ptx, pty, ptz = qx[pair_pt], qy[pair_pt], qz[pair_pt]
    d = det[pair_tri]
    l1 = ((ay[1] - ay[2]) * (ptx - ax[2]) + (ax[2] - ax[1]) * (pty - ay[2])) / d
    l2 = ((ay[2] - ay[0]) * (ptx - ax[2]) + (ax[0] - ax[2]) * (pty - ay[2])) / d
    l3 = 1.0 - l1 - l2
    tol = 1e-9
    inside = (l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol)
    z_surf = l1 * az[0] + l2 * az[1] + l3 * az[2]
    blocked = inside & (z_surf < ptz - cfg.bias)
    lit[pair_pt[blocked]] = False
    lit &= ~_self_occluded(p, valid, omega).ravel()
    mask = (lit & valid.ravel()).reshape(h, w)
    return mask.astype(np.float64)[None]


# Neighbour offsets (drow, dcol) around a grid vertex, in increasing image angle
# (v axis down): E, SE, S, W, NW, N. Consecutive pairs span the six triangles
# that share the vertex.
_FAN = [(0, 1), (1, 1), (1, 0), (0, -1), (-1, -1), (-1, 0)]


def _shifted(a, dr, dc):
    """``a[r + dr, c + dc]`` aligned with ``a[r, c]``; out-of-range entries are zero."""
    out = np.zeros_like(a)
    h, w = a.shape[-2:]
    rs, re = max(dr, 0), h + min(dr, 0)
    cs, ce = max(dc, 0), w + min(dc, 0)
    out[..., rs - dr : re - dr, cs - dc : ce - dc] = a[..., rs:re, cs:ce]
    return out


def _self_occluded(p, valid, omega) -> np.ndarray:
    """Pixels whose ray toward the light immediately passes behind their own surface.

    The ray direction is located among the fan of mesh triangles around the
    vertex as seen from the camera; the pixel is self-occluded when that
    triangle faces away from the light.
    """
    d = -check_direction(omega).reshape(3, 1, 1)
    back = np.zeros(valid.shape, dtype=bool)
    vmask = valid.astype(np.float64)

    def orient(x, y):
        return (p * np.cross(x, y, axis=0)).sum(axis=0)

    for (ra, ca), (rb, cb) in zip(_FAN, _FAN[1:] + _FAN[:1]):
        ea = _shifted(p, ra, ca) - p
        eb = _shifted(p, rb, cb) - p
        ok = valid & (_shifted(vmask, ra, ca) > 0) & (_shifted(vmask, rb, cb) > 0)
        in_sector = (orient(ea, d) >= 0) & (orient(d, eb) >= 0) & (orient(ea, eb) > 0)
        n = np.cross(ea, eb, axis=0)
        n = np.where((n * -p).sum(axis=0) < 0, -n, n)
        back |= ok & in_sector & ((n * d).sum(axis=0) < 0)
    return back


def silhouette_band(depth, threshold=0.05) -> np.ndarray:
    """Pixels adjacent to a depth jump larger than ``threshold`` (relative to depth)."""
    d = _depth_plane(depth)
    jump = np.zeros(d.shape, dtype=bool)
    for axis in (0, 1):
        diff = np.abs(np.diff(d, axis=axis)) > threshold * np.minimum(
            np.take(d, range(d.shape[axis] - 1), axis=axis), np.take(d, range(1, d.shape[axis]), axis=axis)
        )
        if axis == 0:
            jump[:-1] |= diff
            jump[1:] |= diff
        else:
            jump[:, :-1] |= diff
            jump[:, 1:] |= diff
    return jump | (d <= 0)


def degrade_depth(depth, seed, sigma=NOISE_SIGMA, blur_sigma=BLUR_SIGMA) -> np.ndarray:
    """Additive Gaussian noise then a 5x5 Gaussian blur, clamped to [0, 1].

    Invalid (zero) pixels stay invalid. Fully determined by ``seed``.
    """
    src = np.asarray(depth, dtype=np.float64)
    d = _depth_plane(src)
    valid = d > 0
    rng = np.random.default_rng(seed)
    noisy = d + rng.normal(0.0, 1.0, d.shape) * sigma if sigma > 0 else d.copy()
    if blur_sigma > 0:
        # truncate at 2 sigma -> radius 2 -> 5x5 kernel for sigma = 1
        noisy = ndimage.gaussian_filter(noisy, blur_sigma, truncate=2.0 / blur_sigma, mode="nearest")
    out = np.where(valid, np.clip(noisy, 0.0, 1.0), 0.0)
    return out.reshape(src.shape)
