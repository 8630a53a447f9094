"""Microfacet BRDF (GGX distribution, Smith-Schlick masking, spherical-Gaussian
Fresnel) and closed-form one-bounce shading.

Vectors are channel-first: a direction field over an image has shape
``(3, H, W)``; a single direction has shape ``(3,)``. The shading functions
accept numpy arrays or :class:`~relightkit.neural.autodiff.Tensor` values for
the material maps, so the same code serves as the differentiable render layer.

Light directions ``omega`` give the direction in which light *travels*, in
camera coordinates (x right, y down, z along the optical axis). A light on the
camera side of the scene therefore has ``omega_z > 0``; the unit vector toward
the light is ``-omega``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import ShapeError
from .neural.autodiff import Tensor, maximum_scalar, minimum_scalar

F0 = 0.05
COS_EPS = 1e-4
UNIT_TOL = 1e-6


class BrdfDomainError(ValueError):
    pass


def _dot(a, b):
    return (a * b).sum(axis=0)


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.sqrt(_dot(v, v))
    return v / n


def ggx_d(n_dot_h, roughness):
    """GGX normal distribution with ``alpha = roughness**2``."""
    if np.any(np.asarray(getattr(roughness, "data", roughness)) <= 0):
        raise BrdfDomainError("roughness must be in (0, 1]")
    a = roughness * roughness
    a2 = a * a
    d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


def smith_k(roughness):
    return (roughness + 1.0) ** 2 / 8.0


def smith_g1(cos, k):
    return cos / (cos * (1.0 - k) + k)


def smith_g(n_dot_l, n_dot_v, roughness):
    """Separable Smith masking-shadowing, Schlick-GGX form."""
    for c in (n_dot_l, n_dot_v):
        if np.any(np.asarray(getattr(c, "data", c)) <= 0):
            raise BrdfDomainError("cosines must be positive; clamp before calling")
    k = smith_k(roughness)
    return smith_g1(n_dot_l, k) * smith_g1(n_dot_v, k)


def fresnel_sg(v_dot_h, f0=F0):
    """Schlick Fresnel with the base-2 spherical-Gaussian exponent."""
    return f0 + (1.0 - f0) * 2.0 ** ((-5.55473 * v_dot_h - 6.98316) * v_dot_h)


def microfacet(n, l, v, albedo, roughness, f0=F0, eps=COS_EPS):
    """BRDF value ``albedo/pi + D F G / (4 (n.l)(n.v))`` for channel-first fields.

    ``n``, ``l``, ``v`` are unit vectors with a leading axis of 3; ``albedo``
    has a leading axis of 3 and ``roughness`` the shape of the trailing axes.
    """
    h = l + v
    h = h / np.sqrt(_dot(h, h))
    nl = maximum_scalar(_dot(n, l), eps)
    nv = maximum_scalar(_dot(n, v), eps)
    nh = minimum_scalar(maximum_scalar(_dot(n, h), 0.0), 1.0)
    vh = np.clip(_dot(v, h), 0.0, 1.0)
    spec = ggx_d(nh, roughness) * fresnel_sg(vh, f0) * smith_g(nl, nv, roughness) / (4.0 * nl * nv)
    return albedo * (1.0 / np.pi) + spec


@dataclass(frozen=True)
class BrdfParams:
    albedo: tuple
    roughness: float
    f0: float = F0

    def __post_init__(self):
        if not 0.0 < self.roughness <= 1.0:
            raise BrdfDomainError(f"roughness {self.roughness} outside (0, 1]")


@dataclass(frozen=True)
class ShadingGeometry:
    """Unit normal, to-light and to-viewer vectors of one shading point."""

    n: tuple
    l: tuple
    v: tuple

    def __post_init__(self):
        for name in ("n", "l", "v"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (3,) or abs(np.linalg.norm(vec) - 1.0) > UNIT_TOL:
                raise BrdfDomainError(f"{name} must be a unit 3-vector")
        if np.linalg.norm(np.add(self.l, self.v)) < 1e-12:
            raise BrdfDomainError("half vector undefined for l = -v")

    @property
    def h(self):
        return tuple(_normalize(np.add(self.l, self.v)))


def brdf_eval(geom: ShadingGeometry, params: BrdfParams, eps=COS_EPS) -> np.ndarray:
    n, l, v = (np.asarray(x, dtype=np.float64) for x in (geom.n, geom.l, geom.v))
    albedo = np.asarray(params.albedo, dtype=np.float64)
    return microfacet(n, l, v, albedo, params.roughness, params.f0, eps)


def view_dirs(points) -> np.ndarray:
    """Unit vectors from each camera-space point toward the camera origin."""
    p = np.asarray(points, dtype=np.float64)
    d = np.sqrt(_dot(p, p))
    if np.any(d < 1e-6):
        raise BrdfDomainError("point at the camera origin")
    return -p / d


@dataclass
class MaterialMaps:
    """Albedo ``(3, H, W)``, unit normals ``(3, H, W)`` and roughness ``(1, H, W)``.

    Fields may hold numpy arrays or autodiff tensors.
    """

    albedo: object
    normal: object
    roughness: object

    def check(self, points):
        hw = np.shape(points)[-2:]
        for name in ("albedo", "normal", "roughness"):
            m = getattr(self, name)
            shp = np.shape(getattr(m, "data", m))
            if shp[-2:] != hw:
                raise ShapeError(f"{name} map {shp} does not match points {hw}")

    def rough_plane(self):
        r = self.roughness
        return r[0] if np.ndim(getattr(r, "data", r)) == 3 else r


def shade_directional(maps: MaterialMaps, points, omega, intensity=np.pi, shadow=None, f0=F0, eps=COS_EPS):
    """One-bounce image under a directional light travelling along ``omega``.

    ``intensity`` is a scalar or an rgb triple. Pixels whose normal faces away
    from the light are black; ``shadow`` multiplies the result.
    """
    maps.check(points)
    albedo, normal, rough = maps.albedo, maps.normal, maps.rough_plane()
    v = view_dirs(points)
    l_vec = -np.asarray(omega, dtype=np.float64).reshape(3, 1, 1)
    l_field = np.broadcast_to(l_vec, v.shape)
    cos_l = maximum_scalar(_dot(normal, l_vec), 0.0)
    f = microfacet(normal, l_field, v, albedo, rough, f0, eps)
    radiance = intensity if np.ndim(getattr(intensity, "data", intensity)) == 0 else _as_rgb(intensity)
    img = f * cos_l * radiance
    if shadow is not None:
        img = img * _as_plane(shadow)
    return img


def render_flash(maps: MaterialMaps, points, intensity=np.pi, f0=F0, eps=COS_EPS):
    """Image under a point light co-located with the camera (1/d^2 falloff, no shadow)."""
    maps.check(points)
    albedo, normal, rough = maps.albedo, maps.normal, maps.rough_plane()
    p = np.asarray(points, dtype=np.float64)
    d2 = _dot(p, p)
    v = view_dirs(p)
    cos_l = maximum_scalar(_dot(normal, v), 0.0)
    f = microfacet(normal, v, v, albedo, rough, f0, eps)
    return f * cos_l * (intensity / d2)


def _as_rgb(x):
    if isinstance(x, Tensor):
        return x.reshape(3, 1, 1)
    return np.asarray(x, dtype=np.float64).reshape(3, 1, 1)


def _as_plane(m):
    m = np.asarray(m, dtype=np.float64)
    return m[0] if m.ndim == 3 else m
