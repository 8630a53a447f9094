"""Procedural scenes and the synthetic relighting dataset.

Each scene is a single-valued heightfield seen by a pinhole camera, with
albedo, normal and roughness maps. Rendering a scene produces the flash
image, clean and degraded depth, and for every grid direction a relit image
together with its cast-shadow mask. Everything is stored as float32 so that a
dataset reloaded from disk reproduces the in-memory arrays bit for bit.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .brdf import F0, COS_EPS, MaterialMaps, render_flash, shade_directional
from .geometry import (
    BLUR_SIGMA,
    NOISE_SIGMA,
    CameraIntrinsics,
    ShadowConfig,
    cast_shadow_mask,
    degrade_depth,
    normals_from_depth,
    unproject,
)
from .imaging import SchemaError, read_raw, write_raw

FORMAT = "relightkit-dataset"
FORMAT_VERSION = 1
DEPTH_RANGE = (0.25, 1.0)
GEOMETRIES = ("bumps", "steps", "blobs")
TEXTURES = ("constant", "checker", "noise")


class SceneError(ValueError):
    pass


# ---------------------------------------------------------------------------
# light directions


def grid_cells(n_rings=4, per_ring=20):
    """Solid-angle cells of the direction grid as ``(cos_lo, cos_hi, phi_lo, phi_hi)`` rows.

    A zenith cap of height ``1/(N+1)`` in cos(theta), with ``N = n_rings *
    per_ring``, is followed by ``n_rings`` bands of equal height, each cut
    into ``per_ring`` azimuth sectors. Every cell covers ``2*pi/(N+1)`` sr.
    Odd rings are rotated by half a sector.
    """
    if n_rings < 0 or per_ring < 1:
        raise ValueError("n_rings must be >= 0 and per_ring >= 1")
    n = n_rings * per_ring
    cap = 1.0 / (n + 1)
    rows = [(1.0 - cap, 1.0, 0.0, 2 * math.pi)]
    band = (1.0 - cap) / n_rings if n_rings else 0.0
    step = 2 * math.pi / per_ring
    for i in range(n_rings):
        hi = 1.0 - cap - i * band
        lo = hi - band
        shift = 0.5 * step * (i % 2)
        for j in range(per_ring):
            rows.append((lo, hi, j * step + shift, (j + 1) * step + shift))
    return np.array(rows)


def direction_grid(n_rings=4, per_ring=20) -> np.ndarray:
    """Unit light directions ``(N, 3)`` over the visible hemisphere, zenith first.

    Each direction sits at the area centre of its cell: mid-height in
    cos(theta) and mid-sector in azimuth.
    """
    cells = grid_cells(n_rings, per_ring)
    dirs = np.empty((len(cells), 3))
    dirs[0] = (0.0, 0.0, 1.0)
    for k, (lo, hi, p0, p1) in enumerate(cells[1:], start=1):
        c = 0.5 * (lo + hi)
        s = math.sqrt(1.0 - c * c)
        phi = 0.5 * (p0 + p1)
        dirs[k] = (s * math.cos(phi), s * math.sin(phi), c)
    return dirs


# ---------------------------------------------------------------------------
# scenes


@dataclass
class SceneSpec:
    seed: int
    width: int = 64
    height: int = 64
    focal_ratio: float = 1.0
    geometry: str | None = None  # None: drawn from the seed
    n_shapes: tuple = (3, 7)
    amplitude: tuple = (0.05, 0.3)
    texture: str | None = None
    roughness_range: tuple = (0.3, 1.0)
    normal_detail: float = 0.15

    def validate(self):
        if self.geometry is not None and self.geometry not in GEOMETRIES:
            raise SceneError(f"unknown geometry family {self.geometry!r}")
        if self.texture is not None and self.texture not in TEXTURES:
            raise SceneError(f"unknown texture family {self.texture!r}")
        lo, hi = self.roughness_range
        if not 0.0 < lo <= hi <= 1.0:
            raise SceneError("roughness range must lie in (0, 1]")
        a0, a1 = self.amplitude
        if not 0.0 <= a0 <= a1 <= DEPTH_RANGE[1] - DEPTH_RANGE[0]:
            raise SceneError("amplitude range out of bounds")
        if self.n_shapes[0] < 0 or self.n_shapes[0] > self.n_shapes[1]:
            raise SceneError("bad shape count range")
        if self.normal_detail < 0:
            raise SceneError("normal detail must be non-negative")
        if self.width < 4 or self.height < 4:
            raise SceneError("scene too small")

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.default(self.width, self.height, self.focal_ratio)


@dataclass
class Scene:
    spec: SceneSpec
    K: CameraIntrinsics
    depth: np.ndarray  # (1, H, W) float32
    maps: MaterialMaps  # float32 arrays


def _smooth_noise(rng, shape, sigma):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def _heightfield(rng, family, spec, u, v):
    """Height above the background plane (toward the camera)."""
    count = int(rng.integers(spec.n_shapes[0], spec.n_shapes[1] + 1))
    a0, a1 = spec.amplitude
    h = np.zeros_like(u)
    if family == "bumps":
        for _ in range(count):
            c = rng.uniform(0.1, 0.9, 2)
            r = rng.uniform(0.05, 0.2)
            h += rng.uniform(a0, a1) * np.exp(-((u - c[0]) ** 2 + (v - c[1]) ** 2) / (2 * r * r))
    elif family == "steps":
        for _ in range(count):
            x0, y0 = rng.uniform(0.0, 0.8, 2)
            w_, h_ = rng.uniform(0.1, 0.5, 2)
            block = (u >= x0) & (u < x0 + w_) & (v >= y0) & (v < y0 + h_)
            h = np.where(block, np.maximum(h, rng.uniform(a0, a1)), h)
    else:
        # spherical caps blended with a p-norm soft maximum
        h = np.zeros_like(u)
        for _ in range(count):
            c = rng.uniform(0.15, 0.85, 2)
            r = rng.uniform(0.1, 0.25)
            top = rng.uniform(a0, a1)
            d2 = ((u - c[0]) ** 2 + (v - c[1]) ** 2) / (r * r)
            h += (top * np.sqrt(np.clip(1.0 - d2, 0.0, None))) ** 4
        h = h**0.25
    return h


def _albedo(rng, family, shape):
    hgt, wid = shape
    if family == "constant":
        return np.broadcast_to(rng.uniform(0.1, 0.9, (3, 1, 1)), (3, hgt, wid)).copy()
    if family == "checker":
        period = int(rng.integers(4, 17))
        v, u = np.mgrid[0:hgt, 0:wid]
        sel = ((u // period + v // period) % 2).astype(bool)
        c0, c1 = rng.uniform(0.1, 0.9, (2, 3, 1, 1))
        return np.where(sel, c1, c0)
    sigma = rng.uniform(2.0, 6.0)
    base = rng.uniform(0.3, 0.7, (3, 1, 1))
    out = np.stack([base[i] + 0.18 * _smooth_noise(rng, shape, sigma) for i in range(3)])
    return np.clip(out, 0.02, 0.98)


def make_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene from ``spec.seed``; depth stays inside ``[0.25, 1]``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K = spec.camera()
    hgt, wid = spec.height, spec.width
    family = spec.geometry or GEOMETRIES[int(rng.integers(len(GEOMETRIES)))]
    texture = spec.texture or TEXTURES[int(rng.integers(len(TEXTURES)))]
    v, u = np.mgrid[0:hgt, 0:wid] / float(max(hgt, wid))
    base = rng.uniform(0.9, 1.0)
    h = _heightfield(rng, family, spec, u, v)
    depth = np.clip(base - h, *DEPTH_RANGE).astype(np.float32)[None]

    points = unproject(depth, K)
    n = normals_from_depth(points)
    if spec.normal_detail > 0:
        bump = _smooth_noise(rng, (hgt, wid), rng.uniform(1.0, 3.0))
        gy, gx = np.gradient(bump)
        scale = spec.normal_detail / (np.abs(np.stack([gx, gy])).max() + 1e-12)
        perturbed = n + scale * np.stack([gx, gy, np.zeros_like(gx)])
        perturbed /= np.linalg.norm(perturbed, axis=0)
        facing = (perturbed * -points).sum(axis=0) > 0
        n = np.where(facing, perturbed, n)

    albedo = _albedo(rng, texture, (hgt, wid))
    lo, hi = spec.roughness_range
    t = 0.5 + 0.5 * np.tanh(0.8 * _smooth_noise(rng, (hgt, wid), rng.uniform(2.0, 8.0)))
    rough = lo + (hi - lo) * t
    maps = MaterialMaps(
        albedo=albedo.astype(np.float32),
        normal=n.astype(np.float32),
        roughness=np.clip(rough, lo, hi).astype(np.float32)[None],
    )
    return Scene(spec, K, depth, maps)


# ---------------------------------------------------------------------------
# rendering


@dataclass
class RenderSettings:
    f0: float = F0
    cos_eps: float = COS_EPS
    flash_intensity: float = math.pi
    light_intensity: float = math.pi
    noise_sigma: float = NOISE_SIGMA
    blur_sigma: float = BLUR_SIGMA
    shadow: ShadowConfig = field(default_factory=ShadowConfig)


@dataclass
class DatasetSample:
    name: str
    flash: np.ndarray  # (3, H, W)
    depth: np.ndarray  # (1, H, W)
    depth_noisy: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    rough: np.ndarray  # (1, H, W)
    directions: np.ndarray  # (N, 3)
    relit: np.ndarray  # (N, 3, H, W)
    shadow: np.ndarray  # (N, 1, H, W)
    K: CameraIntrinsics
    seed: int = 0
    noise_seed: int = 0
    split: str = "train"

    @property
    def maps(self) -> MaterialMaps:
        return MaterialMaps(self.albedo, self.normal, self.rough)


def relight_direct(maps, depth, K, omega, settings: RenderSettings | None = None, shadow=None):
    """Ground-truth relit image: closed-form shading times the cast-shadow mask."""
    s = settings or RenderSettings()
    points = unproject(depth, K)
    if shadow is None:
        shadow = cast_shadow_mask(points, omega, s.shadow)
    img = shade_directional(maps, points, omega, s.light_intensity, shadow, s.f0, s.cos_eps)
    return img.astype(np.float32), shadow.astype(np.float32)


def render_sample(scene: Scene, dirs, noise_seed: int, settings: RenderSettings | None = None, name="scene") -> DatasetSample:
    s = settings or RenderSettings()
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    points = unproject(scene.depth, scene.K)
    flash = render_flash(scene.maps, points, s.flash_intensity, s.f0, s.cos_eps).astype(np.float32)
    relit = np.empty((len(dirs), 3) + scene.depth.shape[1:], dtype=np.float32)
    shadow = np.empty((len(dirs), 1) + scene.depth.shape[1:], dtype=np.float32)
    for i, w in enumerate(dirs):
        relit[i], shadow[i] = relight_direct(scene.maps, scene.depth, scene.K, w, s)
    noisy = degrade_depth(scene.depth, noise_seed, s.noise_sigma, s.blur_sigma).astype(np.float32)
    return DatasetSample(
        name=name,
        flash=flash,
        depth=scene.depth,
        depth_noisy=noisy,
        albedo=scene.maps.albedo,
        normal=scene.maps.normal,
        rough=scene.maps.roughness,
        directions=dirs,
        relit=relit,
        shadow=shadow,
        K=scene.K,
        seed=scene.spec.seed,
        noise_seed=int(noise_seed),
    )


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def worker_count(deterministic=False) -> int:
    if deterministic:
        return 1
    env = os.environ.get("RELIGHTKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _render_job(job):
    spec, dirs, noise_seed, settings, name, split = job
    sample = render_sample(make_scene(spec), dirs, noise_seed, settings, name)
    sample.split = split
    return sample


def generate(specs, dirs, settings=None, seed=0, n_train=None, workers=1):
    """Render every scene spec; the first ``n_train`` are the training split."""
    n_train = len(specs) if n_train is None else n_train
    jobs = [
        (spec, dirs, derive_seed(seed, k, 1), settings, f"scene_{k}", "train" if k < n_train else "test")
        for k, spec in enumerate(specs)
    ]
    if workers <= 1 or len(jobs) <= 1:
        return [_render_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_render_job, jobs))


def scene_specs(n, seed=0, **kwargs):
    return [SceneSpec(seed=derive_seed(seed, k, 0), **kwargs) for k in range(n)]


# ---------------------------------------------------------------------------
# storage

_MAPS = ("flash", "depth", "depth_noisy", "albedo", "normal", "rough")


def _camera_dict(K):
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}


def write_dataset(samples, root, extra=None) -> Path:
    """Write samples as ``<root>/scene_<k>/*.rlk`` plus ``<root>/manifest.json``."""
    root = Path(root)
    if not samples:
        raise ValueError("no samples to write")
    dirs = samples[0].directions
    for s in samples:
        if not np.array_equal(s.directions, dirs):
            raise ValueError("all samples must share one direction list")
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        sd = root / s.name
        sd.mkdir(exist_ok=True)
        files = {}
        for key in _MAPS:
            write_raw(sd / f"{key}.rlk", getattr(s, key))
            files[key] = f"{s.name}/{key}.rlk"
        relit, shadow = [], []
        for i in range(len(dirs)):
            write_raw(sd / f"relit_{i}.rlk", s.relit[i])
            write_raw(sd / f"shadow_{i}.rlk", s.shadow[i])
            relit.append(f"{s.name}/relit_{i}.rlk")
            shadow.append(f"{s.name}/shadow_{i}.rlk")
        files["relit"], files["shadow"] = relit, shadow
        entries.append(
            {
                "name": s.name,
                "split": s.split,
                "seed": s.seed,
                "noise_seed": s.noise_seed,
                "camera": _camera_dict(s.K),
                "files": files,
            }
        )
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "pipeline_version": __version__,
        "directions": [[float(x) for x in w] for w in dirs],
        "scenes": entries,
    }
    if extra:
        manifest.update(extra)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return root


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported dataset format/version")
    for key in ("directions", "scenes"):
        if key not in manifest:
            raise SchemaError(f"{path}: missing {key!r}")
    return manifest


def load_dataset(root, split=None) -> list:
    """Samples listed in the manifest, optionally restricted to one split."""
    root = Path(root)
    manifest = read_manifest(root)
    dirs = np.asarray(manifest["directions"], dtype=np.float64).reshape(-1, 3)
    out = []
    for e in manifest["scenes"]:
        if split is not None and e.get("split") != split:
            continue
        f = e["files"]
        if len(f["relit"]) != len(dirs) or len(f["shadow"]) != len(dirs):
            raise SchemaError(f"{e['name']}: direction count does not match manifest")
        maps = {key: read_raw(root / f[key]) for key in _MAPS}
        out.append(
            DatasetSample(
                name=e["name"],
                directions=dirs,
                relit=np.stack([read_raw(root / p) for p in f["relit"]]),
                shadow=np.stack([read_raw(root / p) for p in f["shadow"]]),
                K=CameraIntrinsics(**e["camera"]),
                seed=e["seed"],
                noise_seed=e["noise_seed"],
                split=e["split"],
                **maps,
            )
        )
    return out
