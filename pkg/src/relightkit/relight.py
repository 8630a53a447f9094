"""Relighting by superposition of directional basis images, and full-pipeline inference."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .brdf import MaterialMaps, shade_directional
from .geometry import CameraIntrinsics, cast_shadow_mask, check_direction, shadow_encode, unproject
from .imaging import MetricReport, ShapeError, mse, psnr_from_mse
from .neural.train import ModelConfigError, TrainedModels


class RelightError(ValueError):
    pass


@dataclass
class BasisStack:
    """Directions ``(N, 3)`` and their basis images ``(N, C, H, W)``."""

    directions: np.ndarray
    images: np.ndarray

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        self.images = np.asarray(self.images)
        if self.images.ndim != 4 or len(self.images) != len(self.directions):
            raise ShapeError("need one (C, H, W) image per direction")
        if np.any(np.abs(np.linalg.norm(self.directions, axis=1) - 1.0) > 1e-6):
            raise RelightError("basis directions must be unit vectors")
        if len(np.unique(np.round(self.directions, 12), axis=0)) != len(self.directions):
            raise RelightError("basis directions must be distinct")

    def __len__(self):
        return len(self.directions)


def _weights(weights, n):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2 or w.shape[0] != n or w.shape[1] not in (1, 3):
        raise ShapeError(f"expected {n} scalar or rgb weights, got shape {np.shape(weights)}")
    if np.any(w < 0):
        raise RelightError("weights must be non-negative")
    return w


def superpose(stack: BasisStack, weights) -> np.ndarray:
    """``sum_i w_i B_i``; ``weights`` is ``(N,)`` or per-channel ``(N, 3)``."""
    w = _weights(weights, len(stack))
    imgs = stack.images.astype(np.float64)
    if w.shape[1] == 1:
        return np.tensordot(w[:, 0], imgs, axes=1)
    if imgs.shape[1] != 3:
        raise ShapeError("rgb weights need 3-channel basis images")
    return np.einsum("nc,nchw->chw", w, imgs)


@dataclass
class EnvironmentMap:
    """Equirectangular radiance ``(3, H, W)`` over the visible hemisphere.

    Row ``r`` spans polar angles ``[r, r+1] * (pi/2) / H`` from the optical
    axis (zenith at the top row); column ``c`` spans azimuth
    ``[c, c+1] * 2*pi / W``.
    """

    radiance: np.ndarray

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if self.radiance.ndim != 3 or self.radiance.shape[0] != 3:
            raise ShapeError("environment map must be (3, H, W)")
        if np.any(self.radiance < 0) or not np.all(np.isfinite(self.radiance)):
            raise RelightError("environment radiance must be finite and non-negative")

    @classmethod
    def uniform(cls, value=1.0, height=16, width=64):
        return cls(np.full((3, height, width), float(value)))

    def texels(self):
        """Texel-centre directions ``(H*W, 3)`` and solid angles ``(H*W,)``."""
        _, h, w = self.radiance.shape
        t0 = np.arange(h) * (0.5 * math.pi / h)
        t1 = t0 + 0.5 * math.pi / h
        dphi = 2 * math.pi / w
        solid = (np.cos(t0) - np.cos(t1)) * dphi
        # centre of each texel in cos(theta) so the direction splits the solid angle evenly
        ct = 0.5 * (np.cos(t0) + np.cos(t1))
        st = np.sqrt(1.0 - ct * ct)
        phi = (np.arange(w) + 0.5) * dphi
        dirs = np.stack(
            [st[:, None] * np.cos(phi)[None], st[:, None] * np.sin(phi)[None], np.broadcast_to(ct[:, None], (h, w))]
        )
        return dirs.reshape(3, -1).T, np.repeat(solid, w)


def env_weights(env: EnvironmentMap, dirs) -> np.ndarray:
    """Per-direction rgb weights ``(N, 3)``: radiance times texel solid angle, binned to the nearest direction."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if len(dirs) == 0:
        raise RelightError("direction list is empty")
    tex_dirs, solid = env.texels()
    nearest = np.argmax(tex_dirs @ dirs.T, axis=1)
    flux = env.radiance.reshape(3, -1) * solid
    out = np.zeros((len(dirs), 3))
    for c in range(3):
        out[:, c] = np.bincount(nearest, weights=flux[c], minlength=len(dirs))
    return out


def light_from_text(text: str) -> np.ndarray:
    """Parse ``"x,y,z"`` into a unit direction on the visible hemisphere."""
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError as e:
        raise RelightError(f"cannot parse light direction {text!r}") from e
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise RelightError("light direction needs three finite components")
    n = np.linalg.norm(v)
    if n == 0 or v[2] / n <= 0:
        raise RelightError("light below visible hemisphere")
    return v / n


# ---------------------------------------------------------------------------
# inference


def infer_relit(flash, depth, omega, K: CameraIntrinsics, models: TrainedModels | None = None, mode="network",
                maps: MaterialMaps | None = None, shadow=None, intensity=math.pi, f0=0.05, cos_eps=1e-4) -> np.ndarray:
    """Relit image ``(3, H, W)`` for light travelling along ``omega``.

    ``mode="oracle"`` shades the supplied ground-truth ``maps`` with the given
    (or freshly computed) cast-shadow mask. ``mode="network"`` runs
    DecomposeNet, ShadowNet, the closed-form render and SynthesisNet.
    """
    omega = check_direction(omega)
    depth = np.asarray(depth, dtype=np.float32).reshape(1, K.height, K.width)
    flash = np.asarray(flash, dtype=np.float32)
    if flash.shape != (3, K.height, K.width):
        raise ShapeError(f"flash image {flash.shape} does not match camera {K.height}x{K.width}")
    points = unproject(depth, K)
    if mode == "oracle":
        if maps is None:
            raise ModelConfigError("oracle mode needs ground-truth material maps")
        if shadow is None:
            shadow = cast_shadow_mask(points, omega)
        return shade_directional(maps, points, omega, intensity, shadow, f0, cos_eps).astype(np.float32)
    if mode != "network":
        raise ModelConfigError(f"unknown mode {mode!r}")
    if models is None:
        raise ModelConfigError("network mode needs trained models")
    return infer_batch(flash, depth, omega[None], K, models)[0]


@dataclass
class InferenceResult:
    relit: np.ndarray
    shadow: np.ndarray
    maps: MaterialMaps

    def __getitem__(self, i):
        return self.relit[i]


def infer_batch(flash, depth, dirs, K: CameraIntrinsics, models: TrainedModels, batch=16):
    """Network-mode predictions for many directions at once.

    Returns relit images ``(N, 3, H, W)``, predicted shadows ``(N, 1, H, W)``
    and the DecomposeNet maps.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    depth = np.asarray(depth, dtype=np.float32).reshape(1, K.height, K.width)
    flash = np.asarray(flash, dtype=np.float32)
    points = unproject(depth, K)
    maps = models.predict_maps(flash[None], depth[None])[0]
    relit, shadows = [], []
    for i in range(0, len(dirs), batch):
        chunk = dirs[i : i + batch]
        enc = np.stack([shadow_encode(points, w) for w in chunk])
        sh = models.predict_shadow(enc)
        x = np.stack([models.synthesis_input(sh[j], models.render(maps, points, w), flash, maps, enc[j])
                      for j, w in enumerate(chunk)])
        relit.append(models.synthesize(x))
        shadows.append(sh)
    return InferenceResult(np.concatenate(relit), np.concatenate(shadows), maps)


def oracle_stack(sample, intensity=math.pi, f0=0.05, cos_eps=1e-4) -> BasisStack:
    """Basis images of a dataset sample recomputed from its ground truth."""
    imgs = np.stack([
        infer_relit(sample.flash, sample.depth, w, sample.K, mode="oracle", maps=sample.maps,
                    intensity=intensity, f0=f0, cos_eps=cos_eps)
        for w in sample.directions
    ])
    return BasisStack(sample.directions, imgs)


def relight_env(stack: BasisStack, env: EnvironmentMap, basis_intensity=math.pi) -> np.ndarray:
    """Environment relight from basis images rendered at ``basis_intensity``."""
    return superpose(stack, env_weights(env, stack.directions) / basis_intensity)


# ---------------------------------------------------------------------------
# evaluation

TASKS = ("Albedo", "Normal", "Roughness", "Shadow", "Relight")
REPORT_FORMAT = "relightkit-eval"


def _evaluate_condition(samples, depth_key, models, mode, intensity, f0, cos_eps):
    dirs = samples[0].directions
    task_mse = {t: [] for t in TASKS}
    relit_mse = np.zeros((len(samples), len(dirs)))
    relit_psnr = np.zeros_like(relit_mse)
    shadow_mse = np.zeros_like(relit_mse)
    shadow_psnr = np.zeros_like(relit_mse)
    for si, s in enumerate(samples):
        depth = getattr(s, depth_key)
        if mode == "oracle":
            points = unproject(depth, s.K)
            maps = s.maps
            shadows = np.stack([cast_shadow_mask(points, w) for w in dirs])
            relit = np.stack([
                infer_relit(s.flash, depth, w, s.K, mode="oracle", maps=maps, shadow=shadows[i],
                            intensity=intensity, f0=f0, cos_eps=cos_eps)
                for i, w in enumerate(dirs)
            ])
        else:
            res = infer_batch(s.flash, depth, dirs, s.K, models)
            maps, shadows, relit = res.maps, res.shadow, res.relit
        task_mse["Albedo"].append(mse(maps.albedo, s.albedo))
        task_mse["Normal"].append(mse(maps.normal, s.normal))
        task_mse["Roughness"].append(mse(maps.roughness, s.rough))
        for i in range(len(dirs)):
            shadow_mse[si, i] = mse(shadows[i], s.shadow[i])
            shadow_psnr[si, i] = psnr_from_mse(shadow_mse[si, i])
            relit_mse[si, i] = mse(relit[i], s.relit[i])
            relit_psnr[si, i] = psnr_from_mse(relit_mse[si, i])
        task_mse["Shadow"].append(float(shadow_mse[si].mean()))
        task_mse["Relight"].append(float(relit_mse[si].mean()))
    shadow_rep, relit_rep = MetricReport(), MetricReport()
    for i, w in enumerate(dirs):
        shadow_rep.add(i, w, shadow_mse[:, i].mean(), shadow_psnr[:, i].mean())
        relit_rep.add(i, w, relit_mse[:, i].mean(), relit_psnr[:, i].mean())
    return [float(np.mean(task_mse[t])) for t in TASKS], shadow_rep, relit_rep


def evaluate(samples, models: TrainedModels | None = None, mode="network", intensity=math.pi, f0=0.05,
             cos_eps=1e-4, noisy_models: TrainedModels | None = None) -> dict:
    """Test-split report: per-task MSE rows for clean and degraded depth, and per-direction PSNR.

    ``noisy_models`` (if given) are used for the degraded-depth condition.
    """
    if not samples:
        raise RelightError("no test samples")
    if mode == "network" and models is None:
        raise ModelConfigError("network-mode evaluation needs trained models")
    report = {"format": REPORT_FORMAT, "version": 1, "mode": mode, "scenes": [s.name for s in samples],
              "columns": list(TASKS), "mse": {}, "psnr_by_direction": {}}
    baseline = [[mse(s.flash, s.relit[i]) for i in range(len(s.directions))] for s in samples]
    report["flash_baseline"] = {
        "albedo_mse": float(np.mean([mse(s.flash, s.albedo) for s in samples])),
        "relight_mse": float(np.mean(baseline)),
        "relight_psnr": float(np.mean([[psnr_from_mse(m) for m in row] for row in baseline])),
    }
    for label, key, mdl in (("Clean", "depth", models), ("Noisy", "depth_noisy", noisy_models or models)):
        row, shadow_rep, relit_rep = _evaluate_condition(samples, key, mdl, mode, intensity, f0, cos_eps)
        report["mse"][label] = row
        report["psnr_by_direction"][label] = {"shadow": shadow_rep.to_dict(), "relight": relit_rep.to_dict()}
    return report
