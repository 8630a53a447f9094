"""Two-stage training of the relighting networks and checkpoint I/O.

Stage 1 trains ShadowNet and DecomposeNet side by side: every step draws one
batch of (scene, direction) pairs for the shadow loss and one batch of scenes
for the decomposition losses. Stage 2 freezes both and trains SynthesisNet on
their predictions plus the closed-form render.
"""
from __future__ import annotations

import json
import logging
import math
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..brdf import MaterialMaps, shade_directional
from ..geometry import shadow_encode, unproject
from ..imaging import SchemaError, read_raw, write_raw
from .autodiff import Tensor, no_grad
from .losses import loss_bce, loss_l1_grad
from .networks import Network, NetworkSpec, network_spec
from .optim import Adam, TrainingError, lr_at

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "relightkit-checkpoint"
CHECKPOINT_VERSION = 1
ROUGH_FLOOR = 1e-3
REQUIRED = ("flash", "depth", "albedo", "normal", "rough", "relit", "shadow")


class DatasetError(ValueError):
    pass


class ModelConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 4
    epochs: int = 5  # per stage
    lr: float = 5e-4
    decay: float = 0.1
    decay_every: int = 2
    lambda_grad: float = 1.0
    seed: int = 0
    augment: bool = True
    depth: str = "clean"  # clean | noisy
    deterministic: bool = True

    def validate(self):
        if self.batch_size < 1 or self.epochs < 0 or self.decay_every < 1:
            raise ValueError("batch_size, epochs and decay_every must be positive")
        if self.lr <= 0 or not 0 < self.decay <= 1:
            raise ValueError("bad learning-rate schedule")
        if self.depth not in ("clean", "noisy"):
            raise ValueError("depth must be 'clean' or 'noisy'")
        return self


# ---------------------------------------------------------------------------
# symmetry augmentation
#
# With square pixels and a centred principal point, rotating the image by 180
# degrees and transposing it are exact symmetries of the camera. Both keep the
# mesh diagonal (top-left to bottom-right) in place, so shadow masks transform
# exactly as well.


def _img_op(a, op):
    if op & 1:
        a = a[..., ::-1, ::-1]
    if op & 2:
        a = np.swapaxes(a, -1, -2)
    return np.ascontiguousarray(a)


def _vec_op(v, op):
    """Apply the camera-space counterpart of ``_img_op`` to a leading xyz axis."""
    v = np.array(v, copy=True)
    if op & 1:
        v[0], v[1] = -v[0], -v[1]
    if op & 2:
        v[[0, 1]] = v[[1, 0]]
    return v


def _field_op(a, op):
    return _vec_op(_img_op(a, op), op)


def augmentable(K) -> bool:
    return K.fx == K.fy and K.width == K.height and K.cx == (K.width - 1) / 2 and K.cy == (K.height - 1) / 2


# ---------------------------------------------------------------------------
# models


@dataclass
class TrainedModels:
    decompose: Network
    shadow: Network
    synthesis: Network
    history: list = field(default_factory=list)
    light_intensity: float = math.pi
    f0: float = 0.05
    cos_eps: float = 1e-4

    def networks(self) -> dict:
        return {"decompose": self.decompose, "shadow": self.shadow, "synthesis": self.synthesis}

    def predict_maps(self, flash, depth) -> list:
        """DecomposeNet outputs for batches ``(N, 3, H, W)`` / ``(N, 1, H, W)``, as float32 MaterialMaps."""
        with no_grad():
            x = np.concatenate([flash, depth], axis=1).astype(np.float32)
            out = self.decompose(x)
        return [
            MaterialMaps(out["albedo"].data[i], out["normal"].data[i], out["roughness"].data[i])
            for i in range(len(x))
        ]

    def predict_shadow(self, encoded) -> np.ndarray:
        with no_grad():
            return self.shadow(np.asarray(encoded, dtype=np.float32))["shadow"].data

    def render(self, maps: MaterialMaps, points, omega) -> np.ndarray:
        """Closed-form shading of predicted maps, without cast shadows."""
        m = MaterialMaps(maps.albedo, maps.normal, np.clip(maps.roughness, ROUGH_FLOOR, 1.0))
        return shade_directional(m, points, omega, self.light_intensity, None, self.f0, self.cos_eps).astype(np.float32)

    def synthesis_input(self, shadow, render, flash, maps: MaterialMaps, encoded) -> np.ndarray:
        """The 17 channels in fixed order: shadow, render, flash, albedo, normal, roughness, encoded points."""
        parts = [shadow, render, flash, maps.albedo, maps.normal, maps.roughness, encoded]
        return np.concatenate([np.asarray(p, dtype=np.float32).reshape(-1, *np.shape(p)[-2:]) for p in parts])

    def synthesize(self, x) -> np.ndarray:
        with no_grad():
            return self.synthesis(np.asarray(x, dtype=np.float32))["relight"].data


def init_models(scale=0.25, seed=0, **kw) -> TrainedModels:
    seeds = np.random.SeedSequence(seed).generate_state(3)
    nets = [Network.init(network_spec(n, scale), int(s)) for n, s in zip(("decompose", "shadow", "synthesis"), seeds)]
    return TrainedModels(*nets, **kw)


# ---------------------------------------------------------------------------
# checkpoints


def save_network(net: Network, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, t in net.params.items():
        fname = name.replace("/", "__") + ".rlk"
        write_raw(root / fname, t.data.reshape(1, 1, -1))
        entries.append({"name": name, "file": fname, "shape": list(t.shape)})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": net.spec.to_dict(),
        "params": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_network(root) -> Network:
    root = Path(root)
    path = root / "manifest.json"
    if not path.is_file():
        raise ModelConfigError(f"missing checkpoint manifest {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint format")
    spec = NetworkSpec.from_dict(manifest["spec"])
    params = {}
    for e in manifest["params"]:
        data = read_raw(root / e["file"]).reshape(e["shape"])
        params[e["name"]] = Tensor(data, requires_grad=True, name=e["name"])
    expected = Network.init(spec, 0).params
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
        raise SchemaError(f"{path}: parameters do not match the network spec")
    return Network(spec, params)


def save_models(models: TrainedModels, root, extra=None) -> None:
    root = Path(root)
    for name, net in models.networks().items():
        save_network(net, root / name)
    meta = {
        "history": models.history,
        "light_intensity": models.light_intensity,
        "f0": models.f0,
        "cos_eps": models.cos_eps,
    }
    if extra:
        meta.update(extra)
    (root / "models.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_models(root) -> TrainedModels:
    root = Path(root)
    meta_path = root / "models.json"
    if not meta_path.is_file():
        raise ModelConfigError(f"no trained models in {root}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    nets = [load_network(root / n) for n in ("decompose", "shadow", "synthesis")]
    return TrainedModels(
        *nets,
        history=meta.get("history", []),
        light_intensity=meta.get("light_intensity", math.pi),
        f0=meta.get("f0", 0.05),
        cos_eps=meta.get("cos_eps", 1e-4),
    )


# ---------------------------------------------------------------------------
# training


def _check_dataset(samples):
    if not samples:
        raise DatasetError("empty training set")
    for s in samples:
        for key in REQUIRED:
            if getattr(s, key, None) is None:
                raise DatasetError(f"{s.name}: missing {key}")
        if len(s.relit) != len(s.directions) or len(s.shadow) != len(s.directions):
            raise DatasetError(f"{s.name}: direction count mismatch")


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _scene_stream(rng, n):
    while True:
        yield from rng.permutation(n)


def train_pipeline(samples, cfg: TrainConfig | None = None, scale=0.25, checkpoint_dir=None,
                   light_intensity=math.pi, f0=0.05, cos_eps=1e-4) -> TrainedModels:
    """Train all three networks on ``samples`` (DatasetSample-like objects)."""
    cfg = (cfg or TrainConfig()).validate()
    _check_dataset(samples)
    limit = threadpool_limits(1) if cfg.deterministic else nullcontext()
    with limit:
        return _train(samples, cfg, scale, checkpoint_dir, light_intensity, f0, cos_eps)


def _train(samples, cfg, scale, checkpoint_dir, light_intensity, f0, cos_eps):
    rng = np.random.default_rng(cfg.seed)
    models = init_models(scale, cfg.seed, light_intensity=light_intensity, f0=f0, cos_eps=cos_eps)
    K = samples[0].K
    augment = cfg.augment and augmentable(K)
    depth_key = "depth_noisy" if cfg.depth == "noisy" else "depth"
    depths = [np.asarray(getattr(s, depth_key), dtype=np.float32) for s in samples]
    pairs = [(si, di) for si, s in enumerate(samples) for di in range(len(s.directions))]

    def op_for():
        return int(rng.integers(4)) if augment else 0

    # stage 1 ---------------------------------------------------------------
    opt1 = Adam(models.shadow.parameters() + models.decompose.parameters())
    stream = _scene_stream(rng, len(samples))
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.lr, cfg.decay, cfg.decay_every)
        sums = np.zeros(4)
        steps = 0
        for batch in _batches([pairs[i] for i in rng.permutation(len(pairs))], cfg.batch_size):
            xs, ys = [], []
            for si, di in batch:
                op = op_for()
                d = _img_op(depths[si], op)
                w = _vec_op(samples[si].directions[di], op)
                xs.append(shadow_encode(unproject(d, K), w))
                ys.append(_img_op(samples[si].shadow[di], op))
            scenes = [next(stream) for _ in batch]
            xd, ta, tn, tr = [], [], [], []
            for si in scenes:
                op = op_for()
                s = samples[si]
                xd.append(np.concatenate([_img_op(s.flash, op), _img_op(depths[si], op)]))
                ta.append(_img_op(s.albedo, op))
                tn.append(_field_op(s.normal, op))
                tr.append(_img_op(s.rough, op))
            opt1.zero_grad()
            ps = models.shadow(np.stack(xs).astype(np.float32))["shadow"]
            pd = models.decompose(np.stack(xd).astype(np.float32))
            losses = [
                loss_bce(ps, np.stack(ys)),
                loss_l1_grad(pd["albedo"], np.stack(ta), cfg.lambda_grad),
                loss_l1_grad(pd["normal"], np.stack(tn), cfg.lambda_grad),
                loss_bce(pd["roughness"], np.stack(tr)),
            ]
            total = losses[0] + losses[1] + losses[2] + losses[3]
            _check_finite_loss(total, "stage 1", epoch, steps)
            total.backward()
            opt1.step(lr)
            sums += [float(l.data) for l in losses]
            steps += 1
        entry = {"stage": 1, "epoch": epoch, "lr": lr, "steps": steps}
        entry.update(dict(zip(("shadow", "albedo", "normal", "roughness"), (sums / max(steps, 1)).tolist())))
        models.history.append(entry)
        log.info("stage 1 epoch %d: %s", epoch, entry)
        if checkpoint_dir is not None:
            save_models(models, checkpoint_dir, {"stage": 1, "epoch": epoch})

    # stage 2 ---------------------------------------------------------------
    models.decompose.set_trainable(False)
    models.shadow.set_trainable(False)
    flashes = np.stack([s.flash for s in samples]).astype(np.float32)
    pred_maps = models.predict_maps(flashes, np.stack(depths))
    points = [unproject(d, K) for d in depths]
    pred_shadow = {}
    for batch in _batches(pairs, 16):
        enc = np.stack([shadow_encode(points[si], samples[si].directions[di]) for si, di in batch])
        for (si, di), m in zip(batch, models.predict_shadow(enc)):
            pred_shadow[si, di] = m

    def synth_input(si, di):
        w = samples[si].directions[di]
        render = models.render(pred_maps[si], points[si], w)
        enc = shadow_encode(points[si], w)
        return models.synthesis_input(pred_shadow[si, di], render, samples[si].flash, pred_maps[si], enc)

    opt2 = Adam(models.synthesis.parameters())
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.lr, cfg.decay, cfg.decay_every)
        total_loss, steps = 0.0, 0
        for batch in _batches([pairs[i] for i in rng.permutation(len(pairs))], cfg.batch_size):
            x = np.stack([synth_input(si, di) for si, di in batch])
            y = np.stack([samples[si].relit[di] for si, di in batch])
            opt2.zero_grad()
            loss = loss_l1_grad(models.synthesis(x)["relight"], y, cfg.lambda_grad)
            _check_finite_loss(loss, "stage 2", epoch, steps)
            loss.backward()
            opt2.step(lr)
            total_loss += float(loss.data)
            steps += 1
        entry = {"stage": 2, "epoch": epoch, "lr": lr, "steps": steps, "relight": total_loss / max(steps, 1)}
        models.history.append(entry)
        log.info("stage 2 epoch %d: %s", epoch, entry)
        if checkpoint_dir is not None:
            save_models(models, checkpoint_dir, {"stage": 2, "epoch": epoch})
    return models


def _check_finite_loss(loss, stage, epoch, step):
    if not np.isfinite(loss.data).all():
        raise TrainingError(f"{stage}: non-finite loss at epoch {epoch}, step {step}")
