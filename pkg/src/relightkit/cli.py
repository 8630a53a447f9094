"""Command-line interface: ``relightkit {gen,train,relight,shadow,decompose,eval}``.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as config_mod
from .datagen import (
    RenderSettings,
    direction_grid,
    generate,
    load_dataset,
    scene_specs,
    worker_count,
    write_dataset,
)
from .geometry import CameraIntrinsics, cast_shadow_mask, shadow_encode, unproject
from .imaging import SchemaError, ShapeError, read_raw, write_preview, write_raw
from .neural.train import DatasetError, ModelConfigError, load_models, save_models, train_pipeline
from .relight import (
    BasisStack,
    EnvironmentMap,
    RelightError,
    evaluate,
    infer_batch,
    infer_relit,
    light_from_text,
    relight_env,
)
from .brdf import MaterialMaps

log = logging.getLogger("relightkit")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class ValidationError(ValueError):
    pass


def _load_config(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.deterministic:
        cfg.train.deterministic = True
    return cfg.validate()


def _camera_for(depth, cfg) -> CameraIntrinsics:
    _, h, w = depth.shape
    return CameraIntrinsics.default(w, h, cfg.data.focal_ratio)


def _settings(cfg) -> RenderSettings:
    return RenderSettings(
        f0=cfg.brdf.f0,
        cos_eps=cfg.brdf.cos_eps,
        flash_intensity=cfg.brdf.flash_intensity,
        light_intensity=cfg.brdf.light_intensity,
        noise_sigma=cfg.data.noise_sigma,
        blur_sigma=cfg.data.blur_sigma,
        shadow=cfg.shadow,
    )


def _write_image(path, img, preview=True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_raw(path, img)
    if preview:
        write_preview(path.with_suffix(".png"), img)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg.paths.data_dir)
    d = cfg.data
    if out.exists() and not out.is_dir():
        raise OSError(f"{out} exists and is not a directory")
    dirs = direction_grid(d.n_rings, d.per_ring)
    specs = scene_specs(
        d.n_train + d.n_test,
        cfg.seed,
        width=d.width,
        height=d.height,
        focal_ratio=d.focal_ratio,
        roughness_range=(d.rough_min, d.rough_max),
        normal_detail=d.normal_detail,
    )
    for s in specs:
        s.validate()
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_test"
    probe.write_bytes(b"")
    probe.unlink()
    workers = worker_count(cfg.train.deterministic)
    samples = generate(specs, dirs, _settings(cfg), cfg.seed, d.n_train, workers)
    write_dataset(samples, out, {"config": config_mod.to_dict(cfg)})
    print(f"wrote {len(samples)} scenes ({d.n_train} train, {d.n_test} test) x {len(dirs)} directions to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.scale is not None:
        cfg.scale = args.scale
    if args.depth is not None:
        cfg.train.depth = args.depth
    cfg.validate()
    data = Path(args.data or cfg.paths.data_dir)
    out = Path(args.out or cfg.paths.model_dir)
    samples = load_dataset(data, split="train")
    if not samples:
        raise ValidationError(f"{data} has no training scenes")
    models = train_pipeline(
        samples,
        cfg.train,
        cfg.scale,
        checkpoint_dir=out / "checkpoint",
        light_intensity=cfg.brdf.light_intensity,
        f0=cfg.brdf.f0,
        cos_eps=cfg.brdf.cos_eps,
    )
    save_models(models, out, {"config": config_mod.to_dict(cfg)})
    last = models.history[-1] if models.history else {}
    print(f"trained on {len(samples)} scenes; final stage-2 relight loss {last.get('relight', float('nan')):.5f}; saved to {out}")
    return EXIT_OK


def _read_inputs(args):
    flash = read_raw(args.flash)
    depth = read_raw(args.depth)
    if flash.shape[0] != 3 or depth.shape[0] != 1 or flash.shape[1:] != depth.shape[1:]:
        raise ShapeError(f"flash {flash.shape} and depth {depth.shape} do not match")
    return flash, depth


def _oracle_maps(args, flash_path) -> MaterialMaps:
    root = Path(args.maps) if args.maps else Path(flash_path).parent
    return MaterialMaps(read_raw(root / "albedo.rlk"), read_raw(root / "normal.rlk"), read_raw(root / "rough.rlk"))


def cmd_relight(args) -> int:
    cfg = _load_config(args)
    omega = light_from_text(args.light) if args.light else None
    if args.oracle == bool(args.models):
        raise ValidationError("choose exactly one of --oracle or --models")
    flash, depth = _read_inputs(args)
    K = _camera_for(depth, cfg)
    b = cfg.brdf
    maps = _oracle_maps(args, args.flash) if args.oracle else None
    models = None if args.oracle else load_models(args.models)
    if omega is not None:
        img = infer_relit(flash, depth, omega, K, models, "oracle" if args.oracle else "network", maps=maps,
                          intensity=b.light_intensity, f0=b.f0, cos_eps=b.cos_eps)
    else:
        env = EnvironmentMap(read_raw(args.env))
        dirs = direction_grid(cfg.data.n_rings, cfg.data.per_ring)
        if args.oracle:
            basis = np.stack([
                infer_relit(flash, depth, w, K, mode="oracle", maps=maps, intensity=b.light_intensity, f0=b.f0,
                            cos_eps=b.cos_eps)
                for w in dirs
            ])
        else:
            basis = infer_batch(flash, depth, dirs, K, models).relit
        img = relight_env(BasisStack(dirs, basis), env, b.light_intensity).astype(np.float32)
    _write_image(args.out, img, not args.no_preview)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_shadow(args) -> int:
    cfg = _load_config(args)
    omega = light_from_text(args.light)
    depth = read_raw(args.depth)
    if depth.shape[0] != 1:
        raise ShapeError("depth must have one channel")
    K = _camera_for(depth, cfg)
    points = unproject(depth, K)
    if args.models:
        mask = load_models(args.models).predict_shadow(shadow_encode(points, omega)[None])[0]
    else:
        mask = cast_shadow_mask(points, omega, cfg.shadow)
    out = Path(args.out)
    _write_image(out / "shadow.rlk", mask.astype(np.float32), not args.no_preview)
    write_raw(out / "encoded.rlk", shadow_encode(points, omega))
    print(f"wrote {out / 'shadow.rlk'} and {out / 'encoded.rlk'}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    _load_config(args)
    flash, depth = _read_inputs(args)
    maps = load_models(args.models).predict_maps(flash[None], depth[None])[0]
    out = Path(args.out)
    _write_image(out / "albedo.rlk", maps.albedo, not args.no_preview)
    _write_image(out / "normal.rlk", maps.normal, False)
    if not args.no_preview:
        write_preview(out / "normal.png", 0.5 * (maps.normal + 1.0))
    _write_image(out / "rough.rlk", maps.roughness, not args.no_preview)
    print(f"wrote albedo, normal and roughness maps to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    data = Path(args.data or cfg.paths.data_dir)
    report_path = Path(args.report or cfg.paths.report)
    samples = load_dataset(data, split="test")
    if not samples:
        raise ValidationError(f"{data} has no test scenes")
    models = noisy = None
    if not args.oracle:
        root = Path(args.models or cfg.paths.model_dir)
        if (root / "clean").is_dir() and (root / "noisy").is_dir():
            models, noisy = load_models(root / "clean"), load_models(root / "noisy")
        else:
            models = load_models(root)
    b = cfg.brdf
    limit = threadpool_limits(1) if cfg.train.deterministic else nullcontext()
    with limit:
        report = evaluate(samples, models, "oracle" if args.oracle else "network", b.light_intensity, b.f0,
                          b.cos_eps, noisy_models=noisy)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(format_table(report))
    return EXIT_OK


def format_table(report) -> str:
    cols = report["columns"]
    lines = ["        " + "".join(f"{c:>12}" for c in cols)]
    for label, row in report["mse"].items():
        lines.append(f"{label:<8}" + "".join(f"{v:>12.3e}" for v in row))
    for label, reps in report["psnr_by_direction"].items():
        lines.append(f"{label}: mean relight PSNR {reps['relight']['mean_psnr']:.2f} dB, "
                     f"mean shadow PSNR {reps['shadow']['mean_psnr']:.2f} dB")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config (defaults for every missing field)")
    common.add_argument("--seed", type=int, help="override every module seed")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="relightkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", help="dataset directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="two-stage training")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="model directory")
    t.add_argument("--epochs", type=int, help="epochs per stage")
    t.add_argument("--scale", type=float, help="channel scale factor")
    t.add_argument("--depth", choices=("clean", "noisy"), help="train on clean or degraded depth")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("relight", parents=[common], help="relight a flash image")
    r.add_argument("--flash", required=True)
    r.add_argument("--depth", required=True)
    light = r.add_mutually_exclusive_group(required=True)
    light.add_argument("--light", help="direction of light travel x,y,z (z > 0)")
    light.add_argument("--env", help="equirectangular environment map (.rlk)")
    r.add_argument("--models", help="trained model directory")
    r.add_argument("--oracle", action="store_true", help="use ground-truth maps instead of networks")
    r.add_argument("--maps", help="directory with albedo/normal/rough.rlk for --oracle (default: next to --flash)")
    r.add_argument("--out", required=True)
    r.add_argument("--no-preview", action="store_true")
    r.set_defaults(func=cmd_relight)

    s = sub.add_parser("shadow", parents=[common], help="cast-shadow mask and encoded points")
    s.add_argument("--depth", required=True)
    s.add_argument("--light", required=True)
    s.add_argument("--models", help="predict with ShadowNet instead of the geometric oracle")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--no-preview", action="store_true")
    s.set_defaults(func=cmd_shadow)

    d = sub.add_parser("decompose", parents=[common], help="albedo, normal and roughness from flash + depth")
    d.add_argument("--flash", required=True)
    d.add_argument("--depth", required=True)
    d.add_argument("--models", required=True)
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--no-preview", action="store_true")
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("eval", parents=[common], help="test-split report for clean and degraded depth")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--models", help="model directory (or one with clean/ and noisy/ subdirectories)")
    e.add_argument("--oracle", action="store_true", help="evaluate the ground-truth composition path")
    e.add_argument("--report", help="output report path (JSON)")
    e.set_defaults(func=cmd_eval)
    return p


_VALIDATION = (
    ValidationError,
    RelightError,
    ShapeError,
    SchemaError,
    DatasetError,
    ModelConfigError,
    config_mod.ConfigError,
    ValueError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as e:
        print(f"relightkit {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except _VALIDATION as e:
        print(f"relightkit {args.command}: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
