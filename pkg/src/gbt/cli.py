"""Command-line entry point.

Exit codes: 0 success, 2 usage errors, 3 IO errors, 4 numeric failures
(NaN/Inf detected), 1 anything else.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import errors
from .config import default_config, document_defaults, load_config
from .experiments import (run_ablation, run_noise_sweep, run_viewpoint_sweep,
                          write_csv)
from .model import attention_maps, init_params, render_view, tiny_config
from .scenes import load_dataset, make_dataset
from .training import (Checkpoint, evaluate, load_checkpoint, restore_params,
                       save_checkpoint, train)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _load_config_arg(path):
    if path is None:
        return default_config()
    return load_config(path)


def _write_image(path, image01):
    from .scenes import _write_png
    _write_png(path, np.asarray(image01))


def cmd_generate(args):
    cfg = _load_config_arg(args.config)
    v = cfg.values
    make_dataset(args.out, v["num_scenes"], v["views_per_scene"], v["image_size"],
                 v["seed"], v["category_style"], v["orbit_radius"], v["fov_degrees"],
                 v["elevation_degrees"], v["elevation_jitter_degrees"])
    print(f"dataset written to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config_arg(args.config)
    model_cfg = cfg.model_config()
    if args.variant:
        from .experiments import _with_variant
        model_cfg = _with_variant(model_cfg, args.variant)
    train_cfg = cfg.train_config()
    dataset = load_dataset(args.data)
    params = init_params(model_cfg, seed=train_cfg.seed)
    log_rows = []
    _, optimizer = train(params, dataset, model_cfg, train_cfg,
                         log=lambda s, l: log_rows.append((s, f"{l:.8f}")),
                         progress=lambda s, l: print(f"step {s}: loss {l:.6f}"))
    save_checkpoint(args.out, model_cfg, params, train_cfg.max_steps, optimizer)
    write_csv(args.out + ".loss.csv", ["step", "loss"], log_rows)
    print(f"checkpoint written to {args.out}")
    return 0


def _load_model(path):
    ckpt = load_checkpoint(path)
    return restore_params(ckpt, ckpt.config), ckpt.config


def _context_views(scene_views, indices):
    views = [scene_views.views[i] for i in indices]
    images = np.stack([v.image for v in views])
    poses = [v.pose for v in views]
    return views, images, poses


def cmd_render(args):
    params, model_cfg = _load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    scene = dataset[args.scene]
    context = [int(i) for i in args.context.split(",")]
    _, images, poses = _context_views(scene, context)
    os.makedirs(args.out, exist_ok=True)
    intr = scene.views[0].intr
    if args.orbit:
        from .scenes import orbit_cameras, DEFAULT_ORBIT_RADIUS, DEFAULT_ELEVATION_DEGREES
        targets = orbit_cameras(args.orbit, DEFAULT_ORBIT_RADIUS,
                                math.radians(DEFAULT_ELEVATION_DEGREES))
        names = [f"orbit_{i}.png" for i in range(len(targets))]
    else:
        if args.query is None:
            raise errors.GbtError("render needs --query or --orbit")
        targets = [scene.views[args.query].pose]
        names = [f"query_{args.query}.png"]
    for pose, name in zip(targets, names):
        img = render_view(images, poses, intr, pose, params, model_cfg)
        if not np.all(np.isfinite(img)):
            raise FloatingPointError("non-finite pixels in render")
        _write_image(os.path.join(args.out, name), img)
    print(f"wrote {len(targets)} image(s) to {args.out}")
    return 0


def cmd_evaluate(args):
    params, model_cfg = _load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    rows, per_scene = evaluate(params, model_cfg, dataset, args.V, args.seed,
                               num_query=args.queries)
    write_csv(args.out, ["scene", "query_index", "psnr"],
              [(s, q, f"{p:.6f}") for s, q, p in rows])
    mean = sum(per_scene) / len(per_scene)
    print(f"mean PSNR {mean:.3f} dB over {len(per_scene)} scenes -> {args.out}")
    return 0


def cmd_ablate(args):
    cfg = _load_config_arg(args.config)
    dataset = load_dataset(args.data)
    n_eval = min(cfg["eval_scenes"], max(1, len(dataset) // 4))
    train_scenes = dataset[:-n_eval]
    eval_scenes = dataset[-n_eval:]
    rows, means, _ = run_ablation(train_scenes, eval_scenes,
                                  cfg["ablation_variants"], cfg.model_config(),
                                  cfg.train_config(),
                                  progress=lambda v, s, l: print(f"[{v}] step {s}: loss {l:.6f}"))
    write_csv(args.out, ["variant", "scene", "psnr_mean"],
              [(v, s, f"{p:.6f}") for v, s, p in rows])
    for v, m in means.items():
        print(f"{v}: mean PSNR {m:.3f} dB")
    return 0


def cmd_noise(args):
    cfg = _load_config_arg(args.config)
    params, model_cfg = _load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    rows = run_noise_sweep(params, model_cfg, dataset, cfg["noise_sigmas"],
                           cfg["context_views"], cfg["seed"])
    write_csv(args.out, ["sigma", "psnr_mean"],
              [(s, f"{p:.6f}") for s, p in rows])
    for s, p in rows:
        print(f"sigma {s}: mean PSNR {p:.3f} dB")
    return 0


def cmd_viewsweep(args):
    cfg = _load_config_arg(args.config)
    params, model_cfg = _load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    context = cfg["viewsweep_context"]
    all_rows = []
    for si, scene in enumerate(dataset):
        for idx, p in run_viewpoint_sweep(params, model_cfg, scene, context,
                                          cfg["seed"]):
            all_rows.append((si, idx, f"{p:.6f}"))
    write_csv(args.out, ["scene", "view_index", "psnr"], all_rows)
    print(f"viewpoint sweep written to {args.out}")
    return 0


_HEAT_RGB = np.array([0.27, 0.0, 0.33])  # monotone violet ramp endpoint


def _save_heatmaps(maps, context_images, grid, out_dir, image_size):
    """Per layer: raw grayscale maps (pixel = round(weight*255)) plus 40%
    alpha overlays on each context view."""
    os.makedirs(out_dir, exist_ok=True)
    scale = image_size // grid
    for layer, m in enumerate(maps):
        for vi in range(m.shape[0]):
            cell = np.round(m[vi] * 255.0).astype(np.uint8)
            up = np.kron(cell, np.ones((scale, scale), dtype=np.uint8))
            from PIL import Image
            Image.fromarray(up, mode="L").save(
                os.path.join(out_dir, f"heat_layer{layer}_view{vi}.png"))
            heat = m[vi] / max(m[vi].max(), 1e-12)
            heat_up = np.kron(heat, np.ones((scale, scale)))
            overlay = context_images[vi] * 0.6 + 0.4 * heat_up[None] * (
                1.0 - _HEAT_RGB[:, None, None]) + 0.0
            _write_image(os.path.join(out_dir, f"overlay_layer{layer}_view{vi}.png"),
                         np.clip(overlay, 0, 1))


def cmd_attn(args):
    params, model_cfg = _load_model(args.checkpoint)
    dataset = load_dataset(args.data)
    scene = dataset[args.scene]
    context = [int(i) for i in args.context.split(",")]
    _, images, poses = _context_views(scene, context)
    x, y = (int(v) for v in args.pixel.split(","))
    query = scene.views[args.query]
    maps = attention_maps(images, poses, query.intr, query.pose, (x, y),
                          params, model_cfg)
    _save_heatmaps(maps, images, model_cfg.grid, args.out, model_cfg.image_size)
    print(f"wrote {len(maps)} layer heatmap sets to {args.out}")
    return 0


def cmd_gradcheck(args):
    from .gradsuite import run_grad_suite
    worst, report = run_grad_suite()
    print(report)
    if not math.isfinite(worst):
        raise FloatingPointError("non-finite gradient")
    if worst >= 1e-4:
        print(f"FAIL: max rel err {worst:.3e} >= 1e-4")
        return 1
    print(f"PASS: max rel err {worst:.3e} < 1e-4")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gbt",
                                description="few-view novel view synthesis")
    p.add_argument("--help-config", action="store_true",
                   help="print all config keys with defaults and exit")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("generate", help="write a synthetic multi-view dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render query or orbit views")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--scene", type=int, required=True)
    r.add_argument("--context", required=True, help="comma-separated view indices")
    r.add_argument("--query", type=int)
    r.add_argument("--orbit", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)

    e = sub.add_parser("evaluate", help="PSNR table over a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--V", type=int, default=3)
    e.add_argument("--queries", type=int, default=8)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and compare model variants")
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)

    n = sub.add_parser("noise", help="camera-noise robustness sweep")
    n.add_argument("--config")
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--data", required=True)
    n.add_argument("--out", required=True)
    n.set_defaults(fn=cmd_noise)

    v = sub.add_parser("viewsweep", help="PSNR vs viewpoint distance")
    v.add_argument("--config")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_viewsweep)

    at = sub.add_parser("attn", help="export decoder attention heatmaps")
    at.add_argument("--checkpoint", required=True)
    at.add_argument("--data", required=True)
    at.add_argument("--scene", type=int, required=True)
    at.add_argument("--context", default="0,1,2")
    at.add_argument("--query", type=int, default=3)
    at.add_argument("--pixel", required=True, help="x,y")
    at.add_argument("--out", required=True)
    at.set_defaults(fn=cmd_attn)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--size", default="tiny", choices=["tiny"])
    gc.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.help_config:
        print(document_defaults())
        return 0
    if not getattr(args, "fn", None):
        parser.print_usage()
        return EXIT_USAGE
    try:
        return args.fn(args)
    except errors.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError,) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, errors.IoError, errors.BadMagic, errors.UnsupportedVersion,
            errors.ShapeMismatchOnLoad) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except errors.GbtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
