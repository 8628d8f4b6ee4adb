"""The four evaluation protocols: variant ablation, camera-noise sweep,
viewpoint-distance sweep, and attention-map export."""
from __future__ import annotations

import csv

import numpy as np

from .errors import GbtError
from .geometry import perturb_pose
from .model import ModelConfig, init_params, render_view
from .training import TrainConfig, evaluate, psnr, train


def run_ablation(train_scenes, eval_scenes, variants, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, progress=None):
    """Trains one model per variant with identical seeds and data order and
    evaluates all of them on the same context/query splits.

    Returns (rows, means) with rows = [(variant, scene_index, psnr_mean)]
    and means = {variant: overall mean}.
    """
    if len(variants) < 2:
        raise GbtError("ablation needs at least two variants")
    rows = []
    means = {}
    trained = {}
    for variant in variants:
        cfg = _with_variant(model_cfg, variant)
        params = init_params(cfg, seed=train_cfg.seed)
        train(params, train_scenes, cfg, train_cfg,
              progress=(lambda s, l, v=variant: progress(v, s, l)) if progress else None)
        _, per_scene = evaluate(params, cfg, eval_scenes,
                                train_cfg.context_views, seed=train_cfg.seed)
        for si, val in enumerate(per_scene):
            rows.append((variant, si, val))
        means[variant] = sum(per_scene) / len(per_scene)
        trained[variant] = (params, cfg)
    return rows, means, trained


def _with_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    d = cfg.to_dict()
    d["variant"] = variant
    return ModelConfig.from_dict(d)


def run_noise_sweep(params, model_cfg: ModelConfig, eval_scenes,
                    sigmas, context_views: int, seed: int):
    """PSNR under synthetic context-pose noise at inference.

    Context/query sampling is identical across sigmas; only the context
    poses are perturbed (per-scene seeded), never the query pose. The
    sigma=0 row is exactly the clean evaluation.
    """
    rows = []
    for sigma in sigmas:
        counter = [0]

        def perturb(poses, sigma=sigma, counter=counter):
            rng = np.random.default_rng((seed, 7919, counter[0]))
            counter[0] += 1
            return [perturb_pose(p, sigma, rng) for p in poses]

        _, per_scene = evaluate(params, model_cfg, eval_scenes, context_views,
                                seed=seed, perturb=perturb)
        rows.append((float(sigma), sum(per_scene) / len(per_scene)))
    return rows


def run_viewpoint_sweep(params, model_cfg: ModelConfig, scene_views,
                        context_indices, seed: int = 0):
    """Renders every non-context view of an orbit sequence from the given
    context views; returns [(view_index, psnr)] in index order."""
    context_indices = list(context_indices)
    for i in context_indices:
        if not (0 <= i < len(scene_views)):
            raise GbtError(f"context index {i} out of range")
    ctx = [scene_views.views[i] for i in context_indices]
    images = np.stack([c.image for c in ctx])
    poses = [c.pose for c in ctx]
    rows = []
    for j, view in enumerate(scene_views.views):
        if j in context_indices:
            continue
        pred = render_view(images, poses, view.intr, view.pose, params, model_cfg)
        rows.append((j, psnr(pred, view.image)))
    return rows


def write_csv(path: str, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
