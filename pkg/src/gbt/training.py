"""Training loop, metrics, and the binary checkpoint container.

Everything here is deterministic given (seed, config, dataset): scene and
ray sampling use one explicit generator, gradient accumulation order is
fixed, and checkpoints round-trip bit-exactly.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .errors import (BadMagic, GbtError, InsufficientViews, IoError, ShapeMismatch,
                     ShapeMismatchOnLoad, UnsupportedVersion)
from .geometry import RaySet, canonicalize_poses, pixel_ray_set
from .model import ModelConfig, decode, encode, init_params, trainable

CHECKPOINT_MAGIC = b"GBT1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    context_views: int = 3
    rays_per_step: int = 1024
    batch_scenes: int = 2
    lr: float = 1e-3
    max_steps: int = 2000
    seed: int = 0
    eval_every: int = 200

    def __post_init__(self):
        if self.context_views < 1:
            raise ValueError("need at least one context view")


def paper_scale_train_config() -> TrainConfig:
    """Full-scale preset (7168 rays, batch 6, lr 1e-5); kept selectable,
    not used at desk scale."""
    return TrainConfig(context_views=3, rays_per_step=7168, batch_scenes=6,
                       lr=1e-5, max_steps=1_600_000)


def l2_ray_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all entries of [Q, 3] color batches."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    diff = ad.sub(pred, target)
    return ad.mean(ad.mul(diff, diff))


def psnr(pred_image: np.ndarray, target_image: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images; zero MSE capped at 99 dB."""
    if pred_image.shape != target_image.shape:
        raise ShapeMismatch(f"{pred_image.shape} vs {target_image.shape}")
    mse = float(np.mean((np.asarray(pred_image, dtype=np.float64)
                         - np.asarray(target_image, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return 99.0
    return min(99.0, 10.0 * math.log10(1.0 / mse))


def _scene_forward_loss(scene_views, params, model_cfg: ModelConfig,
                        train_cfg: TrainConfig, rng: np.random.Generator) -> Tensor:
    """Samples context + query views and a ray batch from one scene and
    returns the reconstruction loss node."""
    n_views = len(scene_views)
    v = train_cfg.context_views
    if n_views < v + 1:
        raise InsufficientViews(f"scene has {n_views} views, need {v + 1}")
    pick = rng.choice(n_views, size=v + 1, replace=False)
    ctx = [scene_views.views[i] for i in pick[:v]]
    query = scene_views.views[pick[v]]
    intr = query.intr

    poses = canonicalize_poses([c.pose for c in ctx] + [query.pose], 0)
    images = np.stack([c.image for c in ctx])

    q = min(train_cfg.rays_per_step, intr.width * intr.height)
    pix = rng.choice(intr.width * intr.height, size=q, replace=False)
    ys = (pix // intr.width) + 0.5
    xs = (pix % intr.width) + 0.5
    rays = pixel_ray_set(poses[-1], intr, xs.astype(np.float64), ys.astype(np.float64))

    encoding = encode(images, poses[:-1], intr, params, model_cfg)
    pred = decode(rays, encoding, params, model_cfg)
    target = query.image.reshape(3, -1)[:, pix].T  # [Q, 3]
    return l2_ray_loss(pred, Tensor(target.astype(pred.dtype)))


def train_step(params, dataset, optimizer: Adam, model_cfg: ModelConfig,
               train_cfg: TrainConfig, rng: np.random.Generator) -> float:
    """One optimization step over batch_scenes sampled scenes."""
    scene_ids = rng.choice(len(dataset), size=min(train_cfg.batch_scenes, len(dataset)),
                           replace=False)
    optimizer.zero_grad()
    total = None
    for sid in scene_ids:
        loss = _scene_forward_loss(dataset[sid], params, model_cfg, train_cfg, rng)
        total = loss if total is None else ad.add(total, loss)
    total = ad.mul(total, Tensor(np.asarray(1.0 / len(scene_ids), dtype=total.dtype)))
    value = float(total.data)
    if not math.isfinite(value):
        raise GbtError("non-finite training loss")
    total.backward()
    optimizer.step()
    return value


def train(params, dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
          log=None, progress=None):
    """Runs max_steps of training; returns the loss history.

    `log` receives (step, loss) tuples, `progress` is called every
    eval_every steps with (step, mean recent loss).
    """
    rng = np.random.default_rng(train_cfg.seed)
    optimizer = Adam(trainable(params), lr=train_cfg.lr)
    history = []
    for step in range(1, train_cfg.max_steps + 1):
        loss = train_step(params, dataset, optimizer, model_cfg, train_cfg, rng)
        history.append(loss)
        if log is not None:
            log(step, loss)
        if progress is not None and step % train_cfg.eval_every == 0:
            recent = history[-train_cfg.eval_every:]
            progress(step, sum(recent) / len(recent))
    return history, optimizer


def evaluate(params, model_cfg: ModelConfig, eval_scenes, context_views: int,
             seed: int, num_query: int = 8, perturb=None):
    """PSNR table over held-out scenes with seeded context/query sampling.

    The split depends only on (seed, scene count), so different models and
    noise levels see identical context/query pairs. `perturb` optionally
    maps the list of context poses to perturbed ones (camera-noise sweeps;
    the query pose is never touched). Returns (rows, per_scene_means) with
    rows = [(scene_index, query_frame_index, psnr)].
    """
    from .model import render_view

    rows = []
    per_scene = []
    for si, scene_views in enumerate(eval_scenes):
        rng = np.random.default_rng((seed, si))
        n = len(scene_views)
        pick = rng.choice(n, size=min(context_views + num_query, n), replace=False)
        ctx = [scene_views.views[i] for i in pick[:context_views]]
        queries = [scene_views.views[i] for i in pick[context_views:]]
        ctx_poses = [c.pose for c in ctx]
        if perturb is not None:
            ctx_poses = perturb(ctx_poses)
        images = np.stack([c.image for c in ctx])
        vals = []
        for qv in queries:
            pred = render_view(images, ctx_poses, qv.intr, qv.pose, params, model_cfg)
            val = psnr(pred, qv.image)
            rows.append((si, qv.frame_index, val))
            vals.append(val)
        per_scene.append(sum(vals) / len(vals))
    return rows, per_scene


# --- checkpoint container -------------------------------------------------

def _pack_array(buf, name: str, arr: np.ndarray):
    nb = name.encode("utf-8")
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    data = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(data.tobytes())


def _unpack_array(buf):
    (nlen,) = struct.unpack("<H", buf.read(2))
    name = buf.read(nlen).decode("utf-8")
    (rank,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape)
    return name, arr


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict  # name -> np.ndarray (f32)
    step: int
    optimizer: dict | None = None  # name -> np.ndarray, plus step count
    optimizer_step: int = 0


def save_checkpoint(path: str, config: ModelConfig, params, step: int,
                    optimizer: Adam | None = None):
    """Binary, little-endian f32 container; round-trips bit-exactly."""
    import json

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_json = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    buf.write(struct.pack("<Q", step))
    buf.write(struct.pack("<B", 1 if optimizer is not None else 0))
    items = list(params.items())
    buf.write(struct.pack("<I", len(items)))
    for name, tensor in items:
        _pack_array(buf, name, tensor.data if isinstance(tensor, Tensor) else tensor)
    if optimizer is not None:
        buf.write(struct.pack("<Q", optimizer.step_count))
        state = optimizer.state_arrays()
        buf.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            _pack_array(buf, name, arr)
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoError(f"checkpoint write failed: {exc}") from exc


def load_checkpoint(path: str) -> Checkpoint:
    import json

    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"checkpoint read failed: {exc}") from exc
    buf = io.BytesIO(raw)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path} is not a checkpoint")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}")
    (clen,) = struct.unpack("<I", buf.read(4))
    config = ModelConfig.from_dict(json.loads(buf.read(clen).decode("utf-8")))
    (step,) = struct.unpack("<Q", buf.read(8))
    (has_opt,) = struct.unpack("<B", buf.read(1))
    (nparams,) = struct.unpack("<I", buf.read(4))
    params = dict(_unpack_array(buf) for _ in range(nparams))
    optimizer = None
    opt_step = 0
    if has_opt:
        (opt_step,) = struct.unpack("<Q", buf.read(8))
        (nstate,) = struct.unpack("<I", buf.read(4))
        optimizer = dict(_unpack_array(buf) for _ in range(nstate))
    return Checkpoint(config, params, step, optimizer, opt_step)


def restore_params(checkpoint: Checkpoint, config: ModelConfig) -> dict:
    """Materializes Tensors for `config` from a checkpoint, verifying that
    every parameter shape matches."""
    params = init_params(config, seed=0)
    if set(params) != set(checkpoint.params):
        raise ShapeMismatchOnLoad(
            f"parameter names differ: {sorted(set(params) ^ set(checkpoint.params))}")
    for name, tensor in params.items():
        arr = checkpoint.params[name]
        if arr.shape != tensor.data.shape:
            raise ShapeMismatchOnLoad(
                f"{name}: checkpoint {arr.shape} vs config {tensor.data.shape}")
        tensor.data = arr.astype(np.float32).copy()
    return params
