"""The view-synthesis network: conv stem with late camera fusion, a
ray-distance-biased transformer encoder over patch tokens, a biased
cross-attention decoder over query rays, and a small color MLP.

Attention logits receive an additive penalty -gamma^2 * dist(ray_q, ray_k)
shared across heads; gamma is a per-layer weight whose treatment defines
the model variants:

  gbt       learnable gamma (init 1.0)
  gbt_fb    gamma frozen at 1.0
  gbt_nb    no bias term at all
  srt_star  no bias, and rays embedded as (origin, direction) instead of
            (direction, moment)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NonCanonicalPoses, OutOfBounds, ShapeMismatch
from .geometry import (CameraPose, HarmonicConfig, Intrinsics, RaySet,
                       harmonic_embed, image_grid_rays, patch_rays)
from .kernels import pairwise_ray_distance

VARIANTS = ("gbt", "gbt_fb", "gbt_nb", "srt_star")
FF_EXPANSION = 4


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    grid: int = 8
    latent_dim: int = 192
    num_heads: int = 6
    encoder_layers: int = 4
    decoder_layers: int = 2
    mlp_hidden: tuple = (128, 64)
    stem_channels: tuple = (32, 64, 128)
    harmonic: HarmonicConfig = field(default_factory=HarmonicConfig)
    variant: str = "gbt"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.latent_dim % self.num_heads:
            raise ValueError("latent_dim must be divisible by num_heads")
        if self.image_size % self.grid:
            raise ValueError("grid must divide image_size")
        if self.image_size != self.grid * 2 ** len(self.stem_channels):
            raise ValueError(
                f"stem with {len(self.stem_channels)} stride-2 stages maps "
                f"{self.image_size} to {self.image_size >> len(self.stem_channels)}, "
                f"not grid {self.grid}")

    @property
    def ray_dim(self) -> int:
        return self.harmonic.output_dim(6)

    @property
    def biased(self) -> bool:
        return self.variant in ("gbt", "gbt_fb")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        d["stem_channels"] = list(self.stem_channels)
        d["harmonic"] = {"num_frequencies": self.harmonic.num_frequencies,
                         "min_exponent": self.harmonic.min_exponent}
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["mlp_hidden"] = tuple(d["mlp_hidden"])
        d["stem_channels"] = tuple(d["stem_channels"])
        d["harmonic"] = HarmonicConfig(**d["harmonic"])
        return ModelConfig(**d)


def paper_scale_config(variant="gbt") -> ModelConfig:
    """Full-scale preset: 256px images, 16x16 grid, 768-d latents, 12
    heads, 8 encoder and 4 decoder layers. Used for shape tests only."""
    return ModelConfig(image_size=256, grid=16, latent_dim=768, num_heads=12,
                       encoder_layers=8, decoder_layers=4, mlp_hidden=(256, 64),
                       stem_channels=(64, 128, 256, 256), variant=variant)


def tiny_config(variant="gbt") -> ModelConfig:
    """Smallest config that exercises every code path; used by the
    gradient-check suite."""
    return ModelConfig(image_size=8, grid=2, latent_dim=16, num_heads=2,
                       encoder_layers=1, decoder_layers=1, mlp_hidden=(8,),
                       stem_channels=(4, 8),
                       harmonic=HarmonicConfig(num_frequencies=2, min_exponent=-1),
                       variant=variant)


@dataclass
class SceneEncoding:
    """Set-latent scene representation: one token per input patch, each
    paired with its patch ray."""

    tokens: Tensor          # [V*G*G, latent_dim]
    token_rays: RaySet      # aligned index-for-index
    num_views: int
    grid: int


def _kaiming(rng, fan_in, shape, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameter set. The random stream consumes weights in a fixed
    order independent of variant, so variants sharing a seed share all
    weights whose shapes agree; gamma is initialized to the constant 1."""
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}

    def param(name, data):
        p[name] = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)

    cin = 3
    for i, cout in enumerate(cfg.stem_channels):
        param(f"stem.{i}.w", _kaiming(rng, cin * 9, (cout, cin, 3, 3), dtype))
        param(f"stem.{i}.b", np.zeros(cout))
        cin = cout

    d = cfg.latent_dim
    fuse_in = cfg.stem_channels[-1] + cfg.ray_dim
    param("fuse.w", _kaiming(rng, fuse_in, (fuse_in, d), dtype))
    param("fuse.b", np.zeros(d))

    def block(prefix):
        for nm in ("wq", "wk", "wv", "wo"):
            param(f"{prefix}.{nm}", _kaiming(rng, d, (d, d), dtype))
            if nm != "wk":
                # A key bias shifts every logit in a row equally and cancels
                # in the softmax; omit the dead parameter.
                param(f"{prefix}.{nm}_b", np.zeros(d))
        param(f"{prefix}.ln1.g", np.ones(d))
        param(f"{prefix}.ln1.b", np.zeros(d))
        param(f"{prefix}.ln2.g", np.ones(d))
        param(f"{prefix}.ln2.b", np.zeros(d))
        param(f"{prefix}.ff1.w", _kaiming(rng, d, (d, FF_EXPANSION * d), dtype))
        param(f"{prefix}.ff1.b", np.zeros(FF_EXPANSION * d))
        param(f"{prefix}.ff2.w", _kaiming(rng, FF_EXPANSION * d, (FF_EXPANSION * d, d), dtype))
        param(f"{prefix}.ff2.b", np.zeros(d))

    for l in range(cfg.encoder_layers):
        block(f"enc.{l}")
    param("enc_norm.g", np.ones(d))
    param("enc_norm.b", np.zeros(d))

    param("query_embed.w", _kaiming(rng, cfg.ray_dim, (cfg.ray_dim, d), dtype))
    param("query_embed.b", np.zeros(d))
    for l in range(cfg.decoder_layers):
        block(f"dec.{l}")
    param("dec_norm.g", np.ones(d))
    param("dec_norm.b", np.zeros(d))

    hin = d
    for i, h in enumerate(cfg.mlp_hidden):
        param(f"mlp.{i}.w", _kaiming(rng, hin, (hin, h), dtype))
        param(f"mlp.{i}.b", np.zeros(h))
        hin = h
    param("mlp.out.w", _kaiming(rng, hin, (hin, 3), dtype))
    param("mlp.out.b", np.zeros(3))

    # Per-layer bias weights come last so the shared stream above is
    # identical across variants.
    if cfg.variant in ("gbt", "gbt_fb"):
        for l in range(cfg.encoder_layers):
            p[f"enc.{l}.gamma"] = Tensor(np.ones((), dtype=dtype),
                                         requires_grad=(cfg.variant == "gbt"))
        for l in range(cfg.decoder_layers):
            p[f"dec.{l}.gamma"] = Tensor(np.ones((), dtype=dtype),
                                         requires_grad=(cfg.variant == "gbt"))
    return p


def trainable(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: v for k, v in params.items() if v.requires_grad}


def _ray_param_vectors(rays: RaySet, variant: str) -> np.ndarray:
    """The 6-vector per ray fed to the harmonic embedding: (d, m) for the
    line-coordinate variants, (o, d) for srt_star."""
    if variant == "srt_star":
        return np.concatenate([rays.origins, rays.dirs], axis=-1)
    return np.concatenate([rays.dirs, rays.moments], axis=-1)


def _ray_embedding(rays: RaySet, cfg: ModelConfig, dtype) -> Tensor:
    vec = _ray_param_vectors(rays, cfg.variant)
    return Tensor(harmonic_embed(vec, cfg.harmonic).astype(dtype))


def _distance_matrix(q_rays: RaySet, k_rays: RaySet, dtype) -> Tensor:
    d = pairwise_ray_distance(q_rays.dirs, q_rays.moments,
                              k_rays.dirs, k_rays.moments)
    return Tensor(d.astype(dtype))


def _bias_tensor(gamma: Tensor, dist: Tensor) -> Tensor:
    # -(gamma^2) * distance: nonpositive, shared across heads.
    return ad.neg(ad.mul(ad.mul(gamma, gamma), dist))


def multihead_attention(q_in: Tensor, kv_in: Tensor, params, prefix: str,
                        num_heads: int, bias: Tensor | None,
                        capture: list | None = None) -> Tensor:
    """Pre-projected multi-head attention; returns the output projection.

    `bias` is an additive [Nq, Nk] logit term broadcast over heads.
    When `capture` is given, the head-averaged attention matrix (as a
    plain array) is appended to it.
    """
    nq = q_in.shape[0]
    nk = kv_in.shape[0]
    d = q_in.shape[-1]
    dh = d // num_heads

    def split(x, n):
        return ad.transpose(ad.reshape(x, (n, num_heads, dh)), (1, 0, 2))

    q = split(ad.linear(q_in, params[f"{prefix}.wq"], params[f"{prefix}.wq_b"]), nq)
    k = split(ad.linear(kv_in, params[f"{prefix}.wk"]), nk)
    v = split(ad.linear(kv_in, params[f"{prefix}.wv"], params[f"{prefix}.wv_b"]), nk)

    scale = 1.0 / math.sqrt(dh)
    logits = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))),
                    Tensor(np.asarray(scale, dtype=q_in.dtype)))  # [H, Nq, Nk]
    if bias is not None:
        attn = ad.softmax_with_bias(logits, ad.reshape(bias, (1, nq, nk)))
    else:
        attn = ad.softmax(logits)
    if capture is not None:
        capture.append(attn.data.mean(axis=0))
    out = ad.matmul(attn, v)  # [H, Nq, dh]
    out = ad.reshape(ad.transpose(out, (1, 0, 2)), (nq, d))
    return ad.linear(out, params[f"{prefix}.wo"], params[f"{prefix}.wo_b"])


def _feed_forward(x: Tensor, params, prefix: str) -> Tensor:
    h = ad.gelu(ad.linear(x, params[f"{prefix}.ff1.w"], params[f"{prefix}.ff1.b"]))
    return ad.linear(h, params[f"{prefix}.ff2.w"], params[f"{prefix}.ff2.b"])


def gbt_encoder_layer(tokens: Tensor, dist: Tensor | None, params, prefix: str,
                      cfg: ModelConfig) -> Tensor:
    """Pre-LN self-attention block with the optional distance bias."""
    gamma = params.get(f"{prefix}.gamma")
    bias = _bias_tensor(gamma, dist) if (gamma is not None and dist is not None) else None
    normed = ad.layernorm(tokens, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    tokens = ad.add(tokens, multihead_attention(normed, normed, params, prefix,
                                                cfg.num_heads, bias))
    normed = ad.layernorm(tokens, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return ad.add(tokens, _feed_forward(normed, params, prefix))


def gbt_decoder_layer(queries: Tensor, memory: Tensor, dist: Tensor | None,
                      params, prefix: str, cfg: ModelConfig,
                      capture: list | None = None) -> Tensor:
    """Pre-LN cross-attention block; queries never attend to each other."""
    gamma = params.get(f"{prefix}.gamma")
    bias = _bias_tensor(gamma, dist) if (gamma is not None and dist is not None) else None
    normed = ad.layernorm(queries, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    queries = ad.add(queries, multihead_attention(normed, memory, params, prefix,
                                                  cfg.num_heads, bias, capture))
    normed = ad.layernorm(queries, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return ad.add(queries, _feed_forward(normed, params, prefix))


def build_patch_rays(poses, intr: Intrinsics, grid: int) -> RaySet:
    """Patch-center rays for every view, concatenated view-major."""
    sets = [patch_rays(pose, intr, grid) for pose in poses]
    return RaySet(np.concatenate([s.origins for s in sets]),
                  np.concatenate([s.dirs for s in sets]),
                  np.concatenate([s.moments for s in sets]))


def camera_fused_patch_embed(images, poses, intr: Intrinsics, params,
                             cfg: ModelConfig, rays: RaySet | None = None):
    """Conv-stem features per patch, concatenated with the harmonic
    embedding of the patch ray and projected to the latent width.

    Returns (tokens [V*G*G, latent_dim], patch RaySet). Poses must be
    canonicalized: one of them has to be the identity.
    """
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != cfg.image_size:
        raise ShapeMismatch(f"expected [V,3,{cfg.image_size},{cfg.image_size}], got {images.shape}")
    if not any(np.allclose(p.rotation, np.eye(3), atol=1e-6)
               and np.allclose(p.translation, 0.0, atol=1e-6) for p in poses):
        raise NonCanonicalPoses("no input pose is the identity")

    dtype = params["fuse.w"].dtype
    x = Tensor(images.astype(dtype))
    for i in range(len(cfg.stem_channels)):
        x = ad.conv2d(x, params[f"stem.{i}.w"], params[f"stem.{i}.b"], stride=2, pad=1)
        x = ad.relu(x)
    v = images.shape[0]
    g = cfg.grid
    feats = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (v * g * g, cfg.stem_channels[-1]))

    if rays is None:
        rays = build_patch_rays(poses, intr, g)
    fused = ad.concat([feats, _ray_embedding(rays, cfg, dtype)], axis=-1)
    tokens = ad.linear(fused, params["fuse.w"], params["fuse.b"])
    return tokens, rays


def encode(images, poses, intr: Intrinsics, params, cfg: ModelConfig,
           rays: RaySet | None = None) -> SceneEncoding:
    """Runs the stem and the full encoder stack; the pairwise token
    distance matrix is computed once and shared by all layers."""
    tokens, rays = camera_fused_patch_embed(images, poses, intr, params, cfg, rays)
    dist = _distance_matrix(rays, rays, tokens.dtype) if cfg.biased else None
    for l in range(cfg.encoder_layers):
        tokens = gbt_encoder_layer(tokens, dist, params, f"enc.{l}", cfg)
    tokens = ad.layernorm(tokens, params["enc_norm.g"], params["enc_norm.b"])
    return SceneEncoding(tokens, rays, len(poses), cfg.grid)


def decode(query_rays: RaySet, encoding: SceneEncoding, params, cfg: ModelConfig,
           capture: list | None = None) -> Tensor:
    """Maps query rays to RGB in [0, 1]; shape [Q, 3]."""
    dtype = encoding.tokens.dtype
    q = ad.linear(_ray_embedding(query_rays, cfg, dtype),
                  params["query_embed.w"], params["query_embed.b"])
    dist = (_distance_matrix(query_rays, encoding.token_rays, dtype)
            if cfg.biased else None)
    for l in range(cfg.decoder_layers):
        q = gbt_decoder_layer(q, encoding.tokens, dist, params, f"dec.{l}", cfg,
                              capture)
    q = ad.layernorm(q, params["dec_norm.g"], params["dec_norm.b"])
    for i in range(len(cfg.mlp_hidden)):
        q = ad.relu(ad.linear(q, params[f"mlp.{i}.w"], params[f"mlp.{i}.b"]))
    return ad.sigmoid(ad.linear(q, params["mlp.out.w"], params["mlp.out.b"]))


def render_view(images, poses, intr: Intrinsics, query_pose: CameraPose,
                params, cfg: ModelConfig, chunk=4096) -> np.ndarray:
    """Encodes the context once and decodes a full image of query rays.

    Context poses and the query pose are canonicalized to the first
    context view. Returns a [3, H, W] array.
    """
    canon = _canonicalize_with_query(poses, query_pose)
    encoding = encode(images, canon[:-1], intr, params, cfg)
    rays = image_grid_rays(canon[-1], intr)
    outs = []
    for lo in range(0, len(rays), chunk):
        sub = RaySet(rays.origins[lo:lo + chunk], rays.dirs[lo:lo + chunk],
                     rays.moments[lo:lo + chunk])
        outs.append(decode(sub, encoding, params, cfg).data)
    img = np.concatenate(outs, axis=0)
    return img.reshape(intr.height, intr.width, 3).transpose(2, 0, 1)


def _canonicalize_with_query(poses, query_pose):
    from .geometry import canonicalize_poses
    return canonicalize_poses(list(poses) + [query_pose], 0)


def attention_maps(images, poses, intr: Intrinsics, query_pose: CameraPose,
                   pixel, params, cfg: ModelConfig) -> list[np.ndarray]:
    """Head-averaged decoder cross-attention of one query pixel, reshaped
    to [V, G, G] per decoder layer. Each map sums to 1."""
    x, y = pixel
    if not (0 <= x < intr.width and 0 <= y < intr.height):
        raise OutOfBounds(f"pixel {pixel} outside image")
    canon = _canonicalize_with_query(poses, query_pose)
    encoding = encode(images, canon[:-1], intr, params, cfg)
    from .geometry import pixel_ray_set
    rays = pixel_ray_set(canon[-1], intr, np.array([x + 0.5]), np.array([y + 0.5]))
    capture: list = []
    decode(rays, encoding, params, cfg, capture=capture)
    g = cfg.grid
    return [w[0].reshape(len(poses), g, g).astype(np.float64) for w in capture]
