"""Flat `key = value` run configuration files.

Every key has a documented default; unknown keys are rejected and numeric
values are range-checked at parse time. parse -> serialize -> parse is a
fixed point.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .geometry import HarmonicConfig
from .model import VARIANTS, ModelConfig
from .scenes import CATEGORY_STYLES
from .training import TrainConfig


def _int_list(s: str):
    return tuple(int(v) for v in str(s).split(",") if v.strip() != "")


def _float_list(s: str):
    return tuple(float(v) for v in str(s).split(",") if v.strip() != "")


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


# key -> (default, parser, validator, doc)
SCHEMA = {
    # model
    "image_size": (64, int, lambda v: v >= 8, "square image side in pixels"),
    "grid": (8, int, lambda v: v >= 1, "patch grid side; grid^2 tokens per view"),
    "latent_dim": (192, int, lambda v: v >= 4, "transformer width"),
    "num_heads": (6, int, lambda v: v >= 1, "attention heads; must divide latent_dim"),
    "encoder_layers": (4, int, lambda v: v >= 1, "self-attention layers"),
    "decoder_layers": (2, int, lambda v: v >= 1, "cross-attention layers"),
    "mlp_hidden": ((128, 64), _int_list, lambda v: all(x >= 1 for x in v),
                   "color MLP hidden widths, comma separated"),
    "stem_channels": ((32, 64, 128), _int_list, lambda v: all(x >= 1 for x in v),
                      "conv stem channels, one stride-2 stage each"),
    "harmonic_frequencies": (15, int, lambda v: v >= 1, "sin/cos frequency count"),
    "harmonic_min_exponent": (-6, int, lambda v: True, "lowest frequency exponent f in 2^f*pi"),
    "variant": ("gbt", str, lambda v: v in VARIANTS, "one of " + "/".join(VARIANTS)),
    # training
    "context_views": (3, int, lambda v: v >= 1, "input views per scene"),
    "rays_per_step": (1024, int, lambda v: v >= 1, "query rays sampled per scene per step"),
    "batch_scenes": (2, int, lambda v: v >= 1, "scenes per optimization step"),
    "lr": (1e-3, float, lambda v: v > 0, "Adam learning rate"),
    "max_steps": (2000, int, lambda v: v >= 1, "optimization steps"),
    "seed": (0, int, lambda v: v >= 0, "master RNG seed"),
    "eval_every": (200, int, lambda v: v >= 1, "progress reporting period"),
    # dataset
    "num_scenes": (64, int, lambda v: v >= 1, "training scenes to generate"),
    "views_per_scene": (24, int, lambda v: v >= 2, "rendered views per scene"),
    "category_style": ("mixed", str, lambda v: v in CATEGORY_STYLES,
                       "primitive mix: " + "/".join(CATEGORY_STYLES)),
    "orbit_radius": (2.0, float, lambda v: v > 0, "camera distance from origin"),
    "fov_degrees": (60.0, float, lambda v: 0 < v < 180, "horizontal field of view"),
    "elevation_degrees": (20.0, float, lambda v: -90 <= v <= 90, "mean camera elevation"),
    "elevation_jitter_degrees": (15.0, float, lambda v: v >= 0, "per-view elevation jitter"),
    # experiments
    "eval_scenes": (10, int, lambda v: v >= 1, "held-out scenes for evaluation"),
    "eval_query_views": (8, int, lambda v: v >= 1, "query views per eval scene"),
    "noise_sigmas": ((0.0, 0.02, 0.05, 0.1), _float_list,
                     lambda v: all(x >= 0 for x in v), "camera-noise levels"),
    "viewsweep_views": (40, int, lambda v: v >= 4, "orbit views in the viewpoint sweep"),
    "viewsweep_context": ((10, 20, 30), _int_list, lambda v: len(v) >= 1,
                          "context view indices for the viewpoint sweep"),
    "ablation_variants": (("gbt", "gbt_fb", "gbt_nb", "srt_star"),
                          lambda s: tuple(str(s).split(",")),
                          lambda v: all(x in VARIANTS for x in v),
                          "variants trained by the ablation"),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            image_size=v["image_size"], grid=v["grid"], latent_dim=v["latent_dim"],
            num_heads=v["num_heads"], encoder_layers=v["encoder_layers"],
            decoder_layers=v["decoder_layers"], mlp_hidden=v["mlp_hidden"],
            stem_channels=v["stem_channels"],
            harmonic=HarmonicConfig(v["harmonic_frequencies"], v["harmonic_min_exponent"]),
            variant=v["variant"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(context_views=v["context_views"],
                           rays_per_step=v["rays_per_step"],
                           batch_scenes=v["batch_scenes"], lr=v["lr"],
                           max_steps=v["max_steps"], seed=v["seed"],
                           eval_every=v["eval_every"])

    def serialize(self) -> str:
        lines = [f"{k} = {_fmt(self.values[k])}" for k in SCHEMA]
        return "\n".join(lines) + "\n"


def default_config() -> RunConfig:
    return RunConfig({k: spec[0] for k, spec in SCHEMA.items()})


def parse_config(text: str) -> RunConfig:
    values = {k: spec[0] for k, spec in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        _, parser, validator, _ = SCHEMA[key]
        try:
            parsed = parser(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if not validator(parsed):
            raise ConfigError(f"line {lineno}: value {val!r} out of range for {key}")
        values[key] = parsed
    return RunConfig(values)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def document_defaults() -> str:
    """Human-readable key table used by `gbt --help-config` and the README."""
    lines = []
    for key, (default, _, _, doc) in SCHEMA.items():
        lines.append(f"{key:28s} default {_fmt(default):18s} {doc}")
    return "\n".join(lines)
