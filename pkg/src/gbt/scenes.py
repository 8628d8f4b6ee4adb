"""Procedural multi-view data: a tiny ray-cast renderer over Lambertian
spheres and boxes, turntable camera rigs, and a reproducible on-disk
dataset layout:

    <root>/dataset.json
    <root>/scene_<k>/view_<j>.png      8-bit RGB
    <root>/scene_<k>/cameras.csv       frame_index, r00..r22, t0..t2, fx, fy, cx, cy
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import GbtError, IoError
from .geometry import CameraPose, Intrinsics, image_grid_rays, look_at_pose
from .kernels import cast_rays

DATASET_FORMAT_VERSION = 1
CATEGORY_STYLES = ("spheres", "boxes", "mixed")

DEFAULT_ORBIT_RADIUS = 2.0
DEFAULT_FOV_DEGREES = 60.0
DEFAULT_ELEVATION_DEGREES = 20.0
DEFAULT_ELEVATION_JITTER_DEGREES = 15.0


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray


@dataclass(frozen=True)
class Box:
    bmin: np.ndarray
    bmax: np.ndarray
    albedo: np.ndarray


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    light_dir: np.ndarray
    ambient: float
    background: np.ndarray
    seed: int


@dataclass
class PosedImage:
    image: np.ndarray  # [3, H, W] in [0, 1]
    pose: CameraPose
    intr: Intrinsics
    frame_index: int


def default_intrinsics(image_size: int, fov_degrees: float = DEFAULT_FOV_DEGREES) -> Intrinsics:
    focal = (image_size / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)
    return Intrinsics(focal, focal, image_size / 2.0, image_size / 2.0,
                      image_size, image_size)


def random_scene(seed: int, category_style: str = "mixed") -> Scene:
    """1-5 random primitives inside the unit ball, deterministic per seed.

    category_style restricts the primitive mix so held-out-category
    generalization has meaning: 'spheres', 'boxes' or 'mixed'.
    """
    if category_style not in CATEGORY_STYLES:
        raise ValueError(f"unknown category_style {category_style!r}")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, 6))
    prims = []
    for _ in range(count):
        if category_style == "mixed":
            kind = "sphere" if rng.random() < 0.5 else "box"
        else:
            kind = "sphere" if category_style == "spheres" else "box"
        albedo = rng.uniform(0.15, 1.0, size=3)
        # Keep every primitive strictly inside the unit ball.
        center = rng.uniform(-0.55, 0.55, size=3)
        extent = rng.uniform(0.12, 0.40)
        extent = min(extent, 0.98 - float(np.linalg.norm(center)))
        extent = max(extent, 0.10)
        if kind == "sphere":
            prims.append(Sphere(center, extent, albedo))
        else:
            half = rng.uniform(0.4, 1.0, size=3) * extent / math.sqrt(3.0)
            prims.append(Box(center - half, center + half, albedo))
    light = rng.normal(size=3)
    light[1] = -abs(light[1])  # light from above (y points down)
    light /= np.linalg.norm(light)
    background = rng.uniform(0.0, 0.25, size=3)
    ambient = float(rng.uniform(0.25, 0.5))
    return Scene(tuple(prims), light, ambient, background, seed)


def _scene_arrays(scene: Scene):
    spheres = [p for p in scene.primitives if isinstance(p, Sphere)]
    boxes = [p for p in scene.primitives if isinstance(p, Box)]
    sc = np.array([s.center for s in spheres], dtype=np.float64).reshape(-1, 3)
    sr = np.array([s.radius for s in spheres], dtype=np.float64)
    sa = np.array([s.albedo for s in spheres], dtype=np.float64).reshape(-1, 3)
    bmin = np.array([b.bmin for b in boxes], dtype=np.float64).reshape(-1, 3)
    bmax = np.array([b.bmax for b in boxes], dtype=np.float64).reshape(-1, 3)
    ba = np.array([b.albedo for b in boxes], dtype=np.float64).reshape(-1, 3)
    return sc, sr, sa, bmin, bmax, ba


def render_rays(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Colors and hit parameters for arbitrary rays; t is +inf on miss."""
    sc, sr, sa, bmin, bmax, ba = _scene_arrays(scene)
    return cast_rays(origins, dirs, sc, sr, sa, bmin, bmax, ba,
                     scene.light_dir, scene.ambient, scene.background)


def render_scene(scene: Scene, pose: CameraPose, intr: Intrinsics,
                 frame_index: int = 0) -> PosedImage:
    """Per-pixel nearest-hit Lambertian render; pure function of inputs."""
    rays = image_grid_rays(pose, intr)
    colors, _ = render_rays(scene, rays.origins, rays.dirs)
    img = colors.reshape(intr.height, intr.width, 3).transpose(2, 0, 1)
    return PosedImage(np.clip(img, 0.0, 1.0), pose, intr, frame_index)


def orbit_cameras(n: int, radius: float, elevation: float,
                  elevations=None) -> list[CameraPose]:
    """n look-at poses equally spaced in azimuth; pose i sits at azimuth
    2*pi*i/n at the given elevation (radians), all looking at the origin.

    `elevations` optionally overrides the elevation per pose (jittered
    turntables)."""
    if n < 1 or radius <= 0:
        raise ValueError("need n >= 1 and radius > 0")
    poses = []
    for i in range(n):
        az = 2.0 * math.pi * i / n
        el = elevation if elevations is None else float(elevations[i])
        c = radius * np.array([math.cos(el) * math.cos(az),
                               math.sin(el),
                               math.cos(el) * math.sin(az)])
        poses.append(look_at_pose(c, (0.0, 0.0, 0.0)))
    return poses


@dataclass
class SceneViews:
    """All rendered views of one scene as loaded from disk."""
    views: list  # of PosedImage

    def __len__(self):
        return len(self.views)


def _write_png(path: str, image01: np.ndarray):
    arr = np.round(np.clip(image01, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def _read_png(path: str) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


_CAM_FIELDS = (["frame_index"] + [f"r{i}{j}" for i in range(3) for j in range(3)]
               + ["t0", "t1", "t2", "fx", "fy", "cx", "cy"])


def _camera_row(view: PosedImage) -> list[str]:
    vals = ([view.frame_index] + [f"{v:.17g}" for v in view.pose.rotation.ravel()]
            + [f"{v:.17g}" for v in view.pose.translation]
            + [f"{v:.17g}" for v in (view.intr.focal_x, view.intr.focal_y,
                                     view.intr.principal_x, view.intr.principal_y)])
    return [str(vals[0])] + vals[1:]


def make_dataset(root: str, num_scenes: int, views_per_scene: int,
                 image_size: int, seed: int, category_style: str = "mixed",
                 orbit_radius: float = DEFAULT_ORBIT_RADIUS,
                 fov_degrees: float = DEFAULT_FOV_DEGREES,
                 elevation_degrees: float = DEFAULT_ELEVATION_DEGREES,
                 elevation_jitter_degrees: float = DEFAULT_ELEVATION_JITTER_DEGREES) -> str:
    """Renders num_scenes random scenes from jittered turntable cameras.

    Byte-identical for identical arguments. Returns root.
    """
    if num_scenes < 1 or views_per_scene < 1:
        raise ValueError("counts must be positive")
    try:
        os.makedirs(root, exist_ok=True)
        intr = default_intrinsics(image_size, fov_degrees)
        rng = np.random.default_rng(seed)
        for k in range(num_scenes):
            scene = random_scene(int(rng.integers(0, 2 ** 31 - 1)), category_style)
            jitter = rng.uniform(-math.radians(elevation_jitter_degrees),
                                 math.radians(elevation_jitter_degrees),
                                 size=views_per_scene)
            els = math.radians(elevation_degrees) + jitter
            poses = orbit_cameras(views_per_scene, orbit_radius,
                                  math.radians(elevation_degrees), elevations=els)
            sdir = os.path.join(root, f"scene_{k}")
            os.makedirs(sdir, exist_ok=True)
            with open(os.path.join(sdir, "cameras.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(_CAM_FIELDS)
                for j, pose in enumerate(poses):
                    view = render_scene(scene, pose, intr, j)
                    _write_png(os.path.join(sdir, f"view_{j}.png"), view.image)
                    writer.writerow(_camera_row(view))
        meta = {"format_version": DATASET_FORMAT_VERSION, "seed": seed,
                "num_scenes": num_scenes, "views_per_scene": views_per_scene,
                "image_size": image_size, "category_style": category_style,
                "orbit_radius": orbit_radius, "fov_degrees": fov_degrees,
                "elevation_degrees": elevation_degrees,
                "elevation_jitter_degrees": elevation_jitter_degrees}
        with open(os.path.join(root, "dataset.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"dataset write failed: {exc}") from exc
    return root


def load_dataset(root: str) -> list[SceneViews]:
    """Loads every scene written by make_dataset, in index order."""
    with open(os.path.join(root, "dataset.json")) as fh:
        meta = json.load(fh)
    if meta["format_version"] != DATASET_FORMAT_VERSION:
        raise GbtError(f"unsupported dataset format {meta['format_version']}")
    scenes = []
    for k in range(meta["num_scenes"]):
        sdir = os.path.join(root, f"scene_{k}")
        views = []
        with open(os.path.join(sdir, "cameras.csv")) as fh:
            for row in csv.DictReader(fh):
                j = int(row["frame_index"])
                rot = np.array([[float(row[f"r{i}{c}"]) for c in range(3)]
                                for i in range(3)])
                t = np.array([float(row["t0"]), float(row["t1"]), float(row["t2"])])
                intr = Intrinsics(float(row["fx"]), float(row["fy"]),
                                  float(row["cx"]), float(row["cy"]),
                                  meta["image_size"], meta["image_size"])
                img = _read_png(os.path.join(sdir, f"view_{j}.png"))
                views.append(PosedImage(img, CameraPose(rot, t), intr, j))
        views.sort(key=lambda v: v.frame_index)
        scenes.append(SceneViews(views))
    return scenes
