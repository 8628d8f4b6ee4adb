"""Ray algebra, camera models and pose utilities.

Rays live in 6-vector line coordinates (d, m): a unit direction d and a
moment m = o x d computed from any point o on the line. The moment is
invariant to sliding o along the line, so a ray identifies an infinite
3D line rather than a particular origin.

Camera convention: right-handed, camera looks down +z, y points down in
the image, x right. A CameraPose maps camera-frame points to world frame.
Pixel (i, j) covers the continuous square [i, i+1) x [j, j+1) with center
(i + 0.5, j + 0.5).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfBounds, ZeroDirection

# Below this cross-product norm two directions count as parallel and the
# parallel branch of the line-distance formula is used.
PARALLEL_EPS = 1e-8


@dataclass(frozen=True)
class Ray:
    """An infinite 3D line as (unit direction, moment)."""

    d: np.ndarray
    m: np.ndarray


@dataclass(frozen=True)
class CameraPose:
    """Rigid camera-to-world transform: world = rotation @ cam + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Returns self applied after other (self @ other)."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def center(self) -> np.ndarray:
        """Camera center in world frame."""
        return self.translation

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole projection parameters, all in pixels."""

    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def __post_init__(self):
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.principal_x <= self.width and 0 <= self.principal_y <= self.height):
            raise ValueError("principal point outside image bounds")


@dataclass(frozen=True)
class HarmonicConfig:
    """Sin/cos embedding with frequencies 2^f * pi, f = min_exponent .. min_exponent+F-1."""

    num_frequencies: int = 15
    min_exponent: int = -6

    def __post_init__(self):
        if self.num_frequencies < 1:
            raise ValueError("need at least one frequency")

    def output_dim(self, input_dim: int) -> int:
        return 2 * self.num_frequencies * input_dim


@dataclass
class RaySet:
    """A batch of rays with the origins they were built from.

    The origins are redundant for the line geometry but are kept so the
    (origin, direction) ray parameterization remains available.
    """

    origins: np.ndarray  # [N, 3]
    dirs: np.ndarray     # [N, 3], unit
    moments: np.ndarray = field(default=None)  # [N, 3]

    def __post_init__(self):
        if self.moments is None:
            self.moments = np.cross(self.origins, self.dirs)

    def __len__(self) -> int:
        return self.origins.shape[0]

    def slide_origins(self, t: float) -> "RaySet":
        """Moves each origin by t along its own direction; the lines (and
        moments) are unchanged."""
        return RaySet(self.origins + t * self.dirs, self.dirs.copy(), self.moments.copy())


def ray_from_origin_dir(o, direction) -> Ray:
    """Builds a ray through point o with the given (not necessarily unit)
    direction."""
    o = np.asarray(o, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(direction)
    if n <= 1e-12:
        raise ZeroDirection(f"direction norm {n} too small")
    d = direction / n
    return Ray(d, np.cross(o, d))


def ray_distance(a: Ray, b: Ray) -> float:
    """Minimum Euclidean distance between two infinite lines."""
    cross = np.cross(a.d, b.d)
    cn = np.linalg.norm(cross)
    if cn > PARALLEL_EPS:
        return abs(float(a.d @ b.m + b.d @ a.m)) / cn
    # Parallel branch: s is the signed scale relating the two directions
    # (+-1 for unit directions).
    s = float(a.d @ b.d)
    diff = a.m - b.m / s
    return float(np.linalg.norm(np.cross(a.d, diff)) / (a.d @ a.d))


def harmonic_embed(x, cfg: HarmonicConfig) -> np.ndarray:
    """Per-coordinate sin/cos features at geometrically spaced frequencies.

    Layout is coordinate-major, frequency-minor, sin before cos:
    [sin(2^f0 pi x0), cos(2^f0 pi x0), sin(2^f1 pi x0), ..., sin(2^f0 pi x1), ...]
    Output has 2 * F * n entries on the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    exps = cfg.min_exponent + np.arange(cfg.num_frequencies)
    freqs = (2.0 ** exps) * math.pi  # [F]
    ang = x[..., :, None] * freqs  # [..., n, F]
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # [..., n, F, 2]
    return out.reshape(x.shape[:-1] + (2 * cfg.num_frequencies * x.shape[-1],))


def pixel_ray(pose: CameraPose, intr: Intrinsics, px) -> Ray:
    """World-frame ray through a continuous pixel coordinate (x, y)."""
    x, y = float(px[0]), float(px[1])
    if not (0.0 <= x <= intr.width and 0.0 <= y <= intr.height):
        raise OutOfBounds(f"pixel {px} outside {intr.width}x{intr.height} image")
    dir_cam = np.array([(x - intr.principal_x) / intr.focal_x,
                        (y - intr.principal_y) / intr.focal_y,
                        1.0])
    return ray_from_origin_dir(pose.center(), pose.rotation @ dir_cam)


def pixel_ray_set(pose: CameraPose, intr: Intrinsics, xs: np.ndarray, ys: np.ndarray) -> RaySet:
    """Vectorized pixel_ray over equal-length coordinate arrays."""
    dirs_cam = np.stack([(xs - intr.principal_x) / intr.focal_x,
                         (ys - intr.principal_y) / intr.focal_y,
                         np.ones_like(xs)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.center(), dirs.shape).copy()
    return RaySet(origins, dirs)


def image_grid_rays(pose: CameraPose, intr: Intrinsics) -> RaySet:
    """One ray per pixel center, row-major over the full image."""
    ys, xs = np.meshgrid(np.arange(intr.height) + 0.5,
                         np.arange(intr.width) + 0.5, indexing="ij")
    return pixel_ray_set(pose, intr, xs.ravel(), ys.ravel())


def patch_rays(pose: CameraPose, intr: Intrinsics, grid: int) -> RaySet:
    """Rays through the centers of a grid x grid tiling of the image,
    row-major."""
    if intr.width % grid or intr.height % grid:
        raise ValueError(f"grid {grid} does not divide {intr.width}x{intr.height}")
    cw = intr.width / grid
    ch = intr.height / grid
    ys, xs = np.meshgrid((np.arange(grid) + 0.5) * ch,
                         (np.arange(grid) + 0.5) * cw, indexing="ij")
    return pixel_ray_set(pose, intr, xs.ravel(), ys.ravel())


def canonicalize_poses(poses, anchor: int):
    """Re-expresses all poses relative to poses[anchor], which becomes the
    identity. Pairwise relative transforms are preserved."""
    if not (0 <= anchor < len(poses)):
        raise IndexError(f"anchor {anchor} out of range for {len(poses)} poses")
    inv = poses[anchor].inverse()
    return [inv.compose(p) for p in poses]


def rotation_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues' formula: rotation matrix for an axis-angle 3-vector."""
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        return np.eye(3)
    k = omega / theta
    kx = np.array([[0, -k[2], k[1]],
                   [k[2], 0, -k[0]],
                   [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * (kx @ kx)


def rotation_angle(r: np.ndarray) -> float:
    """Angle of a rotation matrix in radians."""
    return math.acos(min(1.0, max(-1.0, (np.trace(r) - 1.0) / 2.0)))


def perturb_pose(pose: CameraPose, sigma: float, rng: np.random.Generator) -> CameraPose:
    """Applies a random rigid perturbation drawn from an isotropic Gaussian
    in the 6-dim tangent space (3 rotation, 3 translation)."""
    xi = rng.normal(0.0, 1.0, size=6)
    if sigma == 0.0:
        return pose
    omega = sigma * xi[:3]
    v = sigma * xi[3:]
    return CameraPose(rotation_exp(omega) @ pose.rotation, pose.translation + v)


def look_at_pose(center, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """Camera at `center` with optical axis through `target`, image-up
    aligned against world `up` (y-down image convention)."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        # Looking straight along up; pick an arbitrary horizontal x.
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / xn
    y = np.cross(z, x)
    return CameraPose(np.stack([x, y, z], axis=1), center)
