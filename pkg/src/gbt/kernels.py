"""Selects the compiled ray kernels when available, numpy otherwise.

Set GBT_FORCE_FALLBACK=1 to force the numpy implementations (used by the
kernel agreement tests and the benchmark).
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_fallback as fallback

try:
    from . import _ray_core as _compiled
except ImportError:  # pragma: no cover - build-environment dependent
    _compiled = None

HAVE_COMPILED = _compiled is not None
USE_COMPILED = HAVE_COMPILED and os.environ.get("GBT_FORCE_FALLBACK", "") != "1"
BACKEND = "compiled" if USE_COMPILED else "numpy"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if USE_COMPILED:

    def pairwise_ray_distance(d1, m1, d2, m2, eps=1e-8):
        return _compiled.pairwise_ray_distance(_c(d1), _c(m1), _c(d2), _c(m2), eps)

    def cast_rays(origins, dirs, sphere_centers, sphere_radii, sphere_albedo,
                  box_min, box_max, box_albedo, light_dir, ambient, background):
        return _compiled.cast_rays(
            _c(origins), _c(dirs),
            _c(sphere_centers).reshape(-1, 3), _c(sphere_radii).reshape(-1),
            _c(sphere_albedo).reshape(-1, 3),
            _c(box_min).reshape(-1, 3), _c(box_max).reshape(-1, 3),
            _c(box_albedo).reshape(-1, 3),
            _c(light_dir), float(ambient), _c(background))

else:
    pairwise_ray_distance = fallback.pairwise_ray_distance
    cast_rays = fallback.cast_rays

pairwise_ray_distance.__doc__ = fallback.pairwise_ray_distance.__doc__
cast_rays.__doc__ = fallback.cast_rays.__doc__
