"""Times the compiled ray kernels against the numpy fallback.

Run after an editable install:

    python3 benchmarks/bench_kernels.py
"""
import time

import numpy as np

from gbt import _kernels_fallback as fallback
from gbt import kernels
from gbt.scenes import default_intrinsics, random_scene, orbit_cameras, _scene_arrays
from gbt.geometry import image_grid_rays


def _time(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pairwise():
    rng = np.random.default_rng(0)
    for n, m in ((192, 192), (1024, 192), (4096, 192)):
        d1 = rng.standard_normal((n, 3))
        d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
        o1 = rng.standard_normal((n, 3))
        m1 = np.cross(o1, d1)
        d2 = rng.standard_normal((m, 3))
        d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
        o2 = rng.standard_normal((m, 3))
        m2 = np.cross(o2, d2)
        tf = _time(lambda: fallback.pairwise_ray_distance(d1, m1, d2, m2))
        row = f"pairwise_ray_distance {n:5d}x{m:<5d} numpy {tf * 1e3:8.2f} ms"
        if kernels.HAVE_COMPILED:
            tc = _time(lambda: kernels.pairwise_ray_distance(d1, m1, d2, m2))
            row += f"   compiled {tc * 1e3:8.2f} ms   speedup {tf / tc:5.1f}x"
        print(row)


def bench_cast():
    scene = random_scene(3)
    arrays = _scene_arrays(scene)
    for size in (64, 128):
        intr = default_intrinsics(size)
        pose = orbit_cameras(8, 2.0, 0.3)[0]
        rays = image_grid_rays(pose, intr)
        args = (rays.origins, rays.dirs, *arrays,
                scene.light_dir, scene.ambient, scene.background)
        tf = _time(lambda: fallback.cast_rays(*args))
        row = f"cast_rays {size}x{size:<10d} numpy {tf * 1e3:8.2f} ms"
        if kernels.HAVE_COMPILED:
            tc = _time(lambda: kernels.cast_rays(*args))
            row += f"   compiled {tc * 1e3:8.2f} ms   speedup {tf / tc:5.1f}x"
        print(row)


if __name__ == "__main__":
    print(f"compiled backend available: {kernels.HAVE_COMPILED} (using {kernels.BACKEND})")
    bench_pairwise()
    bench_cast()
