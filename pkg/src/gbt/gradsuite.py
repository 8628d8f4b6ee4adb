"""Finite-difference verification of every differentiable operation and of
the end-to-end reconstruction loss on a tiny model.

All checks run at float64; analytic gradients must match central
differences to a relative error below 1e-4 (individual ops are much
tighter).
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .geometry import RaySet
from .model import decode, encode, init_params, tiny_config
from .scenes import default_intrinsics, orbit_cameras, random_scene, render_scene
from .training import l2_ray_loss


def _t(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def op_checks(seed=0):
    """(name, worst relative error) for each primitive op."""
    rng = np.random.default_rng(seed)
    results = []

    a = _t(rng, (5, 4))
    b = _t(rng, (4, 3))
    w = Tensor(rng.standard_normal((5, 3)))
    results.append(("matmul", grad_check(
        lambda: ad.sum_(ad.mul(ad.matmul(a, b), w)), [a, b])))

    x = _t(rng, (3, 6))
    bias = _t(rng, (3, 6))
    w = Tensor(rng.standard_normal((3, 6)))
    results.append(("softmax_with_bias", grad_check(
        lambda: ad.sum_(ad.mul(ad.softmax_with_bias(x, bias), w)), [x, bias])))

    x = _t(rng, (4, 5))
    g = _t(rng, (5,))
    s = _t(rng, (5,))
    w = Tensor(rng.standard_normal((4, 5)))
    results.append(("layernorm", grad_check(
        lambda: ad.sum_(ad.mul(ad.layernorm(x, g, s), w)), [x, g, s])))

    for name, fn in (("gelu", ad.gelu), ("sigmoid", ad.sigmoid), ("relu", ad.relu)):
        x = _t(rng, (4, 4))
        # Keep relu inputs away from the kink.
        if name == "relu":
            x.data[np.abs(x.data) < 0.1] += 0.2
        w = Tensor(rng.standard_normal((4, 4)))
        results.append((name, grad_check(
            lambda fn=fn, x=x, w=w: ad.sum_(ad.mul(fn(x), w)), [x])))

    x1 = _t(rng, (2, 3))
    x2 = _t(rng, (2, 5))
    w = Tensor(rng.standard_normal((2, 8)))
    results.append(("concat", grad_check(
        lambda: ad.sum_(ad.mul(ad.concat([x1, x2], axis=-1), w)), [x1, x2])))

    x = _t(rng, (2, 3, 6, 6))
    k = _t(rng, (4, 3, 3, 3))
    bc = _t(rng, (4,))
    w = Tensor(rng.standard_normal((2, 4, 3, 3)))
    results.append(("conv2d", grad_check(
        lambda: ad.sum_(ad.mul(ad.conv2d(x, k, bc, stride=2, pad=1), w)), [x, k, bc])))

    xw = _t(rng, (3, 4))
    ww = _t(rng, (4, 2))
    bw = _t(rng, (2,))
    w = Tensor(rng.standard_normal((3, 2)))
    results.append(("linear", grad_check(
        lambda: ad.sum_(ad.mul(ad.linear(xw, ww, bw), w)), [xw, ww, bw])))

    p = _t(rng, (6, 3))
    t = Tensor(rng.standard_normal((6, 3)))
    results.append(("l2_ray_loss", grad_check(lambda: l2_ray_loss(p, t), [p])))

    return results


def _tiny_batch(seed=0):
    cfg = tiny_config("gbt")
    intr = default_intrinsics(cfg.image_size)
    scene = random_scene(seed)
    poses = orbit_cameras(3, 2.0, 0.3)
    views = [render_scene(scene, p, intr, i) for i, p in enumerate(poses)]
    from .geometry import canonicalize_poses, pixel_ray_set
    canon = canonicalize_poses([v.pose for v in views], 0)
    images = np.stack([v.image for v in views[:2]])
    rng = np.random.default_rng(seed)
    pix = rng.choice(cfg.image_size ** 2, size=6, replace=False)
    xs = (pix % cfg.image_size) + 0.5
    ys = (pix // cfg.image_size) + 0.5
    rays = pixel_ray_set(canon[2], intr, xs.astype(float), ys.astype(float))
    target = views[2].image.reshape(3, -1)[:, pix].T
    return cfg, intr, images, canon[:2], rays, target


def end_to_end_check(seed=0, h=1e-5):
    """Gradient of the full loss w.r.t. every parameter of a tiny model
    (2 context views, 2x2 grid, 16-d latent, 1+1 layers) at float64."""
    cfg, intr, images, poses, rays, target = _tiny_batch(seed)
    params = init_params(cfg, seed=seed, dtype=np.float64)

    def loss():
        encoding = encode(images, poses, intr, params, cfg)
        pred = decode(rays, encoding, params, cfg)
        return l2_ray_loss(pred, Tensor(target))

    inputs = [p for p in params.values() if p.requires_grad]
    return grad_check(loss, inputs, h=h)


def run_grad_suite():
    """Returns (worst error overall, printable report)."""
    lines = []
    worst = 0.0
    for name, err in op_checks():
        lines.append(f"  {name:20s} rel err {err:.3e}")
        worst = max(worst, err)
    e2e = end_to_end_check()
    lines.append(f"  {'end-to-end loss':20s} rel err {e2e:.3e}")
    worst = max(worst, e2e)
    return worst, "\n".join(lines)
