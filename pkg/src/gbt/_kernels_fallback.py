"""Pure-numpy implementations of the hot kernels.

Formulas are written term-by-term in the same order as the compiled
versions so both backends produce matching results.
"""
from __future__ import annotations

import numpy as np

_PARALLEL_EPS = 1e-8


def pairwise_ray_distance(d1, m1, d2, m2, eps=_PARALLEL_EPS):
    """Line-to-line distance matrix [N, M] for two ray batches.

    Skew branch: |d1.m2 + d2.m1| / ||d1 x d2||.
    Parallel branch (||d1 x d2|| <= eps): ||d1 x (m1 - m2/s)|| / ||d1||^2
    with s = d1.d2 the signed scale between the unit directions.
    """
    d1 = np.ascontiguousarray(d1, dtype=np.float64)
    m1 = np.ascontiguousarray(m1, dtype=np.float64)
    d2 = np.ascontiguousarray(d2, dtype=np.float64)
    m2 = np.ascontiguousarray(m2, dtype=np.float64)

    cx = d1[:, None, 1] * d2[None, :, 2] - d1[:, None, 2] * d2[None, :, 1]
    cy = d1[:, None, 2] * d2[None, :, 0] - d1[:, None, 0] * d2[None, :, 2]
    cz = d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0]
    cn = np.sqrt(cx * cx + cy * cy + cz * cz)

    num = np.abs(
        d1[:, None, 0] * m2[None, :, 0] + d1[:, None, 1] * m2[None, :, 1]
        + d1[:, None, 2] * m2[None, :, 2]
        + d2[None, :, 0] * m1[:, None, 0] + d2[None, :, 1] * m1[:, None, 1]
        + d2[None, :, 2] * m1[:, None, 2]
    )

    skew = num / np.where(cn > eps, cn, 1.0)

    s = (d1[:, None, 0] * d2[None, :, 0] + d1[:, None, 1] * d2[None, :, 1]
         + d1[:, None, 2] * d2[None, :, 2])
    s = np.where(s == 0.0, 1.0, s)
    wx = m1[:, None, 0] - m2[None, :, 0] / s
    wy = m1[:, None, 1] - m2[None, :, 1] / s
    wz = m1[:, None, 2] - m2[None, :, 2] / s
    px = d1[:, None, 1] * wz - d1[:, None, 2] * wy
    py = d1[:, None, 2] * wx - d1[:, None, 0] * wz
    pz = d1[:, None, 0] * wy - d1[:, None, 1] * wx
    dsq = (d1[:, 0] * d1[:, 0] + d1[:, 1] * d1[:, 1] + d1[:, 2] * d1[:, 2])[:, None]
    par = np.sqrt(px * px + py * py + pz * pz) / dsq

    return np.where(cn > eps, skew, par)


def cast_rays(origins, dirs, sphere_centers, sphere_radii, sphere_albedo,
              box_min, box_max, box_albedo, light_dir, ambient, background):
    """Nearest-hit Lambertian shading for a batch of rays.

    Returns (colors [N, 3], t [N]) with t = +inf on miss.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    tbest = np.full(n, np.inf)
    normals = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    tmin = 1e-6

    for i in range(sphere_centers.shape[0]):
        oc = origins - sphere_centers[i]
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - sphere_radii[i] ** 2
        disc = b * b - c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(-b - sq > tmin, -b - sq, -b + sq)
        hit = ok & (t > tmin) & (t < tbest)
        if np.any(hit):
            p = origins[hit] + t[hit, None] * dirs[hit]
            normals[hit] = (p - sphere_centers[i]) / sphere_radii[i]
            albedo[hit] = sphere_albedo[i]
            tbest[hit] = t[hit]

    for i in range(box_min.shape[0]):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t0 = (box_min[i] - origins) * inv
        t1 = (box_max[i] - origins) * inv
        tlo = np.minimum(t0, t1)
        thi = np.maximum(t0, t1)
        # Axis realizing the entry time determines the hit normal.
        axis = np.argmax(tlo, axis=1)
        tenter = np.max(tlo, axis=1)
        texit = np.min(thi, axis=1)
        t = np.where(tenter > tmin, tenter, texit)
        hit = (texit >= tenter) & (t > tmin) & (t < tbest) & (tenter > tmin)
        if np.any(hit):
            ax = axis[hit]
            nrm = np.zeros((int(hit.sum()), 3))
            nrm[np.arange(len(ax)), ax] = -np.sign(dirs[hit, ax])
            normals[hit] = nrm
            albedo[hit] = box_albedo[i]
            tbest[hit] = t[hit]

    colors = np.broadcast_to(background, (n, 3)).copy()
    hit = np.isfinite(tbest)
    if np.any(hit):
        lam = normals[hit] @ light_dir
        shade = ambient + (1.0 - ambient) * np.maximum(0.0, lam)
        colors[hit] = albedo[hit] * shade[:, None]
    return colors, tbest
