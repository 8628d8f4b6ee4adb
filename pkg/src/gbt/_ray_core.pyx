# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: pairwise line distances and ray casting.

Mirrors _kernels_fallback term for term; keep the two in sync.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, sqrt

cnp.import_array()


def pairwise_ray_distance(double[:, ::1] d1, double[:, ::1] m1,
                          double[:, ::1] d2, double[:, ::1] m2,
                          double eps=1e-8):
    cdef Py_ssize_t n = d1.shape[0], m = d2.shape[0]
    cdef Py_ssize_t i, j
    cdef double cx, cy, cz, cn, num, s, wx, wy, wz, px, py, pz, dsq
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        dsq = d1[i, 0] * d1[i, 0] + d1[i, 1] * d1[i, 1] + d1[i, 2] * d1[i, 2]
        for j in range(m):
            cx = d1[i, 1] * d2[j, 2] - d1[i, 2] * d2[j, 1]
            cy = d1[i, 2] * d2[j, 0] - d1[i, 0] * d2[j, 2]
            cz = d1[i, 0] * d2[j, 1] - d1[i, 1] * d2[j, 0]
            cn = sqrt(cx * cx + cy * cy + cz * cz)
            if cn > eps:
                num = fabs(d1[i, 0] * m2[j, 0] + d1[i, 1] * m2[j, 1]
                           + d1[i, 2] * m2[j, 2]
                           + d2[j, 0] * m1[i, 0] + d2[j, 1] * m1[i, 1]
                           + d2[j, 2] * m1[i, 2])
                out[i, j] = num / cn
            else:
                s = (d1[i, 0] * d2[j, 0] + d1[i, 1] * d2[j, 1]
                     + d1[i, 2] * d2[j, 2])
                if s == 0.0:
                    s = 1.0
                wx = m1[i, 0] - m2[j, 0] / s
                wy = m1[i, 1] - m2[j, 1] / s
                wz = m1[i, 2] - m2[j, 2] / s
                px = d1[i, 1] * wz - d1[i, 2] * wy
                py = d1[i, 2] * wx - d1[i, 0] * wz
                pz = d1[i, 0] * wy - d1[i, 1] * wx
                out[i, j] = sqrt(px * px + py * py + pz * pz) / dsq
    return out_arr


def cast_rays(double[:, ::1] origins, double[:, ::1] dirs,
              double[:, ::1] sphere_centers, double[::1] sphere_radii,
              double[:, ::1] sphere_albedo,
              double[:, ::1] box_min, double[:, ::1] box_max,
              double[:, ::1] box_albedo,
              double[::1] light_dir, double ambient, double[::1] background):
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t ns = sphere_centers.shape[0], nb = box_min.shape[0]
    cdef Py_ssize_t i, k, ax, a
    cdef double ocx, ocy, ocz, b, c, disc, sq, t, tbest
    cdef double nx, ny, nz, lam, shade, inv
    cdef double t0, t1, tlo, thi, tenter, texit
    cdef int axis, best
    cdef double tmin = 1e-6

    colors_arr = np.empty((n, 3), dtype=np.float64)
    t_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] colors = colors_arr
    cdef double[::1] tout = t_arr

    for i in range(n):
        tbest = INFINITY
        best = -1
        nx = ny = nz = 0.0
        for k in range(ns):
            ocx = origins[i, 0] - sphere_centers[k, 0]
            ocy = origins[i, 1] - sphere_centers[k, 1]
            ocz = origins[i, 2] - sphere_centers[k, 2]
            b = ocx * dirs[i, 0] + ocy * dirs[i, 1] + ocz * dirs[i, 2]
            c = ocx * ocx + ocy * ocy + ocz * ocz - sphere_radii[k] * sphere_radii[k]
            disc = b * b - c
            if disc < 0.0:
                continue
            sq = sqrt(disc)
            if -b - sq > tmin:
                t = -b - sq
            else:
                t = -b + sq
            if t > tmin and t < tbest:
                tbest = t
                nx = (origins[i, 0] + t * dirs[i, 0] - sphere_centers[k, 0]) / sphere_radii[k]
                ny = (origins[i, 1] + t * dirs[i, 1] - sphere_centers[k, 1]) / sphere_radii[k]
                nz = (origins[i, 2] + t * dirs[i, 2] - sphere_centers[k, 2]) / sphere_radii[k]
                best = k
        for k in range(nb):
            tenter = -INFINITY
            texit = INFINITY
            axis = 0
            for a in range(3):
                inv = 1.0 / dirs[i, a]
                t0 = (box_min[k, a] - origins[i, a]) * inv
                t1 = (box_max[k, a] - origins[i, a]) * inv
                if t0 < t1:
                    tlo = t0
                    thi = t1
                else:
                    tlo = t1
                    thi = t0
                if tlo > tenter:
                    tenter = tlo
                    axis = a
                if thi < texit:
                    texit = thi
            if texit >= tenter and tenter > tmin and tenter < tbest:
                tbest = tenter
                nx = ny = nz = 0.0
                if axis == 0:
                    nx = -1.0 if dirs[i, 0] > 0 else 1.0
                elif axis == 1:
                    ny = -1.0 if dirs[i, 1] > 0 else 1.0
                else:
                    nz = -1.0 if dirs[i, 2] > 0 else 1.0
                best = ns + k
        tout[i] = tbest
        if best < 0:
            colors[i, 0] = background[0]
            colors[i, 1] = background[1]
            colors[i, 2] = background[2]
        else:
            lam = nx * light_dir[0] + ny * light_dir[1] + nz * light_dir[2]
            if lam < 0.0:
                lam = 0.0
            shade = ambient + (1.0 - ambient) * lam
            if best < ns:
                colors[i, 0] = sphere_albedo[best, 0] * shade
                colors[i, 1] = sphere_albedo[best, 1] * shade
                colors[i, 2] = sphere_albedo[best, 2] * shade
            else:
                colors[i, 0] = box_albedo[best - ns, 0] * shade
                colors[i, 1] = box_albedo[best - ns, 1] * shade
                colors[i, 2] = box_albedo[best - ns, 2] * shade
    return colors_arr, t_arr
