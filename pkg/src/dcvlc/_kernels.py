"""Compiled inner loops of the ray tracer.

Each reflected path is binned by ``int(((d1 + d2 [+ d3]) / C_LIGHT) / dt)``;
the Python reference paths and the tests use the same expression.  Parallel
work is split into a fixed number of chunks whose partial histograms are
summed in chunk order, so results do not depend on the thread count.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# tbb is tried last: older system builds only emit a version warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

C_LIGHT = 2.998e8
INV_PI = 1.0 / math.pi
# parametric slack so segments that start or end on a box face are not blocked
SEGMENT_EPS = 1e-9


@njit(cache=True)
def lambertian_intensity(order, power, cos_angle):
    """Radiant intensity (W/sr) of a generalized Lambertian source."""
    if cos_angle <= 0.0:
        return 0.0
    return power * (order + 1.0) / (2.0 * math.pi) * cos_angle**order


@njit(cache=True)
def reemitted_intensity(reflectance, incident_power, cos_angle):
    """Radiant intensity (W/sr) of a patch re-emitting ``reflectance`` times
    its incident power with an order-1 Lambertian pattern."""
    if cos_angle <= 0.0:
        return 0.0
    return reflectance * incident_power * INV_PI * cos_angle


@njit(cache=True)
def reemission_factors(reflectance, cos_out, dist):
    """Per-patch intensity toward a point per unit incident power, divided by
    the squared distance to that point."""
    out = np.empty(reflectance.shape[0])
    for i in range(reflectance.shape[0]):
        out[i] = reemitted_intensity(reflectance[i], 1.0, cos_out[i]) / (dist[i] * dist[i])
    return out


@njit(cache=True)
def segment_blocked(ax, ay, az, bx, by, bz, boxes):
    """True if segment a-b passes through the interior of any box."""
    d0 = bx - ax
    d1 = by - ay
    d2 = bz - az
    for k in range(boxes.shape[0]):
        if az >= boxes[k, 5] and bz >= boxes[k, 5]:
            continue
        t0 = SEGMENT_EPS
        t1 = 1.0 - SEGMENT_EPS
        hit = True
        for axis in range(3):
            if axis == 0:
                o, d = ax, d0
            elif axis == 1:
                o, d = ay, d1
            else:
                o, d = az, d2
            lo = boxes[k, axis]
            hi = boxes[k, axis + 3]
            if d == 0.0:
                if o <= lo or o >= hi:
                    hit = False
                    break
            else:
                ta = (lo - o) / d
                tb = (hi - o) / d
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
                if t0 >= t1:
                    hit = False
                    break
        if hit:
            return True
    return False


@njit(cache=True)
def segments_blocked(points, target, boxes):
    out = np.zeros(points.shape[0], dtype=np.bool_)
    if boxes.shape[0] == 0:
        return out
    for i in range(points.shape[0]):
        out[i] = segment_blocked(points[i, 0], points[i, 1], points[i, 2],
                                 target[0], target[1], target[2], boxes)
    return out


@njit(cache=True)
def first_order(p_inc, d_src, active, dist, nnz, sidx, sw, dt, out):
    """Accumulate source -> patch -> receiver paths into ``out[slot, bin]``."""
    n_probe = dist.shape[0]
    for ii in range(active.shape[0]):
        i = active[ii]
        p = p_inc[i]
        for r in range(n_probe):
            m = nnz[r, i]
            if m == 0:
                continue
            b = int(((d_src[i] + dist[r, i]) / C_LIGHT) / dt)
            for k in range(m):
                out[sidx[r, i, k], b] += p * sw[r, i, k]


@njit(cache=True, parallel=True)
def transfer_sums(c1, n1, c2, n2, area2):
    """Fraction of each grid-1 patch's re-emitted power intercepted by the
    whole of grid 2, centre-point and ignoring occlusion."""
    out = np.zeros(c1.shape[0])
    for i in prange(c1.shape[0]):
        s = 0.0
        for j in range(c2.shape[0]):
            dx = c2[j, 0] - c1[i, 0]
            dy = c2[j, 1] - c1[i, 1]
            dz = c2[j, 2] - c1[i, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd == 0.0:
                continue
            d = math.sqrt(dd)
            cos_i = (n1[i, 0] * dx + n1[i, 1] * dy + n1[i, 2] * dz) / d
            cos_j = -(n2[j, 0] * dx + n2[j, 1] * dy + n2[j, 2] * dz) / d
            if cos_i > 0.0 and cos_j > 0.0:
                s += cos_i * cos_j * area2[j] / dd
        out[i] = s * INV_PI
    return out


@njit(cache=True, parallel=True)
def second_order(p_inc, d_src, active_i, c1, n1, rho1,
                 active_j, c2, n2, area2, dist, nnz, sidx, sw,
                 boxes, dt, n_slots, n_bins, n_chunks):
    """Accumulate source -> patch i -> patch j -> receiver paths.

    Returns per-chunk histograms of shape (n_chunks, n_slots, n_bins); the
    caller reduces them in chunk order.
    """
    out = np.zeros((n_chunks, n_slots, n_bins))
    n_i = active_i.shape[0]
    n_probe = dist.shape[0]
    for ch in prange(n_chunks):
        lo = (n_i * ch) // n_chunks
        hi = (n_i * (ch + 1)) // n_chunks
        acc = out[ch]
        for ii in range(lo, hi):
            i = active_i[ii]
            xi = c1[i, 0]
            yi = c1[i, 1]
            zi = c1[i, 2]
            nxi = n1[i, 0]
            nyi = n1[i, 1]
            nzi = n1[i, 2]
            p = p_inc[i]
            rho = rho1[i]
            de = d_src[i]
            for jj in range(active_j.shape[0]):
                j = active_j[jj]
                dx = c2[j, 0] - xi
                dy = c2[j, 1] - yi
                dz = c2[j, 2] - zi
                dd = dx * dx + dy * dy + dz * dz
                if dd == 0.0:
                    continue
                d = math.sqrt(dd)
                cos_i = (nxi * dx + nyi * dy + nzi * dz) / d
                if cos_i <= 0.0:
                    continue
                cos_j = -(n2[j, 0] * dx + n2[j, 1] * dy + n2[j, 2] * dz) / d
                if cos_j <= 0.0:
                    continue
                if segment_blocked(xi, yi, zi, c2[j, 0], c2[j, 1], c2[j, 2], boxes):
                    continue
                g = reemitted_intensity(rho, p, cos_i) * cos_j * area2[j] / dd
                for r in range(n_probe):
                    m = nnz[r, j]
                    if m == 0:
                        continue
                    b = int(((de + d + dist[r, j]) / C_LIGHT) / dt)
                    for k in range(m):
                        acc[sidx[r, j, k], b] += g * sw[r, j, k]
    return out
