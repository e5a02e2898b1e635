"""Numba kernels for the two hot loops: GICP accumulation and pose-graph
linearization into banded normal equations.

Both mirror vectorized numpy code elsewhere in the package (``_gicp_terms``
and ``_Problem.normal_equations``); the tests check them against it.
"""
import math

import numpy as np
from numba import njit

SMALL_ANGLE = 1e-7
SERIES_ANGLE = 1e-2
PI = math.pi
TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(t):
    if t > PI or t <= -PI:
        t = t - TWO_PI * np.round(t / TWO_PI)
        if t <= -PI:
            t += TWO_PI
        elif t > PI:
            t -= TWO_PI
    return t


@njit(cache=True)
def _between(ax, ay, at, bx, by, bt):
    c, s = math.cos(at), math.sin(at)
    dx, dy = bx - ax, by - ay
    return c * dx + s * dy, -s * dx + c * dy, _wrap(bt - at)


@njit(cache=True)
def _half_cot(t):
    if abs(t) < SMALL_ANGLE:
        return 1.0 - t * t / 12.0
    h = 0.5 * t
    return h * math.cos(h) / math.sin(h)


@njit(cache=True)
def _log(x, y, t):
    a = _half_cot(t)
    h = 0.5 * t
    return a * x + h * y, -h * x + a * y, t


@njit(cache=True)
def _jr_inv(r1, r2, t, out):
    a = _half_cot(t)
    h = 0.5 * t
    t2 = t * t
    if abs(t) < SMALL_ANGLE:
        ca = 0.5 - t2 / 24.0
    else:
        sh = math.sin(0.5 * t)
        ca = 2.0 * sh * sh / t2
    if abs(t) < SERIES_ANGLE:
        cb = t * (1.0 / 6.0 - t2 * (1.0 / 120.0 - t2 * (1.0 / 5040.0 - t2 / 362880.0)))
    else:
        cb = (t - math.sin(t)) / t2
    u1 = r1 * cb - r2 * ca
    u2 = r1 * ca + r2 * cb
    out[0, 0] = a
    out[0, 1] = -h
    out[0, 2] = -(a * u1 - h * u2)
    out[1, 0] = h
    out[1, 1] = a
    out[1, 2] = -(h * u1 + a * u2)
    out[2, 0] = 0.0
    out[2, 1] = 0.0
    out[2, 2] = 1.0


@njit(cache=True)
def _matmul3(a, b, out):
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc


@njit(cache=True)
def _add_block(ab, g, band, ci, cj, Ji, Jj, wr, with_grad):
    """Accumulate Ji^T Jj into the (ci, cj) block of upper banded storage."""
    for p in range(3):
        for q in range(3):
            acc = 0.0
            for k in range(3):
                acc += Ji[k, p] * Jj[k, q]
            row = 3 * ci + p
            col = 3 * cj + q
            if row <= col:
                ab[band + row - col, col] += acc
            elif ci != cj:
                ab[band + col - row, row] += acc
    if with_grad:
        for p in range(3):
            acc = 0.0
            for k in range(3):
                acc += Ji[k, p] * wr[k]
            g[3 * ci + p] += acc


@njit(cache=True)
def banded_normal_equations(x, pi, pz, pw, ba, bb, bz, bw, band, ab, g):
    """Fill ``ab`` (LAPACK upper band) with J^T J and ``g`` with J^T r.

    Both outputs must be zeroed by the caller. Returns the total error.
    """
    err = 0.0
    jri = np.empty((3, 3))
    ja = np.empty((3, 3))
    wja = np.empty((3, 3))
    wjb = np.empty((3, 3))
    ad = np.zeros((3, 3))
    wr = np.empty(3)
    for f in range(pi.shape[0]):
        c = pi[f]
        ex, ey, et = _between(pz[f, 0], pz[f, 1], pz[f, 2], x[c, 0], x[c, 1], x[c, 2])
        r1, r2, r3 = _log(ex, ey, et)
        _jr_inv(r1, r2, r3, jri)
        W = pw[f]
        _matmul3(W, jri, wja)
        for k in range(3):
            wr[k] = W[k, 0] * r1 + W[k, 1] * r2 + W[k, 2] * r3
            err += wr[k] * wr[k]
        _add_block(ab, g, band, c, c, wja, wja, wr, True)
    for f in range(ba.shape[0]):
        ca, cb = ba[f], bb[f]
        px, py, pt = _between(x[ca, 0], x[ca, 1], x[ca, 2], x[cb, 0], x[cb, 1], x[cb, 2])
        ex, ey, et = _between(bz[f, 0], bz[f, 1], bz[f, 2], px, py, pt)
        r1, r2, r3 = _log(ex, ey, et)
        _jr_inv(r1, r2, r3, jri)
        # Ad(between(b, a)) with between(b, a) = inverse(pred)
        c, s = math.cos(pt), math.sin(pt)
        ix, iy = -c * px - s * py, s * px - c * py
        ad[0, 0] = c
        ad[0, 1] = s
        ad[1, 0] = -s
        ad[1, 1] = c
        ad[0, 2] = iy
        ad[1, 2] = -ix
        ad[2, 2] = 1.0
        _matmul3(jri, ad, ja)
        W = bw[f]
        _matmul3(W, ja, wja)
        for i in range(3):
            for j in range(3):
                wja[i, j] = -wja[i, j]
        _matmul3(W, jri, wjb)
        for k in range(3):
            wr[k] = W[k, 0] * r1 + W[k, 1] * r2 + W[k, 2] * r3
            err += wr[k] * wr[k]
        _add_block(ab, g, band, ca, ca, wja, wja, wr, True)
        _add_block(ab, g, band, cb, cb, wjb, wjb, wr, True)
        _add_block(ab, g, band, ca, cb, wja, wjb, wr, False)
    return err


@njit(cache=True)
def graph_error(x, pi, pz, pw, ba, bb, bz, bw):
    err = 0.0
    for f in range(pi.shape[0]):
        c = pi[f]
        ex, ey, et = _between(pz[f, 0], pz[f, 1], pz[f, 2], x[c, 0], x[c, 1], x[c, 2])
        r1, r2, r3 = _log(ex, ey, et)
        W = pw[f]
        for k in range(3):
            w = W[k, 0] * r1 + W[k, 1] * r2 + W[k, 2] * r3
            err += w * w
    for f in range(ba.shape[0]):
        ca, cb = ba[f], bb[f]
        px, py, pt = _between(x[ca, 0], x[ca, 1], x[ca, 2], x[cb, 0], x[cb, 1], x[cb, 2])
        ex, ey, et = _between(bz[f, 0], bz[f, 1], bz[f, 2], px, py, pt)
        r1, r2, r3 = _log(ex, ey, et)
        W = bw[f]
        for k in range(3):
            w = W[k, 0] * r1 + W[k, 1] * r2 + W[k, 2] * r3
            err += w * w
    return err


@njit(cache=True)
def gicp_normal_equations(src, src_cov, tgt, tgt_cov, idx, found, c, s, tx, ty, H, g):
    """Gauss-Newton system of the GICP cost at pose (c, s, tx, ty).

    Residuals are expressed after rotating back by R^T, where the per-pair
    information is q = (Ca + R^T Cb R)^-1. Returns (cost, pairs, singular).
    """
    for i in range(3):
        g[i] = 0.0
        for j in range(3):
            H[i, j] = 0.0
    cost = 0.0
    n = 0
    for i in range(src.shape[0]):
        if not found[i]:
            continue
        j = idx[i]
        ax, ay = src[i, 0], src[i, 1]
        dxw = tgt[j, 0] - (c * ax - s * ay + tx)
        dyw = tgt[j, 1] - (s * ax + c * ay + ty)
        bxx, bxy, byy = tgt_cov[j, 0, 0], tgt_cov[j, 0, 1], tgt_cov[j, 1, 1]
        rxx = c * c * bxx + 2 * c * s * bxy + s * s * byy
        ryy = s * s * bxx - 2 * c * s * bxy + c * c * byy
        rxy = (c * c - s * s) * bxy + c * s * (byy - bxx)
        sxx = src_cov[i, 0, 0] + rxx
        syy = src_cov[i, 1, 1] + ryy
        sxy = src_cov[i, 0, 1] + rxy
        det = sxx * syy - sxy * sxy
        if not det > 0.0:
            return cost, n, True
        qxx, qyy, qxy = syy / det, sxx / det, -sxy / det
        dx = c * dxw + s * dyw
        dy = -s * dxw + c * dyw
        wx = qxx * dx + qxy * dy
        wy = qxy * dx + qyy * dy
        cost += dx * wx + dy * wy
        px, py = -ay, ax
        qpx = qxx * px + qxy * py
        qpy = qxy * px + qyy * py
        H[0, 0] += qxx
        H[0, 1] += qxy
        H[1, 1] += qyy
        H[0, 2] += qpx
        H[1, 2] += qpy
        H[2, 2] += px * qpx + py * qpy
        g[0] += wx
        g[1] += wy
        g[2] += px * wx + py * wy
        n += 1
    H[1, 0] = H[0, 1]
    H[2, 0] = H[0, 2]
    H[2, 1] = H[1, 2]
    return cost, n, False
