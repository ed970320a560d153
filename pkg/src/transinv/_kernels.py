"""JIT inner loops for the conv and fully-connected layers.

The forward kernels accumulate in a fixed per-element order (input channel,
then filter row, then filter column; ascending k for the fc layer), with
fastmath off, so results are bit-identical to a scalar reference loop and do
not depend on batch size or worker count.  The weight-gradient kernels have
no such contract and are allowed to reassociate.
"""

import os

# must land before the numba import: config snapshots the environment then.
# TBB probing is noisy and pointless on small boxes; workqueue is always there.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import njit, prange, set_num_threads


def apply_thread_cap():
    """Honor TRANSINV_THREADS if set; silently ignore junk values."""
    raw = os.environ.get("TRANSINV_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return
    if n >= 1:
        set_num_threads(n)


apply_thread_cap()


@njit(parallel=True, cache=True)
def conv2d_fwd(xp, w, b, out):
    # xp is already zero-padded: (n, ci, h+f-1, w+f-1)
    n, ci, hp, wp = xp.shape
    co, _, f, _ = w.shape
    _, _, h, wd = out.shape
    for i in prange(n):
        for o in range(co):
            for y in range(h):
                for x in range(wd):
                    out[i, o, y, x] = b[o]
            for j in range(ci):
                for dy in range(f):
                    for dx in range(f):
                        wv = w[o, j, dy, dx]
                        for y in range(h):
                            for x in range(wd):
                                out[i, o, y, x] += xp[i, j, y + dy, x + dx] * wv


@njit(parallel=True, cache=True)
def conv2d_dx(w, dout, dxp):
    # scatter into the padded-input gradient; caller crops the halo
    n, co, h, wd = dout.shape
    _, ci, f, _ = w.shape
    for i in prange(n):
        for j in range(ci):
            for dy in range(dxp.shape[2]):
                for dx in range(dxp.shape[3]):
                    dxp[i, j, dy, dx] = 0.0
        for o in range(co):
            for j in range(ci):
                for dy in range(f):
                    for dx in range(f):
                        wv = w[o, j, dy, dx]
                        for y in range(h):
                            for x in range(wd):
                                dxp[i, j, y + dy, x + dx] += wv * dout[i, o, y, x]


@njit(parallel=True, cache=True, fastmath=True)
def conv2d_dwdb(xp, dout, dw, db):
    n, ci, hp, wp = xp.shape
    co, _, f, _ = dw.shape
    _, _, h, wd = dout.shape
    for o in prange(co):
        acc_b = dout.dtype.type(0)
        for i in range(n):
            for y in range(h):
                for x in range(wd):
                    acc_b += dout[i, o, y, x]
        db[o] = acc_b
        for j in range(ci):
            for dy in range(f):
                for dx in range(f):
                    acc = dout.dtype.type(0)
                    for i in range(n):
                        for y in range(h):
                            for x in range(wd):
                                acc += xp[i, j, y + dy, x + dx] * dout[i, o, y, x]
                    dw[o, j, dy, dx] = acc


@njit(parallel=True, cache=True)
def fc_fwd(x, wt, b, out):
    # wt is the transposed weight matrix, (k, m), so the inner loop is contiguous
    n, k = x.shape
    m = b.shape[0]
    for i in prange(n):
        for u in range(m):
            out[i, u] = b[u]
        for kk in range(k):
            xv = x[i, kk]
            for u in range(m):
                out[i, u] += xv * wt[kk, u]


@njit(parallel=True, cache=True)
def fc_dx(dout, w, dx):
    n, m = dout.shape
    _, k = w.shape
    for i in prange(n):
        for kk in range(k):
            dx[i, kk] = 0.0
        for u in range(m):
            g = dout[i, u]
            for kk in range(k):
                dx[i, kk] += g * w[u, kk]


@njit(parallel=True, cache=True, fastmath=True)
def fc_dwdb(x, dout, dw, db):
    n, k = x.shape
    m = db.shape[0]
    for u in prange(m):
        acc_b = dout.dtype.type(0)
        for i in range(n):
            acc_b += dout[i, u]
        db[u] = acc_b
        for kk in range(k):
            acc = dout.dtype.type(0)
            for i in range(n):
                acc += x[i, kk] * dout[i, u]
            dw[u, kk] = acc
