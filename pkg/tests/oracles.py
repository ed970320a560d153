"""Independent reference implementations the library is tested against.

Everything here is deliberately naive: scalar loops, explicit float32
rounding where the contract is bit-level, float64 or exact rational
arithmetic where it is numeric.  None of it shares code with the package.
"""

import math
from fractions import Fraction

import numpy as np


def conv_naive(x, w, b):
    """Direct-summation convolution, stride 1, zero padding floor(f/2).

    Scalar float32 accumulation: start from the bias, then add one product
    at a time over (input channel, filter row, filter col) ascending, rounding
    to float32 after every multiply and every add.
    """
    n, ci, h, wd = x.shape
    co, _, f, _ = w.shape
    p = f // 2
    out = np.empty((n, co, h, wd), dtype=np.float32)
    for i in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(wd):
                    acc = np.float32(b[o])
                    for j in range(ci):
                        for dy in range(f):
                            for dx in range(f):
                                sy, sx = y + dy - p, xx + dx - p
                                if 0 <= sy < h and 0 <= sx < wd:
                                    acc = np.float32(
                                        acc + np.float32(x[i, j, sy, sx] * w[o, j, dy, dx]))
                    out[i, o, y, xx] = acc
    return out


def pool_naive(x):
    """2x2 stride-2 max pool; ties resolved to the first max in row-major
    window order (top-left, top-right, bottom-left, bottom-right)."""
    n, c, h, wd = x.shape
    out = np.empty((n, c, h // 2, wd // 2), dtype=x.dtype)
    for i in range(n):
        for j in range(c):
            for y in range(h // 2):
                for xx in range(wd // 2):
                    vals = [x[i, j, 2 * y, 2 * xx], x[i, j, 2 * y, 2 * xx + 1],
                            x[i, j, 2 * y + 1, 2 * xx], x[i, j, 2 * y + 1, 2 * xx + 1]]
                    best = vals[0]
                    for v in vals[1:]:
                        if v > best:
                            best = v
                    out[i, j, y, xx] = best
    return out


def fc_naive(x, w, b):
    """Row-wise W @ x + b with scalar float32 accumulation, k ascending."""
    n, k = x.shape
    m = w.shape[0]
    out = np.empty((n, m), dtype=np.float32)
    for i in range(n):
        for u in range(m):
            acc = np.float32(b[u])
            for kk in range(k):
                acc = np.float32(acc + np.float32(x[i, kk] * w[u, kk]))
            out[i, u] = acc
    return out


def softmax_xent_naive(scores, label):
    """Single-vector cross entropy in float64, stabilized the textbook way."""
    s = np.asarray(scores, dtype=np.float64)
    shifted = s - s.max()
    z = np.exp(shifted).sum()
    loss = math.log(z) - shifted[label]
    p = np.exp(shifted) / z
    d = p.copy()
    d[label] -= 1.0
    return loss, d


def fd_grad(f, x, eps=1e-5):
    """Central finite differences, float64, written independently of the
    package's checker."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        up = f(x)
        x[idx] = orig - eps
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * eps)
        it.iternext()
    return g


def exact_sq_distance(a, b):
    """Exact squared euclidean distance between two float vectors."""
    total = Fraction(0)
    for x, y in zip(a, b):
        d = Fraction(float(x)) - Fraction(float(y))
        total += d * d
    return total


def median_pairs_bruteforce(scores, labels):
    """Lower-median distance over all differently-labeled pairs, exact until
    the final square root.  Enumerates every pair."""
    sq = []
    n = len(labels)
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] != labels[j]:
                sq.append(exact_sq_distance(scores[i], scores[j]))
    sq.sort()
    return math.sqrt(float(sq[(len(sq) - 1) // 2])), len(sq)


def map_bruteforce(forward_one, image, translate_fn, norm_value):
    """21x21 normalized map via one forward call per offset, float64 math.

    forward_one: (40, 40) image -> score vector.  Deliberately avoids the
    package's batching and exact-ratio plumbing.
    """
    base = np.asarray(forward_one(image), dtype=np.float64)
    grid = np.empty((21, 21))
    for ky in range(-10, 11):
        for kx in range(-10, 11):
            s = np.asarray(forward_one(translate_fn(image, kx, ky)), dtype=np.float64)
            grid[ky + 10, kx + 10] = np.linalg.norm(s - base) / norm_value
    return grid


def radial_bins_bruteforce():
    """Offset -> radius assignment counted straight from the definition."""
    counts = {}
    for ky in range(-10, 11):
        for kx in range(-10, 11):
            r = int(round(math.sqrt(kx * kx + ky * ky)))
            counts[r] = counts.get(r, 0) + 1
    return counts
