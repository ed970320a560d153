"""Central-difference gradient verification, run in float64.

Each check builds a scalar objective L = sum(out * R) for a fixed random R,
gets the analytic gradient from the layer's backward pass with upstream
gradient R, and compares against two-sided finite differences.  Inputs are
drawn as shuffled evenly-spaced grids so no two values sit within the
perturbation of each other; that keeps max-pool argmaxes and ReLU masks
stable under the probe.
"""

import numpy as np

from . import nn
from .tensor import Tensor4

EPS = 1e-5
TOLERANCE = 1e-4


def fd_grad(f, x, eps=EPS):
    """Two-sided finite-difference gradient of scalar f at x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f(x)
        flat[i] = keep - eps
        lo = f(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def _spread(rng, shape, scale=1.0):
    """Distinct values with pairwise gaps far above EPS."""
    size = int(np.prod(shape))
    grid = np.linspace(-scale, scale, size) + 0.37 * scale / size
    return rng.permutation(grid).reshape(shape)


def _check_conv(rng, eps):
    n = int(rng.integers(1, 3))
    ci = int(rng.integers(1, 4))
    co = int(rng.integers(1, 5))
    h = int(rng.integers(3, 8))
    wd = int(rng.integers(3, 8))
    f = int(rng.choice([1, 3, 5]))
    x = _spread(rng, (n, ci, h, wd))
    w = _spread(rng, (co, ci, f, f))
    b = _spread(rng, (co,))
    r = _spread(rng, (n, co, h, wd))

    def loss(xv=None, wv=None, bv=None):
        out = nn.conv2d_forward(Tensor4(x if xv is None else xv),
                                Tensor4(w if wv is None else wv),
                                b if bv is None else bv)
        return float(np.sum(out.array * r))

    dx, dw, db = nn.conv2d_backward(Tensor4(x), Tensor4(w), Tensor4(r))
    return [
        ("conv/dx", max_rel_error(dx.array, fd_grad(lambda v: loss(xv=v), x, eps))),
        ("conv/dw", max_rel_error(dw.array, fd_grad(lambda v: loss(wv=v), w, eps))),
        ("conv/db", max_rel_error(db, fd_grad(lambda v: loss(bv=v), b, eps))),
    ]


def _check_pool(rng, eps):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h = 2 * int(rng.integers(1, 5))
    wd = 2 * int(rng.integers(1, 5))
    x = _spread(rng, (n, c, h, wd))
    r = _spread(rng, (n, c, h // 2, wd // 2))

    def loss(v):
        out, _ = nn.maxpool_forward(Tensor4(v))
        return float(np.sum(out.array * r))

    _, idx = nn.maxpool_forward(Tensor4(x))
    dx = nn.maxpool_backward(idx, Tensor4(r))
    return [("pool/dx", max_rel_error(dx.array, fd_grad(loss, x, eps)))]


def _check_relu(rng, eps):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h = int(rng.integers(2, 7))
    wd = int(rng.integers(2, 7))
    x = _spread(rng, (n, c, h, wd))
    r = _spread(rng, (n, c, h, wd))

    def loss(v):
        return float(np.sum(nn.relu_forward(Tensor4(v)).array * r))

    dx = nn.relu_backward(Tensor4(x), Tensor4(r))
    return [("relu/dx", max_rel_error(dx.array, fd_grad(loss, x, eps)))]


def _check_fc(rng, eps):
    n = int(rng.integers(1, 4))
    k = int(rng.integers(2, 12))
    m = int(rng.integers(2, 8))
    x = _spread(rng, (n, k))
    w = _spread(rng, (m, k))
    b = _spread(rng, (m,))
    r = _spread(rng, (n, m))

    def loss(xv=None, wv=None, bv=None):
        out = nn.fc_forward(x if xv is None else xv,
                            w if wv is None else wv,
                            b if bv is None else bv)
        return float(np.sum(out * r))

    dx, dw, db = nn.fc_backward(x, w, r)
    return [
        ("fc/dx", max_rel_error(dx, fd_grad(lambda v: loss(xv=v), x, eps))),
        ("fc/dw", max_rel_error(dw, fd_grad(lambda v: loss(wv=v), w, eps))),
        ("fc/db", max_rel_error(db, fd_grad(lambda v: loss(bv=v), b, eps))),
    ]


def _check_softmax(rng, eps):
    n = int(rng.integers(1, 4))
    k = int(rng.integers(2, 11))
    scores = rng.normal(0.0, 2.0, size=(n, k))
    labels = rng.integers(0, k, size=n)

    def loss(v):
        ls, _ = nn.softmax_xent(v, labels)
        return ls

    _, d = nn.softmax_xent(scores, labels)
    return [("softmax_xent/dscores", max_rel_error(d, fd_grad(loss, scores, eps)))]


LAYER_CHECKS = {
    "conv": _check_conv,
    "pool": _check_pool,
    "relu": _check_relu,
    "fc": _check_fc,
    "softmax_xent": _check_softmax,
}


def run_layer_checks(seed=0, instances=20, eps=EPS):
    """Run every layer check on `instances` seeded random cases each.

    Returns a list of (label, worst_rel_error) with one entry per gradient
    output (conv/dx, conv/dw, ...).
    """
    worst = {}
    for off, (name, fn) in enumerate(LAYER_CHECKS.items()):
        rng = np.random.default_rng(seed * 1000 + off)
        for _ in range(instances):
            for label, err in fn(rng, eps):
                worst[label] = max(worst.get(label, 0.0), err)
    return sorted(worst.items())


def run_model_check(arch="cp", filter_size=5, seed=0, eps=EPS):
    """End-to-end check of d(loss)/d(params) on a reduced network.

    Uses 4 conv channels, a 16-unit hidden layer, and 12x12 inputs so the
    finite-difference sweep stays fast.
    """
    spec = nn.NetworkSpec(arch, filter_size=filter_size, conv_channels=4,
                          hidden_units=16, num_classes=10, input_side=12)
    model = nn.Model.initialize(spec, seed=seed).astype(np.float64)
    rng = np.random.default_rng(seed + 1)
    images = _spread(rng, (2, 1, 12, 12), scale=0.8)
    labels = rng.integers(0, 10, size=2)
    _, grads = model.loss_and_grads(images, labels)
    results = []
    for pname, _ in spec.param_shapes():
        base = model.params[pname].array

        def loss(v, _pname=pname, _base=base):
            saved = _base.copy()
            _base[...] = v
            out, _ = model.loss_and_grads(images, labels)
            _base[...] = saved
            return out

        err = max_rel_error(np.asarray(grads[pname]), fd_grad(loss, base.copy(), eps))
        results.append((f"model/{pname}", err))
    return results
