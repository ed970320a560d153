"""Layers, architecture strings, and the model container.

Architectures are written as strings over {c, p}: 'c' is a 5x5 (configurable,
odd) convolution with 16 output channels followed by ReLU, 'p' is a 2x2
max pool with stride 2.  Every network ends with Flatten, a 100-unit ReLU
hidden layer, and a linear output layer.  A trailing '-aug' on a name only
tags which training set the model saw; it does not change the layout.

Convolutions use stride 1 and zero padding floor(f/2), so spatial dims are
preserved; only pooling shrinks them.
"""

import json
import re

import numpy as np

from . import _kernels
from .tensor import Tensor4

MODEL_MAGIC = "TRANSINV1"

_ARCH_RE = re.compile(r"^[cp]+$")


class NonFiniteError(ValueError):
    """A NaN or infinity showed up where the math requires finite values."""


def parse_arch(name, *, filter_size=5, conv_channels=16, hidden_units=100,
               num_classes=10, input_side=40):
    """Parse an architecture name like 'ccpp' or 'cpcp-aug'.

    Returns (NetworkSpec, augmented_flag).  The '-aug' suffix sets the flag
    and is otherwise stripped.
    """
    augmented = name.endswith("-aug")
    arch = name[:-4] if augmented else name
    if not _ARCH_RE.match(arch):
        raise ValueError(
            f"bad architecture {name!r}: expected letters c/p with optional -aug suffix"
        )
    if "c" not in arch:
        raise ValueError(f"bad architecture {name!r}: needs at least one conv layer")
    spec = NetworkSpec(arch=arch, filter_size=filter_size,
                       conv_channels=conv_channels, hidden_units=hidden_units,
                       num_classes=num_classes, input_side=input_side)
    return spec, augmented


class NetworkSpec:
    """Everything needed to build a model: arch string plus size knobs."""

    __slots__ = ("arch", "filter_size", "conv_channels", "hidden_units",
                 "num_classes", "input_side")

    def __init__(self, arch, filter_size=5, conv_channels=16, hidden_units=100,
                 num_classes=10, input_side=40):
        if not _ARCH_RE.match(arch) or "c" not in arch:
            raise ValueError(f"bad arch string {arch!r}")
        if filter_size < 1 or filter_size % 2 == 0:
            raise ValueError(f"filter_size must be odd and >= 1, got {filter_size}")
        if min(conv_channels, hidden_units, num_classes, input_side) < 1:
            raise ValueError("all size knobs must be >= 1")
        self.arch = arch
        self.filter_size = int(filter_size)
        self.conv_channels = int(conv_channels)
        self.hidden_units = int(hidden_units)
        self.num_classes = int(num_classes)
        self.input_side = int(input_side)
        self._trace_sides()  # raises if a pool hits an odd side

    def _trace_sides(self):
        side = self.input_side
        for ch in self.arch:
            if ch == "p":
                if side % 2 != 0:
                    raise ValueError(
                        f"arch {self.arch!r}: pool needs an even side, got {side}"
                    )
                side //= 2
                if side < 1:
                    raise ValueError(f"arch {self.arch!r}: pooled away to nothing")
        return side

    def layer_plan(self):
        """Flat list of layer tags in forward order."""
        plan = []
        for ch in self.arch:
            if ch == "c":
                plan += ["conv", "relu"]
            else:
                plan.append("pool")
        plan += ["flatten", "fc", "relu", "fc"]
        return plan

    def final_side(self):
        return self._trace_sides()

    def flat_features(self):
        side = self.final_side()
        return self.conv_channels * side * side

    def param_shapes(self):
        """Ordered (name, 4-d shape) manifest.  Biases and fc weights are
        stored as Tensor4 with trailing singleton dims."""
        shapes = []
        in_ch = 1
        k = 0
        for ch in self.arch:
            if ch == "c":
                k += 1
                f = self.filter_size
                shapes.append((f"conv{k}_w", (self.conv_channels, in_ch, f, f)))
                shapes.append((f"conv{k}_b", (self.conv_channels, 1, 1, 1)))
                in_ch = self.conv_channels
        shapes.append(("fc1_w", (self.hidden_units, self.flat_features(), 1, 1)))
        shapes.append(("fc1_b", (self.hidden_units, 1, 1, 1)))
        shapes.append(("fc2_w", (self.num_classes, self.hidden_units, 1, 1)))
        shapes.append(("fc2_b", (self.num_classes, 1, 1, 1)))
        return shapes

    def to_dict(self):
        return {
            "arch": self.arch,
            "filter_size": self.filter_size,
            "conv_channels": self.conv_channels,
            "hidden_units": self.hidden_units,
            "num_classes": self.num_classes,
            "input_side": self.input_side,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("arch", "filter_size", "conv_channels",
                                        "hidden_units", "num_classes", "input_side")})

    def __eq__(self, other):
        return isinstance(other, NetworkSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"NetworkSpec({self.arch!r}, f={self.filter_size})"


# ---------------------------------------------------------------------------
# layer ops


def _check_dtypes(*arrays):
    dt = arrays[0].dtype
    for a in arrays[1:]:
        if a.dtype != dt:
            raise ValueError(f"mixed dtypes: {dt} vs {a.dtype}")
    return dt


def conv2d_forward(x, w, b):
    """Stride-1 convolution with zero padding floor(f/2); output keeps h, w.

    x: Tensor4 (n, ci, h, w); w: Tensor4 (co, ci, f, f), f odd; b: (co,) array.
    """
    xa, wa = x.array, w.array
    ba = np.asarray(b).reshape(-1)
    _check_dtypes(xa, wa, ba)
    n, ci, h, wd = xa.shape
    co, wci, f, f2 = wa.shape
    if f != f2 or f % 2 == 0:
        raise ValueError(f"filter must be square with odd side, got {wa.shape}")
    if wci != ci:
        raise ValueError(f"channel mismatch: input {xa.shape} vs filter {wa.shape}")
    if ba.shape[0] != co:
        raise ValueError(f"bias length {ba.shape[0]} vs {co} output channels")
    p = f // 2
    xp = np.zeros((n, ci, h + 2 * p, wd + 2 * p), dtype=xa.dtype)
    xp[:, :, p:p + h, p:p + wd] = xa
    out = np.empty((n, co, h, wd), dtype=xa.dtype)
    _kernels.conv2d_fwd(xp, wa, ba, out)
    return Tensor4(out)


def conv2d_backward(x, w, d_out):
    """Gradients for conv2d_forward.  Returns (dX, dW, dB)."""
    xa, wa, da = x.array, w.array, d_out.array
    _check_dtypes(xa, wa, da)
    n, ci, h, wd = xa.shape
    co, _, f, _ = wa.shape
    if da.shape != (n, co, h, wd):
        raise ValueError(f"upstream shape {da.shape}, expected {(n, co, h, wd)}")
    p = f // 2
    xp = np.zeros((n, ci, h + 2 * p, wd + 2 * p), dtype=xa.dtype)
    xp[:, :, p:p + h, p:p + wd] = xa
    dxp = np.empty_like(xp)
    _kernels.conv2d_dx(wa, da, dxp)
    dw = np.empty_like(wa)
    db = np.empty(co, dtype=wa.dtype)
    _kernels.conv2d_dwdb(xp, da, dw, db)
    dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
    return Tensor4(np.ascontiguousarray(dx)), Tensor4(dw), db


def maxpool_forward(x):
    """2x2 max pool, stride 2.  Ties go to the first max in row-major window
    order.  Returns (out, indices); indices are 0..3 per window."""
    xa = x.array
    n, c, h, wd = xa.shape
    if h % 2 or wd % 2:
        raise ValueError(f"pool needs even spatial dims, got {xa.shape}")
    win = xa.reshape(n, c, h // 2, 2, wd // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, h // 2, wd // 2, 4)
    idx = np.argmax(win, axis=-1).astype(np.int8)  # first max wins
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return Tensor4(np.ascontiguousarray(out)), idx


def maxpool_backward(indices, d_out):
    """Scatter upstream gradients to the argmax positions."""
    da = d_out.array
    n, c, h2, w2 = da.shape
    if indices.shape != (n, c, h2, w2):
        raise ValueError(f"indices shape {indices.shape} vs upstream {da.shape}")
    flat = np.zeros((n, c, h2, w2, 4), dtype=da.dtype)
    np.put_along_axis(flat, indices[..., None].astype(np.intp), da[..., None], axis=-1)
    dx = flat.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return Tensor4(np.ascontiguousarray(dx.reshape(n, c, h2 * 2, w2 * 2)))


def relu_forward(x):
    if isinstance(x, Tensor4):
        return Tensor4(np.maximum(x.array, 0))
    return np.maximum(x, 0)


def relu_backward(x, d_out):
    # subgradient at exactly 0 is 0
    xa = x.array if isinstance(x, Tensor4) else x
    da = d_out.array if isinstance(d_out, Tensor4) else d_out
    if xa.shape != da.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {da.shape}")
    out = da * (xa > 0)
    return Tensor4(out) if isinstance(x, Tensor4) else out


def _as_rows(x):
    a = np.asarray(x)
    if a.ndim == 1:
        return a[None, :], True
    if a.ndim == 2:
        return a, False
    raise ValueError(f"expected a vector or a batch of rows, got shape {a.shape}")


def fc_forward(x, w, b):
    """out = W @ x + b per row.  x: (k,) or (n, k); w: (m, k); b: (m,)."""
    rows, squeeze = _as_rows(x)
    w = np.asarray(w)
    b = np.asarray(b).reshape(-1)
    _check_dtypes(rows, w, b)
    if rows.shape[1] != w.shape[1]:
        raise ValueError(f"input length {rows.shape[1]} vs weight columns {w.shape[1]}")
    if b.shape[0] != w.shape[0]:
        raise ValueError(f"bias length {b.shape[0]} vs {w.shape[0]} weight rows")
    wt = np.ascontiguousarray(w.T)
    out = np.empty((rows.shape[0], w.shape[0]), dtype=rows.dtype)
    _kernels.fc_fwd(np.ascontiguousarray(rows), wt, b, out)
    return out[0] if squeeze else out


def fc_backward(x, w, d_out):
    """Gradients for fc_forward.  Returns (dX, dW, dB)."""
    rows, squeeze = _as_rows(x)
    douts, _ = _as_rows(d_out)
    w = np.asarray(w)
    if douts.shape != (rows.shape[0], w.shape[0]):
        raise ValueError(
            f"upstream shape {douts.shape}, expected {(rows.shape[0], w.shape[0])}"
        )
    rows = np.ascontiguousarray(rows)
    douts = np.ascontiguousarray(douts)
    dx = np.empty_like(rows)
    _kernels.fc_dx(douts, np.ascontiguousarray(w), dx)
    dw = np.empty_like(w)
    db = np.empty(w.shape[0], dtype=w.dtype)
    _kernels.fc_dwdb(rows, douts, dw, db)
    return (dx[0] if squeeze else dx), dw, db


def softmax(scores):
    """Row-wise softmax, stabilized by max subtraction."""
    rows, squeeze = _as_rows(scores)
    shifted = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def softmax_xent(scores, labels):
    """Mean cross-entropy after softmax, and its gradient w.r.t. scores.

    scores: (k,) or (n, k); labels: int or (n,) ints in [0, k).  The gradient
    is (softmax - one_hot) / n, i.e. the gradient of the mean loss, so for a
    single vector it is exactly softmax - one_hot.
    """
    rows, squeeze = _as_rows(scores)
    lab = np.atleast_1d(np.asarray(labels))
    n, k = rows.shape
    if lab.shape != (n,):
        raise ValueError(f"labels shape {lab.shape}, expected ({n},)")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValueError(f"labels must be integers, got {lab.dtype}")
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    if not np.all(np.isfinite(rows)):
        raise NonFiniteError("non-finite score")
    work = rows.astype(np.float64)
    shifted = work - work.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    logp = shifted - np.log(z)[:, None]
    loss = float(-logp[np.arange(n), lab].mean())
    d = e / z[:, None]
    d[np.arange(n), lab] -= 1.0
    d /= n
    d = d.astype(rows.dtype)
    return loss, (d[0] if squeeze else d)


# ---------------------------------------------------------------------------
# model


class Model:
    """A NetworkSpec plus its parameters and bookkeeping metadata."""

    def __init__(self, spec, params, seed=0, dataset="", meta=None):
        self.spec = spec
        self.params = params  # dict name -> Tensor4, manifest order
        self.seed = int(seed)
        self.dataset = str(dataset)
        self.meta = dict(meta or {})
        for name, shape in spec.param_shapes():
            if name not in params:
                raise ValueError(f"missing parameter {name}")
            if params[name].shape != shape:
                raise ValueError(
                    f"parameter {name}: shape {params[name].shape}, spec wants {shape}"
                )

    @classmethod
    def initialize(cls, spec, seed, dataset="", meta=None):
        """He-init weights (Normal(0, sqrt(2/fan_in))), zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in spec.param_shapes():
            if name.endswith("_b"):
                params[name] = Tensor4.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                std = np.sqrt(2.0 / fan_in)
                params[name] = Tensor4(rng.normal(0.0, std, size=shape).astype(np.float32))
        return cls(spec, params, seed=seed, dataset=dataset, meta=meta)

    @property
    def dtype(self):
        return self.params["fc1_w"].dtype

    def astype(self, dtype):
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Model(self.spec, params, seed=self.seed, dataset=self.dataset,
                     meta=self.meta)

    def copy(self):
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()},
                     seed=self.seed, dataset=self.dataset, meta=self.meta)

    def _coerce_input(self, images):
        a = images.array if isinstance(images, Tensor4) else np.asarray(images)
        s = self.spec.input_side
        if a.ndim == 3:
            a = a[:, None, :, :]
        if a.ndim != 4 or a.shape[1] != 1 or a.shape[2:] != (s, s):
            raise ValueError(
                f"input shape {a.shape}, expected (n, 1, {s}, {s})"
            )
        if a.dtype != self.dtype:
            a = a.astype(self.dtype)
        return Tensor4(np.ascontiguousarray(a))

    def _run(self, images, keep_cache):
        x = self._coerce_input(images)
        cache = []
        conv_i = 0
        fc_i = 0
        convs = [n for n, _ in self.spec.param_shapes() if re.match(r"conv\d+_w$", n)]
        for tag in self.spec.layer_plan():
            if tag == "conv":
                wname = convs[conv_i]
                w = self.params[wname]
                b = self.params[wname[:-2] + "_b"].flat()
                if keep_cache:
                    cache.append(("conv", wname, x))
                x = conv2d_forward(x, w, b)
                conv_i += 1
            elif tag == "relu":
                if keep_cache:
                    cache.append(("relu", None, x))
                x = relu_forward(x)
            elif tag == "pool":
                out, idx = maxpool_forward(x)
                if keep_cache:
                    cache.append(("pool", None, idx))
                x = out
            elif tag == "flatten":
                n = x.shape[0]
                if keep_cache:
                    cache.append(("flatten", None, x.shape))
                x = x.array.reshape(n, -1)
            else:  # fc
                fc_i += 1
                name = f"fc{fc_i}"
                w = self.params[name + "_w"].array.reshape(
                    self.params[name + "_w"].shape[:2])
                b = self.params[name + "_b"].flat()
                if keep_cache:
                    cache.append(("fc", name, x))
                x = fc_forward(x, w, b)
        return x, cache

    def forward(self, images):
        """Score vectors before softmax, shape (n, num_classes)."""
        scores, _ = self._run(images, keep_cache=False)
        return scores

    def loss_and_grads(self, images, labels):
        """Mean cross-entropy over the batch and gradients for every param."""
        scores, cache = self._run(images, keep_cache=True)
        loss, d = softmax_xent(scores, np.asarray(labels))
        grads = {}
        for tag, name, saved in reversed(cache):
            if tag == "fc":
                w = self.params[name + "_w"]
                w2 = w.array.reshape(w.shape[:2])
                dx, dw, db = fc_backward(saved, w2, d)
                grads[name + "_w"] = dw.reshape(w.shape)
                grads[name + "_b"] = db.reshape(self.params[name + "_b"].shape)
                d = dx
            elif tag == "flatten":
                d = Tensor4(d.reshape(saved))
            elif tag == "pool":
                d = maxpool_backward(saved, d)
            elif tag == "relu":
                d = relu_backward(saved, d)
            else:  # conv
                w = self.params[name]
                dx, dw, db = conv2d_backward(saved, w, d)
                grads[name] = dw.array
                grads[name[:-2] + "_b"] = db.reshape(
                    self.params[name[:-2] + "_b"].shape)
                d = dx
        return loss, grads

    def predict(self, images):
        return np.argmax(self.forward(images), axis=1)


# ---------------------------------------------------------------------------
# serialization: one JSON header line, a NUL byte, then the little-endian
# float32 parameter blob in manifest order


def save_model(model, path):
    header = {
        "magic": MODEL_MAGIC,
        "spec": model.spec.to_dict(),
        "params": [{"name": n, "shape": list(s)} for n, s in model.spec.param_shapes()],
        "seed": model.seed,
        "dataset": model.dataset,
        "meta": model.meta,
    }
    if model.dtype != np.float32:
        raise ValueError(f"only float32 models are saved, got {model.dtype}")
    blob = b"".join(model.params[n].tobytes() for n, _ in model.spec.param_shapes())
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\0")
        fh.write(blob)


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\0")
    if sep < 0:
        raise ValueError(f"{path}: no header terminator; not a model file")
    try:
        header = json.loads(raw[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: bad header: {e}") from None
    if header.get("magic") != MODEL_MAGIC:
        raise ValueError(f"{path}: magic {header.get('magic')!r}, expected {MODEL_MAGIC!r}")
    spec = NetworkSpec.from_dict(header["spec"])
    manifest = [(p["name"], tuple(p["shape"])) for p in header["params"]]
    if manifest != spec.param_shapes():
        raise ValueError(f"{path}: parameter manifest does not match the spec")
    blob = raw[sep + 1:]
    need = sum(int(np.prod(s)) for _, s in manifest) * 4
    if len(blob) != need:
        raise ValueError(f"{path}: blob holds {len(blob)} bytes, manifest needs {need}")
    params = {}
    off = 0
    for name, shape in manifest:
        nbytes = int(np.prod(shape)) * 4
        params[name] = Tensor4.frombytes(shape, blob[off:off + nbytes])
        off += nbytes
    return Model(spec, params, seed=header.get("seed", 0),
                 dataset=header.get("dataset", ""), meta=header.get("meta", {}))
