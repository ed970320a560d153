"""Shared fixtures: synthetic 10-class glyph data standing in for digit
images, IDX writers independent of the package's reader, and session-scoped
bundles so the expensive builds happen once."""

import gzip
import hashlib
import json
import os
import struct

import numpy as np
import pytest

from transinv import cli
from transinv.data import embed_center_batch


# ---------------------------------------------------------------------------
# synthetic glyph dataset: 10 visually distinct classes, learnable by a
# small CNN in a couple of epochs


def glyph_templates():
    t = np.zeros((10, 28, 28), dtype=np.float32)
    t[0, 4:24, 4:24] = 1.0
    t[0, 7:21, 7:21] = 0.0                      # ring
    t[1, 4:24, 12:17] = 1.0                     # vertical bar
    t[2, 12:17, 4:24] = 1.0                     # horizontal bar
    t[3, 12:17, 4:24] = 1.0
    t[3, 4:24, 12:17] = 1.0                     # cross
    yy, xx = np.mgrid[0:28, 0:28]
    t[4][np.abs(yy - xx) <= 2] = 1.0            # diagonal
    t[5][np.abs(yy + xx - 27) <= 2] = 1.0       # anti-diagonal
    t[6, 9:20, 9:20] = 1.0                      # solid block
    t[7, 4:24, 6:10] = 1.0
    t[7, 4:24, 19:23] = 1.0                     # two bars
    t[8][((yy // 4 + xx // 4) % 2 == 0)
         & (yy >= 4) & (yy < 24) & (xx >= 4) & (xx < 24)] = 1.0
    t[9, 4:11, 4:11] = 1.0
    t[9, 4:11, 17:24] = 1.0
    t[9, 17:24, 4:11] = 1.0
    t[9, 17:24, 17:24] = 1.0                    # corner blocks
    for k in (4, 5):                            # keep a margin so jitter never wraps
        t[k, :3, :] = 0
        t[k, -3:, :] = 0
        t[k, :, :3] = 0
        t[k, :, -3:] = 0
    return t


def make_glyphs(n, seed, n_classes=10):
    """n uint8 28x28 images with per-image intensity, +/-2 px jitter and
    gaussian pixel noise.  Returns (images uint8, labels uint8)."""
    rng = np.random.default_rng(seed)
    templates = glyph_templates()[:n_classes]
    labels = rng.integers(0, n_classes, size=n).astype(np.uint8)
    intensity = rng.uniform(0.55, 1.0, size=n).astype(np.float32)
    shifts = rng.integers(-2, 3, size=(n, 2))
    noise = rng.standard_normal((n, 28, 28), dtype=np.float32) * 0.08
    images = templates[labels] * intensity[:, None, None]
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            sel = (shifts[:, 0] == dy) & (shifts[:, 1] == dx)
            if sel.any():
                images[sel] = np.roll(images[sel], (dy, dx), axis=(1, 2))
    images = np.clip(images + noise, 0.0, 1.0)
    return np.round(images * 255).astype(np.uint8), labels


def glyphs_40(n, seed, n_classes=10):
    """Glyphs already embedded on the 40x40 frame, float32 in [0, 1]."""
    imgs, labels = make_glyphs(n, seed, n_classes)
    return embed_center_batch(imgs.astype(np.float32) / 255.0), labels


# ---------------------------------------------------------------------------
# IDX writers, written here from the format definition so the package's
# reader is tested against an independent implementation


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", 0x00000803, n, rows, cols) + images.tobytes()
    if str(path).endswith(".gz"):
        with gzip.open(path, "wb", compresslevel=1) as fh:
            fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    payload = struct.pack(">II", 0x00000801, len(labels)) + labels.tobytes()
    if str(path).endswith(".gz"):
        with gzip.open(path, "wb", compresslevel=1) as fh:
            fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)


# ---------------------------------------------------------------------------
# session-scoped heavy fixtures


@pytest.fixture(scope="session")
def synthetic_mnist_dir(tmp_path_factory):
    """A directory shaped like an MNIST download: 60k train + 10k test
    glyphs in gzipped IDX files under the standard names."""
    d = tmp_path_factory.mktemp("idx")
    train_images, train_labels = make_glyphs(60000, seed=0)
    test_images, test_labels = make_glyphs(10000, seed=1)
    write_idx_images(d / "train-images-idx3-ubyte.gz", train_images)
    write_idx_labels(d / "train-labels-idx1-ubyte.gz", train_labels)
    write_idx_images(d / "t10k-images-idx3-ubyte.gz", test_images)
    write_idx_labels(d / "t10k-labels-idx1-ubyte.gz", test_labels)
    return d


@pytest.fixture(scope="session")
def bundle_dir(synthetic_mnist_dir, tmp_path_factory):
    """Bundles built from the synthetic IDX files through the CLI."""
    d = tmp_path_factory.mktemp("bundles")
    rc = cli.main(["data-prepare", "--mnist-dir", str(synthetic_mnist_dir),
                   "--out", str(d), "--seed", "0"])
    assert rc == 0
    return d


@pytest.fixture(scope="session")
def small_bundle_dir(tmp_path_factory):
    """A miniature bundle written by hand from the file-format definition:
    500 train / 120 val / 120 test embedded glyphs per variant."""
    d = tmp_path_factory.mktemp("small_bundle")
    splits = {
        "train-centered": glyphs_40(500, seed=21),
        "train-augmented": glyphs_40(500, seed=22),
        "val": glyphs_40(120, seed=23),
        "test": glyphs_40(120, seed=24),
    }
    for name, (images, labels) in splits.items():
        pixels = np.ascontiguousarray(images, dtype="<f4").tobytes()
        lab = labels.astype(np.uint8).tobytes()
        manifest = {
            "magic": "TRANSINV-BUNDLE1",
            "name": name,
            "count": int(images.shape[0]),
            "side": 40,
            "pixel_dtype": "<f4",
            "label_dtype": "u1",
            "seed": 0,
            "source_sha256": "synthetic-small",
            "pixels_sha256": hashlib.sha256(pixels).hexdigest(),
            "labels_sha256": hashlib.sha256(lab).hexdigest(),
        }
        (d / f"{name}.pixels.f32").write_bytes(pixels)
        (d / f"{name}.labels.u8").write_bytes(lab)
        (d / f"{name}.manifest.json").write_text(json.dumps(manifest, sort_keys=True))
    return d


@pytest.fixture(scope="session")
def trained_model_dir(small_bundle_dir, tmp_path_factory):
    """A model trained for one epoch through the CLI, for measure/compare
    tests.  Returns (out_dir, model_path)."""
    d = tmp_path_factory.mktemp("trained")
    rc = cli.main(["train", "--arch", "c", "--bundles", str(small_bundle_dir),
                   "--out", str(d), "--seed", "0", "--max-epochs", "1",
                   "--min-accuracy", "0"])
    assert rc == 0
    model_path = d / "c.model"
    assert model_path.exists()
    return d, model_path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
