"""Dataset plumbing: IDX files in, deterministic 40x40 bundles out.

A bundle directory holds four splits (train-centered, train-augmented, val,
test), each as a triple <name>.manifest.json / <name>.pixels.f32 /
<name>.labels.u8.  Pixels are little-endian float32 in [0, 1], images row
major.  Builds are pure functions of (source data, seed): rebuilding with the
same inputs reproduces every byte.
"""

import gzip
import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DIGIT_SIDE = 28
FRAME_SIDE = 40
EMBED_OFFSET = 6   # (40 - 28) // 2
OFFSET_LIMIT = 10  # max translation magnitude per axis

TRAIN_SOURCE = 60000
TRAIN_SIZE = 50000
AUG_BASES = 12500
AUG_COPIES = 4

SPLIT_NAMES = ("train-centered", "train-augmented", "val", "test")
BUNDLE_MAGIC = "TRANSINV-BUNDLE1"


def _read_binary(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    raw = head + rest
    if head == b"\x1f\x8b":  # gzip magic
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair (gzipped or not).

    Returns (images, labels): images (n, rows, cols) float32 scaled to [0, 1],
    labels (n,) uint8.
    """
    raw = _read_binary(images_path)
    if len(raw) < 16:
        raise ValueError(f"{images_path}: too short for an IDX image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(
            f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    need = 16 + n * rows * cols
    if len(raw) != need:
        raise ValueError(f"{images_path}: {len(raw)} bytes, header promises {need}")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)

    raw = _read_binary(labels_path)
    if len(raw) < 8:
        raise ValueError(f"{labels_path}: too short for an IDX label header")
    magic, nl = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(
            f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    if len(raw) != 8 + nl:
        raise ValueError(f"{labels_path}: {len(raw)} bytes, header promises {8 + nl}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if n != nl:
        raise ValueError(f"{images_path} holds {n} images but {labels_path} holds {nl} labels")
    return images.astype(np.float32) / np.float32(255.0), labels.copy()


def embed_center(img):
    """Place a 28x28 image on a 40x40 zero frame at offset (6, 6)."""
    img = np.asarray(img)
    if img.shape != (DIGIT_SIDE, DIGIT_SIDE):
        raise ValueError(f"expected ({DIGIT_SIDE}, {DIGIT_SIDE}), got {img.shape}")
    out = np.zeros((FRAME_SIDE, FRAME_SIDE), dtype=np.float32)
    out[EMBED_OFFSET:EMBED_OFFSET + DIGIT_SIDE,
        EMBED_OFFSET:EMBED_OFFSET + DIGIT_SIDE] = img
    return out


def embed_center_batch(images):
    images = np.asarray(images)
    n = images.shape[0]
    if images.shape[1:] != (DIGIT_SIDE, DIGIT_SIDE):
        raise ValueError(f"expected (n, {DIGIT_SIDE}, {DIGIT_SIDE}), got {images.shape}")
    out = np.zeros((n, FRAME_SIDE, FRAME_SIDE), dtype=np.float32)
    out[:, EMBED_OFFSET:EMBED_OFFSET + DIGIT_SIDE,
        EMBED_OFFSET:EMBED_OFFSET + DIGIT_SIDE] = images
    return out


def translate(img, kx, ky):
    """Shift by (kx, ky): +kx moves content right, +ky moves it down.
    Vacated pixels are zero.  out[y][x] = in[y - ky][x - kx]."""
    if abs(kx) > OFFSET_LIMIT or abs(ky) > OFFSET_LIMIT:
        raise ValueError(f"offset ({kx}, {ky}) outside +/-{OFFSET_LIMIT}")
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a single 2-d image, got shape {img.shape}")
    h, w = img.shape
    out = np.zeros_like(img)
    out[max(ky, 0):h + min(ky, 0), max(kx, 0):w + min(kx, 0)] = \
        img[max(-ky, 0):h + min(-ky, 0), max(-kx, 0):w + min(-kx, 0)]
    return out


def translate_batch(images, offsets):
    images = np.asarray(images)
    offsets = np.asarray(offsets)
    out = np.zeros_like(images)
    for i in range(images.shape[0]):
        out[i] = translate(images[i], int(offsets[i, 0]), int(offsets[i, 1]))
    return out


def sample_offsets(rng, n):
    """n offsets (kx, ky): magnitudes uniform on {1..10} and signs uniform on
    {-1, +1}, drawn independently per axis.  (0, 0) can never occur.  Draw
    order is fixed: all magnitudes first, then all signs."""
    mags = rng.integers(1, OFFSET_LIMIT + 1, size=(n, 2))
    signs = rng.integers(0, 2, size=(n, 2)) * 2 - 1
    return (mags * signs).astype(np.int64)


def augmentation_plan(seed, n_source=TRAIN_SOURCE):
    """Everything random about a bundle build, as one reproducible dict.

    One generator seeded with `seed` draws, in order: the source permutation
    (first 50,000 -> train, rest -> val), the 12,500 base picks out of the
    train split (without replacement), and the offsets for all 50,000
    augmented copies.
    """
    if n_source < TRAIN_SOURCE:
        raise ValueError(f"need {TRAIN_SOURCE} source images, got {n_source}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_source)
    train_idx = perm[:TRAIN_SIZE]
    val_idx = perm[TRAIN_SIZE:]
    base_sel = rng.choice(TRAIN_SIZE, size=AUG_BASES, replace=False)
    offsets = sample_offsets(rng, AUG_BASES * AUG_COPIES)
    return {
        "seed": int(seed),
        "train_idx": train_idx,
        "val_idx": val_idx,
        "base_sel": base_sel,
        "offsets": offsets,
    }


@dataclass
class DatasetBundle:
    """One training variant plus the shared evaluation splits."""
    variant: str                # "centered" or "augmented"
    train: tuple                # (images (n, 40, 40) float32, labels (n,) uint8)
    val: tuple
    test: tuple
    seed: int = 0
    source_sha256: str = ""


def _sha256(buf):
    return hashlib.sha256(buf).hexdigest()


def _write_split(out_dir, name, images, labels, seed, source_sha, extra=None):
    pixels = np.ascontiguousarray(images, dtype="<f4").tobytes()
    lab = np.ascontiguousarray(labels, dtype=np.uint8).tobytes()
    manifest = {
        "magic": BUNDLE_MAGIC,
        "name": name,
        "count": int(images.shape[0]),
        "side": FRAME_SIDE,
        "pixel_dtype": "<f4",
        "label_dtype": "u1",
        "seed": int(seed),
        "source_sha256": source_sha,
        "pixels_sha256": _sha256(pixels),
        "labels_sha256": _sha256(lab),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, f"{name}.pixels.f32"), "wb") as fh:
        fh.write(pixels)
    with open(os.path.join(out_dir, f"{name}.labels.u8"), "wb") as fh:
        fh.write(lab)
    with open(os.path.join(out_dir, f"{name}.manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def build_bundles(out_dir, train_images, train_labels, test_images, test_labels,
                  seed=0):
    """Build all four splits into out_dir and return both bundle views.

    train_images: (60000, 28, 28) float32 in [0, 1]; test_images: (n, 28, 28).
    The centered train split embeds the 50,000 train-half images unmoved; the
    augmented split replaces it with 12,500 of those images x 4 translated
    copies each.  val (the held-out 10,000) and test are shared, centered.
    """
    train_images = np.asarray(train_images, dtype=np.float32)
    test_images = np.asarray(test_images, dtype=np.float32)
    if train_images.shape != (TRAIN_SOURCE, DIGIT_SIDE, DIGIT_SIDE):
        raise ValueError(
            f"train images shape {train_images.shape}, expected "
            f"({TRAIN_SOURCE}, {DIGIT_SIDE}, {DIGIT_SIDE})"
        )
    train_labels = np.asarray(train_labels, dtype=np.uint8)
    test_labels = np.asarray(test_labels, dtype=np.uint8)
    os.makedirs(out_dir, exist_ok=True)

    source_sha = _sha256(
        train_images.tobytes() + train_labels.tobytes()
        + test_images.tobytes() + test_labels.tobytes()
    )
    plan = augmentation_plan(seed, train_images.shape[0])

    centered = embed_center_batch(train_images[plan["train_idx"]])
    centered_labels = train_labels[plan["train_idx"]]
    _write_split(out_dir, "train-centered", centered, centered_labels,
                 seed, source_sha)

    base_imgs = centered[plan["base_sel"]]
    base_labels = centered_labels[plan["base_sel"]]
    aug_images = np.repeat(base_imgs, AUG_COPIES, axis=0)
    aug_labels = np.repeat(base_labels, AUG_COPIES)
    aug_images = translate_batch(aug_images, plan["offsets"])
    hist = {}
    for axis, tag in ((0, "kx"), (1, "ky")):
        vals, counts = np.unique(plan["offsets"][:, axis], return_counts=True)
        hist[tag] = {str(int(v)): int(c) for v, c in zip(vals, counts)}
    _write_split(out_dir, "train-augmented", aug_images, aug_labels, seed,
                 source_sha, extra={
                     "bases": AUG_BASES,
                     "copies": AUG_COPIES,
                     "base_indices_sha256": _sha256(
                         np.ascontiguousarray(plan["base_sel"], dtype="<i8").tobytes()),
                     "offset_histogram": hist,
                 })

    val_images = embed_center_batch(train_images[plan["val_idx"]])
    val_labels = train_labels[plan["val_idx"]]
    _write_split(out_dir, "val", val_images, val_labels, seed, source_sha)

    test40 = embed_center_batch(test_images)
    _write_split(out_dir, "test", test40, test_labels, seed, source_sha)

    shared = dict(seed=seed, source_sha256=source_sha,
                  val=(val_images, val_labels), test=(test40, test_labels))
    return {
        "centered": DatasetBundle(variant="centered",
                                  train=(centered, centered_labels), **shared),
        "augmented": DatasetBundle(variant="augmented",
                                   train=(aug_images, aug_labels), **shared),
    }


def read_split(bundle_dir, name):
    """Read one split triple, verifying payload hashes against the manifest.
    Returns (manifest, images, labels)."""
    mpath = os.path.join(bundle_dir, f"{name}.manifest.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"{bundle_dir}: missing split {name!r}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("magic") != BUNDLE_MAGIC:
        raise ValueError(f"{mpath}: magic {manifest.get('magic')!r}")
    with open(os.path.join(bundle_dir, f"{name}.pixels.f32"), "rb") as fh:
        pixels = fh.read()
    with open(os.path.join(bundle_dir, f"{name}.labels.u8"), "rb") as fh:
        lab = fh.read()
    if _sha256(pixels) != manifest["pixels_sha256"]:
        raise ValueError(f"{name}: pixel payload does not match its manifest hash")
    if _sha256(lab) != manifest["labels_sha256"]:
        raise ValueError(f"{name}: label payload does not match its manifest hash")
    count, side = manifest["count"], manifest["side"]
    images = np.frombuffer(pixels, dtype="<f4").reshape(count, side, side)
    labels = np.frombuffer(lab, dtype=np.uint8)
    return manifest, images.astype(np.float32), labels.copy()


def load_bundle(bundle_dir, variant):
    """Load one variant ("centered" or "augmented") with the shared splits."""
    if variant not in ("centered", "augmented"):
        raise ValueError(f"variant {variant!r}, expected 'centered' or 'augmented'")
    manifest, timg, tlab = read_split(bundle_dir, f"train-{variant}")
    _, vimg, vlab = read_split(bundle_dir, "val")
    _, simg, slab = read_split(bundle_dir, "test")
    return DatasetBundle(variant=variant, train=(timg, tlab), val=(vimg, vlab),
                         test=(simg, slab), seed=manifest["seed"],
                         source_sha256=manifest["source_sha256"])
