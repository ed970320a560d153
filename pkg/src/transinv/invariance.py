"""Translation-sensitivity measurement.

For a base image I and offset (kx, ky), the raw sensitivity is the euclidean
distance between the network's pre-softmax score vectors for I and for the
translated copy.  Distances are reported relative to a normalizer: the median
distance over all differently-labeled pairs drawn from a sample of test
images, so 1.0 means "as far apart as two typical images of different
classes".

Arithmetic here is exact until the final square root.  Scores (float32 or
float64) are converted to exact integers at a shared power-of-two scale, so
squared distances and the median are integer math, and every normalized cell
is sqrt of an exact rational.  Consequences: the (0, 0) cell of a
single-image map is exactly 0, results do not depend on batch splitting or
summation order, and scaling every score by a constant like 0.5 or 3.0
(exact in float64) leaves normalized maps bit-for-bit unchanged.
"""

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .data import OFFSET_LIMIT, translate

GRID_SIDE = 2 * OFFSET_LIMIT + 1          # 21
RADIUS_MAX = 14                           # round(sqrt(200))
SUMMARY_RADII = tuple(range(3, 11))       # bins averaged into the summary stat


def offsets_grid():
    """All 441 offsets in map order: ky runs -10..10 over rows, kx over cols."""
    return [(kx, ky)
            for ky in range(-OFFSET_LIMIT, OFFSET_LIMIT + 1)
            for kx in range(-OFFSET_LIMIT, OFFSET_LIMIT + 1)]


class ScaledScores:
    """Wraps a model, multiplying every score by a constant (in float64)."""

    def __init__(self, model, factor):
        self.model = model
        self.factor = float(factor)

    def forward(self, images):
        return np.asarray(self.model.forward(images), dtype=np.float64) * self.factor


class SoftmaxScores:
    """Wraps a model so distances are measured between softmax outputs."""

    def __init__(self, model):
        self.model = model

    def forward(self, images):
        s = np.asarray(self.model.forward(images), dtype=np.float64)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)


def _forward_scores(scorer, images, batch_size=441):
    images = np.asarray(images, dtype=np.float32)
    chunks = []
    for start in range(0, images.shape[0], batch_size):
        s = scorer.forward(images[start:start + batch_size])
        chunks.append(np.asarray(s, dtype=np.float64))
    scores = np.concatenate(chunks, axis=0)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite score vector")
    return scores


def _exact_ints(scores):
    """Each float as an exact integer at a shared power-of-two scale.

    Returns (rows, bits): value[i][j] == rows[i][j] / 2**bits, exactly.
    """
    n, k = scores.shape
    ratios = [v.as_integer_ratio() for v in scores.reshape(-1).tolist()]
    bits = 0
    for _, den in ratios:
        e = den.bit_length() - 1
        if e > bits:
            bits = e
    ints = [num << (bits - (den.bit_length() - 1)) for num, den in ratios]
    return [ints[i * k:(i + 1) * k] for i in range(n)], bits


def _sqdist(a, b):
    s = 0
    for x, y in zip(a, b):
        d = x - y
        s += d * d
    return s


@dataclass
class Normalizer:
    """Median inter-class score distance, kept in exact form."""
    value: float            # sqrt(sq_num / 2**sq_bits)
    sq_num: int             # exact squared median
    sq_bits: int            # denominator exponent (2 * shared scale bits)
    n_pairs: int
    sample_size: int

    def sq_fraction(self):
        return Fraction(self.sq_num, 1 << self.sq_bits)


def median_interclass_distance(scorer, images, labels, batch_size=441):
    """Lower-median distance over all differently-labeled image pairs.

    The lower median (order statistic at index (n_pairs - 1) // 2) is used so
    the normalizer is an actual realized pair distance; the squared value is
    kept exact for use downstream.
    """
    labels = np.asarray(labels)
    if len(labels) != len(images):
        raise ValueError(f"{len(images)} images vs {len(labels)} labels")
    if len(set(labels.tolist())) < 2:
        raise ValueError("normalizer sample needs at least two classes")
    scores = _forward_scores(scorer, images, batch_size)
    ints, bits = _exact_ints(scores)
    lab = labels.tolist()
    dists = []
    m = len(ints)
    for i in range(m):
        li = lab[i]
        vi = ints[i]
        for j in range(i + 1, m):
            if lab[j] != li:
                dists.append(_sqdist(vi, ints[j]))
    dists.sort()
    sq = dists[(len(dists) - 1) // 2]
    if sq == 0:
        raise ValueError("median inter-class distance is zero; scores are degenerate")
    value = math.sqrt(float(Fraction(sq, 1 << (2 * bits))))
    return Normalizer(value=value, sq_num=sq, sq_bits=2 * bits,
                      n_pairs=len(dists), sample_size=m)


def score_distance(scorer, image, kx, ky, normalizer=None):
    """Distance between scores of an image and its (kx, ky) translation.

    Raw by default; divide by the median if a Normalizer is given.
    """
    image = np.asarray(image, dtype=np.float32)
    pair = np.stack([image, translate(image, kx, ky)])
    scores = _forward_scores(scorer, pair)
    ints, bits = _exact_ints(scores)
    sq = _sqdist(ints[0], ints[1])
    frac = Fraction(sq, 1 << (2 * bits))
    if normalizer is not None:
        frac = frac / normalizer.sq_fraction()
    return math.sqrt(float(frac))


@dataclass
class SensitivityMap:
    """21x21 grid of normalized sensitivities, indexed by offset.

    grid[ky + 10][kx + 10] is the value for translation (kx, ky); row 0 is
    ky = -10.
    """
    grid: np.ndarray
    class_label: str
    n_averaged: int
    normalizer: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.shape != (GRID_SIDE, GRID_SIDE):
            raise ValueError(f"grid shape {g.shape}, expected ({GRID_SIDE}, {GRID_SIDE})")
        if not np.all(np.isfinite(g)) or g.min() < 0:
            raise ValueError("grid values must be finite and >= 0")
        self.grid = g

    def value(self, kx, ky):
        if abs(kx) > OFFSET_LIMIT or abs(ky) > OFFSET_LIMIT:
            raise ValueError(f"offset ({kx}, {ky}) outside +/-{OFFSET_LIMIT}")
        return float(self.grid[ky + OFFSET_LIMIT, kx + OFFSET_LIMIT])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# class={self.class_label}\n")
            fh.write(f"# n={self.n_averaged}\n")
            fh.write(f"# normalizer={self.normalizer:.6f}\n")
            for row in self.grid:
                fh.write(",".join(f"{v:.6f}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        meta = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = val.strip()
                else:
                    rows.append([float(v) for v in line.split(",")])
        if len(rows) != GRID_SIDE or any(len(r) != GRID_SIDE for r in rows):
            raise ValueError(f"{path}: expected a {GRID_SIDE}x{GRID_SIDE} grid")
        return cls(grid=np.array(rows, dtype=np.float64),
                   class_label=meta.get("class", "?"),
                   n_averaged=int(meta.get("n", 0)),
                   normalizer=float(meta.get("normalizer", 0.0)))


def sensitivity_map(scorer, images, normalizer, class_label, batch_size=441):
    """Mean sensitivity map over same-class base images.

    Each image contributes a 21x21 grid: the base image is translated to all
    441 offsets, forwarded in one batch, and every cell is the exact-ratio
    normalized distance to the (0, 0) row.  Per-image grids are averaged
    cellwise with math.fsum, so the result is independent of image order.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3 or images.shape[0] < 1:
        raise ValueError(f"expected (n, side, side) images, got {images.shape}")
    offsets = offsets_grid()
    center = offsets.index((0, 0))
    norm_sq = normalizer.sq_fraction()
    cells = [[] for _ in range(GRID_SIDE * GRID_SIDE)]
    for img in images:
        batch = np.stack([translate(img, kx, ky) for kx, ky in offsets])
        scores = _forward_scores(scorer, batch, batch_size)
        ints, bits = _exact_ints(scores)
        base = ints[center]
        den = 1 << (2 * bits)
        for ci, row in enumerate(ints):
            sq = _sqdist(base, row)
            cells[ci].append(math.sqrt(float(Fraction(sq, den) / norm_sq)))
    m = images.shape[0]
    grid = np.array([math.fsum(c) / m for c in cells]).reshape(GRID_SIDE, GRID_SIDE)
    return SensitivityMap(grid=grid, class_label=str(class_label), n_averaged=m,
                          normalizer=normalizer.value)


def average_maps(maps, class_label="all"):
    """Equal-weight cellwise mean of per-class maps (fsum, order independent)."""
    if not maps:
        raise ValueError("no maps to average")
    norm = maps[0].normalizer
    for m in maps[1:]:
        if m.normalizer != norm:
            raise ValueError("maps use different normalizers; refusing to average")
    grid = np.array([
        [math.fsum(m.grid[r, c] for m in maps) / len(maps) for c in range(GRID_SIDE)]
        for r in range(GRID_SIDE)
    ])
    return SensitivityMap(grid=grid, class_label=class_label,
                          n_averaged=sum(m.n_averaged for m in maps),
                          normalizer=norm)


# ---------------------------------------------------------------------------
# radial profiles and comparison


@dataclass
class RadialProfile:
    """Sensitivity binned by rounded radius r = round(sqrt(kx^2 + ky^2))."""
    radii: list
    means: list
    counts: list
    name: str = ""

    def __post_init__(self):
        if not (len(self.radii) == len(self.means) == len(self.counts)):
            raise ValueError("radii, means and counts must align")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["radius", "mean_distance", "n_cells"])
            for r, m, c in zip(self.radii, self.means, self.counts):
                w.writerow([r, f"{m:.6f}", c])

    @classmethod
    def from_csv(cls, path, name=""):
        radii, means, counts = [], [], []
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["radius", "mean_distance", "n_cells"]:
                raise ValueError(f"{path}: unexpected header {header}")
            for row in reader:
                radii.append(int(row[0]))
                means.append(float(row[1]))
                counts.append(int(row[2]))
        return cls(radii=radii, means=means, counts=counts, name=name)


def radial_profile(smap, name=""):
    """Collapse a map into per-radius means.  Radii run 0..14; the r=0 bin is
    the center cell alone and bin counts sum to 441."""
    sums = [[] for _ in range(RADIUS_MAX + 1)]
    for ky in range(-OFFSET_LIMIT, OFFSET_LIMIT + 1):
        for kx in range(-OFFSET_LIMIT, OFFSET_LIMIT + 1):
            r = int(round(math.sqrt(kx * kx + ky * ky)))
            sums[r].append(smap.value(kx, ky))
    radii = list(range(RADIUS_MAX + 1))
    means = [math.fsum(cells) / len(cells) for cells in sums]
    counts = [len(cells) for cells in sums]
    return RadialProfile(radii=radii, means=means, counts=counts, name=name)


def profile_summary(profile):
    """Mean of the per-radius means over radii 3..10 (equal bin weight)."""
    picked = [m for r, m in zip(profile.radii, profile.means) if r in SUMMARY_RADII]
    if len(picked) != len(SUMMARY_RADII):
        raise ValueError(f"profile {profile.name!r} lacks radii {SUMMARY_RADII}")
    return math.fsum(picked) / len(picked)


@dataclass
class ProfileComparison:
    names: list
    radii: list
    table: np.ndarray               # len(radii) x len(names)
    summaries: dict                 # name -> summary stat
    ranking: list = field(default_factory=list)  # (rank, name, summary), ascending

    def write_table_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["radius"] + self.names)
            for i, r in enumerate(self.radii):
                w.writerow([r] + [f"{v:.6f}" for v in self.table[i]])

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "name", "summary"])
            for rank, name, s in self.ranking:
                w.writerow([rank, name, f"{s:.6f}"])


def compare_profiles(named_profiles):
    """Line up profiles on a shared radius axis and rank by summary stat.

    Ranking is ascending (most translation-tolerant first); ties are broken
    by name so the order is stable.
    """
    if not named_profiles:
        raise ValueError("nothing to compare")
    names = [n for n, _ in named_profiles]
    if len(set(names)) != len(names):
        raise ValueError("duplicate profile names")
    radii = named_profiles[0][1].radii
    for n, p in named_profiles:
        if p.radii != radii or p.counts != named_profiles[0][1].counts:
            raise ValueError(f"profile {n!r} has a different bin structure")
    table = np.array([[p.means[i] for _, p in named_profiles]
                      for i in range(len(radii))])
    summaries = {n: profile_summary(p) for n, p in named_profiles}
    order = sorted(names, key=lambda n: (summaries[n], n))
    ranking = [(i + 1, n, summaries[n]) for i, n in enumerate(order)]
    return ProfileComparison(names=names, radii=radii, table=table,
                             summaries=summaries, ranking=ranking)
