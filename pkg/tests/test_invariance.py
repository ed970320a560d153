import math
from fractions import Fraction

import numpy as np
import pytest

from transinv import invariance
from transinv.data import translate
from transinv.invariance import (Normalizer, ProfileComparison, RadialProfile,
                                 ScaledScores, SensitivityMap, SoftmaxScores,
                                 average_maps, compare_profiles,
                                 median_interclass_distance, offsets_grid,
                                 profile_summary, radial_profile, score_distance,
                                 sensitivity_map)
from transinv.nn import Model, NetworkSpec

import oracles
from conftest import glyphs_40


class StubScorer:
    """Maps an image to a fixed score row keyed by its [0, 0] pixel."""

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def forward(self, images):
        return np.stack([self.table[int(img[0, 0])] for img in np.asarray(images)])


def keyed_images(n, side=4):
    imgs = np.zeros((n, side, side), dtype=np.float32)
    imgs[:, 0, 0] = np.arange(n)
    return imgs


def tiny_scorer(seed=0, num_classes=4):
    spec = NetworkSpec("cp", conv_channels=2, hidden_units=8,
                       num_classes=num_classes, input_side=40)
    return Model.initialize(spec, seed=seed)


def plain_normalizer(value):
    # value^2 as an exact integer, bits 0
    return Normalizer(value=math.sqrt(value * value), sq_num=value * value,
                      sq_bits=0, n_pairs=1, sample_size=2)


# ---------------------------------------------------------------------------
# grid layout and exact integers


def test_offsets_grid_order_and_center():
    grid = offsets_grid()
    assert len(grid) == 441
    assert grid[0] == (-10, -10)       # ky outer, kx inner
    assert grid[1] == (-9, -10)
    assert grid[21] == (-10, -9)
    assert grid[220] == (0, 0)
    assert grid[-1] == (10, 10)


def test_exact_ints_known_values():
    rows, bits = invariance._exact_ints(np.array([[0.5, 3.0]]))
    assert bits == 1
    assert rows == [[1, 6]]
    rows, bits = invariance._exact_ints(np.array([[0.0, -2.0, 0.75]]))
    assert bits == 2
    assert rows == [[0, -8, 3]]


def test_exact_ints_reconstruct_exactly():
    rng = np.random.default_rng(0)
    scores = rng.standard_normal((6, 5))
    rows, bits = invariance._exact_ints(scores)
    for i in range(6):
        for j in range(5):
            assert Fraction(rows[i][j], 1 << bits) == Fraction(scores[i, j])


# ---------------------------------------------------------------------------
# normalizer


def test_median_hand_case_is_exact():
    # classes a: (0,0), (3,4); b: (0,5), (6,8)
    # cross distances: 5, 10, sqrt(10), 5 -> squared sorted [10, 25, 25, 100]
    # lower median = 25, so the normalizer is exactly 5
    scorer = StubScorer({0: (0, 0), 1: (3, 4), 2: (0, 5), 3: (6, 8)})
    norm = median_interclass_distance(scorer, keyed_images(4),
                                      np.array([0, 0, 1, 1]))
    assert norm.value == 5.0
    assert norm.sq_fraction() == 25
    assert norm.n_pairs == 4          # same-class pairs excluded
    assert norm.sample_size == 4


def test_median_matches_bruteforce():
    rng = np.random.default_rng(7)
    scores = rng.standard_normal((14, 5))
    labels = rng.integers(0, 3, 14)
    scorer = StubScorer({i: scores[i] for i in range(14)})
    norm = median_interclass_distance(scorer, keyed_images(14), labels)
    want, want_pairs = oracles.median_pairs_bruteforce(scores, labels)
    assert norm.value == want
    assert norm.n_pairs == want_pairs


def test_median_independent_of_batch_size():
    rng = np.random.default_rng(8)
    scores = rng.standard_normal((10, 4))
    scorer = StubScorer({i: scores[i] for i in range(10)})
    labels = rng.integers(0, 2, 10)
    a = median_interclass_distance(scorer, keyed_images(10), labels, batch_size=441)
    b = median_interclass_distance(scorer, keyed_images(10), labels, batch_size=3)
    assert (a.value, a.sq_num, a.sq_bits) == (b.value, b.sq_num, b.sq_bits)


def test_median_needs_two_classes():
    scorer = StubScorer({0: (1, 0), 1: (0, 1)})
    with pytest.raises(ValueError, match="two classes"):
        median_interclass_distance(scorer, keyed_images(2), np.array([3, 3]))


def test_median_rejects_degenerate_scores():
    scorer = StubScorer({0: (1, 1), 1: (1, 1)})
    with pytest.raises(ValueError, match="degenerate"):
        median_interclass_distance(scorer, keyed_images(2), np.array([0, 1]))


def test_median_rejects_length_mismatch():
    scorer = StubScorer({0: (1, 0)})
    with pytest.raises(ValueError, match="images vs"):
        median_interclass_distance(scorer, keyed_images(1), np.array([0, 1]))


# ---------------------------------------------------------------------------
# single distances and maps


def test_score_distance_zero_offset_is_exactly_zero():
    model = tiny_scorer()
    img = glyphs_40(1, seed=0)[0][0]
    assert score_distance(model, img, 0, 0) == 0.0
    assert score_distance(model, img, 0, 0, plain_normalizer(5)) == 0.0


def test_score_distance_normalization_divides_exactly():
    model = tiny_scorer()
    img = glyphs_40(1, seed=0)[0][0]
    raw = score_distance(model, img, 3, -2)
    scaled = score_distance(model, img, 3, -2, plain_normalizer(2))
    assert raw > 0
    assert math.isclose(scaled, raw / 2, rel_tol=1e-15)


def test_sensitivity_map_center_cell_exactly_zero():
    model = tiny_scorer()
    images = glyphs_40(2, seed=3)[0]
    smap = sensitivity_map(model, images, plain_normalizer(3), "0")
    assert smap.value(0, 0) == 0.0
    assert smap.grid[10, 10] == 0.0
    assert smap.n_averaged == 2
    assert (smap.grid >= 0).all()


def test_sensitivity_map_matches_bruteforce():
    model = tiny_scorer(seed=1)
    img = glyphs_40(1, seed=4)[0][0]
    norm = plain_normalizer(2)
    smap = sensitivity_map(model, img[None], norm, "x")
    want = oracles.map_bruteforce(
        lambda im: model.forward(im[None].astype(np.float32))[0],
        img, translate, norm.value)
    assert np.allclose(smap.grid, want, rtol=1e-9, atol=1e-9)


def test_sensitivity_map_batch_size_invariant_bitwise():
    model = tiny_scorer(seed=2)
    images = glyphs_40(2, seed=5)[0]
    norm = plain_normalizer(2)
    a = sensitivity_map(model, images, norm, "x", batch_size=441)
    b = sensitivity_map(model, images, norm, "x", batch_size=17)
    assert a.grid.tobytes() == b.grid.tobytes()


def test_sensitivity_map_image_order_invariant_bitwise():
    model = tiny_scorer(seed=2)
    images = glyphs_40(3, seed=6)[0]
    norm = plain_normalizer(2)
    a = sensitivity_map(model, images, norm, "x")
    b = sensitivity_map(model, images[::-1].copy(), norm, "x")
    assert a.grid.tobytes() == b.grid.tobytes()


@pytest.mark.parametrize("factor", [0.5, 3.0])
def test_pipeline_bitwise_invariant_under_score_scaling(factor):
    # scaling every score by an exactly-representable constant must cancel
    # through the normalizer, bit for bit
    model = tiny_scorer(seed=3)
    sample, labels = glyphs_40(20, seed=7)
    images = glyphs_40(2, seed=8)[0]

    base_norm = median_interclass_distance(model, sample, labels)
    base_map = sensitivity_map(model, images, base_norm, "x")

    scaled = ScaledScores(model, factor)
    scaled_norm = median_interclass_distance(scaled, sample, labels)
    scaled_map = sensitivity_map(scaled, images, scaled_norm, "x")

    assert scaled_map.grid.tobytes() == base_map.grid.tobytes()


def test_softmax_scorer_rows_are_probabilities():
    model = tiny_scorer()
    imgs = glyphs_40(3, seed=9)[0]
    p = SoftmaxScores(model).forward(imgs)
    assert p.shape == (3, 4)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert (p > 0).all()


def test_softmax_space_changes_the_map():
    model = tiny_scorer()
    images = glyphs_40(1, seed=10)[0]
    sample, labels = glyphs_40(16, seed=11)
    n_logit = median_interclass_distance(model, sample, labels)
    n_soft = median_interclass_distance(SoftmaxScores(model), sample, labels)
    a = sensitivity_map(model, images, n_logit, "x")
    b = sensitivity_map(SoftmaxScores(model), images, n_soft, "x")
    assert a.grid.tobytes() != b.grid.tobytes()


# ---------------------------------------------------------------------------
# SensitivityMap container


def test_map_value_orientation():
    grid = np.zeros((21, 21))
    grid[10 + 4, 10 - 7] = 0.5       # ky = 4, kx = -7
    smap = SensitivityMap(grid=grid, class_label="3", n_averaged=1, normalizer=1.0)
    assert smap.value(-7, 4) == 0.5
    assert smap.value(4, -7) == 0.0
    with pytest.raises(ValueError, match="outside"):
        smap.value(11, 0)


def test_map_validates_grid():
    with pytest.raises(ValueError, match="grid shape"):
        SensitivityMap(grid=np.zeros((20, 21)), class_label="x",
                       n_averaged=1, normalizer=1.0)
    bad = np.zeros((21, 21))
    bad[0, 0] = -0.1
    with pytest.raises(ValueError, match="finite"):
        SensitivityMap(grid=bad, class_label="x", n_averaged=1, normalizer=1.0)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        SensitivityMap(grid=bad, class_label="x", n_averaged=1, normalizer=1.0)


def test_map_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    grid = np.abs(rng.standard_normal((21, 21)))
    grid[10, 10] = 0.0
    smap = SensitivityMap(grid=grid, class_label="7", n_averaged=12,
                          normalizer=3.25)
    path = tmp_path / "m.map.csv"
    smap.to_csv(path)
    text = path.read_text().splitlines()
    assert text[0] == "# class=7"
    assert text[1] == "# n=12"
    assert text[2] == "# normalizer=3.250000"
    assert len(text) == 3 + 21
    back = SensitivityMap.from_csv(path)
    assert back.class_label == "7"
    assert back.n_averaged == 12
    assert back.normalizer == 3.25
    assert np.allclose(back.grid, grid, atol=5e-7)  # 6 decimals on disk


def test_map_from_csv_rejects_wrong_size(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.0,0.0\n0.0,0.0\n")
    with pytest.raises(ValueError, match="21x21"):
        SensitivityMap.from_csv(path)


def test_average_maps_mean_and_guards():
    a = SensitivityMap(grid=np.full((21, 21), 1.0), class_label="0",
                       n_averaged=2, normalizer=2.0)
    b = SensitivityMap(grid=np.full((21, 21), 3.0), class_label="1",
                       n_averaged=4, normalizer=2.0)
    avg = average_maps([a, b])
    assert np.all(avg.grid == 2.0)
    assert avg.n_averaged == 6
    assert avg.class_label == "all"
    c = SensitivityMap(grid=np.zeros((21, 21)), class_label="2",
                       n_averaged=1, normalizer=9.0)
    with pytest.raises(ValueError, match="different normalizers"):
        average_maps([a, c])
    with pytest.raises(ValueError, match="no maps"):
        average_maps([])


# ---------------------------------------------------------------------------
# radial profiles


def radius_map():
    grid = np.zeros((21, 21))
    for ky in range(-10, 11):
        for kx in range(-10, 11):
            grid[ky + 10, kx + 10] = round(math.sqrt(kx * kx + ky * ky))
    return SensitivityMap(grid=grid, class_label="r", n_averaged=1, normalizer=1.0)


def test_radial_bins_match_bruteforce_counts():
    profile = radial_profile(radius_map())
    want = oracles.radial_bins_bruteforce()
    assert profile.radii == list(range(15))
    assert dict(zip(profile.radii, profile.counts)) == want
    assert sum(profile.counts) == 441
    assert profile.counts[0] == 1
    assert profile.counts[1] == 8    # the 8 offsets at rounded radius 1


def test_radial_means_of_radius_map_are_the_radii():
    profile = radial_profile(radius_map(), name="r")
    assert profile.means == [float(r) for r in range(15)]
    assert profile.name == "r"


def test_profile_summary_averages_radii_3_through_10():
    profile = radial_profile(radius_map())
    assert profile_summary(profile) == sum(range(3, 11)) / 8  # 6.5


def test_profile_summary_needs_those_radii():
    p = RadialProfile(radii=[0, 1, 2], means=[0.0, 1.0, 2.0], counts=[1, 8, 4])
    with pytest.raises(ValueError, match="lacks radii"):
        profile_summary(p)


def test_profile_csv_round_trip(tmp_path):
    profile = radial_profile(radius_map(), name="x")
    path = tmp_path / "p.profile.csv"
    profile.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "radius,mean_distance,n_cells"
    assert lines[1] == "0,0.000000,1"
    assert lines[2] == "1,1.000000,8"
    back = RadialProfile.from_csv(path, name="x")
    assert back.radii == profile.radii
    assert back.counts == profile.counts
    assert np.allclose(back.means, profile.means, atol=5e-7)


def test_profile_from_csv_rejects_alien_header(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("radius,value\n0,1\n")
    with pytest.raises(ValueError, match="unexpected header"):
        RadialProfile.from_csv(path)


# ---------------------------------------------------------------------------
# comparison


def flat_profile(level):
    return RadialProfile(radii=list(range(15)), means=[float(level)] * 15,
                         counts=radial_profile(radius_map()).counts)


def test_compare_ranks_ascending_with_name_tiebreak():
    cmp = compare_profiles([("zeta", flat_profile(0.2)),
                            ("alpha", flat_profile(0.2)),
                            ("mid", flat_profile(0.1))])
    assert [(r, n) for r, n, _ in cmp.ranking] == [
        (1, "mid"), (2, "alpha"), (3, "zeta")]
    assert cmp.table.shape == (15, 3)
    assert cmp.names == ["zeta", "alpha", "mid"]  # input order kept for the table


def test_compare_rejects_duplicates_and_mismatched_bins():
    with pytest.raises(ValueError, match="duplicate"):
        compare_profiles([("a", flat_profile(1)), ("a", flat_profile(2))])
    short = RadialProfile(radii=[0, 1], means=[0.0, 0.1], counts=[1, 8])
    with pytest.raises(ValueError, match="bin structure"):
        compare_profiles([("a", flat_profile(1)), ("b", short)])
    with pytest.raises(ValueError, match="nothing"):
        compare_profiles([])


def test_comparison_csv_outputs(tmp_path):
    cmp = compare_profiles([("a", flat_profile(0.25)), ("b", flat_profile(0.5))])
    tpath = tmp_path / "table.csv"
    spath = tmp_path / "summary.csv"
    cmp.write_table_csv(tpath)
    cmp.write_summary_csv(spath)
    tlines = tpath.read_text().splitlines()
    assert tlines[0] == "radius,a,b"
    assert tlines[1] == "0,0.250000,0.500000"
    assert len(tlines) == 16
    slines = spath.read_text().splitlines()
    assert slines[0] == "rank,name,summary"
    assert slines[1] == "1,a,0.250000"
    assert slines[2] == "2,b,0.500000"
