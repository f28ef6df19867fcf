import itertools

import numpy as np
import pytest

from docrect import metrics
from docrect.errors import ParameterError, ShapeError
from docrect.imaging import _lowpass_axis
from docrect.siftflow import DisplacementField

from oracles import levenshtein_recursive


def field_from(dx, dy):
    return DisplacementField(np.asarray(dx, np.int32), np.asarray(dy, np.int32))


class TestLocalDistortion:
    def test_zero_field(self):
        f = field_from(np.zeros((4, 4)), np.zeros((4, 4)))
        assert metrics.local_distortion(f) == 0.0

    def test_uniform_3_4(self):
        f = field_from(np.full((5, 5), 3), np.full((5, 5), 4))
        assert metrics.local_distortion(f) == pytest.approx(5.0)

    def test_two_pixel_mean(self):
        f = field_from([[0, 3]], [[0, 4]])
        assert metrics.local_distortion(f) == pytest.approx(2.5)

    def test_scaling_linearity(self):
        rng = np.random.default_rng(0)
        dx = rng.integers(-5, 6, (6, 6))
        dy = rng.integers(-5, 6, (6, 6))
        base = metrics.local_distortion(field_from(dx, dy))
        tripled = metrics.local_distortion(field_from(3 * dx, 3 * dy))
        assert tripled == pytest.approx(3 * base)


class TestLineDistortion:
    def test_translation_zero(self):
        f = field_from(np.full((6, 6), 4), np.full((6, 6), -2))
        assert metrics.line_distortion(f) == 0.0

    def test_scaling_pattern_zero(self):
        # dx depends only on the column index, dy only on the row index
        cols = np.arange(8)
        rows = np.arange(6)
        dx = np.tile(cols, (6, 1))
        dy = np.tile(rows[:, None], (1, 8))
        assert metrics.line_distortion(field_from(dx, dy)) == 0.0

    def test_hand_example(self):
        dx = np.array([[0, 0], [2, 2]])
        dy = np.zeros((2, 2))
        # column stds {1, 1}, row stds {0, 0} -> mean 0.5 exactly
        assert metrics.line_distortion(field_from(dx, dy)) == 0.5

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        dx = rng.integers(-3, 4, (5, 7))
        dy = rng.integers(-3, 4, (5, 7))
        base = metrics.line_distortion(field_from(dx, dy))
        shifted = metrics.line_distortion(field_from(dx + 9, dy - 4))
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_separable_pattern_invariance(self):
        rng = np.random.default_rng(2)
        dx = rng.integers(-3, 4, (5, 7))
        dy = rng.integers(-3, 4, (5, 7))
        base = metrics.line_distortion(field_from(dx, dy))
        col_pattern = rng.integers(-5, 6, 7)
        row_pattern = rng.integers(-5, 6, 5)
        bumped = metrics.line_distortion(
            field_from(dx + col_pattern[None, :], dy + row_pattern[:, None])
        )
        assert bumped == pytest.approx(base, abs=1e-12)


def textured(h, w, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.random((h, w)).astype(np.float32)
    img = _lowpass_axis(_lowpass_axis(img, 0), 1)
    return (img - img.min()) / (img.max() - img.min())


class TestMsSsim:
    def test_self_similarity_exact(self):
        img = textured(200, 200, seed=3)
        assert metrics.ms_ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_weights_are_papers(self):
        assert metrics.MS_SSIM_WEIGHTS == (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
        assert sum(metrics.MS_SSIM_WEIGHTS) == pytest.approx(1.0001)
        cfg = metrics.EvalConfig().as_dict()
        assert cfg["ms_ssim_weights"] == [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]

    def test_noise_monotonicity(self):
        rng = np.random.default_rng(4)
        img = textured(256, 256, seed=4)
        small = np.clip(img + rng.normal(0, 0.05, img.shape), 0, 1).astype(np.float32)
        large = np.clip(img + rng.normal(0, 0.10, img.shape), 0, 1).astype(np.float32)
        assert metrics.ms_ssim(img, large) < metrics.ms_ssim(img, small)

    def test_symmetry(self):
        a = textured(200, 200, seed=5)
        b = textured(200, 200, seed=6)
        assert metrics.ms_ssim(a, b) == pytest.approx(metrics.ms_ssim(b, a), abs=1e-6)

    def test_range(self):
        a = textured(180, 220, seed=7)
        b = 1.0 - a
        val = metrics.ms_ssim(a, b)
        assert 0.0 <= val <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.ms_ssim(np.zeros((200, 200)), np.zeros((200, 180)))

    def test_too_small(self):
        with pytest.raises(ParameterError):
            metrics.ms_ssim(np.zeros((64, 64)), np.zeros((64, 64)))


class TestEditDistance:
    def test_identical(self):
        assert metrics.edit_distance("same", "same") == (0, 0, 0, 0)

    def test_empty_hyp(self):
        assert metrics.edit_distance("", "abc") == (0, 3, 0, 3)

    def test_empty_ref(self):
        assert metrics.edit_distance("abc", "") == (3, 0, 0, 3)

    def test_kitten_sitting(self):
        d, i, s, ed = metrics.edit_distance("kitten", "sitting")
        assert ed == 3
        assert d + i + s == 3

    def test_exhaustive_small_strings(self):
        # all pairs over a 3-symbol alphabet up to length 3 vs the
        # brute-force recursive oracle
        alphabet = "abc"
        words = [""]
        for n in (1, 2, 3):
            words += ["".join(p) for p in itertools.product(alphabet, repeat=n)]
        for a in words:
            for b in words:
                _, _, _, ed = metrics.edit_distance(a, b)
                assert ed == levenshtein_recursive(a, b), (a, b)

    def test_metric_properties_random(self):
        rng = np.random.default_rng(8)
        alphabet = "abc"
        words = [
            "".join(rng.choice(list(alphabet), size=rng.integers(0, 8)))
            for _ in range(30)
        ]
        for a in words:
            assert metrics.edit_distance(a, a)[3] == 0
        for a, b in zip(words[:15], words[15:]):
            assert metrics.edit_distance(a, b)[3] == metrics.edit_distance(b, a)[3]
        for a, b, c in zip(words[:10], words[10:20], words[20:30]):
            ab = metrics.edit_distance(a, b)[3]
            bc = metrics.edit_distance(b, c)[3]
            ac = metrics.edit_distance(a, c)[3]
            assert ac <= ab + bc


class TestCer:
    def test_perfect(self):
        assert metrics.cer("hello", "hello") == 0.0

    def test_one_sub_over_three(self):
        assert metrics.cer("abd", "abc") == pytest.approx(1 / 3)

    def test_kitten_sitting(self):
        assert metrics.cer("kitten", "sitting") == pytest.approx(3 / 7)

    def test_empty_ref_rejected(self):
        with pytest.raises(ParameterError):
            metrics.cer("abc", "")


class TestNormalizeText:
    def test_whitespace_collapse(self):
        assert metrics.normalize_text("  a\t\tb\n\nc  ") == "a b c"

    def test_nfc(self):
        composed = "é"  # e with acute
        decomposed = "é"
        assert metrics.normalize_text(decomposed) == composed


class TestEvaluatePair:
    def test_self_pair(self):
        img = textured(300, 280, seed=9)[:, :, None].repeat(3, axis=2)
        cfg = metrics.EvalConfig(target_area=300 * 280)
        row = metrics.evaluate_pair(img, img.copy(), config=cfg, pair_id="self")
        assert row.ms_ssim == pytest.approx(1.0, abs=1e-9)
        assert row.ld <= 0.05
        assert row.li_d <= 0.05
        assert row.ed is None and row.cer is None

    def test_texts_scored(self):
        img = textured(300, 280, seed=10)[:, :, None].repeat(3, axis=2)
        cfg = metrics.EvalConfig(target_area=300 * 280)
        row = metrics.evaluate_pair(
            img, img.copy(), gt_text="abc", hyp_text="abd", config=cfg
        )
        assert row.ed == 1
        assert row.cer == pytest.approx(1 / 3)


class TestMetricReport:
    def test_build_and_serialize(self):
        rows = [
            metrics.PairMetrics(id="b", ms_ssim=0.5, ld=2.0, li_d=1.0, ed=3, cer=0.1),
            metrics.PairMetrics(id="a", ms_ssim=1.0, ld=0.0, li_d=0.0),
        ]
        report = metrics.MetricReport.build(rows)
        assert [r.id for r in report.rows] == ["a", "b"]
        assert report.aggregates["ms_ssim"] == pytest.approx(0.75)
        assert report.aggregates["ed"] == 3
        assert "ms_ssim" in report.to_json()
        csv = report.to_csv()
        assert csv.startswith("id,ms_ssim")
        assert csv.strip().splitlines()[-1].startswith("aggregate")
        line = report.summary_line()
        assert line.startswith("MS-SSIM") and "Li-D" in line and "CER" in line
