# Copyright © 2025 mlx-popcast contributors.

import unittest

from mlx_popcast.core import (
    EvidenceCard,
    EvidenceDimension,
    ExcludedDomain,
    GrowthType,
    LengthError,
    MonotonicityViolation,
    NegativeCount,
    PopcastError,
    PopularityTier,
    SaliencyProfile,
    SchemaError,
    SourceEntry,
    VideoRecord,
    ViewCurve,
    growth_ratio,
    growth_type,
    is_excluded_url,
    log_popularity,
    relative_day_timestamps,
    tier_of,
    tier_thresholds,
    validate_curve,
)


def dimension(url):
    return EvidenceDimension(
        evidence="some text",
        source_ids=("s0",),
        source_index=(SourceEntry("s0", "site", "news", url),),
    )


class TestScalars(unittest.TestCase):

    def test_log_popularity(self):
        self.assertEqual(log_popularity(0), 0.0)
        self.assertEqual(log_popularity(1023), 10.0)
        self.assertEqual(log_popularity(127), 7.0)
        self.assertLess(log_popularity(5), log_popularity(6))

    def test_tier_boundaries(self):
        self.assertEqual(tier_of(0), PopularityTier.MICRO)
        self.assertEqual(tier_of(999), PopularityTier.MICRO)
        self.assertEqual(tier_of(1000), PopularityTier.SMALL)
        self.assertEqual(tier_of(9999), PopularityTier.SMALL)
        self.assertEqual(tier_of(10_000), PopularityTier.MEDIUM)
        self.assertEqual(tier_of(100_000), PopularityTier.LARGE)
        self.assertEqual(tier_of(999_999), PopularityTier.LARGE)
        self.assertEqual(tier_of(1_000_000), PopularityTier.VIRAL)
        table = tier_thresholds()
        self.assertEqual(table[PopularityTier.MICRO], (0, 1000))
        self.assertEqual(table[PopularityTier.LARGE], (100_000, 1_000_000))
        self.assertEqual(table[PopularityTier.VIRAL], (1_000_000, None))
        self.assertEqual(PopularityTier.MEDIUM.label, "Medium")
        self.assertEqual(PopularityTier.VIRAL.label, "Viral")
        self.assertEqual(len(PopularityTier), 5)

    def test_growth_ratio(self):
        curve = ViewCurve((0, 10, 50, 60, 70, 80, 90, 100))
        self.assertAlmostEqual(growth_ratio(curve), 0.5)
        self.assertIsNone(growth_ratio(ViewCurve((0,) * 8)))
        self.assertEqual(growth_ratio(ViewCurve((5,) * 8)), 1.0)

    def test_growth_type(self):
        self.assertEqual(growth_type(0.1, 0.1, 0.8), GrowthType.DELAYED_VIRAL)
        self.assertEqual(growth_type(0.8, 0.1, 0.8), GrowthType.INITIAL_VIRAL)
        self.assertEqual(growth_type(0.5, 0.1, 0.8), GrowthType.TYPICAL)
        self.assertEqual(growth_type(None, 0.1, 0.8), GrowthType.UNDEFINED)

    def test_relative_days(self):
        stamps = relative_day_timestamps(1000.0)
        self.assertEqual(len(stamps), 8)
        self.assertEqual(stamps[7] - stamps[0], 7 * 86400)


class TestCurves(unittest.TestCase):

    def test_strict_rejects_decrease(self):
        with self.assertRaises(MonotonicityViolation) as cm:
            validate_curve([0, 5, 4, 6, 7, 8, 9, 10])
        self.assertEqual(cm.exception.index, 2)

    def test_lenient_clamps(self):
        curve = validate_curve([0, 5, 4, 6, 7, 8, 9, 10], mode="lenient")
        self.assertEqual(curve.views, (0, 5, 5, 6, 7, 8, 9, 10))

    def test_length_and_sign(self):
        with self.assertRaises(LengthError):
            validate_curve([1, 2, 3])
        with self.assertRaises(NegativeCount):
            validate_curve([-1, 0, 0, 0, 0, 0, 0, 0])
        with self.assertRaises(ValueError):
            validate_curve([0] * 8, mode="sloppy")

    def test_whole_counts(self):
        curve = validate_curve([0, 1.0, 2, 3, 4, 5, 6, 7])
        self.assertEqual(curve.views[1], 1)
        self.assertIsInstance(curve.views[1], int)
        with self.assertRaises(SchemaError) as cm:
            validate_curve([0, 1.7, 2, 3, 4, 5, 6, 7])
        self.assertEqual(cm.exception.path, "views[1]")
        with self.assertRaises(SchemaError):
            validate_curve([0, 1, 2, 3, 4, 5, 6, True])
        with self.assertRaises(SchemaError):
            validate_curve([0, 1, 2, 3, 4, 5, 6, float("nan")])

    def test_errors_share_base(self):
        with self.assertRaises(PopcastError):
            ViewCurve((3, 2, 2, 2, 2, 2, 2, 2))


class TestRecords(unittest.TestCase):

    def test_video_record(self):
        curve = ViewCurve((0, 1, 2, 3, 4, 5, 6, 1023))
        r = VideoRecord("v0", 100.0, "title", "", "topic", curve)
        self.assertEqual(r.y, 10.0)
        self.assertEqual(r.reveal_time, 100.0 + 7 * 86400)
        with self.assertRaises(SchemaError):
            VideoRecord("v1", 0.0, "", "", "topic", curve)
        with self.assertRaises(SchemaError):
            VideoRecord("", 1.0, "", "", "topic", curve)

    def test_excluded_domains(self):
        self.assertTrue(is_excluded_url("https://www.youtube.com/watch?v=abc"))
        self.assertTrue(is_excluded_url("http://youtu.be/abc"))
        self.assertTrue(is_excluded_url("https://m.youtube.com/shorts/abc"))
        self.assertFalse(is_excluded_url("https://notyoutube.com/page"))
        with self.assertRaises(ExcludedDomain):
            EvidenceCard("v0", 0, d1_topic_entity=dimension("https://youtube.com/x"))
        card = EvidenceCard("v0", 1, d2_public_discourse=dimension("https://a.org/x"))
        self.assertEqual(card.urls(), ["https://a.org/x"])
        self.assertIs(card.dimension("d2"), card.d2_public_discourse)

    def test_card_schema(self):
        with self.assertRaises(SchemaError):
            EvidenceCard("v0", 3)
        with self.assertRaises(SchemaError):
            EvidenceDimension(evidence="x", source_ids=("s9",))
        with self.assertRaises(SchemaError):
            SourceEntry("s0", "site", "news", "")

    def test_saliency_range(self):
        SaliencyProfile((1, 5, 10))
        with self.assertRaises(SchemaError):
            SaliencyProfile((0, 5, 5))
        with self.assertRaises(SchemaError):
            SaliencyProfile((5, 11, 5))


if __name__ == "__main__":
    unittest.main()
