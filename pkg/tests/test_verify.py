import json
from fractions import Fraction

import numpy as np
import pytest

from w1a8 import fixtures
from w1a8.verify import MetricRecord, layerwise_compare, metrics


def fraction_stats_oracle(a, b):
    """Exact rational max/mean/pearson for cross-checking."""
    fa = [Fraction(float(x)) for x in a]
    fb = [Fraction(float(x)) for x in b]
    n = len(fa)
    diffs = [abs(x - y) for x, y in zip(fa, fb)]
    max_abs = max(diffs)
    mean_abs = sum(diffs) / n
    ma = sum(fa) / n
    mb = sum(fb) / n
    da = [x - ma for x in fa]
    db = [y - mb for y in fb]
    va = sum(x * x for x in da)
    vb = sum(y * y for y in db)
    if va == 0 or vb == 0:
        corr = None
    else:
        num = sum(x * y for x, y in zip(da, db))
        corr = float(num) / float(va * vb) ** 0.5
    return float(max_abs), float(mean_abs), corr


class TestMetrics:
    def test_identical_sequences(self):
        a = np.array([1, 5, 3, 7])
        rec = metrics(a, a)
        assert rec.max_abs == 0.0
        assert rec.mean_abs == 0.0
        assert rec.pearson == 1.0
        assert rec.within_1lsb_percent == 100.0

    def test_anticorrelated(self):
        rec = metrics(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert rec.pearson == pytest.approx(-1.0)
        assert rec.mean_abs == 1.0
        assert rec.within_1lsb_percent is None  # real-valued input

    def test_matches_high_precision_oracle(self, rng):
        a = rng.normal(size=200)
        b = a + rng.normal(scale=0.1, size=200)
        rec = metrics(a, b)
        max_abs, mean_abs, corr = fraction_stats_oracle(a, b)
        assert rec.max_abs == pytest.approx(max_abs, abs=1e-12)
        assert rec.mean_abs == pytest.approx(mean_abs, abs=1e-12)
        assert rec.pearson == pytest.approx(corr, abs=1e-12)

    def test_zero_variance_marker(self):
        rec = metrics(np.array([3, 3, 3]), np.array([1, 2, 3]))
        assert rec.pearson is None
        assert rec.to_dict()["pearson"] == "undefined"

    def test_symmetry(self, rng):
        a = rng.integers(0, 255, size=50)
        b = rng.integers(0, 255, size=50)
        ra, rb = metrics(a, b), metrics(b, a)
        assert ra.max_abs == rb.max_abs
        assert ra.mean_abs == rb.mean_abs
        assert ra.pearson == pytest.approx(rb.pearson)

    def test_affine_invariance(self, rng):
        a = rng.normal(size=64)
        b = rng.normal(size=64)
        base = metrics(a, b).pearson
        scaled = metrics(3.5 * a + 11.0, b).pearson
        assert scaled == pytest.approx(base, abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics(np.zeros(3), np.zeros(4))

    def test_within_1lsb_integer_only(self):
        rec = metrics(np.array([0, 1, 5]), np.array([1, 1, 9]))
        assert rec.within_1lsb_percent == pytest.approx(100 * 2 / 3)


class TestLayerwiseCompare:
    def test_stream_vs_direct_identical(self, tiny):
        model, manifest, image = tiny
        report = layerwise_compare(model, manifest, image)
        for row in report.section("stream_vs_direct"):
            assert row.record.max_abs == 0.0
            assert row.record.pearson in (1.0, None)
        assert report.bitexact_ok

    def test_row_labels(self, tiny):
        model, manifest, image = tiny
        report = layerwise_compare(model, manifest, image)
        labels = [r.label for r in report.section("float_vs_fixed")]
        first = model.layers[0].name
        assert f"{first[:1].upper()}{first[1:]} raw" in labels
        assert "final raw conv" in labels

    def test_final_corr_reasonable(self, tiny):
        model, manifest, image = tiny
        report = layerwise_compare(model, manifest, image)
        row = report.row("float_vs_fixed", "final raw conv")
        assert row.record.pearson is not None and row.record.pearson >= 0.99

    def test_json_round_trip(self, tiny):
        model, manifest, image = tiny
        report = layerwise_compare(model, manifest, image)
        data = json.loads(report.to_json())
        assert data["bit_exact_ok"] is True
        assert any(r["label"] == "final raw conv" for r in data["rows"])

    def test_table_corr_format(self, tiny):
        model, manifest, image = tiny
        text = layerwise_compare(model, manifest, image).format_table()
        assert "corr=" in text
        # six decimals after the point
        import re

        m = re.search(r"corr=(-?\d\.\d{6})\b", text)
        assert m is not None
