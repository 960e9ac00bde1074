import numpy as np
import pytest
from hypothesis import given, strategies as st

from w1a8.fixedpoint import Q0_16U, Q2_14, QFormat
from w1a8.quant import (
    ActQuantParams,
    ScaleRangeError,
    binarize,
    dequantize_act,
    quantize_act,
    scales_to_fixed,
)


class TestBinarize:
    def test_signs(self):
        out = binarize(np.array([0.3, -0.2]))
        assert out.signs.tolist() == [1, -1]

    def test_zero_is_plus_one(self):
        assert binarize(np.array([0.0])).signs.tolist() == [1]

    def test_positive_scale_invariance(self, rng):
        w = rng.normal(size=(4, 3, 3, 3))
        for c in (0.5, 2.0, 1e-3, 1e3):
            assert np.array_equal(binarize(c * w).signs, binarize(w).signs)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            binarize(np.array([np.nan]))

    def test_only_pm_one(self, rng):
        w = rng.normal(size=1000)
        s = binarize(w).signs
        assert set(np.unique(s)) <= {-1, 1}


class TestQuantizeAct:
    P = ActQuantParams.from_step(0.5)

    def test_basic(self):
        assert quantize_act(1.0, self.P) == 2

    def test_upper_clip(self):
        assert quantize_act(200.0, self.P) == 255

    def test_lower_clip(self):
        assert quantize_act(-3.7, ActQuantParams.from_step(1.3)) == 0

    def test_dequantize(self):
        assert dequantize_act(0, self.P) == 0.0
        assert dequantize_act(2, self.P) == 1.0

    def test_grid_idempotence(self):
        for step in (0.5, 0.013, 1.75, 3.9):
            p = ActQuantParams.from_step(step)
            q = np.arange(256, dtype=np.uint8)
            assert np.array_equal(quantize_act(dequantize_act(q, p), p), q)

    @given(st.floats(0.0, 200.0), st.floats(0.01, 3.9))
    def test_half_step_bound(self, x, step):
        p = ActQuantParams.from_step(step)
        if x <= 255 * step:
            q = quantize_act(x, p)
            assert abs(dequantize_act(q, p) - x) <= step / 2 + 1e-12

    @given(st.lists(st.floats(-10, 500), min_size=2, max_size=50), st.floats(0.01, 3.9))
    def test_monotone(self, xs, step):
        p = ActQuantParams.from_step(step)
        xs = sorted(xs)
        qs = [quantize_act(x, p) for x in xs]
        assert all(a <= b for a, b in zip(qs, qs[1:]))

    @given(st.floats(0.01, 3.9))
    def test_saturated_region(self, step):
        p = ActQuantParams.from_step(step)
        assert quantize_act(255.5 * step, p) == 255
        assert quantize_act(10 * 255 * step, p) == 255


class TestSignedAccumulation:
    def test_add_sub_equals_dot(self, rng):
        # sign-controlled add/sub accumulation against a wide-integer dot
        for _ in range(200):
            n = int(rng.integers(1, 64))
            a = rng.integers(0, 256, size=n)
            s = rng.choice([-1, 1], size=n)
            acc = 0
            for si, ai in zip(s, a):
                acc = acc + int(ai) if si > 0 else acc - int(ai)
            assert acc == int(np.dot(s.astype(np.int64), a.astype(np.int64)))


class TestScalesToFixed:
    def test_unit_mul(self):
        cs = scales_to_fixed(np.array([1.0]), None)
        assert cs.mul.tolist() == [16384]
        assert cs.mul_fmt == Q2_14

    def test_div_example(self):
        cs = scales_to_fixed(None, np.array([0.00390625]))
        assert cs.div.tolist() == [256]
        assert cs.div_fmt == Q0_16U

    def test_out_of_range_is_error(self):
        with pytest.raises(ScaleRangeError):
            scales_to_fixed(np.array([5.0]), None)

    def test_nonpositive_is_error(self):
        with pytest.raises(ScaleRangeError):
            scales_to_fixed(np.array([0.0]), None)
        with pytest.raises(ScaleRangeError):
            scales_to_fixed(None, np.array([-0.5]))

    def test_half_lsb_accuracy(self, rng):
        vals = rng.uniform(0.01, 3.9, size=64)
        cs = scales_to_fixed(vals, None)
        err = np.abs(cs.mul / Q2_14.scale - vals)
        assert err.max() <= 0.5 / Q2_14.scale + 1e-15

    def test_custom_formats(self):
        fmt = QFormat(4, 12, signed=False)
        cs = scales_to_fixed(None, np.array([6.0]), fmt_div=fmt)
        assert cs.div.tolist() == [6 * 4096]
