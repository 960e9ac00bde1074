import numpy as np
import pytest

from w1a8.fixedpoint import Q0_16U, Q2_14, Q5_11
from w1a8.model_graph import CONV_STANDARD, CONV_W1A8, LayerSpec
from w1a8.coe_rom import (
    AddressMap,
    CoeParseError,
    RomImage,
    address_map,
    emit_coe,
    pack_values,
    pack_weights,
    parse_coe,
    rom_latency_model,
    unpack_weights,
)


def bnn_layer(oc, ic, k, name="bnn"):
    return LayerSpec(name, CONV_W1A8, ic, oc, k, True, False, None, Q2_14,
                     mul_fmt=Q2_14, div_fmt=Q0_16U)


def std_layer(oc, ic, k, name="std"):
    return LayerSpec(name, CONV_STANDARD, ic, oc, k, False, False, Q5_11, Q2_14)


def signs_from_bits(bits, shape):
    return np.where(np.array(bits).reshape(shape) > 0, 1, -1).astype(np.int8)


class TestPackWeights:
    def test_all_plus_one_byte(self):
        layer = bnn_layer(1, 8, 1)
        w = np.ones((1, 8, 1, 1), dtype=np.int8)
        img = pack_weights(layer, w, word_width=8)
        assert img.words == (0xFF,)

    def test_alternating_lsb_first(self):
        layer = bnn_layer(1, 8, 1)
        w = signs_from_bits([1, 0, 1, 0, 1, 0, 1, 0], (1, 8, 1, 1))
        img = pack_weights(layer, w, word_width=8)
        assert img.words == (0x55,)

    def test_conv2_depth(self):
        layer = bnn_layer(32, 16, 3, "conv2")
        w = np.ones((32, 16, 3, 3), dtype=np.int8)
        img = pack_weights(layer, w, word_width=16)
        assert img.depth == 288  # 4608 bits / 16

    def test_final_word_zero_padded(self):
        layer = bnn_layer(1, 3, 1)
        w = np.ones((1, 3, 1, 1), dtype=np.int8)
        img = pack_weights(layer, w, word_width=8)
        assert img.words == (0b0000_0111,)

    def test_standard_two_complement(self):
        layer = std_layer(1, 1, 1)
        img = pack_weights(layer, np.array([[[[-1]]]]), word_width=16)
        assert img.words == (0xFFFF,)

    def test_dimension_mismatch(self):
        layer = bnn_layer(2, 4, 3)
        with pytest.raises(ValueError):
            pack_weights(layer, np.ones((2, 4, 1, 1), dtype=np.int8))


class TestBijection:
    def test_random_layers(self, rng):
        for _ in range(100):
            oc = int(rng.integers(1, 65))
            ic = int(rng.integers(1, 65))
            k = int(rng.choice([1, 3]))
            ww = int(rng.choice([8, 16, 32]))
            layer = bnn_layer(oc, ic, k)
            w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(oc, ic, k, k))
            img = pack_weights(layer, w, word_width=ww)
            assert np.array_equal(unpack_weights(layer, img), w)

    def test_standard_round_trip(self, rng):
        layer = std_layer(4, 3, 3)
        w = rng.integers(-32768, 32768, size=(4, 3, 3, 3))
        img = pack_weights(layer, w, word_width=16)
        assert np.array_equal(unpack_weights(layer, img), w)

    def test_total_bits(self, rng):
        for _ in range(20):
            oc, ic, k = int(rng.integers(1, 20)), int(rng.integers(1, 20)), 3
            layer = bnn_layer(oc, ic, k)
            amap = address_map(layer, 16)
            assert amap.total_bits == oc * ic * k * k
            img = pack_weights(layer, rng.choice(np.array([-1, 1], np.int8), (oc, ic, k, k)))
            assert img.depth * 16 >= amap.total_bits > (img.depth - 1) * 16

    def test_address_map_bijective(self):
        amap = AddressMap("x", (2, 3, 3, 3), 1, 16)
        seen = set()
        for oc in range(2):
            for ic in range(3):
                for ky in range(3):
                    for kx in range(3):
                        seen.add(amap.bit_offset(oc, ic, ky, kx))
        assert seen == set(range(54))


class TestEmitCoe:
    def test_grammar_single_word(self):
        text = emit_coe(RomImage(8, (0x55,)))
        assert text == "memory_initialization_radix=16;\nmemory_initialization_vector=\n55;\n"
        assert "memory_initialization_vector=\n55;" in text

    def test_empty_image(self):
        text = emit_coe(RomImage(8, ()))
        assert text == "memory_initialization_radix=16;\nmemory_initialization_vector=\n;\n"

    def test_hex_zero_padding(self):
        text = emit_coe(RomImage(16, (0xA, 0xBEEF)))
        assert "000a," in text and "beef;" in text

    def test_binary_radix(self):
        text = emit_coe(RomImage(4, (0b0101,), radix=2))
        assert "memory_initialization_radix=2;" in text
        assert "0101;" in text

    def test_deterministic(self, rng):
        words = tuple(int(w) for w in rng.integers(0, 2 ** 16, size=64))
        assert emit_coe(RomImage(16, words)) == emit_coe(RomImage(16, words))


class TestParseCoe:
    def test_round_trip_random(self, rng):
        for _ in range(50):
            width = int(rng.choice([8, 16, 32]))
            radix = int(rng.choice([2, 16]))
            n = int(rng.integers(0, 40))
            words = tuple(int(w) for w in rng.integers(0, 2 ** width, size=n))
            img = RomImage(width, words, radix=radix)
            assert parse_coe(emit_coe(img), width) == img

    def test_word_overflow(self):
        with pytest.raises(CoeParseError, match="exceeds width"):
            parse_coe("memory_initialization_radix=16;\nmemory_initialization_vector=\n100;\n", 8)

    def test_missing_terminator(self):
        with pytest.raises(CoeParseError, match="terminator"):
            parse_coe("memory_initialization_radix=16;\nmemory_initialization_vector=\n55\n", 8)

    def test_malformed_radix(self):
        with pytest.raises(CoeParseError, match="radix"):
            parse_coe("memory_initialization_radix=7;\nmemory_initialization_vector=\n5;\n", 8)

    def test_comments_and_whitespace(self):
        text = (
            "; a comment line\n"
            "memory_initialization_radix = 16;\n"
            "; another comment\n"
            "memory_initialization_vector =\n"
            "  0a , 0b ,\n"
            "  0c ;\n"
            "; trailing comment\n"
        )
        assert parse_coe(text, 8).words == (0xA, 0xB, 0xC)

    def test_uppercase_hex_accepted(self):
        text = "memory_initialization_radix=16;\nmemory_initialization_vector=\nBEEF;\n"
        assert parse_coe(text, 16).words == (0xBEEF,)

    def test_positioned_diagnostics(self):
        text = "memory_initialization_radix=16;\nmemory_initialization_vector=\nzz;\n"
        with pytest.raises(CoeParseError, match="line 3"):
            parse_coe(text, 16)

    def test_depth_matches_pack(self, rng):
        layer = bnn_layer(32, 16, 3, "conv2")
        w = rng.choice(np.array([-1, 1], np.int8), size=(32, 16, 3, 3))
        img = pack_weights(layer, w, word_width=16)
        back = parse_coe(emit_coe(img), 16)
        assert back.depth == 288
        assert np.array_equal(unpack_weights(layer, back), w)


class TestPackValues:
    def test_signed_range(self):
        with pytest.raises(ValueError):
            pack_values([40000], 16, signed=True)
        assert pack_values([40000], 16, signed=False).words == (40000,)

    def test_negative_two_complement(self):
        assert pack_values([-1], 16).words == (0xFFFF,)


class TestRomLatency:
    def test_latency_one(self):
        sched = rom_latency_model(1)
        assert sched.data_ready_cycle(5) == 6

    def test_latency_two(self):
        assert rom_latency_model(2).data_ready_cycle(0) == 2

    def test_pipelined_stream(self):
        sched = rom_latency_model(3)
        ready = [sched.stream_ready_cycle(0, n) for n in range(4)]
        assert ready == [3, 4, 5, 6]  # one result per cycle after fill

    def test_zero_latency_rejected(self):
        with pytest.raises(ValueError):
            rom_latency_model(0)
