import json
from pathlib import Path

import numpy as np
import pytest

from w1a8 import fixtures
from w1a8.fixedpoint import Q1_15, Q2_14, Q5_11
from w1a8.model_graph import (
    CONV_STANDARD,
    CONV_W1A8,
    LayerSpec,
    ManifestError,
    ModelSpec,
    build_default_model,
    estimate_storage,
    load_manifest,
    save_manifest,
)


class TestDefaultModel:
    def setup_method(self):
        self.model = build_default_model()

    def test_layer_count(self):
        assert len(self.model.layers) == 11

    def test_conv2_row(self):
        conv2 = self.model.layer("conv2")
        assert conv2.conv_kind == CONV_W1A8
        assert (conv2.in_channels, conv2.out_channels) == (16, 32)
        assert conv2.kernel == 3
        assert conv2.has_post and conv2.has_maxpool

    def test_conv9_row(self):
        conv9 = self.model.layer("conv9")
        assert conv9.kernel == 1
        assert conv9.padding == 0
        assert (conv9.in_channels, conv9.out_channels) == (128, 64)

    def test_output_shape(self):
        assert self.model.output_shape == (75, 10, 10)
        assert int(np.prod(self.model.output_shape)) == 7500

    def test_channel_chain(self):
        outs = [l.out_channels for l in self.model.layers]
        assert outs == [16, 32, 64, 128, 128, 128, 128, 128, 64, 64, 75]

    def test_spatial_chain(self):
        widths = [w for (_, w) in self.model.spatial_sizes()]
        assert widths == [320, 160, 80, 40, 20, 20, 20, 10, 10, 10, 10]

    def test_pool_placement(self):
        pooled = [l.name for l in self.model.layers if l.has_maxpool]
        assert pooled == ["conv1", "conv2", "conv3", "conv4", "conv7"]

    def test_standard_layers(self):
        std = [l.name for l in self.model.layers if l.conv_kind == CONV_STANDARD]
        assert std == ["conv1", "conv11"]
        assert self.model.layer("conv1").weight_fmt == Q5_11
        assert self.model.layer("conv11").weight_fmt == Q1_15

    def test_head_emits_raw(self):
        assert self.model.layer("conv11").activation_out == "raw"
        assert all(
            l.activation_out == "u8" for l in self.model.layers[:-1]
        )


class TestModelValidation:
    def test_channel_mismatch(self):
        bad = LayerSpec("x", CONV_STANDARD, 4, 8, 3, False, False, Q5_11, Q2_14)
        with pytest.raises(ValueError):
            ModelSpec((3, 8, 8), (bad,))

    def test_pool_needs_even_dims(self):
        l0 = LayerSpec("a", CONV_STANDARD, 3, 4, 3, True, True, Q5_11, Q2_14,
                       div_fmt=fixtures.Q4_12U)
        head = LayerSpec("b", CONV_STANDARD, 4, 2, 1, False, False, Q1_15, Q2_14)
        ModelSpec((3, 8, 8), (l0, head))  # fine
        with pytest.raises(ValueError):
            ModelSpec((3, 7, 7), (l0, head))

    def test_pool_only_after_post(self):
        with pytest.raises(ValueError):
            LayerSpec("x", CONV_STANDARD, 3, 4, 3, False, True, Q5_11, Q2_14)


class TestStorage:
    def setup_method(self):
        self.report = estimate_storage(build_default_model())

    def test_line_buffer_bytes_l0_l7(self):
        expect = [10240, 7680, 10240, 7680, 10240, 7680, 10240, 7680]
        got = [r.line_buffer_bytes for r in self.report.rows[:8]]
        assert got == expect

    def test_expressions(self):
        assert self.report.rows[0].line_buffer_expr == "2x320x16"
        assert self.report.rows[1].line_buffer_expr == "3x160x16"

    def test_kb_rendering(self):
        table = self.report.format_table()
        assert "2x320x16 = 10.0KB" in table
        assert "3x160x16 = 7.5KB" in table

    def test_conv2_packed_weight_bytes(self):
        row = next(r for r in self.report.rows if r.name == "conv2")
        assert row.weight_bytes == 576  # ceil(3*3*16*32 / 8)

    def test_row_structure(self):
        # 11 convs + 5 pools, expanded
        assert len(self.report.rows) == 16
        kinds = [r.kind for r in self.report.rows]
        assert kinds.count("maxpool") == 5

    def test_param_count_near_0_74m(self):
        assert abs(self.report.param_count - 740_000) / 740_000 < 0.05

    def test_one_bit_totals(self):
        model = build_default_model()
        for layer in model.layers:
            if layer.conv_kind == CONV_W1A8:
                row = next(r for r in self.report.rows if r.name == layer.name)
                assert row.weight_bytes == -(-layer.weight_count // 8)


class TestManifestRoundTrip:
    def test_save_load_identity(self, tiny, tmp_path):
        model, manifest, _ = tiny
        save_manifest(manifest, tmp_path)
        loaded = load_manifest(tmp_path)
        assert loaded.model == model
        for layer in model.layers:
            a, b = manifest.params[layer.name], loaded.params[layer.name]
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
            if a.mul is not None:
                assert np.array_equal(a.mul, b.mul)
            if a.div is not None:
                assert np.array_equal(a.div, b.div)
                assert a.act_step == b.act_step

    def test_save_deterministic(self, tiny, tmp_path):
        _, manifest, _ = tiny
        d1, d2 = tmp_path / "a", tmp_path / "b"
        save_manifest(manifest, d1)
        save_manifest(manifest, d2)
        files = sorted(p.name for p in d1.iterdir())
        assert files == sorted(p.name for p in d2.iterdir())
        for name in files:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_truncated_blob_names_layer(self, tiny, tmp_path):
        model, manifest, _ = tiny
        save_manifest(manifest, tmp_path)
        target = tmp_path / "l1_w.bin"
        target.write_bytes(target.read_bytes()[:-1])
        with pytest.raises(ManifestError, match="l1.*weights|weights.*l1"):
            load_manifest(tmp_path)

    def test_missing_blob_names_layer(self, tiny, tmp_path):
        model, manifest, _ = tiny
        save_manifest(manifest, tmp_path)
        (tmp_path / "l0_div.bin").unlink()
        with pytest.raises(ManifestError, match="l0"):
            load_manifest(tmp_path)

    def test_version_mismatch(self, tiny, tmp_path):
        _, manifest, _ = tiny
        save_manifest(manifest, tmp_path)
        header = json.loads((tmp_path / "manifest.json").read_text())
        header["version"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(header))
        with pytest.raises(ManifestError, match="version"):
            load_manifest(tmp_path)

    def test_unknown_format_string(self, tiny, tmp_path):
        _, manifest, _ = tiny
        save_manifest(manifest, tmp_path)
        header = json.loads((tmp_path / "manifest.json").read_text())
        header["model"]["layers"][0]["bias_format"] = "Qx.y"
        (tmp_path / "manifest.json").write_text(json.dumps(header))
        with pytest.raises(ManifestError, match="bias_format"):
            load_manifest(tmp_path)

    def test_w1a8_blob_is_bit_packed(self, tmp_path):
        model, manifest, _ = fixtures.default_fixture(seed=5)
        save_manifest(manifest, tmp_path)
        conv5 = model.layer("conv5")
        blob = (tmp_path / "conv5_w.bin").read_bytes()
        assert len(blob) == conv5.weight_count // 8 == 18432

    def test_default_model_reference(self, tmp_path):
        model, manifest, _ = fixtures.default_fixture(seed=5)
        save_manifest(manifest, tmp_path)
        header = json.loads((tmp_path / "manifest.json").read_text())
        header["model"] = "default"
        (tmp_path / "manifest.json").write_text(json.dumps(header))
        loaded = load_manifest(tmp_path)
        assert loaded.model == model
