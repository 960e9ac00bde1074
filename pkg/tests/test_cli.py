import json
from pathlib import Path

import numpy as np
import pytest

from w1a8 import fixtures
from w1a8.cli import main
from w1a8.model_graph import save_manifest
from w1a8.ppm import read_ppm, write_ppm
from w1a8.tensorio import load_head_words, save_head_words


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    """A tiny manifest directory plus matching image, shared by CLI tests."""
    root = tmp_path_factory.mktemp("fixture")
    model, manifest, image = fixtures.gen_tiny_manifest(11)
    mdir = root / "manifest"
    save_manifest(manifest, mdir)
    img_path = root / "input.ppm"
    write_ppm(img_path, image)
    return model, mdir, img_path


def anchors_file(path):
    path.write_text(json.dumps({"anchors": [[0.2, 0.25], [0.4, 0.35], [0.8, 0.7]],
                                "classes": 20}))
    return path


class TestPpm:
    def test_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 256, size=(3, 5, 7), dtype=np.uint8)
        p = tmp_path / "x.ppm"
        write_ppm(p, arr)
        assert np.array_equal(read_ppm(p), arr)

    def test_comment_support(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n# a comment\n2 1\n255\n" + bytes(6))
        assert read_ppm(p).shape == (3, 1, 2)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P3\n1 1\n255\n000")
        from w1a8.ppm import PpmError

        with pytest.raises(PpmError):
            read_ppm(p)


class TestCoegenCmd:
    def test_deterministic_bytes(self, fixture_dir, tmp_path):
        _, mdir, _ = fixture_dir
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["coegen", "--manifest", str(mdir), "--out", str(out1)]) == 0
        assert main(["coegen", "--manifest", str(mdir), "--out", str(out2)]) == 0
        files = sorted(p.name for p in out1.iterdir())
        assert files == sorted(p.name for p in out2.iterdir())
        for name in files:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_index_lists_all_roms(self, fixture_dir, tmp_path):
        model, mdir, _ = fixture_dir
        out = tmp_path / "coe"
        main(["coegen", "--manifest", str(mdir), "--out", str(out)])
        index = json.loads((out / "index.json").read_text())
        kinds = {(e["layer"], e["kind"]) for e in index["roms"]}
        for layer in model.layers:
            assert (layer.name, "weights") in kinds
            assert (layer.name, "bias") in kinds

    def test_truncated_blob_exit_2(self, fixture_dir, tmp_path, capsys):
        _, mdir, _ = fixture_dir
        broken = tmp_path / "broken"
        import shutil

        shutil.copytree(mdir, broken)
        blob = broken / "l1_w.bin"
        blob.write_bytes(blob.read_bytes()[:-1])
        code = main(["coegen", "--manifest", str(broken), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "l1" in capsys.readouterr().err

    def test_conv2_depth_288(self, tmp_path):
        model, manifest, _ = fixtures.default_fixture(seed=5)
        mdir = tmp_path / "m"
        save_manifest(manifest, mdir)
        out = tmp_path / "coe"
        assert main(["coegen", "--manifest", str(mdir), "--out", str(out)]) == 0
        index = json.loads((out / "index.json").read_text())
        conv2 = next(e for e in index["roms"] if e["layer"] == "conv2" and e["kind"] == "weights")
        assert conv2["depth"] == 288
        assert conv2["word_width"] == 16


class TestInferCmd:
    def test_stream_equals_direct_files(self, fixture_dir, tmp_path):
        _, mdir, img = fixture_dir
        d1, d2 = tmp_path / "s", tmp_path / "d"
        assert main(["infer", "--manifest", str(mdir), "--image", str(img),
                     "--engine", "stream", "--dump", str(d1)]) == 0
        assert main(["infer", "--manifest", str(mdir), "--image", str(img),
                     "--engine", "direct", "--dump", str(d2)]) == 0
        w1 = (d1 / "head_words.bin").read_bytes()
        w2 = (d2 / "head_words.bin").read_bytes()
        assert w1 == w2

    def test_stream_writes_stats(self, fixture_dir, tmp_path):
        _, mdir, img = fixture_dir
        d = tmp_path / "dump"
        main(["infer", "--manifest", str(mdir), "--image", str(img),
              "--engine", "stream", "--dump", str(d)])
        stats = json.loads((d / "stats.json").read_text())
        assert stats["cycles_per_frame"] > 0
        assert any(s["name"] == "head.serializer" for s in stats["stages"])

    def test_float_engine_dumps(self, fixture_dir, tmp_path):
        _, mdir, img = fixture_dir
        d = tmp_path / "f"
        assert main(["infer", "--manifest", str(mdir), "--image", str(img),
                     "--engine", "float", "--dump", str(d)]) == 0
        assert (d / "head_float.bin").exists()

    def test_wrong_image_dims_exit_2(self, fixture_dir, tmp_path, capsys):
        _, mdir, _ = fixture_dir
        bad = tmp_path / "bad.ppm"
        write_ppm(bad, np.zeros((3, 4, 4), dtype=np.uint8))
        code = main(["infer", "--manifest", str(mdir), "--image", str(bad),
                     "--engine", "direct", "--dump", str(tmp_path / "x")])
        assert code == 2


class TestVerifyCmd:
    def test_report_and_exit_0(self, fixture_dir, tmp_path, capsys):
        _, mdir, img = fixture_dir
        code = main(["verify", "--manifest", str(mdir), "--image", str(img),
                     "--json", str(tmp_path / "report.json")])
        out = capsys.readouterr().out
        assert code == 0
        assert "final raw conv" in out
        assert "corr=" in out
        import re

        assert re.search(r"corr=-?\d\.\d{6}", out)
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["bit_exact_ok"] is True

    def test_bitexact_rows_all_zero(self, fixture_dir, tmp_path):
        _, mdir, img = fixture_dir
        report_path = tmp_path / "r.json"
        main(["verify", "--manifest", str(mdir), "--image", str(img),
              "--json", str(report_path)])
        report = json.loads(report_path.read_text())
        rows = [r for r in report["rows"] if r["comparison"] == "stream_vs_direct"]
        assert rows and all(r["max_abs"] == 0 for r in rows)


class TestEstimateCmd:
    def test_table_contents(self, tmp_path, capsys):
        model, manifest, _ = fixtures.default_fixture(seed=5)
        mdir = tmp_path / "m"
        save_manifest(manifest, mdir)
        assert main(["estimate", "--manifest", str(mdir)]) == 0
        out = capsys.readouterr().out
        assert "2x320x16 = 10.0KB" in out
        assert "3x160x16 = 7.5KB" in out


class TestDetectCmd:
    def test_zero_head_empty_boxes(self, tmp_path, capsys):
        words = np.zeros(7500, dtype=np.int64)
        head = tmp_path / "head.bin"
        save_head_words(head, words)
        anchors = anchors_file(tmp_path / "anchors.json")
        code = main(["detect", "--head", str(head), "--anchors", str(anchors),
                     "--conf", "0.3", "--iou", "0.45"])
        assert code == 0
        assert json.loads(capsys.readouterr().out) == []

    def test_golden_boxes(self, tmp_path):
        rng = np.random.default_rng(77)
        reals = rng.normal(scale=2.5, size=(75, 10, 10))
        words = np.round(reals * (1 << 15)).astype(np.int64)
        head = tmp_path / "head.bin"
        save_head_words(head, words)
        anchors = anchors_file(tmp_path / "anchors.json")
        out = tmp_path / "boxes.json"
        code = main(["detect", "--head", str(head), "--anchors", str(anchors),
                     "--conf", "0.3", "--iou", "0.45", "--out", str(out)])
        assert code == 0
        got = json.loads(out.read_text())
        golden = json.loads(Path("tests/golden/detect_boxes.json").read_text())
        assert got == golden

    def test_render(self, tmp_path):
        words = np.zeros(7500, dtype=np.int64)
        head = tmp_path / "head.bin"
        save_head_words(head, words)
        anchors = anchors_file(tmp_path / "anchors.json")
        img = tmp_path / "in.ppm"
        write_ppm(img, np.zeros((3, 320, 320), dtype=np.uint8))
        out_img = tmp_path / "out.ppm"
        code = main(["detect", "--head", str(head), "--anchors", str(anchors),
                     "--conf", "0.1", "--iou", "0.45", "--out", str(tmp_path / "b.json"),
                     "--image", str(img), "--render", str(out_img)])
        assert code == 0
        assert read_ppm(out_img).shape == (3, 320, 320)

    def test_head_words_round_trip(self, tmp_path, rng):
        words = rng.integers(-(2 ** 31), 2 ** 31, size=100, dtype=np.int64)
        p = tmp_path / "w.bin"
        save_head_words(p, words)
        assert np.array_equal(load_head_words(p), words)
        assert p.stat().st_size == 400  # little-endian 32-bit words


class TestGenFixtureCmd:
    def test_tiny_fixture_loads(self, tmp_path):
        out = tmp_path / "m"
        code = main(["gen-fixture", "--out", str(out), "--seed", "11", "--tiny",
                     "--image-out", str(tmp_path / "img.ppm")])
        assert code == 0
        from w1a8.model_graph import load_manifest

        manifest = load_manifest(out)
        assert len(manifest.model.layers) >= 2
        assert read_ppm(tmp_path / "img.ppm").shape == tuple(manifest.model.input_shape)

    def test_seed_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("W1A8_SEED", "17")
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-fixture", "--out", str(a), "--tiny"])
        main(["gen-fixture", "--out", str(b), "--tiny", "--seed", "17"])
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes()
