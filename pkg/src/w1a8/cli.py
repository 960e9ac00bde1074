"""Command-line toolchain.

Subcommands: ``coegen`` (ROM initialization files), ``infer`` (run one of
the three engines and dump tensors), ``verify`` (layer-wise comparison
report), ``estimate`` (storage table), ``detect`` (head decode + NMS).
All outputs are deterministic for identical inputs and flags.

Exit codes: 0 success, 1 verification failure, 2 input/format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import coe_rom, detect_post, fixtures, tensorio
from .model_graph import ManifestError, estimate_storage, load_manifest, save_manifest
from .ppm import PpmError, read_ppm, write_ppm
from .reference_engine import (
    forward_fixed_direct,
    forward_float,
    image_bytes_to_float,
    layer_scales,
)
from .stream_engine import run_stream, serialize_head
from .verify import layerwise_compare

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2


def _load_image(path, model):
    image = read_ppm(path)
    if tuple(image.shape) != tuple(model.input_shape):
        raise PpmError(
            f"{path}: image is {image.shape}, model expects {model.input_shape}"
        )
    return image


def cmd_coegen(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    radix = 16 if args.radix == "hex" else 2
    index = []
    for layer in manifest.model.layers:
        lp = manifest.params[layer.name]
        scales = layer_scales(layer, lp)
        roms = [("w", coe_rom.pack_weights(layer, lp.weights, args.word_width), "weights")]
        roms.append(("b", coe_rom.pack_values(lp.bias, args.word_width), "bias"))
        if scales.mul is not None:
            roms.append(("mul", coe_rom.pack_values(scales.mul, args.word_width, signed=False), "mul_prev"))
        if scales.div is not None:
            roms.append(("div", coe_rom.pack_values(scales.div, args.word_width, signed=False), "div_current"))
        for suffix, img, kind in roms:
            img = coe_rom.RomImage(img.word_width, img.words, radix=radix)
            name = f"{layer.name}_{suffix}.coe"
            (out / name).write_text(coe_rom.emit_coe(img))
            index.append(
                {
                    "file": name,
                    "layer": layer.name,
                    "kind": kind,
                    "depth": img.depth,
                    "word_width": img.word_width,
                    "radix": img.radix,
                }
            )
    (out / "index.json").write_text(json.dumps({"roms": index}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(index)} COE files to {out}")
    return EXIT_OK


def _dump_trace(dump: Path, trace, float_engine: bool) -> None:
    for cap in trace.layers:
        if float_engine:
            tensorio.save_tensor(dump, f"{cap.name}_raw", cap.raw.astype(np.float64))
        else:
            tensorio.save_tensor(dump, f"{cap.name}_raw", cap.raw, frac_bits=cap.raw_frac)
        if cap.post is not None:
            tensorio.save_tensor(dump, f"{cap.name}_post", cap.post)


def cmd_infer(args) -> int:
    manifest = load_manifest(args.manifest)
    model = manifest.model
    image = _load_image(args.image, model)
    dump = Path(args.dump)
    dump.mkdir(parents=True, exist_ok=True)
    if args.engine == "stream":
        res = run_stream(
            model, manifest, image,
            rom_latency=args.rom_latency, capture=True,
        )
        _dump_trace(dump, res.trace, float_engine=False)
        tensorio.save_head_words(dump / "head_words.bin", res.head_words)
        (dump / "stats.json").write_text(
            json.dumps(res.stats.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        print(f"stream engine: {res.stats.cycles_per_frame} modeled cycles/frame")
    elif args.engine == "direct":
        trace = forward_fixed_direct(model, manifest, image)
        _dump_trace(dump, trace, float_engine=False)
        tensorio.save_head_words(dump / "head_words.bin", serialize_head(trace.head))
    else:
        trace = forward_float(model, manifest, image_bytes_to_float(image))
        _dump_trace(dump, trace, float_engine=True)
        tensorio.save_tensor(dump, "head_float", trace.head.astype(np.float64))
    print(f"dumps written to {dump}")
    return EXIT_OK


def cmd_verify(args) -> int:
    manifest = load_manifest(args.manifest)
    image = _load_image(args.image, manifest.model)
    report = layerwise_compare(manifest.model, manifest, image, rom_latency=args.rom_latency)
    print(report.format_table())
    if args.json:
        Path(args.json).write_text(report.to_json())
    if not report.bitexact_ok:
        print("FAIL: streaming and direct engines disagree", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_estimate(args) -> int:
    manifest = load_manifest(args.manifest)
    print(estimate_storage(manifest.model).format_table())
    return EXIT_OK


def cmd_detect(args) -> int:
    words = tensorio.load_head_words(args.head)
    layout = detect_post.load_layout(args.anchors)
    cells = words.size // layout.channels
    grid = int(round(cells ** 0.5))
    if grid * grid * layout.channels != words.size:
        raise ValueError(
            f"{args.head}: {words.size} words do not form a square grid "
            f"of {layout.channels}-channel cells"
        )
    boxes = detect_post.decode(words, layout, args.conf, grid=(grid, grid))
    kept = detect_post.nms(boxes, args.iou)
    text = detect_post.boxes_to_json(kept)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.render:
        if not args.image:
            raise ValueError("--render needs --image to draw onto")
        image = read_ppm(args.image)
        write_ppm(args.render, detect_post.render_boxes(image, kept))
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("W1A8_SEED", fixtures.DEFAULT_SEED))
    if args.tiny:
        model, manifest, image = fixtures.gen_tiny_manifest(seed)
    else:
        model, manifest, image = fixtures.default_fixture(seed)
    save_manifest(manifest, args.out)
    if args.image_out:
        write_ppm(args.image_out, image)
    print(f"fixture manifest (seed {seed}) written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="w1a8",
        description="Toolchain for the streaming W1A8 detector model",
    )
    sub = parser.add_subparsers(
        dest="command",
        metavar="{coegen,infer,verify,estimate,detect}",
        required=True,
    )

    p = sub.add_parser("coegen", help="emit COE ROM initialization files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--word-width", type=int, default=16, dest="word_width")
    p.add_argument("--radix", choices=("hex", "bin"), default="hex")
    p.set_defaults(func=cmd_coegen)

    p = sub.add_parser("infer", help="run one engine on a PPM image")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--engine", choices=("stream", "direct", "float"), default="stream")
    p.add_argument("--dump", required=True)
    p.add_argument("--rom-latency", type=int, default=1, dest="rom_latency")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify", help="layer-wise comparison report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--rom-latency", type=int, default=1, dest="rom_latency")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("estimate", help="per-layer storage table")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("detect", help="decode a head dump into boxes")
    p.add_argument("--head", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--conf", type=float, default=0.3)
    p.add_argument("--iou", type=float, default=0.45)
    p.add_argument("--out", help="write box JSON here instead of stdout")
    p.add_argument("--image", help="input PPM for rendering")
    p.add_argument("--render", help="write a PPM with boxes drawn")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("gen-fixture")  # test fixture generation
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tiny", action="store_true")
    p.add_argument("--image-out", dest="image_out")
    p.set_defaults(func=cmd_gen_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, PpmError, coe_rom.CoeParseError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
