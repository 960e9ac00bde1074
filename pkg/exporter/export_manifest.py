#!/usr/bin/env python3
"""Extract W1A8 detector parameters from an ONNX model into a manifest.

Usage: export_manifest.py --onnx model.onnx --map names.yaml --out manifest_dir
"""

import argparse
import sys

from onnx2manifest import ExportError, export_manifest
from onnx2manifest.onnx_wire import OnnxWireError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--onnx", required=True, help="trained ONNX model file")
    parser.add_argument("--map", dest="map_path",
                        help="YAML mapping of layers to graph tensor names")
    parser.add_argument("--out", required=True, help="manifest output directory")
    args = parser.parse_args(argv)
    try:
        out = export_manifest(args.onnx, args.out, map_path=args.map_path)
    except (ExportError, OnnxWireError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"manifest written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
