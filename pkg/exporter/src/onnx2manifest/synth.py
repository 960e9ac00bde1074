"""Synthetic ONNX models of the target architecture, for tests and demos."""

from __future__ import annotations

import numpy as np

from .extract import ARCHITECTURE, DEFAULT_PATTERNS, INPUT_SHAPE
from .onnx_wire import Graph, Model, Node, Tensor


def make_synthetic_model(seed: int = 0, skip_layers=()) -> Model:
    """A graph whose initializers hold exactly representable parameters.

    Weight values are fixed-point grid points of their declared formats, so
    extraction reproduces them bit for bit; scales are small positive reals.
    ``skip_layers`` drops whole layers to exercise error reporting.
    """
    rng = np.random.default_rng(seed)
    graph = Graph(name="w1a8_detector")
    prev = "image"
    graph.input_names = (prev,)
    for layer in ARCHITECTURE:
        name = layer["name"]
        out_name = f"{name}_out"
        graph.nodes.append(
            Node("Conv", name=name,
                 inputs=(prev, f"{name}.weight", f"{name}.bias"),
                 outputs=(out_name,))
        )
        prev = out_name
        if name in skip_layers:
            continue
        shape = (layer["out_channels"], layer["in_channels"],
                 layer["kernel"], layer["kernel"])
        if layer["conv_kind"] == "w1a8":
            w = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=shape)
        else:
            frac = int(layer["weight_format"].split(".")[1].rstrip("u"))
            raws = rng.integers(-2000, 2000, size=shape)
            w = (raws / (1 << frac)).astype(np.float32)
        graph.initializers.append(Tensor.from_array(f"{name}.weight", w))

        bfrac = int(layer["bias_format"].split(".")[1].rstrip("u"))
        braws = rng.integers(-1000, 1000, size=layer["out_channels"])
        graph.initializers.append(
            Tensor.from_array(f"{name}.bias", (braws / (1 << bfrac)).astype(np.float32))
        )
        if layer["conv_kind"] == "w1a8":
            mul = rng.uniform(0.5, 2.0, size=layer["in_channels"]).astype(np.float32)
            graph.initializers.append(Tensor.from_array(f"{name}.mul_prev", mul))
        if layer["has_post"]:
            div = rng.uniform(0.01, 0.2, size=layer["out_channels"]).astype(np.float32)
            graph.initializers.append(Tensor.from_array(f"{name}.div_current", div))
            graph.initializers.append(
                Tensor.from_array(f"{name}.act_step",
                                  np.array([float(1.0 / div.mean())], dtype=np.float32))
            )
    graph.output_names = (prev,)
    return Model(graph)
