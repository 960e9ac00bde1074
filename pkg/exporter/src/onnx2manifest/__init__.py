"""ONNX-to-manifest parameter extraction for the W1A8 detector toolchain."""

from .extract import ARCHITECTURE, ExportError, export_manifest
from .onnx_wire import Model, Graph, Node, Tensor, load_model, save_model

__all__ = [
    "ARCHITECTURE",
    "ExportError",
    "export_manifest",
    "Model",
    "Graph",
    "Node",
    "Tensor",
    "load_model",
    "save_model",
]

__version__ = "0.1.0"
