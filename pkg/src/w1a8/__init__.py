"""Bit-exact software model of a streaming W1A8 binary-weight detector.

Subpackages:

- ``fixedpoint``: exact Q-format arithmetic primitives
- ``quant``: binarization, 8-bit activation quantization, scale conversion
- ``model_graph``: pipeline description, parameter manifests, storage costs
- ``coe_rom``: ROM packing and Vivado COE emission/parsing
- ``reference_engine``: floating-point and direct fixed-point oracles
- ``stream_engine``: the streaming dataflow pipeline and cycle model
- ``verify``: layer-wise numerical comparison harness
- ``detect_post``: head decode, confidence filter, NMS
- ``cli``: command-line toolchain
"""

__version__ = "0.1.0"
