"""ONNX front end for the accelerator toolchain.

Converts ONNX model files into the toolchain's IR JSON + weight container
using a self-contained protobuf wire parser; no onnx package required.
"""

from .convert import ConvertError, convert, extract_weights
from .model import OnnxError, load_model

__all__ = ["ConvertError", "OnnxError", "convert", "extract_weights",
           "load_model"]
