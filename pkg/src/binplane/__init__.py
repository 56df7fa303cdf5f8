"""Bit-plane expansion of weight tensors with lossless GF(2) factoring of the planes."""

from .compressor import compress_layer, decompress_layer, model_report
from .gf2 import Gf2Matrix, decompose, rank_gf2
from .quantizer import expand, normalize, reconstruct

__version__ = "0.1.0"
