"""Entropy models, rate estimation, range coding and the bitstream container."""

from .bitstream import Bitstream, BitstreamError, deserialize, serialize
from .gaussian import PROB_FLOOR, SIGMA_FLOOR, GaussianParams, gaussian_bits, symbol_bits
from .hyperprior import FactorizedZ, HyperPrior, ParametricZ
from .rangecoder import DecodeError, range_decode, range_encode, symbol_window

__all__ = [
    "Bitstream",
    "BitstreamError",
    "DecodeError",
    "FactorizedZ",
    "GaussianParams",
    "HyperPrior",
    "PROB_FLOOR",
    "ParametricZ",
    "SIGMA_FLOOR",
    "deserialize",
    "gaussian_bits",
    "range_decode",
    "range_encode",
    "serialize",
    "symbol_bits",
    "symbol_window",
]
