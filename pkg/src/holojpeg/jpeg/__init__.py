"""Baseline grayscale JPEG codec."""

from .codec import (
    JfifStream,
    JPEGError,
    MarkerError,
    Segment,
    TruncatedDataError,
    UnsupportedModeError,
    decode,
    encode,
    parse_segments,
)
from .dct import fdct8x8, idct8x8
from .tables import BASE_LUMINANCE, ZIGZAG, scale_quant_table

__all__ = [
    "JfifStream", "JPEGError", "MarkerError", "Segment", "TruncatedDataError",
    "UnsupportedModeError", "decode", "encode", "parse_segments",
    "fdct8x8", "idct8x8", "BASE_LUMINANCE", "ZIGZAG", "scale_quant_table",
]
