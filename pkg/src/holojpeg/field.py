"""Field and image types, phase/gray quantization, and on-disk containers.

Gray images are plain ``uint8`` arrays of shape ``(height, width)``.  Complex
fields and phase maps carry their sample pitch alongside the data.
"""

from __future__ import annotations

import math
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi
PHASE_LEVELS = 256


class FormatError(ValueError):
    """Base class for malformed files read by this package."""


class PGMError(FormatError):
    pass


class PGMHeaderError(PGMError):
    pass


class PGMMaxvalError(PGMError):
    pass


class PGMTruncatedError(PGMError):
    pass


class ContainerError(FormatError):
    pass


class BadMagicError(ContainerError):
    pass


class DimensionMismatchError(ContainerError):
    pass


class TruncatedContainerError(ContainerError):
    pass


def _frozen(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Row-major grid of complex amplitudes sampled at ``pitch`` meters."""

    data: np.ndarray
    pitch: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"field must be a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("field contains non-finite samples")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class PhaseMap:
    """Phase-only hologram; values are radians normalized into [0, 2*pi)."""

    data: np.ndarray
    pitch: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"phase map must be a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("phase map contains non-finite samples")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "data", _frozen(wrap_phase(data)))
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def to_field(self) -> ComplexField:
        """Unit-magnitude field exp(i*phase)."""
        return ComplexField(np.exp(1j * self.data), self.pitch)


@dataclass(frozen=True)
class OpticalConfig:
    wavelength: float = 532e-9
    pitch: float = 8e-6
    distance: float = 0.3

    def __post_init__(self):
        for name in ("wavelength", "pitch", "distance"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
        # Fresnel approximation is only meaningful far from the aperture plane.
        if self.distance < 100 * self.pitch:
            warnings.warn(
                f"distance {self.distance} m is not much larger than pitch {self.pitch} m",
                RuntimeWarning,
                stacklevel=3,
            )


def wrap_phase(phi):
    """Map radians into [0, 2*pi)."""
    out = np.mod(np.asarray(phi, dtype=np.float64), TWO_PI)
    # np.mod returns exactly 2*pi for tiny negative inputs
    out[out >= TWO_PI] = 0.0
    return out


def as_gray8(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"gray image must be a non-empty 2D array, got shape {a.shape}")
    if a.dtype != np.uint8:
        if not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() > 255:
            raise ValueError("gray image samples must be integers in [0, 255]")
        a = a.astype(np.uint8)
    return a


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_phase(p: PhaseMap) -> np.ndarray:
    """Map phases onto 256 equal bins over [0, 2*pi), wrapping at 2*pi."""
    g = round_half_away(wrap_phase(p.data) * (PHASE_LEVELS / TWO_PI))
    return np.mod(g, PHASE_LEVELS).astype(np.uint8)


def dequantize_phase(g, pitch: float = 8e-6) -> PhaseMap:
    g = as_gray8(g)
    return PhaseMap(g.astype(np.float64) * (TWO_PI / PHASE_LEVELS), pitch)


# -- binary portable graymap ------------------------------------------------

_PGM_HEADER = re.compile(rb"(P5)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def encode_pgm(img) -> bytes:
    img = as_gray8(img)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def decode_pgm(buf: bytes) -> np.ndarray:
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise PGMHeaderError("not a binary PGM (P5) header")
    w, h, maxval = (int(m.group(i)) for i in (2, 3, 4))
    if w < 1 or h < 1:
        raise PGMHeaderError(f"invalid PGM dimensions {w}x{h}")
    if maxval != 255:
        raise PGMMaxvalError(f"unsupported PGM maxval {maxval}, expected 255")
    payload = buf[m.end():]
    if len(payload) < w * h:
        raise PGMTruncatedError(f"PGM payload has {len(payload)} bytes, expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8, count=w * h).reshape(h, w).copy()


def save_pgm(img, path) -> None:
    Path(path).write_bytes(encode_pgm(img))


def load_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


# -- CGHF / CGHP containers -------------------------------------------------

_HEAD = struct.Struct("<4sIId")
FIELD_MAGIC = b"CGHF"
PHASE_MAGIC = b"CGHP"


def _pack(magic, shape, pitch, values) -> bytes:
    h, w = shape
    return _HEAD.pack(magic, w, h, pitch) + np.ascontiguousarray(values, dtype="<f8").tobytes()


def _unpack(buf, magic, per_sample):
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _HEAD.size:
        raise TruncatedContainerError("container header truncated")
    _, w, h, pitch = _HEAD.unpack_from(buf)
    if w < 1 or h < 1:
        raise DimensionMismatchError(f"invalid dimensions {w}x{h}")
    expected = w * h * per_sample * 8
    payload = len(buf) - _HEAD.size
    if payload < expected:
        raise TruncatedContainerError(f"payload has {payload} bytes, expected {expected}")
    if payload > expected:
        raise DimensionMismatchError(
            f"payload has {payload} bytes but header declares {w}x{h} ({expected} bytes)"
        )
    values = np.frombuffer(buf, dtype="<f8", offset=_HEAD.size).astype(np.float64)
    return values, (h, w), pitch


def encode_field(f: ComplexField) -> bytes:
    return _pack(FIELD_MAGIC, f.shape, f.pitch, f.data.view(np.float64))


def decode_field(buf: bytes) -> ComplexField:
    values, shape, pitch = _unpack(buf, FIELD_MAGIC, 2)
    return ComplexField(values.view(np.complex128).reshape(shape), pitch)


def encode_phase(p: PhaseMap) -> bytes:
    return _pack(PHASE_MAGIC, p.shape, p.pitch, p.data)


def decode_phase(buf: bytes) -> PhaseMap:
    values, shape, pitch = _unpack(buf, PHASE_MAGIC, 1)
    return PhaseMap(values.reshape(shape), pitch)


def save_field(f: ComplexField, path) -> None:
    Path(path).write_bytes(encode_field(f))


def load_field(path) -> ComplexField:
    return decode_field(Path(path).read_bytes())


def save_phase(p: PhaseMap, path) -> None:
    Path(path).write_bytes(encode_phase(p))


def load_phase(path) -> PhaseMap:
    return decode_phase(Path(path).read_bytes())
