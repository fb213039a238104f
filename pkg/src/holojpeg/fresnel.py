"""Scalar Fresnel propagation between the object and hologram planes.

Propagation is a linear convolution with the Fresnel impulse response,
evaluated in the frequency domain on a grid zero-padded to twice the field
size.  The spectrum is multiplied by the analytic Fresnel transfer function

    exp(i*2*pi*z/lambda) * exp(-i*pi*lambda*z*(fx**2 + fy**2))

restricted to the band where that chirp is sampled without aliasing on the
padded grid, ``|f| <= L / (2*lambda*z)`` per axis (``L`` = padded extent).
The cut-off is a raised-cosine roll-off over the top fifth of the band; a
hard cut rings across the whole window.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .field import ComplexField, OpticalConfig, PhaseMap, as_gray8

MIN_SIZE = 8
ROLLOFF_START = 0.8


def frequency_grid(shape, pitch):
    """FFT-ordered spatial frequencies (fy, fx) in cycles per meter."""
    h, w = shape
    return np.fft.fftfreq(h, d=pitch), np.fft.fftfreq(w, d=pitch)


def fresnel_phase(shape, cfg: OpticalConfig) -> np.ndarray:
    """Unit-modulus Fresnel transfer function on an FFT grid of ``shape``."""
    fy, fx = frequency_grid(shape, cfg.pitch)
    lz = cfg.wavelength * cfg.distance
    # split into separable row/column factors; the constant phase rides on the rows
    ky = np.exp(1j * (2 * math.pi * cfg.distance / cfg.wavelength - math.pi * lz * fy**2))
    kx = np.exp(-1j * math.pi * lz * fx**2)
    return ky[:, None] * kx[None, :]


def _rolloff(f, limit):
    a = np.abs(f) / limit
    t = np.cos(0.5 * math.pi * (a - ROLLOFF_START) / (1.0 - ROLLOFF_START)) ** 2
    return np.where(a <= ROLLOFF_START, 1.0, np.where(a >= 1.0, 0.0, t))


def band_limit(shape, cfg: OpticalConfig) -> np.ndarray:
    """Separable window that is 1 inside the aliasing-free band, 0 outside."""
    fy, fx = frequency_grid(shape, cfg.pitch)
    lz = cfg.wavelength * cfg.distance
    limit_y = shape[0] * cfg.pitch / (2 * lz)
    limit_x = shape[1] * cfg.pitch / (2 * lz)
    return _rolloff(fy, limit_y)[:, None] * _rolloff(fx, limit_x)[None, :]


def transfer_function(shape, cfg: OpticalConfig) -> np.ndarray:
    return fresnel_phase(shape, cfg) * band_limit(shape, cfg)


def _check_pitch(u: ComplexField, cfg: OpticalConfig):
    if not math.isclose(u.pitch, cfg.pitch, rel_tol=1e-12):
        raise ValueError(f"field pitch {u.pitch} does not match configured pitch {cfg.pitch}")


def propagate_padded(a: np.ndarray, cfg: OpticalConfig, direction="forward") -> np.ndarray:
    """Apply the transfer function circularly to ``a`` with no padding or cropping."""
    tf = transfer_function(a.shape, cfg)
    if direction == "inverse":
        tf = np.conj(tf)
    elif direction != "forward":
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return np.fft.ifft2(np.fft.fft2(a) * tf)


def propagate(u: ComplexField, cfg: OpticalConfig, direction="forward") -> ComplexField:
    """Propagate ``u`` by ``cfg.distance`` (``direction='inverse'`` goes back by -z)."""
    h, w = u.shape
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ValueError(f"field must be at least {MIN_SIZE}x{MIN_SIZE}, got {w}x{h}")
    _check_pitch(u, cfg)
    top, left = h // 2, w // 2
    padded = np.zeros((2 * h, 2 * w), dtype=np.complex128)
    padded[top:top + h, left:left + w] = u.data
    out = propagate_padded(padded, cfg, direction)
    return ComplexField(out[top:top + h, left:left + w], u.pitch)


def embed_center(a: np.ndarray, shape) -> np.ndarray:
    h, w = a.shape
    ch, cw = shape
    if ch < h or cw < w:
        raise ValueError(f"canvas {cw}x{ch} is smaller than object {w}x{h}")
    out = np.zeros(shape, dtype=np.result_type(a, np.float64))
    top, left = (ch - h) // 2, (cw - w) // 2
    out[top:top + h, left:left + w] = a
    return out


def crop_center(a: np.ndarray, shape) -> np.ndarray:
    h, w = a.shape
    ch, cw = shape
    if ch > h or cw > w:
        raise ValueError(f"crop {cw}x{ch} exceeds array {w}x{h}")
    top, left = (h - ch) // 2, (w - cw) // 2
    return a[top:top + ch, left:left + cw]


def synthesize_hologram(obj, cfg: OpticalConfig, canvas) -> ComplexField:
    """Complex Fresnel hologram of a gray object image (amplitude gray/255, zero phase)."""
    obj = as_gray8(obj)
    amplitude = embed_center(obj.astype(np.float64) / 255.0, tuple(canvas))
    return propagate(ComplexField(amplitude, cfg.pitch), cfg, "forward")


def normalize_to_gray(mag: np.ndarray) -> np.ndarray:
    lo, hi = float(mag.min()), float(mag.max())
    if not hi > lo:
        warnings.warn("degenerate reconstruction (max == min); returning zeros", RuntimeWarning, stacklevel=2)
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.floor((mag - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)


def reconstruct(p, cfg: OpticalConfig, crop) -> np.ndarray:
    """Numerically replay a hologram back to the object plane as an 8-bit image.

    ``p`` is a PhaseMap (replayed as exp(i*p)) or a ComplexField.  The
    magnitude of the back-propagated field is center-cropped to ``crop`` and
    stretched linearly from its min/max onto [0, 255].
    """
    u = p.to_field() if isinstance(p, PhaseMap) else p
    back = propagate(u, cfg, "inverse")
    mag = np.abs(crop_center(back.data, tuple(crop)))
    return normalize_to_gray(mag)
