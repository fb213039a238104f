"""Complex-to-phase-only conversion by error diffusion.

Pixels are visited in raster order (rows top to bottom).  Each visited pixel
is forced to unit magnitude, keeping its phase, and the complex error
``H - exp(i*P)`` is pushed onto the unvisited neighbours::

              .    X   w1
             w2   w3   w4

In bidirectional (serpentine) mode odd rows are scanned right to left with
the kernel mirrored horizontally.  Error that would land outside the grid
is dropped.
"""

from __future__ import annotations

import cmath
import enum
from dataclasses import dataclass

import numpy as np

from .field import ComplexField, PhaseMap


@dataclass(frozen=True)
class DiffusionKernel:
    right: float = 7 / 16
    down_left: float = 3 / 16
    down: float = 5 / 16
    down_right: float = 1 / 16

    def __post_init__(self):
        total = self.right + self.down_left + self.down + self.down_right
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"diffusion weights must sum to 1, got {total}")


FLOYD_STEINBERG = DiffusionKernel()


class ScanMode(enum.Enum):
    UNIDIRECTIONAL = "unidirectional"
    BIDIRECTIONAL = "bidirectional"


def to_phase_only(
    h: ComplexField,
    kernel: DiffusionKernel = FLOYD_STEINBERG,
    mode: ScanMode | str = ScanMode.UNIDIRECTIONAL,
) -> PhaseMap:
    mode = ScanMode(mode)
    work = np.array(h.data, dtype=np.complex128)
    rows, cols = work.shape
    phase = np.empty((rows, cols), dtype=np.float64)
    err = np.empty(cols, dtype=np.complex128)
    w1, w2, w3, w4 = kernel.right, kernel.down_left, kernel.down, kernel.down_right

    for r in range(rows):
        reverse = mode is ScanMode.BIDIRECTIONAL and r % 2 == 1
        line = work[r, ::-1] if reverse else work[r]
        vals = line.tolist()
        out = [0.0] * cols
        e = [0j] * cols
        for c in range(cols):
            v = vals[c]
            p = cmath.phase(v)
            d = v - cmath.exp(1j * p)
            out[c] = p
            e[c] = d
            if c + 1 < cols:
                vals[c + 1] += w1 * d
        line_phase = np.array(out)
        err[:] = e
        if reverse:
            line_phase = line_phase[::-1]
            err[:] = err[::-1]
        phase[r] = line_phase
        if r + 1 < rows:
            below = work[r + 1]
            # same accumulation order a pixel-by-pixel scan would produce
            if reverse:
                below[:-1] += w4 * err[1:]
                below += w3 * err
                below[1:] += w2 * err[:-1]
            else:
                below[1:] += w4 * err[:-1]
                below += w3 * err
                below[:-1] += w2 * err[1:]
    return PhaseMap(phase, h.pitch)


def phase_truncate(h: ComplexField) -> PhaseMap:
    """Keep each sample's phase and discard its magnitude, with no diffusion."""
    return PhaseMap(np.angle(h.data), h.pitch)
