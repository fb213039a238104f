"""Phase-only hologram compression: Fresnel synthesis, error diffusion, baseline
JPEG, a four-layer restoration CNN, and PSNR/SSIM evaluation."""

from .diffusion import FLOYD_STEINBERG, DiffusionKernel, ScanMode, phase_truncate, to_phase_only
from .field import (
    ComplexField,
    FormatError,
    OpticalConfig,
    PhaseMap,
    dequantize_phase,
    load_pgm,
    quantize_phase,
    save_pgm,
)
from .fresnel import propagate, reconstruct, synthesize_hologram
from .metrics import compression_ratio, psnr, ssim

__all__ = [
    "FLOYD_STEINBERG", "DiffusionKernel", "ScanMode", "phase_truncate", "to_phase_only",
    "ComplexField", "FormatError", "OpticalConfig", "PhaseMap", "dequantize_phase",
    "load_pgm", "quantize_phase", "save_pgm",
    "propagate", "reconstruct", "synthesize_hologram",
    "compression_ratio", "psnr", "ssim",
]
