# Training the four-layer restoration network for a few hundred steps.
#
# Pairs of (JPEG-compressed, clean) phase-map patches come from three
# training holograms.  This is far too short to converge (the restored replay
# still scores below the compressed one); it only shows the
# moving parts.  The full run lives in 04_desk_scale_pipeline.py.

import numpy as np

from holojpeg import OpticalConfig, dequantize_phase, psnr, reconstruct, synthesize_hologram, to_phase_only
from holojpeg import arcnn
from holojpeg.datasets import load_object
from holojpeg.field import quantize_phase
from holojpeg.jpeg import decode, encode

cfg = OpticalConfig(distance=0.3)


def pair(name):
    g = quantize_phase(to_phase_only(synthesize_hologram(load_object(name, 128), cfg, (256, 256))))
    return decode(encode(g, 1)), g


sets = [arcnn.extract_patches(*pair(n), stride=16) for n in ("astronaut", "coins", "moon")]
patches = arcnn.PatchSet.concat(sets)
print("patch pairs:", len(patches))

tc = arcnn.TrainConfig(iterations=200, batch_size=16, optimizer="adam", loss="wrapped", eval_every=50)
result = arcnn.train(patches, tc, distance=0.3)
print("loss first/last:", result.losses[0], result.losses[-1])
print("validation:", result.validation)

comp, clean = pair("camera")
restored = arcnn.restore(result.model, comp, 0.3, wrap=True)
ref = reconstruct(dequantize_phase(clean), cfg, (128, 128))
for name, g in [("compressed", comp), ("restored", restored)]:
    print(f"{name:10s} replay PSNR {psnr(ref, reconstruct(dequantize_phase(g), cfg, (128, 128))):.2f} dB")

arcnn.save_model(result.model, "demo_model.arcn")
