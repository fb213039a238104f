# Compressing a quantized phase map with baseline JPEG.
#
# At quality 1 every quantizer step is 255, so each 8x8 block keeps little
# more than its mean.  The file shrinks about sevenfold, and the replay
# suffers badly because the dithered phase is exactly the high-frequency
# content that JPEG discards.

from holojpeg import OpticalConfig, dequantize_phase, psnr, reconstruct, ssim, synthesize_hologram, to_phase_only
from holojpeg.datasets import load_object
from holojpeg.field import quantize_phase
from holojpeg.jpeg import decode, encode

cfg = OpticalConfig(distance=0.3)
obj = load_object("camera", 128)
g = quantize_phase(to_phase_only(synthesize_hologram(obj, cfg, (256, 256))))
ref = reconstruct(dequantize_phase(g), cfg, obj.shape)

print(" q   bytes  ratio  phase PSNR  replay PSNR  replay SSIM")
for q in (1, 5, 25, 50, 90):
    s = encode(g, q)
    c = decode(s)
    rec = reconstruct(dequantize_phase(c), cfg, obj.shape)
    print(f"{q:3d} {len(s):7d} {g.size / len(s):6.2f} {psnr(g, c):10.2f} {psnr(ref, rec):12.2f} {ssim(ref, rec):12.4f}")

s = encode(g, 1)
s.save("camera_q1.jpg")
print("wrote camera_q1.jpg; any JPEG viewer opens it")
