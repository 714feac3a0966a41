"""The evaluation protocol: FAR-calibrated thresholds, ASR, image quality.

Face verification accepts a pair when the embedding cosine clears a
threshold. The threshold is not arbitrary: it is calibrated so that
impostor pairs (different people) are accepted at a fixed false
acceptance rate. Attack success rate is then the fraction of protected
images verified as the target identity at that threshold. PSNR, SSIM
and a feature-space Frechet distance track how much the protection
changed the images.
"""
import numpy as np
import torch

from faceveil.encoders import ToyFaceEmbedder, ToyImageEncoder, embed_image, face_embed
from faceveil.metrics import attack_success_rate, calibrate_threshold, fid, psnr, ssim
from faceveil.synthetic import toy_face

torch.set_num_threads(1)

# impostor scores: cross-identity pairs through the verifier
verifier = ToyFaceEmbedder(size=64, seed=1234)
faces = [toy_face(i, size=32, variation=v, seed=11)[0] for i in range(12) for v in range(2)]
labels = [i for i in range(12) for _ in range(2)]
with torch.no_grad():
    embs = [face_embed(verifier, f) for f in faces]
    embs = [e / e.norm() for e in embs]
scores = [
    float((embs[i] * embs[j]).sum())
    for i in range(len(embs))
    for j in range(i + 1, len(embs))
    if labels[i] != labels[j]
]
print(f"{len(scores)} impostor pairs, score range "
      f"[{min(scores):.3f}, {max(scores):.3f}]")

for far in (0.1, 0.01):
    thr = calibrate_threshold(scores, far)
    accepted = sum(s >= thr.tau for s in scores)
    print(f"FAR {far:>5}: tau = {thr.tau:.4f} "
          f"({accepted}/{len(scores)} impostors accepted)")

# ASR: how often do protected faces verify as the target?
thr = calibrate_threshold(scores, 0.1)
target, _ = toy_face(300, size=32, seed=11)
clean = [toy_face(i, size=32, seed=11)[0] for i in range(6)]
asr_clean, per_image = attack_success_rate(clean, target, verifier, thr)
print(f"\nclean faces vs target: ASR {asr_clean:.2f}, "
      f"scores {[round(s, 3) for s in per_image]}")
asr_self, _ = attack_success_rate([target] * 3, target, verifier, thr)
print(f"target vs itself:      ASR {asr_self:.2f} (sanity)")

# image quality metrics against a perturbed copy
noisy = [torch.clamp(f + 0.05 * torch.randn(f.shape, generator=torch.Generator().manual_seed(i)), -1, 1)
         for i, f in enumerate(clean)]
print("\nquality of a mildly perturbed copy:")
print(f"  psnr  {np.mean([psnr(a, b) for a, b in zip(noisy, clean)]):.2f} dB")
print(f"  ssim  {np.mean([ssim(a, b) for a, b in zip(noisy, clean)]):.4f}")
extractor = ToyImageEncoder(size=48, seed=1)
with torch.no_grad():
    fa = np.stack([embed_image(extractor, x).numpy() for x in noisy])
    fb = np.stack([embed_image(extractor, x).numpy() for x in clean])
print(f"  fid   {fid(fa, fb):.4f}  (toy features: comparable only within a run)")
