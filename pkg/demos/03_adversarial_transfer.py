"""Image-guided adversarial makeup transfer (stage 2).

Six source faces are protected by fine-tuning a denoiser copy under
four pulls: the makeup direction learned in stage 1, a pixel-level
histogram-matched makeup target, an ensemble attack toward a target
identity across three surrogate face embedders, and a visual term that
preserves everything else. The punchline is black-box transfer: a
fourth embedder that never participated in training also moves toward
the target.

Writes protected faces under demos/output/.
"""
from pathlib import Path

import torch

from faceveil.data import save_image
from faceveil.denoisers import TinyConvDenoiser, pretrain_denoiser
from faceveil.encoders import (
    EncoderBundle,
    ToyFaceEmbedder,
    ToyImageEncoder,
    ToyPerceptualExtractor,
    ToyTextEncoder,
    face_embed,
)
from faceveil.losses import LossWeights
from faceveil.pipeline import FineTuneConfig, run_adversarial_transfer, run_makeup_removal
from faceveil.regions import RegionMasks
from faceveil.schedule import make_linear_schedule
from faceveil.synthetic import toy_dataset, toy_face

torch.set_num_threads(1)
out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)


def mean_cos(images, emb, target):
    total = 0.0
    with torch.no_grad():
        et = face_embed(emb, target)
        et = et / et.norm()
        for img in images:
            e = face_embed(emb, img)
            total += float((e / e.norm() * et).sum())
    return total / len(images)


data = toy_dataset(10, size=32, seed=7)
images = [img for img, _ in data]
den = TinyConvDenoiser(hidden=8, t_full=250, seed=0)
pretrain_denoiser(den, images, make_linear_schedule(250), steps=400, lr=2e-3, seed=0)
encs = EncoderBundle(
    image=ToyImageEncoder(size=48, seed=1),
    text=ToyTextEncoder(size=48),
    perceptual=ToyPerceptualExtractor(size=6, seed=2),
    identity=ToyFaceEmbedder(size=24, seed=3),
)

# stage 1 gives the (reference, clean) pair
ref, ref_labels = toy_face(50, size=32, makeup=1.0, seed=5)
stage1 = run_makeup_removal(
    [ref], den, encs, FineTuneConfig(t_full=250, t0=60, s_inv=10, s_sam=4, epochs=4, base_lr=5e-4)
)
ref_clean = stage1.outputs[0]

sources = images[:6]
masks = [RegionMasks(lab) for _, lab in data[:6]]
target, _ = toy_face(300, size=32, seed=5)
ensemble = [ToyFaceEmbedder(size=64, seed=s) for s in (7, 8, 9)]  # surrogates
holdout = ToyFaceEmbedder(size=64, seed=1234)  # the black-box model

cfg = FineTuneConfig(
    t_full=250, t0=60, s_inv=10, s_sam=4, epochs=6, base_lr=5e-4,
    weights=LossWeights(makeup=1, direction=2, pixel=0.1, attack=8, visual=0.25, l1=1),
)
baseline = mean_cos(sources, holdout, target)
print(f"clean faces vs target on the held-out embedder: cos = {baseline:.4f}")

art = run_adversarial_transfer(
    sources, masks, ref, ref_clean, target, ensemble, den, encs, cfg,
    ref_masks=RegionMasks(ref_labels),
)

print("\nsurrogate cosines to the target, first vs last epoch:")
n = len(sources)
for k in range(len(ensemble)):
    start = sum(r["target_cosines"][k] for r in art.log[:n]) / n
    end = sum(r["target_cosines"][k] for r in art.log[-n:]) / n
    print(f"  surrogate {k}: {start:.4f} -> {end:.4f}")

print(f"\nobjective: {art.log[0]['total']:.3f} -> "
      f"{sum(r['total'] for r in art.log[-n:]) / n:.3f} (last-epoch mean)")
transferred = mean_cos(art.outputs, holdout, target)
print(f"held-out embedder after transfer: cos = {transferred:.4f} "
      f"({'+' if transferred > baseline else ''}{transferred - baseline:.4f} vs clean)")

for i, protected in enumerate(art.outputs):
    save_image(protected, out / f"protected_{i}.png")
save_image(target, out / "target.png")
print(f"\nwrote {len(art.outputs)} protected faces to {out}/")
